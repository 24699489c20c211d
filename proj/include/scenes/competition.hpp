#pragma once

#include <torch/torch.h>

#include <functional>
#include <random>
#include <vector>

#include "scenes/objective.hpp"

namespace scenes {

enum class SelectionMode { stochastic, greedy };

struct ExpertProposal {
    int expert_id = -1;
    torch::Tensor alpha;       // [1,H,W]
    torch::Tensor region;      // scope * alpha
    LatentStats stats;
    torch::Tensor z;
    torch::Tensor appearance_mean;  // [3,H,W]
    torch::Tensor mask_prob;        // [1,H,W]
    LossTerms terms;
};

struct DecompositionStep {
    int t = 0;       // inference step index, T down to 1; t=1 claims the rest
    int winner = -1;
    ExpertProposal winner_proposal;
    std::vector<std::array<double, 2>> objectives;  // per expert (recon, kl_region)
    torch::Tensor scope_before, scope_after;        // detached
};

struct DecompositionTrace {
    std::vector<DecompositionStep> steps;     // execution order, t = T first
    torch::Tensor reconstruction;             // [3,H,W], detached
    std::vector<torch::Tensor> regions_by_layer;  // index 0 = background (t=1)
    std::vector<int> winners_by_layer;
    int64_t proposal_count = 0;

    const DecompositionStep& step_for_layer(int layer) const {
        return steps[steps.size() - 1 - static_cast<size_t>(layer)];
    }
};

// One expert's full pipeline against the current scope. Draws exactly one
// latent sample from `gen`. Throws if any loss term is non-finite.
ExpertProposal expert_propose(Expert& expert, const torch::Tensor& image,
                              const torch::Tensor& scope, torch::Generator& gen,
                              const LossWeights& weights);

// Winner distribution over experts given per-expert (recon, kl_region)
// objectives: softmax of -(lambda * recon + kl_region), max-subtracted.
std::vector<double> select_probabilities(const std::vector<std::array<double, 2>>& objectives,
                                         double lambda);
int select_winner(const std::vector<std::array<double, 2>>& objectives, double lambda,
                  SelectionMode mode, std::mt19937_64& rng);

// Greedy front-to-back decomposition; 2 <= T, all experts share one config.
// At t=1 every expert's attention is overridden to 1 so the final region is
// the remaining scope and the regions partition the image exactly.
// Scopes crossing step boundaries are detached, so training gradients reach
// only the winning expert of each step.
DecompositionTrace decompose(std::vector<Expert>& experts, const torch::Tensor& image, int T,
                             const LossWeights& weights, SelectionMode mode, uint64_t seed);

struct ExhaustiveResult {
    std::vector<int> best_classes;  // back-to-front (index 0 = background step)
    double objective = 0;
    int64_t n_sequences = 0;
};

// Brute-force minimum of the summed step losses over all K^T class
// sequences, using the same per-(step, expert) noise streams as decompose.
ExhaustiveResult exhaustive_assignment(std::vector<Expert>& experts, const torch::Tensor& image,
                                       int T, const LossWeights& weights, uint64_t seed);

// Sum of the winning experts' step losses; carries the autograd graph.
torch::Tensor training_loss_from_trace(const DecompositionTrace& trace,
                                       const LossWeights& weights);

// ---- Batched path used by the trainer ------------------------------------

struct BatchDecomposition {
    torch::Tensor loss_per_scene;  // [B], with graph when build_graph
    torch::Tensor winners;         // [B,T] int64, layer-indexed (col 0 = background)
    torch::Tensor regions;         // [B,T,1,H,W] detached, layer-indexed
    torch::Tensor reconstruction;  // [B,3,H,W] detached
    // Batch-mean diagnostics of the winners' step-term sums.
    double mean_recon = 0, mean_kl_latent = 0, mean_kl_region = 0;
};

// Called once per step in per-step-update training; receives the batch loss
// of that step (scenes summed, graph attached) and the per-scene winners.
using StepHook =
    std::function<void(int t, const torch::Tensor& step_loss_sum, const torch::Tensor& winners_t)>;

BatchDecomposition decompose_batch(std::vector<Expert>& experts, const torch::Tensor& images,
                                   int T, const LossWeights& weights, SelectionMode mode,
                                   torch::Generator& eps_gen, std::mt19937_64& winner_rng,
                                   bool build_graph, const StepHook& step_hook = nullptr);

}  // namespace scenes
