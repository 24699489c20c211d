#pragma once

#include <json.hpp>
#include <torch/torch.h>

#include <vector>

#include "scenes/competition.hpp"
#include "scenes/sprites.hpp"

namespace scenes {

// Adjusted Rand index between integer label maps of equal shape.
// foreground_only drops pixels whose true label equals background_label.
double ari(const torch::Tensor& pred_labels, const torch::Tensor& true_labels,
           bool foreground_only, int64_t background_label = 0);

// Per-pixel layer index (0 = background layer) of the maximal region.
torch::Tensor label_map_from_regions(const std::vector<torch::Tensor>& regions);

struct SpecializationResult {
    torch::Tensor counts;  // [K, kNumClasses] int64 visible-pixel counts
    double purity = 0;     // mean over ground-truth classes of the max-expert share
};

SpecializationResult specialization_matrix(const std::vector<DecompositionTrace>& traces,
                                           const std::vector<GroundTruth>& ground_truths,
                                           int n_experts);

double reconstruction_mse(const torch::Tensor& image, const DecompositionTrace& trace);

struct EvalReport {
    double fg_ari_mean = 0, fg_ari_sd = 0;
    double full_ari_mean = 0, full_ari_sd = 0;
    double mse_mean = 0;
    SpecializationResult specialization;
    int64_t scene_count = 0;
    uint64_t config_hash = 0;

    nlohmann::json to_json() const;
};

EvalReport evaluate_model(std::vector<Expert>& experts, const std::vector<SceneRecord>& records,
                          int T, const LossWeights& weights, uint64_t seed,
                          const std::string& config_tag);

uint64_t fnv1a64(const std::string& text);

}  // namespace scenes
