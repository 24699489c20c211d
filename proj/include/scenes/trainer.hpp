#pragma once

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <vector>

#include "scenes/competition.hpp"
#include "scenes/nets.hpp"
#include "scenes/objective.hpp"

namespace scenes {

enum class UpdateMode { batch, per_step };

struct TrainConfig {
    int64_t batch_size = 32;
    double lr = 5e-4;
    int64_t eval_every = 100;   // iterations between validation passes
    int64_t patience = 5;       // non-improving evaluations before an LR decay
    double lr_decay_factor = 3.1622776601683795;  // sqrt(10)
    int64_t max_decays = 5;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    LossWeights weights;
    int64_t n_experts = 4;  // K
    int64_t n_steps = 4;    // T
    ExpertArchConfig arch;
    uint64_t seed = 0;
    SelectionMode train_selection = SelectionMode::stochastic;
    UpdateMode update_mode = UpdateMode::batch;
    int64_t max_iterations = 0;  // safety cap; 0 = run until the stopping rule
    int threads = 0;             // 0 = leave torch defaults; 1 = deterministic mode

    void validate() const;
};

struct TrainLogRecord {
    int64_t iteration = 0;
    double train_loss = 0;
    double recon = 0, kl_latent = 0, kl_region = 0;
    std::optional<double> val_loss;
    double lr = 0;
    int64_t decay_count = 0;
    std::vector<std::vector<int64_t>> winner_hist;  // [T][K], layer-indexed
};

struct TrainResult {
    std::vector<Expert> experts;
    std::vector<TrainLogRecord> log;
    std::vector<double> val_history;
    int64_t iterations = 0;
    int64_t decay_count = 0;
    bool stopped_by_rule = false;
};

struct LrDecision {
    double lr = 0;
    int64_t decay_count = 0;
    bool stop = false;
};

// Replays the plateau automaton over a validation-loss history: the running
// best improves only on strict decrease; `patience` consecutive
// non-improving evaluations trigger a decay (lr /= factor, counter resets);
// training stops after `max_decays` decays.
LrDecision lr_schedule_step(const std::vector<double>& val_history, double initial_lr,
                            int64_t patience, double factor, int64_t max_decays);

// Images are uint8 [N,3,H,W]; scaled to [0,1] per batch. When `out_dir` is
// set, a JSON-lines log and checkpoints (at every decay + final) are written.
TrainResult train(const TrainConfig& config, const torch::Tensor& train_images,
                  const torch::Tensor& val_images,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Greedy-selection mean total loss over the validation set; never mutates.
double validate(std::vector<Expert>& experts, const torch::Tensor& val_images, int T,
                const LossWeights& weights, int64_t batch_size = 32);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json log_record_to_json(const TrainLogRecord& rec);

}  // namespace scenes
