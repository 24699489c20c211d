#include "scenes/trainer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "scenes/checkpoint.hpp"
#include "scenes/rng.hpp"

namespace scenes {

using nlohmann::json;

namespace {

constexpr uint64_t kExpertInitStream = 0x01;
constexpr uint64_t kEpsStream = 0x02;
constexpr uint64_t kWinnerStream = 0x03;
constexpr uint64_t kEpochStream = 0x04;
constexpr uint64_t kValidateStream = 0x05;

void set_optimizer_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (lr < 0) throw std::invalid_argument("lr must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (!(lr_decay_factor > 1)) throw std::invalid_argument("lr_decay_factor must be > 1");
    if (max_decays < 0) throw std::invalid_argument("max_decays must be >= 0");
    if (n_experts < 1) throw std::invalid_argument("need at least one expert");
    if (n_steps < 2) throw std::invalid_argument("n_steps must be >= 2");
    weights.validate();
    arch.validate();
}

LrDecision lr_schedule_step(const std::vector<double>& val_history, double initial_lr,
                            int64_t patience, double factor, int64_t max_decays) {
    if (val_history.empty()) throw std::invalid_argument("lr_schedule_step: empty history");
    double best = std::numeric_limits<double>::infinity();
    int64_t since_improve = 0;
    int64_t decays = 0;
    bool stop = false;
    for (double v : val_history) {
        if (v < best) {
            best = v;
            since_improve = 0;
        } else {
            ++since_improve;
            if (since_improve >= patience && decays < max_decays) {
                ++decays;
                since_improve = 0;
                if (decays >= max_decays) stop = true;
            }
        }
    }
    return {initial_lr * std::pow(factor, -static_cast<double>(decays)), decays, stop};
}

double validate(std::vector<Expert>& experts, const torch::Tensor& val_images, int T,
                const LossWeights& weights, int64_t batch_size) {
    if (val_images.size(0) < 1) throw std::invalid_argument("validate: empty validation set");
    torch::NoGradGuard no_grad;
    const auto dtype = experts.front()->config.dtype;
    // Fixed streams so repeated calls on the same experts agree exactly.
    auto eps_gen = make_generator(derive_seed(0x76A1, kValidateStream));
    std::mt19937_64 winner_rng(derive_seed(0x76A1, kValidateStream, 1));

    double total = 0;
    const int64_t n = val_images.size(0);
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t m = std::min(batch_size, n - start);
        auto batch = val_images.narrow(0, start, m).to(dtype).div(255.0);
        auto bd = decompose_batch(experts, batch, T, weights, SelectionMode::greedy, eps_gen,
                                  winner_rng, /*build_graph=*/false);
        total += bd.loss_per_scene.sum().item<double>();
    }
    return total / static_cast<double>(n);
}

TrainResult train(const TrainConfig& config, const torch::Tensor& train_images,
                  const torch::Tensor& val_images,
                  const std::optional<std::filesystem::path>& out_dir) {
    config.validate();
    if (train_images.dim() != 4 || train_images.size(1) != 3) {
        throw std::invalid_argument("train: expected train images [N,3,H,W] uint8");
    }
    if (train_images.size(2) != config.arch.height || train_images.size(3) != config.arch.width) {
        throw std::invalid_argument("train: dataset image size does not match arch config");
    }
    if (config.threads > 0) torch::set_num_threads(config.threads);

    const int K = static_cast<int>(config.n_experts);
    const int T = static_cast<int>(config.n_steps);
    const auto dtype = config.arch.dtype;

    TrainResult result;
    for (int k = 0; k < K; ++k) {
        result.experts.push_back(
            init_expert(config.arch, derive_seed(config.seed, kExpertInitStream, k)));
    }

    std::vector<std::unique_ptr<torch::optim::Adam>> optims;
    for (int k = 0; k < K; ++k) {
        optims.push_back(std::make_unique<torch::optim::Adam>(
            result.experts[k]->parameters(),
            torch::optim::AdamOptions(config.lr)
                .betas({config.adam_beta1, config.adam_beta2})
                .eps(config.adam_eps)));
    }

    auto eps_gen = make_generator(derive_seed(config.seed, kEpsStream));
    std::mt19937_64 winner_rng(derive_seed(config.seed, kWinnerStream));

    std::ofstream log_file;
    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        log_file.open(*out_dir / "log.jsonl");
        log_file << json{{"config", train_config_to_json(config)}}.dump() << "\n";
    }
    auto emit = [&](const TrainLogRecord& rec) {
        result.log.push_back(rec);
        if (log_file) log_file << log_record_to_json(rec).dump() << "\n";
    };
    auto save = [&](const std::string& name) {
        if (out_dir) {
            save_checkpoint(result.experts, config.arch, train_config_to_json(config),
                            *out_dir / name);
        }
    };

    const int64_t n_train = train_images.size(0);
    const int64_t batch = std::min<int64_t>(config.batch_size, n_train);
    std::vector<int64_t> order(n_train);
    int64_t epoch = 0, cursor = n_train;  // force a shuffle on first use

    double current_lr = config.lr;
    std::vector<std::vector<int64_t>> winner_hist(T, std::vector<int64_t>(K, 0));
    int64_t it = 0;
    bool stop = false;
    while (!stop) {
        ++it;
        if (cursor + batch > n_train) {
            for (int64_t i = 0; i < n_train; ++i) order[i] = i;
            std::mt19937_64 epoch_rng(derive_seed(config.seed, kEpochStream, epoch++));
            fisher_yates(epoch_rng, order);
            cursor = 0;
        }
        auto idx = torch::from_blob(order.data() + cursor, {batch}, torch::kInt64).clone();
        cursor += batch;
        auto images = train_images.index_select(0, idx).to(dtype).div(255.0);

        auto zero_all = [&] {
            for (auto& opt : optims) opt->zero_grad();
        };
        auto step_winners = [&](const torch::Tensor& winners) {
            for (int k = 0; k < K; ++k) {
                if ((winners == k).any().item<bool>()) optims[k]->step();
            }
        };

        StepHook hook = nullptr;
        if (config.update_mode == UpdateMode::per_step) {
            hook = [&](int, const torch::Tensor& step_sum, const torch::Tensor& winners_t) {
                zero_all();
                (step_sum / static_cast<double>(batch)).backward();
                step_winners(winners_t);
            };
        }

        BatchDecomposition bd;
        try {
            bd = decompose_batch(result.experts, images, T, config.weights,
                                 config.train_selection, eps_gen, winner_rng,
                                 /*build_graph=*/true, hook);
        } catch (const std::runtime_error& e) {
            if (out_dir) {
                std::ofstream diag(*out_dir / "abort.json");
                diag << json{{"iteration", it}, {"lr", current_lr}, {"error", e.what()}}.dump(2)
                     << "\n";
            }
            throw;
        }
        auto loss = bd.loss_per_scene.mean();
        if (config.update_mode == UpdateMode::batch) {
            zero_all();
            loss.backward();
            step_winners(bd.winners.flatten());
        }

        auto wacc = bd.winners.accessor<int64_t, 2>();
        for (int64_t b = 0; b < bd.winners.size(0); ++b) {
            for (int t = 0; t < T; ++t) ++winner_hist[t][wacc[b][t]];
        }

        TrainLogRecord rec;
        rec.iteration = it;
        rec.train_loss = loss.item<double>();
        rec.recon = bd.mean_recon;
        rec.kl_latent = bd.mean_kl_latent;
        rec.kl_region = bd.mean_kl_region;
        rec.lr = current_lr;
        rec.decay_count = result.decay_count;

        if (it % config.eval_every == 0) {
            rec.val_loss = validate(result.experts, val_images, T, config.weights, batch);
            result.val_history.push_back(*rec.val_loss);
            rec.winner_hist = winner_hist;
            winner_hist.assign(T, std::vector<int64_t>(K, 0));

            const auto decision =
                lr_schedule_step(result.val_history, config.lr, config.patience,
                                 config.lr_decay_factor, config.max_decays);
            if (decision.decay_count > result.decay_count) {
                result.decay_count = decision.decay_count;
                current_lr = decision.lr;
                for (auto& opt : optims) set_optimizer_lr(*opt, current_lr);
                save("ckpt_decay" + std::to_string(result.decay_count) + ".bin");
            }
            rec.lr = current_lr;
            rec.decay_count = result.decay_count;
            if (decision.stop) {
                result.stopped_by_rule = true;
                stop = true;
            }
        }
        emit(rec);
        if (config.max_iterations > 0 && it >= config.max_iterations) stop = true;
    }

    result.iterations = it;
    save("ckpt_final.bin");
    return result;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"lr", c.lr},
                {"eval_every", c.eval_every},
                {"patience", c.patience},
                {"lr_decay_factor", c.lr_decay_factor},
                {"max_decays", c.max_decays},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"beta", c.weights.beta},
                {"gamma", c.weights.gamma},
                {"sigma_x", c.weights.sigma_x},
                {"lambda", c.weights.lambda},
                {"n_experts", c.n_experts},
                {"n_steps", c.n_steps},
                {"arch", arch_to_json(c.arch)},
                {"seed", c.seed},
                {"selection", c.train_selection == SelectionMode::stochastic ? "stochastic" : "greedy"},
                {"update_mode", c.update_mode == UpdateMode::batch ? "batch" : "per_step"},
                {"max_iterations", c.max_iterations},
                {"threads", c.threads}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.patience = j.value("patience", c.patience);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.max_decays = j.value("max_decays", c.max_decays);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weights.beta = j.value("beta", c.weights.beta);
    c.weights.gamma = j.value("gamma", c.weights.gamma);
    c.weights.sigma_x = j.value("sigma_x", c.weights.sigma_x);
    c.weights.lambda = j.value("lambda", c.weights.lambda);
    c.n_experts = j.value("n_experts", c.n_experts);
    c.n_steps = j.value("n_steps", c.n_steps);
    if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
    c.seed = j.value("seed", c.seed);
    c.train_selection = j.value("selection", "stochastic") == std::string("greedy")
                            ? SelectionMode::greedy
                            : SelectionMode::stochastic;
    c.update_mode = j.value("update_mode", "batch") == std::string("per_step")
                        ? UpdateMode::per_step
                        : UpdateMode::batch;
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.threads = j.value("threads", c.threads);
    return c;
}

json log_record_to_json(const TrainLogRecord& rec) {
    json j{{"it", rec.iteration},
           {"train_loss", rec.train_loss},
           {"recon", rec.recon},
           {"kl_latent", rec.kl_latent},
           {"kl_region", rec.kl_region},
           {"lr", rec.lr},
           {"decays", rec.decay_count}};
    if (rec.val_loss) j["val_loss"] = *rec.val_loss;
    if (!rec.winner_hist.empty()) j["winner_hist"] = rec.winner_hist;
    return j;
}

}  // namespace scenes
