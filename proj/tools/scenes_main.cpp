#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "scenes/checkpoint.hpp"
#include "scenes/competition.hpp"
#include "scenes/config.hpp"
#include "scenes/image_io.hpp"
#include "scenes/metrics.hpp"
#include "scenes/rng.hpp"
#include "scenes/scenegen.hpp"
#include "scenes/sprites.hpp"
#include "scenes/trainer.hpp"

using nlohmann::json;

namespace {

using namespace scenes;

std::vector<int> parse_expert_list(const std::string& csv) {
    std::vector<int> out;
    std::string token;
    std::istringstream in(csv);
    while (std::getline(in, token, ',')) {
        if (!token.empty()) out.push_back(std::stoi(token));
    }
    return out;
}

struct CkptBundle {
    Checkpoint ckpt;
    TrainConfig train_config;
};

CkptBundle open_checkpoint(const std::string& path) {
    CkptBundle b{load_checkpoint(path), {}};
    b.train_config = train_config_from_json(b.ckpt.train_config);
    return b;
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 std::optional<uint64_t> seed) {
    DatasetConfig config =
        config_path.empty() ? DatasetConfig{} : dataset_config_from_flat(parse_flat_config(config_path));
    if (seed) config.seed = *seed;
    generate_dataset(config, out);
    std::cout << "wrote dataset to " << out << " (" << config.n_train << " train / "
              << config.n_val << " val)\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out, std::optional<uint64_t> seed) {
    TrainConfig config =
        config_path.empty() ? TrainConfig{} : train_config_from_flat(parse_flat_config(config_path));
    if (seed) config.seed = *seed;
    const DatasetConfig dataset = read_manifest(data);
    if (dataset.height != config.arch.height || dataset.width != config.arch.width) {
        throw std::runtime_error("dataset image size does not match the training config");
    }
    auto train_images = load_split_images(data, "train");
    auto val_images = load_split_images(data, "val");
    auto result = train(config, train_images, val_images, std::filesystem::path(out));
    std::cout << "finished after " << result.iterations << " iterations, " << result.decay_count
              << " lr decays" << (result.stopped_by_rule ? " (stopping rule)" : "") << "\n"
              << "checkpoint: " << (std::filesystem::path(out) / "ckpt_final.bin").string() << "\n";
    return 0;
}

int cmd_decompose(const std::string& ckpt_path, const std::string& image_path,
                  const std::string& out, uint64_t seed) {
    auto bundle = open_checkpoint(ckpt_path);
    auto image = read_image_png(image_path);
    const int T = static_cast<int>(bundle.train_config.n_steps);
    auto trace = decompose(bundle.ckpt.experts, image, T, bundle.train_config.weights,
                           SelectionMode::greedy, seed);

    std::filesystem::create_directories(out);
    json doc{{"seed", seed}, {"steps", json::array()}};
    std::vector<torch::Tensor> panels;
    for (size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& step = trace.steps[i];
        const std::string stem = (std::filesystem::path(out) / ("step" + std::to_string(i + 1))).string();
        const auto masked_recon = step.winner_proposal.region * step.winner_proposal.appearance_mean;
        write_mask_png(stem + "_scope.png", step.scope_before);
        write_mask_png(stem + "_region.png", step.winner_proposal.region);
        write_image_png(stem + "_component.png", step.winner_proposal.appearance_mean);
        write_image_png(stem + "_masked_recon.png", masked_recon);
        write_mask_png(stem + "_mask.png", step.winner_proposal.mask_prob);
        for (const auto& panel : {step.scope_before, step.winner_proposal.region}) {
            panels.push_back(panel.expand({3, panel.size(-2), panel.size(-1)}));
        }
        panels.push_back(step.winner_proposal.appearance_mean);
        panels.push_back(masked_recon);
        panels.push_back(step.winner_proposal.mask_prob.expand({3, image.size(-2), image.size(-1)}));

        json js{{"t", step.t},
                {"winner", step.winner},
                {"objectives", step.objectives},
                {"recon", step.winner_proposal.terms.recon.item<double>()},
                {"kl_latent", step.winner_proposal.terms.kl_latent.item<double>()},
                {"kl_region", step.winner_proposal.terms.kl_region.item<double>()}};
        doc["steps"].push_back(js);
    }
    write_image_png(std::filesystem::path(out) / "montage.png", tile_grid(panels, 5));
    write_image_png(std::filesystem::path(out) / "reconstruction.png", trace.reconstruction);
    std::ofstream f(std::filesystem::path(out) / "trace.json");
    f << doc.dump(2) << "\n";
    std::cout << "wrote decomposition panels to " << out << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& out,
               const std::string& experts_csv, int n, uint64_t seed, bool threshold) {
    auto bundle = open_checkpoint(ckpt_path);
    auto& experts = bundle.ckpt.experts;
    std::filesystem::create_directories(out);
    json sidecar{{"seed", seed}, {"mask_mode", threshold ? "threshold" : "soft"}};

    // Per-expert sample grid: one row per expert.
    std::vector<torch::Tensor> grid;
    for (size_t k = 0; k < experts.size(); ++k) {
        auto gen = make_generator(derive_seed(seed, 0xA11, k));
        for (int i = 0; i < n; ++i) {
            auto comp = sample_component(experts[k], gen);
            grid.push_back(comp.appearance * comp.mask + (1.0 - comp.mask));
        }
    }
    write_image_png(std::filesystem::path(out) / "expert_samples.png", tile_grid(grid, n));

    // Progressive layering strip for the requested plan.
    std::vector<int> plan_experts = parse_expert_list(experts_csv);
    if (!plan_experts.empty()) {
        GenerationPlan plan;
        plan.experts = plan_experts;
        plan.mask_mode = threshold ? MaskMode::threshold : MaskMode::soft;
        std::vector<torch::Tensor> strips;
        for (int row = 0; row < std::min(n, 8); ++row) {
            plan.seed = derive_seed(seed, 0xB22, static_cast<uint64_t>(row));
            auto [image, stack] = generate_scene(experts, plan);
            torch::Tensor canvas;
            for (int64_t t = 0; t < stack.size(); ++t) {
                canvas = t == 0 ? stack.appearances[0]
                                : layer_composite(canvas, stack.masks[t], stack.appearances[t]);
                strips.push_back(canvas);
            }
            sidecar["plans"].push_back({{"experts", plan.experts}, {"seed", plan.seed}});
        }
        write_image_png(std::filesystem::path(out) / "layering.png",
                        tile_grid(strips, static_cast<int64_t>(plan_experts.size())));
    }
    std::ofstream f(std::filesystem::path(out) / "samples.json");
    f << sidecar.dump(2) << "\n";
    std::cout << "wrote samples to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& report,
             uint64_t seed) {
    auto bundle = open_checkpoint(ckpt_path);
    auto records = load_dataset(data, "val");
    const int T = static_cast<int>(bundle.train_config.n_steps);
    const std::string tag = bundle.ckpt.train_config.dump() + "|" + data;
    auto rep = evaluate_model(bundle.ckpt.experts, records, T, bundle.train_config.weights, seed, tag);
    std::ofstream f(report);
    if (!f) throw std::runtime_error("cannot open report path " + report);
    f << rep.to_json().dump(2) << "\n";
    std::cout << "fg_ari " << rep.fg_ari_mean << "  purity " << rep.specialization.purity
              << "  mse " << rep.mse_mean << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layered scene decomposition and generation with competing experts"};
    app.require_subcommand(1);

    std::string config_path, data, out, ckpt, image, report, experts_csv;
    int n_samples = 16;
    bool threshold = false;
    std::optional<uint64_t> seed_opt;
    uint64_t seed = 0;

    auto* gen_data = app.add_subcommand("gen-data", "generate a sprite dataset");
    gen_data->add_option("--config", config_path, "flat key=value config file");
    gen_data->add_option("--out", out, "output dataset directory")->required();
    gen_data->add_option("--seed", seed_opt, "override the config seed");

    auto* train_cmd = app.add_subcommand("train", "train the expert ensemble");
    train_cmd->add_option("--config", config_path, "flat key=value config file");
    train_cmd->add_option("--data", data, "dataset directory")->required();
    train_cmd->add_option("--out", out, "run output directory")->required();
    train_cmd->add_option("--seed", seed_opt, "override the config seed");

    auto* decomp = app.add_subcommand("decompose", "decompose one image into layers");
    decomp->add_option("--ckpt", ckpt, "checkpoint file")->required();
    decomp->add_option("--image", image, "input PNG")->required();
    decomp->add_option("--out", out, "output directory")->required();
    decomp->add_option("--seed", seed, "decomposition seed");

    auto* sample = app.add_subcommand("sample", "sample components and layered scenes");
    sample->add_option("--ckpt", ckpt, "checkpoint file")->required();
    sample->add_option("--out", out, "output directory")->required();
    sample->add_option("--experts", experts_csv, "comma list of expert ids, back to front");
    sample->add_option("--n", n_samples, "samples per expert / plan rows");
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_flag("--threshold", threshold, "threshold masks at 0.5");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", data, "dataset directory")->required();
    eval_cmd->add_option("--report", report, "output report JSON")->required();
    eval_cmd->add_option("--seed", seed, "evaluation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        if (gen_data->parsed()) return cmd_gen_data(config_path, out, seed_opt);
        if (train_cmd->parsed()) return cmd_train(config_path, data, out, seed_opt);
        if (decomp->parsed()) return cmd_decompose(ckpt, image, out, seed);
        if (sample->parsed()) return cmd_sample(ckpt, out, experts_csv, n_samples, seed, threshold);
        if (eval_cmd->parsed()) return cmd_eval(ckpt, data, report, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
