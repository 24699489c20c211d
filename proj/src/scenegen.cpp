#include "scenes/scenegen.hpp"

#include <stdexcept>

#include "scenes/rng.hpp"

namespace scenes {

ComponentSample sample_component(Expert& expert, torch::Generator& gen) {
    torch::NoGradGuard no_grad;
    const auto& cfg = expert->config;
    auto z = torch::randn({1, cfg.latent_dim}, gen,
                          torch::TensorOptions().dtype(cfg.dtype));
    auto [appearance, mask] = expert->decoder->forward(z);
    return {appearance.squeeze(0), mask.squeeze(0), z.squeeze(0)};
}

std::pair<torch::Tensor, LayerStack> generate_scene(std::vector<Expert>& experts,
                                                    const GenerationPlan& plan) {
    if (plan.experts.empty()) throw std::invalid_argument("generate_scene: empty plan");
    for (int k : plan.experts) {
        if (k < 0 || k >= static_cast<int>(experts.size())) {
            throw std::invalid_argument("generate_scene: invalid expert id " + std::to_string(k));
        }
    }
    if (!plan.fixed_z.empty() && plan.fixed_z.size() != plan.experts.size()) {
        throw std::invalid_argument("generate_scene: fixed_z length mismatch");
    }
    torch::NoGradGuard no_grad;
    auto gen = make_generator(plan.seed);

    LayerStack stack;
    torch::Tensor canvas;
    for (size_t t = 0; t < plan.experts.size(); ++t) {
        Expert& expert = experts[plan.experts[t]];
        ComponentSample comp = sample_component(expert, gen);
        if (!plan.fixed_z.empty() && plan.fixed_z[t].has_value()) {
            comp.z = plan.fixed_z[t]->to(expert->config.dtype);
            auto [appearance, mask] = expert->decoder->forward(comp.z.unsqueeze(0));
            comp.appearance = appearance.squeeze(0);
            comp.mask = mask.squeeze(0);
        }
        torch::Tensor mask = comp.mask;
        if (t == 0) {
            mask = torch::ones_like(mask);  // background claims everything behind
        } else if (plan.mask_mode == MaskMode::threshold) {
            mask = (mask >= 0.5).to(mask.dtype());
        }
        stack.masks.push_back(mask);
        stack.appearances.push_back(comp.appearance);
        stack.classes.push_back(plan.experts[t]);
        canvas = (t == 0) ? comp.appearance : layer_composite(canvas, mask, comp.appearance);
    }
    return {canvas, std::move(stack)};
}

torch::Tensor recombine(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& components,
                        const std::vector<int>& order) {
    if (order.empty()) throw std::invalid_argument("recombine: empty order");
    for (int i : order) {
        if (i < 0 || i >= static_cast<int>(components.size())) {
            throw std::invalid_argument("recombine: order index out of range");
        }
    }
    torch::Tensor canvas = components[order[0]].first;
    for (size_t j = 1; j < order.size(); ++j) {
        const auto& [appearance, mask] = components[order[j]];
        canvas = layer_composite(canvas, mask, appearance);
    }
    return canvas;
}

int infer_background_expert(std::vector<Expert>& experts, const torch::Tensor& val_images, int T,
                            const LossWeights& weights, uint64_t seed) {
    if (val_images.size(0) < 10) {
        throw std::invalid_argument("infer_background_expert: need >= 10 validation scenes");
    }
    torch::NoGradGuard no_grad;
    const auto dtype = experts.front()->config.dtype;
    std::vector<int64_t> wins(experts.size(), 0);
    for (int64_t i = 0; i < val_images.size(0); ++i) {
        auto image = val_images[i].to(dtype).div(255.0);
        auto trace = decompose(experts, image, T, weights, SelectionMode::greedy,
                               derive_seed(seed, static_cast<uint64_t>(i)));
        ++wins[static_cast<size_t>(trace.winners_by_layer[0])];
    }
    int best = 0;
    for (size_t k = 1; k < wins.size(); ++k) {
        if (wins[k] > wins[best]) best = static_cast<int>(k);
    }
    return best;
}

}  // namespace scenes
