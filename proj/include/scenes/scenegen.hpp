#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include "scenes/competition.hpp"
#include "scenes/layering.hpp"
#include "scenes/nets.hpp"

namespace scenes {

enum class MaskMode { soft, threshold };

struct GenerationPlan {
    std::vector<int> experts;  // back-to-front; experts[0] paints the background
    std::vector<std::optional<torch::Tensor>> fixed_z;  // optional per-step override
    MaskMode mask_mode = MaskMode::soft;
    uint64_t seed = 0;
};

struct ComponentSample {
    torch::Tensor appearance;  // [3,H,W]
    torch::Tensor mask;        // [1,H,W], full unoccluded shape
    torch::Tensor z;
};

// z ~ N(0, I) decoded into an unoccluded component.
ComponentSample sample_component(Expert& expert, torch::Generator& gen);

// Layer-wise generation: one prior sample per step, painted back-to-front.
// The first layer's mask is forced to 1 (background convention); generation
// never consults attention or encoder networks.
std::pair<torch::Tensor, LayerStack> generate_scene(std::vector<Expert>& experts,
                                                    const GenerationPlan& plan);

// Paints components in the given order; the first one is the canvas.
torch::Tensor recombine(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& components,
                        const std::vector<int>& order);

// The expert most often winning the forced final step under greedy
// decomposition of the validation images; ties break to the lowest id.
int infer_background_expert(std::vector<Expert>& experts, const torch::Tensor& val_images, int T,
                            const LossWeights& weights, uint64_t seed = 0);

}  // namespace scenes
