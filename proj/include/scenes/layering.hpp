#pragma once

#include <torch/torch.h>

#include <vector>

namespace scenes {

// Shape/value conventions used across the project:
//   pixel map  = [1,H,W] (or [B,1,H,W]) float tensor, values in [0,1]
//   RGB image  = [3,H,W] (or [B,3,H,W]) float tensor, values in [0,1]
// Layer lists are ordered back-to-front: index 0 is the background,
// index T-1 the front-most layer.

void check_pixel_map(const torch::Tensor& t, const char* what);
void check_image_rgb(const torch::Tensor& t, const char* what);

// Ordered stack of scene layers with full (unoccluded) masks.
struct LayerStack {
    std::vector<torch::Tensor> masks;        // [1,H,W] each, back-to-front
    std::vector<torch::Tensor> appearances;  // [3,H,W] each
    std::vector<int64_t> classes;            // per-layer class id

    int64_t size() const { return static_cast<int64_t>(masks.size()); }
};

// Scopes s_T ... s_0 as produced by a front-to-back sweep. scopes[0] is the
// initial all-ones scope, scopes[T] the residual after all layers.
struct ScopeSequence {
    std::vector<torch::Tensor> scopes;

    int64_t steps() const { return static_cast<int64_t>(scopes.size()) - 1; }
    const torch::Tensor& initial() const { return scopes.front(); }
    const torch::Tensor& final() const { return scopes.back(); }
    // Pixelwise monotone non-increasing front-to-back, within tol.
    bool is_monotone(double tol = 0.0) const;
};

struct RegionDecomposition {
    std::vector<torch::Tensor> regions;  // aligned with the input mask order
    ScopeSequence scopes;
};

// Visible regions of layered masks: sweeping front-to-back, each layer's
// region is its mask restricted to the scope left over by the layers in
// front of it.
RegionDecomposition regions_from_masks(const std::vector<torch::Tensor>& masks);

// Weighted sum of appearances under the given (disjoint) regions. Regions
// must sum to at most 1 per pixel (tolerance 1e-6).
torch::Tensor compose(const std::vector<torch::Tensor>& regions,
                      const std::vector<torch::Tensor>& appearances);

// Paints one layer over a canvas: mask * appearance + (1 - mask) * canvas.
torch::Tensor layer_composite(const torch::Tensor& canvas,
                              const torch::Tensor& mask,
                              const torch::Tensor& appearance);

struct ScopeUpdate {
    torch::Tensor scope;   // scope remaining after the step
    torch::Tensor region;  // area claimed by the step: old scope * alpha
};

// Claims the fraction `alpha` of the current scope. The identity
// region + new scope == old scope holds by construction (region is
// subtracted, not recomposed), which is what makes T-step partitions sum
// to one exactly.
ScopeUpdate scope_rollforward(const torch::Tensor& scope, const torch::Tensor& alpha);

}  // namespace scenes
