#include "scenes/layering.hpp"

#include <stdexcept>
#include <string>

namespace scenes {

namespace {

void check_map_like(const torch::Tensor& t, const char* what, int64_t channels) {
    if (!t.defined()) {
        throw std::invalid_argument(std::string(what) + ": undefined tensor");
    }
    if (t.dim() != 3 && t.dim() != 4) {
        throw std::invalid_argument(std::string(what) + ": expected [C,H,W] or [B,C,H,W], got " +
                                    std::to_string(t.dim()) + " dims");
    }
    if (t.size(-3) != channels) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) +
                                    " channels, got " + std::to_string(t.size(-3)));
    }
    if (t.size(-2) < 1 || t.size(-1) < 1) {
        throw std::invalid_argument(std::string(what) + ": empty spatial dims");
    }
    // Value range check; detach so this never shows up in autograd graphs.
    const auto v = t.detach();
    const double lo = v.min().item<double>();
    const double hi = v.max().item<double>();
    if (!(lo >= 0.0) || !(hi <= 1.0)) {
        throw std::invalid_argument(std::string(what) + ": values outside [0,1] (min=" +
                                    std::to_string(lo) + ", max=" + std::to_string(hi) + ")");
    }
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.size(-2) != b.size(-2) || a.size(-1) != b.size(-1)) {
        throw std::invalid_argument(std::string(what) + ": spatial dimension mismatch");
    }
}

}  // namespace

void check_pixel_map(const torch::Tensor& t, const char* what) {
    check_map_like(t, what, 1);
}

void check_image_rgb(const torch::Tensor& t, const char* what) {
    check_map_like(t, what, 3);
}

bool ScopeSequence::is_monotone(double tol) const {
    for (size_t i = 1; i < scopes.size(); ++i) {
        if ((scopes[i] - scopes[i - 1]).max().item<double>() > tol) return false;
    }
    return true;
}

RegionDecomposition regions_from_masks(const std::vector<torch::Tensor>& masks) {
    if (masks.empty()) {
        throw std::invalid_argument("regions_from_masks: empty mask list");
    }
    for (const auto& m : masks) {
        check_pixel_map(m, "regions_from_masks: mask");
        check_same_shape(m, masks.front(), "regions_from_masks");
    }
    const int64_t layers = static_cast<int64_t>(masks.size());

    RegionDecomposition out;
    out.regions.resize(layers);
    torch::Tensor scope = torch::ones_like(masks.front());
    out.scopes.scopes.push_back(scope);
    for (int64_t t = layers - 1; t >= 0; --t) {
        const torch::Tensor region = masks[t] * scope;
        scope = scope - region;
        out.regions[t] = region;
        out.scopes.scopes.push_back(scope);
    }
    return out;
}

torch::Tensor compose(const std::vector<torch::Tensor>& regions,
                      const std::vector<torch::Tensor>& appearances) {
    if (regions.empty() || regions.size() != appearances.size()) {
        throw std::invalid_argument("compose: regions/appearances misaligned");
    }
    torch::Tensor region_sum = torch::zeros_like(regions.front());
    for (const auto& r : regions) {
        check_pixel_map(r, "compose: region");
        check_same_shape(r, regions.front(), "compose");
        region_sum = region_sum + r;
    }
    if (region_sum.max().item<double>() > 1.0 + 1e-6) {
        throw std::invalid_argument("compose: region sum exceeds 1");
    }
    torch::Tensor image = torch::zeros_like(appearances.front());
    for (size_t t = 0; t < regions.size(); ++t) {
        check_image_rgb(appearances[t], "compose: appearance");
        check_same_shape(appearances[t], regions[t], "compose");
        image = image + regions[t] * appearances[t];
    }
    return image;
}

torch::Tensor layer_composite(const torch::Tensor& canvas,
                              const torch::Tensor& mask,
                              const torch::Tensor& appearance) {
    check_image_rgb(canvas, "layer_composite: canvas");
    check_pixel_map(mask, "layer_composite: mask");
    check_image_rgb(appearance, "layer_composite: appearance");
    check_same_shape(canvas, mask, "layer_composite");
    check_same_shape(canvas, appearance, "layer_composite");
    return mask * appearance + (1.0 - mask) * canvas;
}

ScopeUpdate scope_rollforward(const torch::Tensor& scope, const torch::Tensor& alpha) {
    check_pixel_map(scope, "scope_rollforward: scope");
    check_pixel_map(alpha, "scope_rollforward: alpha");
    check_same_shape(scope, alpha, "scope_rollforward");
    ScopeUpdate u;
    u.region = scope * alpha;
    u.scope = scope - u.region;
    return u;
}

}  // namespace scenes
