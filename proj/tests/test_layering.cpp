#include <torch/torch.h>

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_compat.hpp"

#include "scenes/layering.hpp"

using namespace scenes;

namespace {

torch::Tensor pmap(double value, int64_t h = 4, int64_t w = 4) {
    return torch::full({1, h, w}, value, torch::kFloat64);
}

torch::Tensor rgb(double value, int64_t h = 4, int64_t w = 4) {
    return torch::full({3, h, w}, value, torch::kFloat64);
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

}  // namespace

TEST_CASE("regions_from_masks: full occlusion") {
    auto out = regions_from_masks({pmap(1.0), pmap(1.0)});
    CHECK(max_abs(out.regions[0]) == 0.0);
    CHECK(max_abs(out.regions[1] - 1.0) == 0.0);
}

TEST_CASE("regions_from_masks: absent front layer") {
    auto out = regions_from_masks({pmap(1.0), pmap(0.0)});
    CHECK(max_abs(out.regions[0] - 1.0) == 0.0);
    CHECK(max_abs(out.regions[1]) == 0.0);
}

TEST_CASE("regions_from_masks: soft masks telescope") {
    auto out = regions_from_masks({pmap(1.0), pmap(0.5), pmap(0.5)});
    CHECK(max_abs(out.regions[2] - 0.5) == 0.0);
    CHECK(max_abs(out.regions[1] - 0.25) == 0.0);
    CHECK(max_abs(out.regions[0] - 0.25) == 0.0);
    CHECK(out.scopes.steps() == 3);
    CHECK(max_abs(out.scopes.initial() - 1.0) == 0.0);
    CHECK(max_abs(out.scopes.final()) == 0.0);
    CHECK(out.scopes.is_monotone());
}

TEST_CASE("regions_from_masks: background mask 1 partitions the image") {
    torch::manual_seed(11);
    std::vector<torch::Tensor> masks{pmap(1.0, 8, 8)};
    for (int t = 0; t < 3; ++t) masks.push_back(torch::rand({1, 8, 8}, torch::kFloat64));
    auto out = regions_from_masks(masks);
    torch::Tensor total = torch::zeros_like(masks[0]);
    for (const auto& r : out.regions) total = total + r;
    CHECK(max_abs(total - 1.0) < 1e-12);
    CHECK(max_abs(out.scopes.final()) < 1e-12);
}

TEST_CASE("regions_from_masks: region bounds") {
    torch::manual_seed(3);
    std::vector<torch::Tensor> masks;
    for (int t = 0; t < 4; ++t) masks.push_back(torch::rand({1, 6, 6}, torch::kFloat64));
    auto out = regions_from_masks(masks);
    for (size_t t = 0; t < masks.size(); ++t) {
        // scopes[0] = s_T pairs with the front-most mask (index T-1).
        const auto& scope = out.scopes.scopes[masks.size() - 1 - t];
        CHECK((out.regions[t] - masks[t]).max().item<double>() <= 0.0);
        CHECK((out.regions[t] - scope).max().item<double>() <= 0.0);
    }
}

TEST_CASE("regions_from_masks: errors") {
    CHECK_THROWS_AS(regions_from_masks({}), std::invalid_argument);
    CHECK_THROWS_AS(regions_from_masks({pmap(1.0, 4, 4), pmap(1.0, 8, 8)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(regions_from_masks({pmap(1.5)}), std::invalid_argument);
    CHECK_THROWS_AS(regions_from_masks({pmap(-0.1)}), std::invalid_argument);
}

TEST_CASE("compose: identity and weighted sum") {
    auto x = torch::rand({3, 4, 4}, torch::kFloat64);
    CHECK(max_abs(compose({pmap(1.0)}, {x}) - x) == 0.0);

    auto image = compose({pmap(0.25), pmap(0.25), pmap(0.5)}, {rgb(0.0), rgb(1.0), rgb(0.5)});
    CHECK(max_abs(image - 0.5) == 0.0);
}

TEST_CASE("compose: rejects region overflow") {
    CHECK_THROWS_AS(compose({pmap(0.75), pmap(0.75)}, {rgb(0.0), rgb(1.0)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(compose({pmap(0.5)}, {rgb(0.5), rgb(0.5)}), std::invalid_argument);
}

TEST_CASE("layer_composite: mask extremes") {
    auto canvas = torch::rand({3, 4, 4}, torch::kFloat64);
    auto appearance = torch::rand({3, 4, 4}, torch::kFloat64);
    CHECK(max_abs(layer_composite(canvas, pmap(0.0), appearance) - canvas) == 0.0);
    CHECK(max_abs(layer_composite(canvas, pmap(1.0), appearance) - appearance) == 0.0);
}

TEST_CASE("layer_composite painting agrees with compose of regions") {
    torch::manual_seed(7);
    std::vector<torch::Tensor> masks{pmap(1.0, 8, 8)};
    std::vector<torch::Tensor> apps{torch::rand({3, 8, 8}, torch::kFloat64)};
    for (int t = 0; t < 3; ++t) {
        masks.push_back(torch::rand({1, 8, 8}, torch::kFloat64));
        apps.push_back(torch::rand({3, 8, 8}, torch::kFloat64));
    }
    torch::Tensor canvas = torch::zeros({3, 8, 8}, torch::kFloat64);
    for (size_t t = 0; t < masks.size(); ++t) canvas = layer_composite(canvas, masks[t], apps[t]);
    auto composed = compose(regions_from_masks(masks).regions, apps);
    CHECK(max_abs(canvas - composed) < 1e-6);
}

TEST_CASE("binary-mask round trip is bit-exact") {
    torch::manual_seed(13);
    std::vector<torch::Tensor> masks{pmap(1.0, 8, 8)};
    std::vector<torch::Tensor> apps{torch::rand({3, 8, 8}, torch::kFloat64)};
    for (int t = 0; t < 3; ++t) {
        masks.push_back((torch::rand({1, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64));
        apps.push_back(torch::rand({3, 8, 8}, torch::kFloat64));
    }
    torch::Tensor canvas = torch::zeros({3, 8, 8}, torch::kFloat64);
    for (size_t t = 0; t < masks.size(); ++t) canvas = layer_composite(canvas, masks[t], apps[t]);
    auto composed = compose(regions_from_masks(masks).regions, apps);
    CHECK(canvas.equal(composed));
}

TEST_CASE("occlusion order: swap changes exactly the overlap") {
    auto a = torch::zeros({1, 8, 8}, torch::kFloat64);
    auto b = torch::zeros({1, 8, 8}, torch::kFloat64);
    a.index_put_({0, torch::indexing::Slice(1, 5), torch::indexing::Slice(1, 5)}, 1.0);
    b.index_put_({0, torch::indexing::Slice(3, 7), torch::indexing::Slice(3, 7)}, 1.0);
    std::vector<torch::Tensor> apps{rgb(0.25, 8, 8), rgb(0.5, 8, 8), rgb(1.0, 8, 8)};

    auto i1 = compose(regions_from_masks({pmap(1.0, 8, 8), a, b}).regions, apps);
    auto i2 = compose(regions_from_masks({pmap(1.0, 8, 8), b, a}).regions,
                      {apps[0], apps[2], apps[1]});
    auto diff = (i1 - i2).abs().sum(0, true) > 0;
    auto overlap = (a * b) > 0;
    CHECK(diff.equal(overlap));
}

TEST_CASE("scope_rollforward: examples and identity") {
    auto u1 = scope_rollforward(pmap(1.0), pmap(0.25));
    CHECK(max_abs(u1.scope - 0.75) == 0.0);

    auto u2 = scope_rollforward(pmap(0.6), pmap(0.0));
    CHECK(max_abs(u2.scope - 0.6) == 0.0);
    CHECK(max_abs(u2.region) == 0.0);

    auto u3 = scope_rollforward(pmap(0.5), pmap(0.5));
    CHECK(max_abs(u3.scope - 0.25) == 0.0);
    CHECK(max_abs(u3.region - 0.25) == 0.0);
    CHECK((u3.scope + u3.region).equal(pmap(0.5)));
}

TEST_CASE("scope_rollforward: result bounded by scope") {
    torch::manual_seed(5);
    auto scope = torch::rand({1, 8, 8}, torch::kFloat64);
    auto alpha = torch::rand({1, 8, 8}, torch::kFloat64);
    auto u = scope_rollforward(scope, alpha);
    CHECK((u.scope - scope).max().item<double>() <= 0.0);
    CHECK(u.scope.min().item<double>() >= 0.0);
    CHECK(u.scope.max().item<double>() <= 1.0);
}

TEST_CASE("telescoping partition with forced final step") {
    torch::manual_seed(21);
    for (int trial = 0; trial < 20; ++trial) {
        const int T = 4;
        torch::Tensor scope = torch::ones({1, 8, 8}, torch::kFloat64);
        torch::Tensor total = torch::zeros_like(scope);
        for (int t = T; t >= 1; --t) {
            auto alpha = t == 1 ? torch::ones_like(scope) : torch::rand({1, 8, 8}, torch::kFloat64);
            auto u = scope_rollforward(scope, alpha);
            total = total + u.region;
            scope = u.scope;
        }
        CHECK(max_abs(total - 1.0) < 1e-12);
        CHECK(max_abs(scope) == 0.0);
    }
}
