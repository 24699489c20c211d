#include <torch/torch.h>

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_compat.hpp"

#include "grad_check.hpp"
#include "scenes/nets.hpp"
#include "scenes/rng.hpp"

using namespace scenes;

namespace {

ExpertArchConfig tiny_config() {
    ExpertArchConfig cfg;
    cfg.latent_dim = 2;
    cfg.n_blocks = 2;
    cfg.n_features = 4;
    cfg.height = cfg.width = 8;
    cfg.unet_depth = 3;
    cfg.unet_base_channels = 4;
    cfg.dtype = torch::kFloat64;
    return cfg;
}

}  // namespace

TEST_CASE("arch config validation") {
    ExpertArchConfig cfg;  // 64x64 paper default
    cfg.validate();
    cfg.height = 60;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.validate();
    cfg.n_blocks = 5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.unet_depth = 4;  // 8 not divisible by 16
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("attention output: shape and open range") {
    auto cfg = tiny_config();
    auto expert = init_expert(cfg, 1);
    auto image = torch::rand({3, 8, 8}, torch::kFloat64);
    auto scope = torch::rand({1, 8, 8}, torch::kFloat64);
    auto alpha = attention_forward(expert, image, scope);
    CHECK(alpha.sizes() == torch::IntArrayRef({1, 8, 8}));
    CHECK(alpha.min().item<double>() > 0.0);
    CHECK(alpha.max().item<double>() < 1.0);
    // shape mismatch with the configured size
    CHECK_THROWS_AS(attention_forward(expert, torch::rand({3, 16, 16}, torch::kFloat64),
                                      torch::rand({1, 16, 16}, torch::kFloat64)),
                    std::invalid_argument);
}

TEST_CASE("encoder output: stats shapes, purity, clamped logvar") {
    auto cfg = tiny_config();
    auto expert = init_expert(cfg, 3);
    auto image = torch::rand({3, 8, 8}, torch::kFloat64);
    auto region = torch::rand({1, 8, 8}, torch::kFloat64);
    auto s1 = encoder_forward(expert, image, region);
    auto s2 = encoder_forward(expert, image, region);
    CHECK(s1.mu.sizes() == torch::IntArrayRef({2}));
    CHECK(s1.logvar.sizes() == torch::IntArrayRef({2}));
    CHECK(s1.mu.equal(s2.mu));
    CHECK(s1.logvar.equal(s2.logvar));
    CHECK(s1.logvar.min().item<double>() >= -10.0);
    CHECK(s1.logvar.max().item<double>() <= 10.0);
}

TEST_CASE("decoder output: shapes, range, live coordinate grids") {
    auto cfg = tiny_config();
    auto expert = init_expert(cfg, 4);
    auto z = torch::randn({2}, torch::kFloat64);
    auto [appearance, mask] = decoder_forward(expert, z);
    CHECK(appearance.sizes() == torch::IntArrayRef({3, 8, 8}));
    CHECK(mask.sizes() == torch::IntArrayRef({1, 8, 8}));
    CHECK(appearance.min().item<double>() > 0.0);
    CHECK(appearance.max().item<double>() < 1.0);

    auto [shifted, shifted_mask] = expert->decoder->forward(z.unsqueeze(0), /*grid_shift=*/0.35);
    CHECK(!shifted.squeeze(0).equal(appearance));

    CHECK_THROWS_AS(decoder_forward(expert, torch::randn({5}, torch::kFloat64)),
                    std::invalid_argument);
}

TEST_CASE("reparameterize: determinism, zero-noise limit, moment match") {
    auto mu = torch::tensor({0.3, -1.2}, torch::kFloat64);

    LatentStats floor_stats{mu, torch::full({2}, -10.0, torch::kFloat64)};
    auto g1 = make_generator(9);
    auto z = reparameterize(floor_stats, g1);
    CHECK((z - mu).abs().max().item<double>() < 0.1);

    auto g2 = make_generator(9);
    auto g3 = make_generator(9);
    LatentStats stats{mu, torch::tensor({0.4, -0.7}, torch::kFloat64)};
    CHECK(reparameterize(stats, g2).equal(reparameterize(stats, g3)));

    // Monte-Carlo moment check: mean of 1e5 draws within 4 standard errors.
    const int64_t n = 100000;
    auto gen = make_generator(123);
    LatentStats batch_stats{mu.unsqueeze(0).expand({n, 2}).contiguous(),
                            torch::zeros({n, 2}, torch::kFloat64)};
    auto draws = reparameterize(batch_stats, gen);
    auto se = 1.0 / std::sqrt(static_cast<double>(n));  // sigma = 1
    auto dev = (draws.mean(0) - mu).abs().max().item<double>();
    CHECK(dev < 4 * se);
}

TEST_CASE("init_expert: deterministic, finite, forward smoke") {
    auto cfg = tiny_config();
    auto a = init_expert(cfg, 77);
    auto b = init_expert(cfg, 77);
    auto c = init_expert(cfg, 78);
    bool identical = true, differs = false;
    for (const auto& item : a->named_parameters()) {
        auto pb = b->named_parameters()[item.key()];
        auto pc = c->named_parameters()[item.key()];
        identical = identical && item.value().equal(pb);
        differs = differs || !item.value().equal(pc);
        CHECK(item.value().isfinite().all().item<bool>());
    }
    CHECK(identical);
    CHECK(differs);

    auto image = torch::rand({3, 8, 8}, torch::kFloat64);
    auto scope = torch::ones({1, 8, 8}, torch::kFloat64);
    auto alpha = attention_forward(a, image, scope);
    auto stats = encoder_forward(a, image, scope * alpha);
    auto gen = make_generator(5);
    auto z = reparameterize(stats, gen);
    auto [appearance, mask] = decoder_forward(a, z);
    for (const auto& t : {alpha, stats.mu, stats.logvar, z, appearance, mask}) {
        CHECK(t.isfinite().all().item<bool>());
    }
}

TEST_CASE("gradient check: attention net") {
    auto cfg = tiny_config();
    auto expert = init_expert(cfg, 11);
    auto image = torch::rand({3, 8, 8}, torch::kFloat64);
    auto scope = torch::rand({1, 8, 8}, torch::kFloat64);
    auto loss = [&] { return attention_forward(expert, image, scope).sum(); };
    CHECK(max_rel_grad_error(loss, expert->attention->parameters(), 20, 1e-5, 31) < 1e-4);
}

TEST_CASE("gradient check: encoder") {
    auto cfg = tiny_config();
    auto expert = init_expert(cfg, 12);
    auto image = torch::rand({3, 8, 8}, torch::kFloat64);
    auto region = torch::rand({1, 8, 8}, torch::kFloat64);
    auto loss = [&] {
        auto stats = encoder_forward(expert, image, region);
        return stats.mu.sum() + 0.5 * stats.logvar.sum();
    };
    CHECK(max_rel_grad_error(loss, expert->encoder->parameters(), 20, 1e-5, 32) < 1e-4);
}

TEST_CASE("gradient check: decoder w.r.t. parameters and z") {
    auto cfg = tiny_config();
    auto expert = init_expert(cfg, 13);
    auto z = torch::randn({2}, torch::kFloat64).requires_grad_(true);
    auto loss = [&] {
        auto [appearance, mask] = decoder_forward(expert, z);
        return appearance.sum() + 2.0 * mask.sum();
    };
    auto params = expert->decoder->parameters();
    params.push_back(z);
    CHECK(max_rel_grad_error(loss, params, 20, 1e-5, 33) < 1e-4);
}
