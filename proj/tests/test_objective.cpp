#include <torch/torch.h>

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_compat.hpp"

#include "scenes/objective.hpp"
#include "scenes/rng.hpp"

using namespace scenes;

namespace {

ExpertArchConfig mc_config() {
    ExpertArchConfig cfg;
    cfg.latent_dim = 2;
    cfg.n_blocks = 2;
    cfg.n_features = 4;
    cfg.height = cfg.width = 4;
    cfg.unet_depth = 2;
    cfg.unet_base_channels = 4;
    cfg.dtype = torch::kFloat64;
    return cfg;
}

// Pins the encoder's logvar head to the clamp floor so the posterior is
// (nearly) deterministic.
void pin_logvar_floor(Expert& expert) {
    torch::NoGradGuard no_grad;
    auto& fc2 = expert->encoder->fc2;
    const int64_t L = expert->config.latent_dim;
    fc2->weight.narrow(0, L, L).zero_();
    fc2->bias.narrow(0, L, L).fill_(-100.0);
}

}  // namespace

TEST_CASE("recon_term: closed forms") {
    auto image = torch::rand({3, 4, 4}, torch::kFloat64);
    auto ones = torch::ones({1, 4, 4}, torch::kFloat64);

    auto [map0, sum0] = recon_term(image, image, ones, 0.1);
    CHECK(sum0.item<double>() == 0.0);

    auto other = torch::rand({3, 4, 4}, torch::kFloat64);
    auto [map1, sum1] = recon_term(image, other, torch::zeros_like(ones), 0.1);
    CHECK(sum1.item<double>() == 0.0);

    // residual 0.2 in each channel, sigma_x = 0.1: 3 * 0.04 / 0.02 = 6 per pixel
    auto mean = image.clamp(0.0, 0.8) ;
    auto im = mean + 0.2;
    auto [map2, sum2] = recon_term(im, mean, ones, 0.1);
    CHECK(map2.min().item<double>() == doctest::Approx(6.0).epsilon(1e-9));
    CHECK(map2.max().item<double>() == doctest::Approx(6.0).epsilon(1e-9));
    CHECK(sum2.item<double>() == doctest::Approx(6.0 * 16).epsilon(1e-9));

    CHECK_THROWS_AS(recon_term(image, other, ones, 0.0), std::invalid_argument);
}

TEST_CASE("gaussian_kl: closed forms") {
    LatentStats zero{torch::zeros({2}, torch::kFloat64), torch::zeros({2}, torch::kFloat64)};
    CHECK(gaussian_kl(zero).second.item<double>() == 0.0);

    LatentStats unit_mean{torch::tensor({1.0}, torch::kFloat64),
                          torch::tensor({0.0}, torch::kFloat64)};
    CHECK(gaussian_kl(unit_mean).second.item<double>() == doctest::Approx(0.5).epsilon(1e-12));

    LatentStats wide{torch::tensor({0.0}, torch::kFloat64),
                     torch::tensor({std::log(4.0)}, torch::kFloat64)};
    CHECK(gaussian_kl(wide).second.item<double>() ==
          doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))).epsilon(1e-12));

    // vector output is per-dimension
    LatentStats two{torch::tensor({1.0, 0.0}, torch::kFloat64),
                    torch::tensor({0.0, 0.0}, torch::kFloat64)};
    auto [vec, sum] = gaussian_kl(two);
    CHECK(vec[0].item<double>() == doctest::Approx(0.5));
    CHECK(vec[1].item<double>() == 0.0);
}

TEST_CASE("bernoulli_kl: closed forms and clamping") {
    auto half = torch::full({1, 2, 2}, 0.5, torch::kFloat64);
    CHECK(bernoulli_kl(half, half).second.item<double>() == 0.0);

    auto certain = torch::ones({1, 1, 1}, torch::kFloat64);
    auto p_half = torch::full({1, 1, 1}, 0.5, torch::kFloat64);
    CHECK(bernoulli_kl(certain, p_half).second.item<double>() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-4));

    auto q = torch::full({1, 1, 1}, 0.25, torch::kFloat64);
    auto p = torch::full({1, 1, 1}, 0.75, torch::kFloat64);
    CHECK(bernoulli_kl(q, p).second.item<double>() ==
          doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-12));

    // degenerate inputs stay finite
    auto zero = torch::zeros({1, 2, 2}, torch::kFloat64);
    auto one = torch::ones({1, 2, 2}, torch::kFloat64);
    CHECK(std::isfinite(bernoulli_kl(zero, one).second.item<double>()));
    CHECK(bernoulli_kl(zero, one).second.item<double>() >= 0.0);
}

TEST_CASE("step_loss: additivity and presets") {
    LossTerms terms;
    terms.recon = torch::tensor(0.0, torch::kFloat64);
    terms.kl_latent = torch::tensor(0.0, torch::kFloat64);
    terms.kl_region = torch::tensor(0.0, torch::kFloat64);
    CHECK(step_loss(terms, {}).item<double>() == 0.0);

    terms.recon = torch::tensor(6.0, torch::kFloat64);
    terms.kl_latent = torch::tensor(0.5, torch::kFloat64);
    terms.kl_region = torch::tensor(0.7, torch::kFloat64);
    LossWeights w;
    CHECK(step_loss(terms, w).item<double>() == doctest::Approx(7.2).epsilon(1e-12));

    terms.recon = torch::tensor(1.0, torch::kFloat64);
    terms.kl_latent = torch::tensor(1.0, torch::kFloat64);
    terms.kl_region = torch::tensor(1.0, torch::kFloat64);
    LossWeights random_best{1.0, 3.26, 0.1, 0.0};
    CHECK(step_loss(terms, random_best).item<double>() == doctest::Approx(5.26).epsilon(1e-12));
}

TEST_CASE("loss terms are nonnegative and finite on random inputs") {
    torch::manual_seed(40);
    for (int trial = 0; trial < 10; ++trial) {
        auto image = torch::rand({3, 4, 4}, torch::kFloat64);
        auto mean = torch::rand({3, 4, 4}, torch::kFloat64);
        auto region = torch::rand({1, 4, 4}, torch::kFloat64);
        auto scope = torch::rand({1, 4, 4}, torch::kFloat64);
        auto mask = torch::rand({1, 4, 4}, torch::kFloat64);
        LatentStats stats{torch::randn({2}, torch::kFloat64),
                          torch::randn({2}, torch::kFloat64).clamp(-10, 10)};
        auto terms = compute_loss_terms(image, scope, scope * region, stats, mean, mask, 0.1);
        for (const auto& t : {terms.recon, terms.kl_latent, terms.kl_region}) {
            CHECK(t.item<double>() >= 0.0);
            CHECK(std::isfinite(t.item<double>()));
        }
    }
}

TEST_CASE("mask-inpainting freedom: zero-scope pixels give zero mask-logit gradient") {
    torch::manual_seed(41);
    auto scope = torch::rand({1, 6, 6}, torch::kFloat64);
    scope.index_put_({0, torch::indexing::Slice(0, 3), torch::indexing::Slice()}, 0.0);
    auto alpha = torch::rand({1, 6, 6}, torch::kFloat64);
    auto logits = torch::randn({1, 6, 6}, torch::kFloat64).requires_grad_(true);

    auto q = scope * alpha;
    auto p = scope * torch::sigmoid(logits);
    bernoulli_kl(q, p).second.backward();

    auto grad_at_zero = logits.grad().index({0, torch::indexing::Slice(0, 3)});
    CHECK(grad_at_zero.abs().max().item<double>() < 1e-8);
    // and the loss is live where scope > 0
    auto grad_elsewhere = logits.grad().index({0, torch::indexing::Slice(3, 6)});
    CHECK(grad_elsewhere.abs().max().item<double>() > 1e-8);
}

TEST_CASE("mc_step_bound: rejects tiny sample counts and big instances") {
    auto cfg = mc_config();
    auto expert = init_expert(cfg, 50);
    auto image = torch::rand({3, 4, 4}, torch::kFloat64);
    auto scope = torch::ones({1, 4, 4}, torch::kFloat64);
    auto gen = make_generator(1);
    CHECK_THROWS_AS(mc_step_bound(expert, image, scope, gen, 50, 0.1), std::invalid_argument);

    auto big = mc_config();
    big.height = big.width = 16;
    big.unet_depth = 2;
    auto big_expert = init_expert(big, 51);
    auto big_image = torch::rand({3, 16, 16}, torch::kFloat64);
    auto big_scope = torch::ones({1, 16, 16}, torch::kFloat64);
    CHECK_THROWS_AS(mc_step_bound(big_expert, big_image, big_scope, gen, 1000, 0.1),
                    std::invalid_argument);
}

TEST_CASE("mc_step_bound: latent KL matches the closed form") {
    torch::manual_seed(42);
    for (uint64_t trial = 0; trial < 3; ++trial) {
        auto cfg = mc_config();
        auto expert = init_expert(cfg, 60 + trial);
        auto image = torch::rand({3, 4, 4}, torch::kFloat64);
        auto scope = torch::rand({1, 4, 4}, torch::kFloat64);
        auto gen = make_generator(derive_seed(7, trial));
        auto est = mc_step_bound(expert, image, scope, gen, 20000, 0.1);

        auto alpha = expert->attention->forward(image.unsqueeze(0), scope.unsqueeze(0));
        auto stats = expert->encoder->forward(image.unsqueeze(0), scope.unsqueeze(0) * alpha);
        const double closed = gaussian_kl(stats).second.item<double>();
        CHECK(std::abs(est.kl_latent_mean - closed) < 3 * est.kl_latent_se);
    }
}

TEST_CASE("mc_step_bound: deterministic-posterior limit matches closed-form terms") {
    torch::manual_seed(43);
    auto cfg = mc_config();
    auto expert = init_expert(cfg, 70);
    pin_logvar_floor(expert);
    auto image = torch::rand({3, 4, 4}, torch::kFloat64);
    auto scope = torch::rand({1, 4, 4}, torch::kFloat64);
    auto gen = make_generator(99);
    auto est = mc_step_bound(expert, image, scope, gen, 20000, 0.1);

    torch::NoGradGuard no_grad;
    auto img = image.unsqueeze(0);
    auto sc = scope.unsqueeze(0);
    auto alpha = expert->attention->forward(img, sc);
    auto region = sc * alpha;
    auto stats = expert->encoder->forward(img, region);
    auto [mean_x, mask_prob] = expert->decoder->forward(stats.mu);  // z = mu in the limit
    auto terms = compute_loss_terms(img, sc, region, stats, mean_x, mask_prob, 0.1);
    const double closed_xr = (terms.recon + terms.kl_region).item<double>();
    const double closed_z = gaussian_kl(stats).second.item<double>();

    CHECK(std::abs(est.recon_mean + est.kl_region_mean - closed_xr) <
          3 * (est.recon_se + est.kl_region_se) + 1e-6);
    CHECK(std::abs(est.kl_latent_mean - closed_z) < 3 * est.kl_latent_se + 1e-6);
    CHECK(std::abs(est.total_mean - (closed_xr + closed_z)) < 3 * est.total_se + 2e-6);
}

TEST_CASE("mc_step_bound: standard error shrinks like sqrt(n)") {
    auto cfg = mc_config();
    auto expert = init_expert(cfg, 80);
    auto image = torch::rand({3, 4, 4}, torch::kFloat64);
    auto scope = torch::ones({1, 4, 4}, torch::kFloat64);
    auto g1 = make_generator(5);
    auto g2 = make_generator(5);
    auto a = mc_step_bound(expert, image, scope, g1, 10000, 0.1);
    auto b = mc_step_bound(expert, image, scope, g2, 20000, 0.1);
    const double ratio = a.total_se / b.total_se;
    CHECK(ratio > 1.2);
    CHECK(ratio < 1.7);
}
