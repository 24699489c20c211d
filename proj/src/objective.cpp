#include "scenes/objective.hpp"

#include <stdexcept>

#include "scenes/layering.hpp"

namespace scenes {

namespace {

torch::Tensor sum_spatial(const torch::Tensor& map) {
    // [*,C,H,W] -> [*]; keeps a leading batch dim when present.
    return map.sum({-3, -2, -1});
}

torch::Tensor clamp_prob(const torch::Tensor& p) {
    return p.clamp(kProbEps, 1.0 - kProbEps);
}

}  // namespace

void LossWeights::validate() const {
    if (beta < 0 || gamma < 0 || lambda < 0) {
        throw std::invalid_argument("loss weights must be >= 0");
    }
    if (!(sigma_x > 0)) throw std::invalid_argument("sigma_x must be > 0");
}

std::pair<torch::Tensor, torch::Tensor> recon_term(const torch::Tensor& image,
                                                   const torch::Tensor& appearance_mean,
                                                   const torch::Tensor& region, double sigma_x) {
    if (!(sigma_x > 0)) throw std::invalid_argument("recon_term: sigma_x must be > 0");
    auto residual = (image - appearance_mean).pow(2).sum(-3, /*keepdim=*/true);
    auto map = region / (2.0 * sigma_x * sigma_x) * residual;
    return {map, sum_spatial(map)};
}

std::pair<torch::Tensor, torch::Tensor> gaussian_kl(const LatentStats& stats) {
    auto var = torch::exp(stats.logvar);
    auto vec = 0.5 * (stats.mu.pow(2) + var - 1.0 - stats.logvar);
    return {vec, vec.sum(-1)};
}

std::pair<torch::Tensor, torch::Tensor> bernoulli_kl(const torch::Tensor& q_prob,
                                                     const torch::Tensor& p_prob) {
    auto q = clamp_prob(q_prob);
    auto p = clamp_prob(p_prob);
    auto map = q * (torch::log(q) - torch::log(p)) +
               (1.0 - q) * (torch::log1p(-q) - torch::log1p(-p));
    return {map, sum_spatial(map)};
}

torch::Tensor step_loss(const LossTerms& terms, const LossWeights& weights) {
    return terms.recon + weights.beta * terms.kl_latent + weights.gamma * terms.kl_region;
}

LossTerms compute_loss_terms(const torch::Tensor& image, const torch::Tensor& scope,
                             const torch::Tensor& region, const LatentStats& stats,
                             const torch::Tensor& appearance_mean, const torch::Tensor& mask_prob,
                             double sigma_x) {
    LossTerms terms;
    std::tie(terms.recon_map, terms.recon) = recon_term(image, appearance_mean, region, sigma_x);
    std::tie(terms.kl_latent_vec, terms.kl_latent) = gaussian_kl(stats);
    std::tie(terms.kl_region_map, terms.kl_region) = bernoulli_kl(region, scope * mask_prob);
    return terms;
}

McEstimate mc_step_bound(Expert& expert, const torch::Tensor& image, const torch::Tensor& scope,
                         torch::Generator& gen, int64_t n_samples, double sigma_x) {
    if (n_samples < 100) throw std::invalid_argument("mc_step_bound: need n_samples >= 100");
    if (image.size(-2) > 8 || image.size(-1) > 8 || expert->config.latent_dim > 2) {
        throw std::invalid_argument("mc_step_bound: instance too large (<= 8x8 pixels, L <= 2)");
    }
    check_image_rgb(image, "mc_step_bound: image");
    check_pixel_map(scope, "mc_step_bound: scope");
    torch::NoGradGuard no_grad;

    auto img = image.unsqueeze(0);
    auto sc = scope.unsqueeze(0);
    auto alpha = expert->attention->forward(img, sc);
    auto region = sc * alpha;  // Bernoulli mean, used analytically throughout
    auto stats = expert->encoder->forward(img, region);
    auto sigma = torch::exp(0.5 * stats.logvar);

    auto recon_samples = torch::empty({n_samples}, torch::kFloat64);
    auto zkl_samples = torch::empty({n_samples}, torch::kFloat64);
    auto rkl_samples = torch::empty({n_samples}, torch::kFloat64);

    const int64_t chunk = 4096;
    for (int64_t start = 0; start < n_samples; start += chunk) {
        const int64_t m = std::min(chunk, n_samples - start);
        auto eps = torch::randn({m, expert->config.latent_dim}, gen, stats.mu.options());
        auto z = stats.mu + sigma * eps;
        auto [mean_x, mask_prob] = expert->decoder->forward(z);

        auto [recon_map, recon] = recon_term(img.expand_as(mean_x), mean_x,
                                             region.expand({m, 1, region.size(-2), region.size(-1)}),
                                             sigma_x);
        // log q(z) - log p(z) with q = N(mu, sigma^2), p = N(0, I).
        auto log_ratio = (0.5 * (z.pow(2) - eps.pow(2)) - 0.5 * stats.logvar).sum(-1);
        auto [rkl_map, rkl] = bernoulli_kl(region.expand_as(mask_prob), sc * mask_prob);

        recon_samples.narrow(0, start, m) = recon.to(torch::kFloat64);
        zkl_samples.narrow(0, start, m) = log_ratio.to(torch::kFloat64);
        rkl_samples.narrow(0, start, m) = rkl.to(torch::kFloat64);
    }

    auto stat = [n_samples](const torch::Tensor& s) {
        const double mean = s.mean().item<double>();
        const double sd = s.std(/*unbiased=*/true).item<double>();
        return std::pair<double, double>{mean, sd / std::sqrt(static_cast<double>(n_samples))};
    };
    McEstimate est;
    est.n_samples = n_samples;
    std::tie(est.recon_mean, est.recon_se) = stat(recon_samples);
    std::tie(est.kl_latent_mean, est.kl_latent_se) = stat(zkl_samples);
    std::tie(est.kl_region_mean, est.kl_region_se) = stat(rkl_samples);
    std::tie(est.total_mean, est.total_se) = stat(recon_samples + zkl_samples + rkl_samples);
    return est;
}

}  // namespace scenes
