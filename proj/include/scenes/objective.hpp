#pragma once

#include <torch/torch.h>

#include "scenes/nets.hpp"

namespace scenes {

// Probability clamp applied symmetrically before any log.
constexpr double kProbEps = 1e-6;

struct LossWeights {
    double beta = 1.0;     // latent KL weight
    double gamma = 1.0;    // region KL weight
    double sigma_x = 0.1;  // pixel noise std
    double lambda = 1.0;   // appearance weight in the competition energy

    void validate() const;
};

// Per-step loss terms; scalars are summed over pixels/latents (batch dim, if
// any, is preserved). Maps/vectors are kept for diagnostics.
struct LossTerms {
    torch::Tensor recon;       // [*] scalar per scene
    torch::Tensor kl_latent;   // [*]
    torch::Tensor kl_region;   // [*]
    torch::Tensor recon_map;       // [*,1,H,W]
    torch::Tensor kl_latent_vec;   // [*,L]
    torch::Tensor kl_region_map;   // [*,1,H,W]
};

// region/(2 sigma_x^2) * (x - mean)^2, summed over channels per pixel.
std::pair<torch::Tensor, torch::Tensor> recon_term(const torch::Tensor& image,
                                                   const torch::Tensor& appearance_mean,
                                                   const torch::Tensor& region, double sigma_x);

// KL(N(mu, sigma^2) || N(0, 1)) per latent dimension.
std::pair<torch::Tensor, torch::Tensor> gaussian_kl(const LatentStats& stats);

// KL(Bernoulli(q) || Bernoulli(p)) per pixel, both clamped to [eps, 1-eps].
std::pair<torch::Tensor, torch::Tensor> bernoulli_kl(const torch::Tensor& q_prob,
                                                     const torch::Tensor& p_prob);

// recon + beta * kl_latent + gamma * kl_region (minimized per step).
torch::Tensor step_loss(const LossTerms& terms, const LossWeights& weights);

// All three terms, shared by proposals and the trainer's batched path.
// q = clamp(scope * alpha rolled into `region`), p = clamp(scope * mask_prob).
LossTerms compute_loss_terms(const torch::Tensor& image, const torch::Tensor& scope,
                             const torch::Tensor& region, const LatentStats& stats,
                             const torch::Tensor& appearance_mean, const torch::Tensor& mask_prob,
                             double sigma_x);

struct McEstimate {
    double recon_mean = 0, recon_se = 0;
    double kl_latent_mean = 0, kl_latent_se = 0;
    double kl_region_mean = 0, kl_region_se = 0;
    double total_mean = 0, total_se = 0;
    int64_t n_samples = 0;
};

// Monte-Carlo check of the per-step bound on a tiny instance: z is sampled
// from the encoder posterior, region expectations use Bernoulli means.
McEstimate mc_step_bound(Expert& expert, const torch::Tensor& image, const torch::Tensor& scope,
                         torch::Generator& gen, int64_t n_samples, double sigma_x);

}  // namespace scenes
