#include "scenes/competition.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "scenes/layering.hpp"
#include "scenes/rng.hpp"

namespace scenes {

namespace {

// Stream ids for derive_seed so the noise of step t / expert k is identical
// across greedy, stochastic and exhaustive runs over the same root seed.
constexpr uint64_t kWinnerStream = 0xFFFF;

ExpertProposal propose_impl(Expert& expert, const torch::Tensor& image,
                            const torch::Tensor& scope, torch::Generator& gen,
                            const LossWeights& weights, bool force_full_alpha) {
    ExpertProposal prop;
    auto img = image.unsqueeze(0);
    auto sc = scope.unsqueeze(0);
    torch::Tensor alpha = force_full_alpha ? torch::ones_like(sc)
                                           : expert->attention->forward(img, sc);
    auto region = sc * alpha;
    auto stats = expert->encoder->forward(img, region);
    auto z = reparameterize(stats, gen);
    auto [appearance, mask_prob] = expert->decoder->forward(z);
    auto terms = compute_loss_terms(img, sc, region, stats, appearance, mask_prob,
                                    weights.sigma_x);

    prop.alpha = alpha.squeeze(0);
    prop.region = region.squeeze(0);
    prop.stats = {stats.mu.squeeze(0), stats.logvar.squeeze(0)};
    prop.z = z.squeeze(0);
    prop.appearance_mean = appearance.squeeze(0);
    prop.mask_prob = mask_prob.squeeze(0);
    prop.terms.recon = terms.recon.squeeze(0);
    prop.terms.kl_latent = terms.kl_latent.squeeze(0);
    prop.terms.kl_region = terms.kl_region.squeeze(0);
    prop.terms.recon_map = terms.recon_map.squeeze(0);
    prop.terms.kl_latent_vec = terms.kl_latent_vec.squeeze(0);
    prop.terms.kl_region_map = terms.kl_region_map.squeeze(0);

    const double rx = prop.terms.recon.item<double>();
    const double rz = prop.terms.kl_latent.item<double>();
    const double rr = prop.terms.kl_region.item<double>();
    if (!std::isfinite(rx) || !std::isfinite(rz) || !std::isfinite(rr)) {
        std::ostringstream msg;
        msg << "expert_propose: non-finite loss (recon=" << rx << ", kl_latent=" << rz
            << ", kl_region=" << rr << ", mu range [" << prop.stats.mu.min().item<double>()
            << ", " << prop.stats.mu.max().item<double>() << "])";
        throw std::runtime_error(msg.str());
    }
    return prop;
}

}  // namespace

ExpertProposal expert_propose(Expert& expert, const torch::Tensor& image,
                              const torch::Tensor& scope, torch::Generator& gen,
                              const LossWeights& weights) {
    check_image_rgb(image, "expert_propose: image");
    check_pixel_map(scope, "expert_propose: scope");
    return propose_impl(expert, image, scope, gen, weights, /*force_full_alpha=*/false);
}

std::vector<double> select_probabilities(const std::vector<std::array<double, 2>>& objectives,
                                         double lambda) {
    if (objectives.empty()) throw std::invalid_argument("select: no experts");
    std::vector<double> score(objectives.size());
    double best = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < objectives.size(); ++k) {
        const double energy = lambda * objectives[k][0] + objectives[k][1];
        if (std::isnan(energy)) throw std::invalid_argument("select: NaN objective");
        score[k] = -energy;
        best = std::max(best, score[k]);
    }
    if (!std::isfinite(best)) throw std::invalid_argument("select: all objectives infinite");
    double total = 0;
    for (double& s : score) {
        s = std::exp(s - best);
        total += s;
    }
    for (double& s : score) s /= total;
    return score;
}

int select_winner(const std::vector<std::array<double, 2>>& objectives, double lambda,
                  SelectionMode mode, std::mt19937_64& rng) {
    if (mode == SelectionMode::greedy) {
        int best_k = -1;
        double best_energy = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < objectives.size(); ++k) {
            const double energy = lambda * objectives[k][0] + objectives[k][1];
            if (std::isnan(energy)) throw std::invalid_argument("select: NaN objective");
            if (energy < best_energy) {
                best_energy = energy;
                best_k = static_cast<int>(k);
            }
        }
        if (best_k < 0) throw std::invalid_argument("select: all objectives infinite");
        return best_k;
    }
    const auto probs = select_probabilities(objectives, lambda);
    const double u = uniform_unit(rng);
    double cum = 0;
    for (size_t k = 0; k < probs.size(); ++k) {
        cum += probs[k];
        if (u < cum) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
}

DecompositionTrace decompose(std::vector<Expert>& experts, const torch::Tensor& image, int T,
                             const LossWeights& weights, SelectionMode mode, uint64_t seed) {
    if (experts.empty()) throw std::invalid_argument("decompose: no experts");
    if (T < 2) throw std::invalid_argument("decompose: need T >= 2");
    check_image_rgb(image, "decompose: image");
    weights.validate();
    const int K = static_cast<int>(experts.size());
    const bool with_grad = torch::GradMode::is_enabled();

    DecompositionTrace trace;
    torch::Tensor scope = torch::ones({1, image.size(-2), image.size(-1)}, image.options());
    torch::Tensor recon = torch::zeros_like(image);

    for (int t = T; t >= 1; --t) {
        DecompositionStep step;
        step.t = t;
        step.scope_before = scope;
        const bool last = (t == 1);

        std::vector<ExpertProposal> proposals;
        proposals.reserve(K);
        {
            torch::NoGradGuard no_grad;
            for (int k = 0; k < K; ++k) {
                auto gen = make_generator(derive_seed(seed, static_cast<uint64_t>(t),
                                                      static_cast<uint64_t>(k)));
                proposals.push_back(propose_impl(experts[k], image, scope, gen, weights, last));
                proposals.back().expert_id = k;
            }
        }
        trace.proposal_count += K;

        for (const auto& p : proposals) {
            step.objectives.push_back({p.terms.recon.item<double>(),
                                       p.terms.kl_region.item<double>()});
        }
        std::mt19937_64 step_rng(derive_seed(seed, static_cast<uint64_t>(t), kWinnerStream));
        step.winner = select_winner(step.objectives, weights.lambda, mode, step_rng);

        if (with_grad) {
            // Re-run only the winner with autograd, on the same noise stream.
            auto gen = make_generator(derive_seed(seed, static_cast<uint64_t>(t),
                                                  static_cast<uint64_t>(step.winner)));
            step.winner_proposal =
                propose_impl(experts[step.winner], image, scope, gen, weights, last);
            step.winner_proposal.expert_id = step.winner;
        } else {
            step.winner_proposal = std::move(proposals[step.winner]);
        }

        auto update = scope_rollforward(scope, step.winner_proposal.alpha.detach());
        scope = update.scope.detach();
        step.scope_after = scope;
        recon = recon + update.region * step.winner_proposal.appearance_mean.detach();
        trace.steps.push_back(std::move(step));
    }

    trace.reconstruction = recon;
    trace.regions_by_layer.resize(T);
    trace.winners_by_layer.resize(T);
    for (const auto& step : trace.steps) {
        trace.regions_by_layer[step.t - 1] = step.winner_proposal.region.detach();
        trace.winners_by_layer[step.t - 1] = step.winner;
    }
    return trace;
}

ExhaustiveResult exhaustive_assignment(std::vector<Expert>& experts, const torch::Tensor& image,
                                       int T, const LossWeights& weights, uint64_t seed) {
    if (experts.empty()) throw std::invalid_argument("exhaustive_assignment: no experts");
    if (T < 2) throw std::invalid_argument("exhaustive_assignment: need T >= 2");
    const int K = static_cast<int>(experts.size());
    double combos = std::pow(static_cast<double>(K), static_cast<double>(T));
    if (combos > 4096) {
        throw std::invalid_argument("exhaustive_assignment: K^T exceeds the 4096 guard");
    }
    torch::NoGradGuard no_grad;

    ExhaustiveResult result;
    result.n_sequences = static_cast<int64_t>(combos);
    result.objective = std::numeric_limits<double>::infinity();

    std::vector<int> seq(T, 0);  // seq[i] = expert at step t = i+1 (back-to-front)
    for (int64_t s = 0; s < result.n_sequences; ++s) {
        int64_t code = s;
        for (int i = 0; i < T; ++i) {
            seq[i] = static_cast<int>(code % K);
            code /= K;
        }
        torch::Tensor scope = torch::ones({1, image.size(-2), image.size(-1)}, image.options());
        double total = 0;
        for (int t = T; t >= 1; --t) {
            const int k = seq[t - 1];
            auto gen = make_generator(derive_seed(seed, static_cast<uint64_t>(t),
                                                  static_cast<uint64_t>(k)));
            auto prop = propose_impl(experts[k], image, scope, gen, weights, t == 1);
            total += step_loss(prop.terms, weights).item<double>();
            scope = scope_rollforward(scope, prop.alpha).scope;
        }
        if (total < result.objective) {
            result.objective = total;
            result.best_classes = seq;
        }
    }
    return result;
}

torch::Tensor training_loss_from_trace(const DecompositionTrace& trace,
                                       const LossWeights& weights) {
    torch::Tensor total;
    for (const auto& step : trace.steps) {
        auto loss = step_loss(step.winner_proposal.terms, weights);
        total = total.defined() ? total + loss : loss;
    }
    return total;
}

BatchDecomposition decompose_batch(std::vector<Expert>& experts, const torch::Tensor& images,
                                   int T, const LossWeights& weights, SelectionMode mode,
                                   torch::Generator& eps_gen, std::mt19937_64& winner_rng,
                                   bool build_graph, const StepHook& step_hook) {
    if (experts.empty()) throw std::invalid_argument("decompose_batch: no experts");
    if (T < 2) throw std::invalid_argument("decompose_batch: need T >= 2");
    if (images.dim() != 4 || images.size(1) != 3) {
        throw std::invalid_argument("decompose_batch: expected images [B,3,H,W]");
    }
    const int K = static_cast<int>(experts.size());
    const int64_t B = images.size(0);
    const int64_t H = images.size(2), W = images.size(3);
    const int64_t L = experts.front()->config.latent_dim;

    BatchDecomposition out;
    out.loss_per_scene = torch::zeros({B}, images.options());
    out.winners = torch::empty({B, T}, torch::kInt64);
    out.regions = torch::empty({B, T, 1, H, W}, images.options());
    out.reconstruction = torch::zeros_like(images);

    torch::Tensor scope = torch::ones({B, 1, H, W}, images.options());

    for (int t = T; t >= 1; --t) {
        const bool last = (t == 1);
        // Noise drawn in a fixed (step, expert) order, independent of winners.
        std::vector<torch::Tensor> eps(K);
        for (int k = 0; k < K; ++k) eps[k] = torch::randn({B, L}, eps_gen, images.options());

        std::vector<torch::Tensor> alphas(K), recon_k(K), klz_k(K), klr_k(K), mean_k(K);
        {
            torch::NoGradGuard no_grad;
            for (int k = 0; k < K; ++k) {
                auto alpha = last ? torch::ones_like(scope)
                                  : experts[k]->attention->forward(images, scope);
                auto region = scope * alpha;
                auto stats = experts[k]->encoder->forward(images, region);
                auto z = stats.mu + torch::exp(0.5 * stats.logvar) * eps[k];
                auto [mean_x, mask_prob] = experts[k]->decoder->forward(z);
                auto terms = compute_loss_terms(images, scope, region, stats, mean_x, mask_prob,
                                                weights.sigma_x);
                alphas[k] = alpha;
                mean_k[k] = mean_x;
                recon_k[k] = terms.recon;
                klz_k[k] = terms.kl_latent;
                klr_k[k] = terms.kl_region;
            }
        }

        // Winner per scene from the detached objectives.
        auto winners_t = torch::empty({B}, torch::kInt64);
        {
            auto rec = torch::stack(recon_k, 1).to(torch::kFloat64);  // [B,K]
            auto klr = torch::stack(klr_k, 1).to(torch::kFloat64);
            auto rec_a = rec.accessor<double, 2>();
            auto klr_a = klr.accessor<double, 2>();
            auto w_a = winners_t.accessor<int64_t, 1>();
            for (int64_t b = 0; b < B; ++b) {
                std::vector<std::array<double, 2>> obj(K);
                for (int k = 0; k < K; ++k) obj[k] = {rec_a[b][k], klr_a[b][k]};
                w_a[b] = select_winner(obj, weights.lambda, mode, winner_rng);
            }
        }
        out.winners.select(1, t - 1) = winners_t;

        torch::Tensor step_losses;
        if (build_graph) {
            step_losses = torch::zeros({B}, images.options());
            for (int k = 0; k < K; ++k) {
                auto idx = (winners_t == k).nonzero().squeeze(-1);
                if (idx.numel() == 0) continue;
                auto img_k = images.index_select(0, idx);
                auto scope_k = scope.index_select(0, idx);
                auto alpha = last ? torch::ones_like(scope_k)
                                  : experts[k]->attention->forward(img_k, scope_k);
                auto region = scope_k * alpha;
                auto stats = experts[k]->encoder->forward(img_k, region);
                auto z = stats.mu + torch::exp(0.5 * stats.logvar) * eps[k].index_select(0, idx);
                auto [mean_x, mask_prob] = experts[k]->decoder->forward(z);
                auto terms = compute_loss_terms(img_k, scope_k, region, stats, mean_x, mask_prob,
                                                weights.sigma_x);
                step_losses = step_losses.index_add(0, idx, step_loss(terms, weights));
            }
        } else {
            auto rec = torch::stack(recon_k, 1);
            auto klz = torch::stack(klz_k, 1);
            auto klr = torch::stack(klr_k, 1);
            auto wsel = winners_t.unsqueeze(1);
            step_losses = (rec.gather(1, wsel) + weights.beta * klz.gather(1, wsel) +
                           weights.gamma * klr.gather(1, wsel))
                              .squeeze(1);
        }
        const double bad = step_losses.detach().isfinite().logical_not().sum().item<double>();
        if (bad > 0) throw std::runtime_error("decompose_batch: non-finite step loss");
        out.loss_per_scene = out.loss_per_scene + step_losses;
        if (step_hook) step_hook(t, step_losses.sum(), winners_t);

        // Diagnostics from the winners' detached terms.
        {
            auto wsel = winners_t.unsqueeze(1);
            out.mean_recon += torch::stack(recon_k, 1).gather(1, wsel).mean().item<double>();
            out.mean_kl_latent += torch::stack(klz_k, 1).gather(1, wsel).mean().item<double>();
            out.mean_kl_region += torch::stack(klr_k, 1).gather(1, wsel).mean().item<double>();
        }

        // Scope update with the winners' (detached) attention maps.
        torch::Tensor alpha_win = torch::empty_like(scope);
        torch::Tensor mean_win = torch::empty_like(images);
        for (int k = 0; k < K; ++k) {
            auto sel = winners_t == k;
            if (!sel.any().item<bool>()) continue;
            alpha_win.index_put_({sel}, alphas[k].index({sel}));
            mean_win.index_put_({sel}, mean_k[k].index({sel}));
        }
        auto region_win = scope * alpha_win;
        out.regions.select(1, t - 1) = region_win;
        out.reconstruction = out.reconstruction + region_win * mean_win;
        scope = scope - region_win;
    }
    return out;
}

}  // namespace scenes
