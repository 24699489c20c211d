#include "scenes/metrics.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "scenes/rng.hpp"

namespace scenes {

using nlohmann::json;

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double ari(const torch::Tensor& pred_labels, const torch::Tensor& true_labels,
           bool foreground_only, int64_t background_label) {
    if (!pred_labels.sizes().equals(true_labels.sizes())) {
        throw std::invalid_argument("ari: label maps differ in shape");
    }
    auto pred = pred_labels.flatten().to(torch::kInt64);
    auto truth = true_labels.flatten().to(torch::kInt64);
    if (foreground_only) {
        auto keep = truth != background_label;
        pred = pred.masked_select(keep);
        truth = truth.masked_select(keep);
    }
    const int64_t n = pred.numel();
    if (n == 0) return 1.0;

    std::map<std::pair<int64_t, int64_t>, int64_t> table;
    std::map<int64_t, int64_t> pred_sum, true_sum;
    auto pa = pred.accessor<int64_t, 1>();
    auto ta = truth.accessor<int64_t, 1>();
    for (int64_t i = 0; i < n; ++i) {
        ++table[{pa[i], ta[i]}];
        ++pred_sum[pa[i]];
        ++true_sum[ta[i]];
    }
    auto comb2 = [](int64_t m) { return 0.5 * static_cast<double>(m) * static_cast<double>(m - 1); };
    double sum_nij = 0, sum_a = 0, sum_b = 0;
    for (const auto& [key, count] : table) sum_nij += comb2(count);
    for (const auto& [key, count] : pred_sum) sum_a += comb2(count);
    for (const auto& [key, count] : true_sum) sum_b += comb2(count);
    const double total = comb2(n);
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;  // single cluster on both sides
    return (sum_nij - expected) / (max_index - expected);
}

torch::Tensor label_map_from_regions(const std::vector<torch::Tensor>& regions) {
    if (regions.empty()) throw std::invalid_argument("label_map_from_regions: no regions");
    auto stacked = torch::stack(regions, 0).squeeze(1);  // [T,H,W]
    return stacked.argmax(0);
}

SpecializationResult specialization_matrix(const std::vector<DecompositionTrace>& traces,
                                           const std::vector<GroundTruth>& ground_truths,
                                           int n_experts) {
    if (traces.size() != ground_truths.size()) {
        throw std::invalid_argument("specialization_matrix: traces/ground truths misaligned");
    }
    SpecializationResult out;
    out.counts = torch::zeros({n_experts, kNumClasses}, torch::kInt64);
    auto acc = out.counts.accessor<int64_t, 2>();
    for (size_t i = 0; i < traces.size(); ++i) {
        const auto& trace = traces[i];
        const auto& gt = ground_truths[i];
        auto pred_layer = label_map_from_regions(trace.regions_by_layer);
        auto true_layer = label_map_from_regions(gt.regions);
        auto pl = pred_layer.accessor<int64_t, 2>();
        auto tl = true_layer.accessor<int64_t, 2>();
        for (int64_t r = 0; r < pred_layer.size(0); ++r) {
            for (int64_t c = 0; c < pred_layer.size(1); ++c) {
                const int winner = trace.winners_by_layer[static_cast<size_t>(pl[r][c])];
                const int64_t cls = gt.classes[static_cast<size_t>(tl[r][c])];
                ++acc[winner][cls];
            }
        }
    }
    double purity_sum = 0;
    int present = 0;
    for (int64_t c = 0; c < kNumClasses; ++c) {
        int64_t col_total = 0, col_max = 0;
        for (int64_t k = 0; k < n_experts; ++k) {
            col_total += acc[k][c];
            col_max = std::max(col_max, acc[k][c]);
        }
        if (col_total > 0) {
            purity_sum += static_cast<double>(col_max) / static_cast<double>(col_total);
            ++present;
        }
    }
    out.purity = present > 0 ? purity_sum / present : 0.0;
    return out;
}

double reconstruction_mse(const torch::Tensor& image, const DecompositionTrace& trace) {
    return (image - trace.reconstruction).pow(2).mean().item<double>();
}

json EvalReport::to_json() const {
    std::vector<std::vector<int64_t>> spec_json;
    auto acc = specialization.counts.accessor<int64_t, 2>();
    for (int64_t k = 0; k < specialization.counts.size(0); ++k) {
        std::vector<int64_t> row;
        for (int64_t c = 0; c < specialization.counts.size(1); ++c) row.push_back(acc[k][c]);
        spec_json.push_back(std::move(row));
    }
    return json{{"fg_ari", {{"mean", fg_ari_mean}, {"sd", fg_ari_sd}}},
                {"full_ari", {{"mean", full_ari_mean}, {"sd", full_ari_sd}}},
                {"reconstruction_mse", mse_mean},
                {"specialization_counts", spec_json},
                {"purity", specialization.purity},
                {"scene_count", scene_count},
                {"config_hash", config_hash}};
}

EvalReport evaluate_model(std::vector<Expert>& experts, const std::vector<SceneRecord>& records,
                          int T, const LossWeights& weights, uint64_t seed,
                          const std::string& config_tag) {
    if (records.empty()) throw std::invalid_argument("evaluate_model: no scenes");
    torch::NoGradGuard no_grad;
    const auto dtype = experts.front()->config.dtype;

    std::vector<DecompositionTrace> traces;
    std::vector<GroundTruth> gts;
    std::vector<double> fg_scores, full_scores;
    double mse_sum = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        auto image = records[i].image.to(dtype);
        auto trace = decompose(experts, image, T, weights, SelectionMode::greedy,
                               derive_seed(seed, static_cast<uint64_t>(i)));
        auto pred = label_map_from_regions(trace.regions_by_layer);
        auto truth = label_map_from_regions(records[i].gt.regions);
        fg_scores.push_back(ari(pred, truth, /*foreground_only=*/true, 0));
        full_scores.push_back(ari(pred, truth, /*foreground_only=*/false, 0));
        mse_sum += reconstruction_mse(image, trace);
        traces.push_back(std::move(trace));
        gts.push_back(records[i].gt);
    }
    auto mean_sd = [](const std::vector<double>& xs) {
        double mean = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
        return std::pair<double, double>{mean, std::sqrt(var)};
    };

    EvalReport report;
    std::tie(report.fg_ari_mean, report.fg_ari_sd) = mean_sd(fg_scores);
    std::tie(report.full_ari_mean, report.full_ari_sd) = mean_sd(full_scores);
    report.mse_mean = mse_sum / static_cast<double>(records.size());
    report.specialization =
        specialization_matrix(traces, gts, static_cast<int>(experts.size()));
    report.scene_count = static_cast<int64_t>(records.size());
    report.config_hash = fnv1a64(config_tag);
    return report;
}

}  // namespace scenes
