#include "isd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace isd::metrics {

namespace {

std::vector<std::vector<std::ptrdiff_t>> foreground_coords(const Tensor<float>& mask) {
    const auto v = mask.value();
    const Shape& shape = mask.shape();
    std::vector<std::vector<std::ptrdiff_t>> coords;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == 0.0f) continue;
        std::vector<std::ptrdiff_t> c(shape.size());
        std::size_t rem = i;
        for (std::size_t d = shape.size(); d-- > 0;) {
            c[d] = std::ptrdiff_t(rem % shape[d]);
            rem /= shape[d];
        }
        coords.push_back(std::move(c));
    }
    return coords;
}

double directed_max_min_sq(const std::vector<std::vector<std::ptrdiff_t>>& from,
                           const std::vector<std::vector<std::ptrdiff_t>>& to) {
    double worst = 0.0;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double d = double(a[k] - b[k]);
                d2 += d * d;
            }
            best = std::min(best, d2);
            if (best == 0.0) break;
        }
        worst = std::max(worst, best);
    }
    return worst;
}

}  // namespace

double dice(const Tensor<float>& pred, const Tensor<float>& gt) {
    require_same_shape(pred, gt, "dice");
    const auto pv = pred.value();
    const auto gv = gt.value();
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const bool p = pv[i] != 0.0f, g = gv[i] != 0.0f;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * double(inter) / double(np + ng);
}

double hausdorff(const Tensor<float>& pred, const Tensor<float>& gt) {
    require_same_shape(pred, gt, "hausdorff");
    const auto a = foreground_coords(pred);
    const auto b = foreground_coords(gt);
    if (a.empty() || b.empty()) throw DomainError("hausdorff: undefined for an empty mask");
    return std::sqrt(std::max(directed_max_min_sq(a, b), directed_max_min_sq(b, a)));
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores/labels length mismatch");
    std::size_t npos = 0;
    for (const auto l : labels) npos += (l != 0);
    const std::size_t nneg = labels.size() - npos;
    if (npos == 0 || nneg == 0) throw DomainError("roc_auc: needs both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    // Average ranks over tied groups (1-based ranks).
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) pos_rank_sum += avg_rank;
        i = j;
    }
    return (pos_rank_sum - 0.5 * double(npos) * double(npos + 1)) / (double(npos) * double(nneg));
}

}  // namespace isd::metrics
