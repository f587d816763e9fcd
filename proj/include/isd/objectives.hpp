#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "isd/ops.hpp"

// Training objectives. Everything here builds autodiff graphs; the plain
// evaluation metrics live in metrics.hpp.

namespace isd {

// Stability constants for a [0,1] dynamic range.
inline constexpr double kSsimC1 = 1e-4;   // (0.01)^2
inline constexpr double kSsimC2 = 9e-4;   // (0.03)^2

inline double logit_scale_default() { return std::log(1.0 / 0.07); }

// Whole-image statistics backing the SSIM formula; handy for inspection.
struct SsimStats {
    double mu_g = 0, mu_o = 0;
    double var_g = 0, var_o = 0;
    double cov = 0;
    double c1 = kSsimC1, c2 = kSsimC2;
};

template <typename T>
SsimStats ssim_stats(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "ssim");
    SsimStats s;
    const auto av = a.value(), bv = b.value();
    const double inv = 1.0 / double(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        s.mu_g += double(av[i]) * inv;
        s.mu_o += double(bv[i]) * inv;
    }
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double da = double(av[i]) - s.mu_g, db = double(bv[i]) - s.mu_o;
        s.var_g += da * da * inv;
        s.var_o += db * db * inv;
        s.cov += da * db * inv;
    }
    return s;
}

enum class SsimMode { Global, Windowed };

// Global single-window SSIM over all channels and pixels jointly,
// differentiable through both images.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, T c1 = T(kSsimC1), T c2 = T(kSsimC2)) {
    require_same_shape(a, b, "ssim");
    const Tensor<T> mu_a = mean(a);
    const Tensor<T> mu_b = mean(b);
    const Tensor<T> da = sub(a, mu_a);
    const Tensor<T> db = sub(b, mu_b);
    const Tensor<T> var_a = mean(mul(da, da));
    const Tensor<T> var_b = mean(mul(db, db));
    const Tensor<T> cov = mean(mul(da, db));
    const Tensor<T> num = mul(scale(mul(mu_a, mu_b), T(2)) + c1, scale(cov, T(2)) + c2);
    const Tensor<T> den = mul(mul(mu_a, mu_a) + mul(mu_b, mu_b) + c1, var_a + var_b + c2);
    return div(num, den);
}

namespace detail {

// Per-channel Gaussian smoothing expressed as one conv2d with a
// block-diagonal constant kernel (no gradient flows into the kernel).
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& x, std::size_t window, double sigma) {
    const std::size_t c = x.shape()[0];
    std::vector<double> g1(window);
    const double mid = 0.5 * double(window - 1);
    double norm = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
        g1[i] = std::exp(-(double(i) - mid) * (double(i) - mid) / (2.0 * sigma * sigma));
        norm += g1[i];
    }
    for (auto& v : g1) v /= norm;
    std::vector<T> w(c * c * window * window, T(0));
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx)
                w[((ci * c + ci) * window + ky) * window + kx] = T(g1[ky] * g1[kx]);
    return conv2d(x, Tensor<T>::from(Shape{c, c, window, window}, std::move(w)), 1, 0);
}

}  // namespace detail

// Sliding-Gaussian-window SSIM (mean of the local SSIM map, valid region
// only). Needs odd window <= the spatial extents.
template <typename T>
Tensor<T> ssim_windowed(const Tensor<T>& a, const Tensor<T>& b, std::size_t window = 11,
                        double sigma = 1.5, T c1 = T(kSsimC1), T c2 = T(kSsimC2)) {
    require_same_shape(a, b, "ssim_windowed");
    if (a.ndim() != 3) throw ShapeError("ssim_windowed expects (C,H,W)");
    if (window % 2 == 0 || a.shape()[1] < window || a.shape()[2] < window)
        throw ShapeError("ssim_windowed: window must be odd and fit the image");
    const Tensor<T> mu_a = detail::gaussian_blur(a, window, sigma);
    const Tensor<T> mu_b = detail::gaussian_blur(b, window, sigma);
    const Tensor<T> var_a = sub(detail::gaussian_blur(mul(a, a), window, sigma), mul(mu_a, mu_a));
    const Tensor<T> var_b = sub(detail::gaussian_blur(mul(b, b), window, sigma), mul(mu_b, mu_b));
    const Tensor<T> cov = sub(detail::gaussian_blur(mul(a, b), window, sigma), mul(mu_a, mu_b));
    const Tensor<T> num = mul(scale(mul(mu_a, mu_b), T(2)) + c1, scale(cov, T(2)) + c2);
    const Tensor<T> den = mul(mul(mu_a, mu_a) + mul(mu_b, mu_b) + c1, var_a + var_b + c2);
    return mean(div(num, den));
}

namespace detail {

// Batch mean of [1 - SSIM(original, recon)] for one branch.
template <typename T>
Tensor<T> branch_ssim_loss(std::span<const Tensor<T>> originals, std::span<const Tensor<T>> recon,
                           SsimMode mode) {
    Tensor<T> acc;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        const Tensor<T> s = mode == SsimMode::Global ? ssim(originals[i], recon[i])
                                                     : ssim_windowed(originals[i], recon[i]);
        const Tensor<T> li = T(1) - s;
        acc = i ? add(acc, li) : li;
    }
    return scale(acc, T(1) / T(originals.size()));
}

}  // namespace detail

// Sum of the two branch terms of the reconstruction objective.
template <typename T>
Tensor<T> ssim_loss(std::span<const Tensor<T>> originals, std::span<const Tensor<T>> recon_t,
                    std::span<const Tensor<T>> recon_p, SsimMode mode = SsimMode::Global) {
    if (originals.empty() || originals.size() != recon_t.size() || originals.size() != recon_p.size())
        throw ShapeError("ssim_loss: batch size mismatch");
    return add(detail::branch_ssim_loss(originals, recon_t, mode),
               detail::branch_ssim_loss(originals, recon_p, mode));
}

// Symmetric InfoNCE over L2-normalized embeddings: positives on the diagonal
// of the scaled similarity matrix, cross entropy both row- and column-wise.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& f_t, const Tensor<T>& f_p,
                           T logit_scale = T(logit_scale_default())) {
    if (f_t.ndim() != 2 || f_p.ndim() != 2) throw ShapeError("contrastive_loss needs (B,D) embeddings");
    require_same_shape(f_t, f_p, "contrastive_loss");
    const std::size_t b = f_t.shape()[0];
    const Tensor<T> ft = l2_normalize_rows(f_t);
    const Tensor<T> fp = l2_normalize_rows(f_p);
    const Tensor<T> sim = scale(matmul(ft, transpose2d(fp)), logit_scale);
    std::vector<std::size_t> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = i;
    const Tensor<T> l1 = softmax_cross_entropy(sim, labels);
    const Tensor<T> l2 = softmax_cross_entropy(transpose2d(sim), labels);
    return scale(add(l1, l2), T(0.5));
}

struct LossReport {
    double ssim_loss = 0;
    double contrastive_loss = 0;
    double total = 0;
    double ssim_t = 0;  // batch-mean SSIM of the intensity branch
    double ssim_p = 0;  // batch-mean SSIM of the spatial branch
};

// Graph handles plus the scalar report for one pretraining step.
template <typename T>
struct TotalLoss {
    Tensor<T> total;
    Tensor<T> ssim_term;
    Tensor<T> contrastive_term;
    LossReport report;
};

template <typename T>
TotalLoss<T> total_loss(std::span<const Tensor<T>> originals, std::span<const Tensor<T>> recon_t,
                        std::span<const Tensor<T>> recon_p, const Tensor<T>& f_t, const Tensor<T>& f_p,
                        T logit_scale = T(logit_scale_default()), SsimMode mode = SsimMode::Global) {
    if (originals.empty() || originals.size() != recon_t.size() || originals.size() != recon_p.size())
        throw ShapeError("total_loss: batch size mismatch");
    TotalLoss<T> out;
    const Tensor<T> term_t = detail::branch_ssim_loss(originals, recon_t, mode);
    const Tensor<T> term_p = detail::branch_ssim_loss(originals, recon_p, mode);
    out.ssim_term = add(term_t, term_p);
    out.contrastive_term = contrastive_loss(f_t, f_p, logit_scale);
    out.total = add(out.ssim_term, out.contrastive_term);
    out.report.ssim_loss = double(out.ssim_term.item());
    out.report.contrastive_loss = double(out.contrastive_term.item());
    out.report.total = double(out.total.item());
    out.report.ssim_t = 1.0 - double(term_t.item());
    out.report.ssim_p = 1.0 - double(term_p.item());
    return out;
}

// Mean binary cross entropy in stable logit form.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
    return bce_with_logits(logits, targets);
}

}  // namespace isd
