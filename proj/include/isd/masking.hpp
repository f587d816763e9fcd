#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "isd/rng.hpp"
#include "isd/tensor.hpp"

// Corrupted views of a preprocessed image: intensity masking zeroes every
// pixel whose grayscale value falls in randomly chosen intensity bins;
// spatial masking zeroes randomly chosen PxP patches (PxPxP in 3-d). Both
// work on (3, spatial...) tensors and are pure functions of (image, spec).

namespace isd::mask {

struct IntensityMaskSpec {
    std::size_t k_bins = 16;
    double ratio = 0.5;  // in (0,1)
    std::uint64_t seed = 0;

    std::size_t chosen_bins() const { return std::size_t(std::llround(double(k_bins) * ratio)); }

    void validate() const {
        if (k_bins < 1) throw DomainError("intensity mask: k_bins must be >= 1");
        if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("intensity mask: ratio must be in (0,1)");
        const std::size_t m = chosen_bins();
        if (m < 1 || m > k_bins) throw DomainError("intensity mask: round(K*ratio) outside [1, K]");
    }
};

struct SpatialMaskSpec {
    std::size_t patch = 16;
    double ratio = 0.5;  // in (0,1)
    std::uint64_t seed = 0;

    void validate() const {
        if (patch < 1) throw DomainError("spatial mask: patch must be >= 1");
        if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("spatial mask: ratio must be in (0,1)");
    }
};

enum class Mode { Dual, IntensityOnly, SpatialOnly };

template <typename T>
struct MaskedPair {
    Tensor<T> intensity_view;
    Tensor<T> spatial_view;
    std::vector<std::size_t> intensity_bins_chosen;
    std::vector<std::size_t> spatial_patches_chosen;
};

// Luminosity weights for the grayscale map.
inline constexpr double kGrayR = 0.2989, kGrayG = 0.5870, kGrayB = 0.1140;

// Bin index of a gray value in [0,1]: K half-open bins, last bin closed.
inline std::size_t gray_bin(double g, std::size_t k) {
    const auto b = std::size_t(g * double(k));
    return b >= k ? k - 1 : b;
}

namespace detail {

template <typename T>
void check_masked_image(const Tensor<T>& img) {
    if (img.ndim() < 3 || img.ndim() > 4)
        throw ShapeError("mask input must be (C,H,W) or (C,H,W,D), got " + shape_str(img.shape()));
}

}  // namespace detail

// Per-pixel gray values of a (3, spatial...) image after joint min/max
// normalization. Throws on a constant image (normalization divides by zero).
template <typename T>
std::vector<double> normalized_gray(const Tensor<T>& img) {
    detail::check_masked_image(img);
    if (img.shape()[0] != 3) throw ShapeError("intensity mask needs a 3-channel image");
    const auto v = img.value();
    T lo = v[0], hi = v[0];
    for (const T x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (!(hi > lo)) throw DomainError("intensity mask: constant image");
    const std::size_t n = img.numel() / 3;
    const double inv = 1.0 / double(hi - lo);
    std::vector<double> gray(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = double(v[i] - lo) * inv;
        const double g = double(v[n + i] - lo) * inv;
        const double b = double(v[2 * n + i] - lo) * inv;
        gray[i] = kGrayR * r + kGrayG * g + kGrayB * b;
    }
    return gray;
}

template <typename T>
std::pair<Tensor<T>, std::vector<std::size_t>> intensity_mask(const Tensor<T>& img,
                                                              const IntensityMaskSpec& spec) {
    spec.validate();
    const std::vector<double> gray = normalized_gray(img);

    auto g = rng::substream(spec.seed, rng::kTagIntensityMask);
    std::vector<std::size_t> bins = rng::sample_without_replacement(spec.k_bins, spec.chosen_bins(), g);
    std::vector<char> chosen(spec.k_bins, 0);
    for (std::size_t b : bins) chosen[b] = 1;

    const std::size_t n = gray.size();
    std::vector<T> out(img.value().begin(), img.value().end());
    for (std::size_t i = 0; i < n; ++i) {
        if (chosen[gray_bin(gray[i], spec.k_bins)]) {
            out[i] = T(0);
            out[n + i] = T(0);
            out[2 * n + i] = T(0);
        }
    }
    return {Tensor<T>::from(Shape(img.shape()), std::move(out)), std::move(bins)};
}

template <typename T>
std::pair<Tensor<T>, std::vector<std::size_t>> spatial_mask(const Tensor<T>& img,
                                                            const SpatialMaskSpec& spec) {
    spec.validate();
    detail::check_masked_image(img);
    const std::size_t channels = img.shape()[0];
    const std::size_t ndim_sp = img.ndim() - 1;
    std::vector<std::size_t> grid(ndim_sp);
    std::size_t n_patches = 1;
    for (std::size_t d = 0; d < ndim_sp; ++d) {
        const std::size_t extent = img.shape()[d + 1];
        if (extent % spec.patch != 0)
            throw ShapeError("spatial mask: extent " + std::to_string(extent) + " not divisible by patch " +
                             std::to_string(spec.patch));
        grid[d] = extent / spec.patch;
        n_patches *= grid[d];
    }

    const auto n_masked = std::size_t(std::floor(double(n_patches) * spec.ratio));
    auto g = rng::substream(spec.seed, rng::kTagSpatialMask);
    std::vector<std::size_t> patches = rng::sample_without_replacement(n_patches, n_masked, g);

    std::vector<T> out(img.value().begin(), img.value().end());
    const std::size_t plane = img.numel() / channels;

    // Spatial strides within one channel plane.
    std::vector<std::size_t> stride(ndim_sp);
    std::size_t acc = 1;
    for (std::size_t d = ndim_sp; d-- > 0;) {
        stride[d] = acc;
        acc *= img.shape()[d + 1];
    }

    const std::size_t cells = [&] {
        std::size_t c = 1;
        for (std::size_t d = 0; d < ndim_sp; ++d) c *= spec.patch;
        return c;
    }();
    for (const std::size_t p : patches) {
        // Patch grid coordinates, row-major over grid.
        std::vector<std::size_t> base(ndim_sp);
        std::size_t rem = p;
        for (std::size_t d = ndim_sp; d-- > 0;) {
            base[d] = (rem % grid[d]) * spec.patch;
            rem /= grid[d];
        }
        for (std::size_t cell = 0; cell < cells; ++cell) {
            std::size_t rem2 = cell;
            std::size_t off = 0;
            for (std::size_t d = ndim_sp; d-- > 0;) {
                off += (base[d] + rem2 % spec.patch) * stride[d];
                rem2 /= spec.patch;
            }
            for (std::size_t c = 0; c < channels; ++c) out[c * plane + off] = T(0);
        }
    }
    return {Tensor<T>::from(Shape(img.shape()), std::move(out)), std::move(patches)};
}

// Dual mode masks the two branches independently; the single-strategy modes
// keep the two-branch architecture and generate the second view with the same
// strategy under a derived sub-seed.
template <typename T>
MaskedPair<T> make_masked_pair(const Tensor<T>& img, const IntensityMaskSpec& i_spec,
                               const SpatialMaskSpec& s_spec, Mode mode) {
    constexpr std::uint64_t kAltViewTag = 0x616c7476u;  // distinguishes the second view's stream
    MaskedPair<T> pair;
    switch (mode) {
        case Mode::Dual: {
            auto [iv, ib] = intensity_mask(img, i_spec);
            auto [sv, sp] = spatial_mask(img, s_spec);
            pair.intensity_view = std::move(iv);
            pair.spatial_view = std::move(sv);
            pair.intensity_bins_chosen = std::move(ib);
            pair.spatial_patches_chosen = std::move(sp);
            break;
        }
        case Mode::IntensityOnly: {
            IntensityMaskSpec alt = i_spec;
            alt.seed = rng::derive_seed(i_spec.seed, kAltViewTag);
            auto [iv, ib] = intensity_mask(img, i_spec);
            auto [av, ab] = intensity_mask(img, alt);
            (void)ab;
            pair.intensity_view = std::move(iv);
            pair.spatial_view = std::move(av);
            pair.intensity_bins_chosen = std::move(ib);
            break;
        }
        case Mode::SpatialOnly: {
            SpatialMaskSpec alt = s_spec;
            alt.seed = rng::derive_seed(s_spec.seed, kAltViewTag);
            auto [sv, sp] = spatial_mask(img, s_spec);
            auto [av, ap] = spatial_mask(img, alt);
            (void)ap;
            pair.intensity_view = std::move(sv);
            pair.spatial_view = std::move(av);
            pair.spatial_patches_chosen = std::move(sp);
            break;
        }
    }
    return pair;
}

struct MaskStats {
    double masked_fraction = 0.0;  // zeroed positions that were nonzero, over nonzero positions
    std::map<std::size_t, std::size_t> zero_run_histogram;  // run length -> count, per last-dim row
};

template <typename T>
MaskStats mask_stats(const Tensor<T>& masked, const Tensor<T>& original) {
    require_same_shape(masked, original, "mask_stats");
    const auto mv = masked.value();
    const auto ov = original.value();
    MaskStats st;
    std::size_t nonzero = 0, newly_zero = 0;
    for (std::size_t i = 0; i < mv.size(); ++i) {
        if (ov[i] != T(0)) {
            ++nonzero;
            if (mv[i] == T(0)) ++newly_zero;
        }
    }
    st.masked_fraction = nonzero ? double(newly_zero) / double(nonzero) : 0.0;

    const std::size_t row = masked.shape().back();
    std::size_t run = 0;
    for (std::size_t i = 0; i < mv.size(); ++i) {
        if (mv[i] == T(0)) {
            ++run;
        } else if (run) {
            ++st.zero_run_histogram[run];
            run = 0;
        }
        if ((i + 1) % row == 0 && run) {
            ++st.zero_run_histogram[run];
            run = 0;
        }
    }
    return st;
}

}  // namespace isd::mask
