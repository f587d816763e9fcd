#include "isd/augment.hpp"

#include <cmath>

namespace isd {

SampledTransform sample_transform(const AugmentSpec& spec, rng::Xoshiro256& g) {
    spec.validate();
    SampledTransform t;
    t.flip_h = g.bernoulli(spec.p_flip_h);
    t.flip_v = g.bernoulli(spec.p_flip_v);
    const bool do_rot = g.bernoulli(spec.p_rot_scale);
    const double angle = g.uniform(-spec.rot_max_deg, spec.rot_max_deg);
    const bool do_scale = g.bernoulli(spec.p_rot_scale);
    const double sc = g.uniform(spec.scale_min, spec.scale_max);
    if (do_rot) t.angle_deg = angle;
    if (do_scale) t.scale = sc;
    return t;
}

namespace {

// Inverse-maps each output pixel: undo flips (exact index remap), then undo
// the rotation/scale about the center, then sample bilinearly with zero fill.
Tensor<float> transform2d(const Tensor<float>& img, const SampledTransform& t, bool binarize) {
    const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    const auto v = img.value();
    const double cy = 0.5 * double(h - 1), cx = 0.5 * double(w - 1);
    const double rad = t.angle_deg * M_PI / 180.0;
    const double cosr = std::cos(rad), sinr = std::sin(rad);
    const bool identity_warp = t.angle_deg == 0.0 && t.scale == 1.0;

    std::vector<float> out(v.size(), 0.0f);
    for (std::size_t ci = 0; ci < c; ++ci) {
        const float* src = v.data() + ci * h * w;
        float* dst = out.data() + ci * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            const std::size_t fy = t.flip_v ? h - 1 - y : y;
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t fx = t.flip_h ? w - 1 - x : x;
                if (identity_warp) {
                    dst[y * w + x] = src[fy * w + fx];
                    continue;
                }
                // Forward map is rotate-then-scale of centered coords; invert.
                const double yc = double(fy) - cy, xc = double(fx) - cx;
                const double xs = (cosr * xc + sinr * yc) / t.scale;
                const double ys = (-sinr * xc + cosr * yc) / t.scale;
                const double sy = ys + cy, sx = xs + cx;
                const auto y0 = std::ptrdiff_t(std::floor(sy)), x0 = std::ptrdiff_t(std::floor(sx));
                const double ty = sy - double(y0), tx = sx - double(x0);
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::ptrdiff_t yy = y0 + dy, xx = x0 + dx;
                        if (yy < 0 || xx < 0 || yy >= std::ptrdiff_t(h) || xx >= std::ptrdiff_t(w)) continue;
                        const double wgt = (dy ? ty : 1.0 - ty) * (dx ? tx : 1.0 - tx);
                        acc += wgt * double(src[std::size_t(yy) * w + std::size_t(xx)]);
                    }
                }
                dst[y * w + x] = float(acc);
            }
        }
    }
    if (binarize)
        for (auto& x : out) x = x >= 0.5f ? 1.0f : 0.0f;
    return Tensor<float>::from(Shape(img.shape()), std::move(out));
}

// 3-d path: flips along H and W only.
Tensor<float> transform3d(const Tensor<float>& img, const SampledTransform& t, bool binarize) {
    const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2], d = img.shape()[3];
    const auto v = img.value();
    std::vector<float> out(v.size());
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y) {
            const std::size_t fy = t.flip_v ? h - 1 - y : y;
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t fx = t.flip_h ? w - 1 - x : x;
                for (std::size_t z = 0; z < d; ++z)
                    out[((ci * h + y) * w + x) * d + z] = v[((ci * h + fy) * w + fx) * d + z];
            }
        }
    if (binarize)
        for (auto& x : out) x = x >= 0.5f ? 1.0f : 0.0f;
    return Tensor<float>::from(Shape(img.shape()), std::move(out));
}

}  // namespace

Tensor<float> apply_transform(const Tensor<float>& img, const SampledTransform& t, bool binarize) {
    if (img.ndim() == 3) return transform2d(img, t, binarize);
    if (img.ndim() == 4) return transform3d(img, t, binarize);
    throw ShapeError("augment expects (C,H,W) or (C,H,W,D), got " + shape_str(img.shape()));
}

Augmented augment(const Tensor<float>& img, const Tensor<float>* paired_mask, const AugmentSpec& spec,
                  std::uint64_t seed) {
    auto g = rng::substream(seed, rng::kTagAugment);
    Augmented out;
    out.transform = sample_transform(spec, g);
    out.image = apply_transform(img, out.transform, /*binarize=*/false);
    if (paired_mask) {
        if (paired_mask->ndim() != img.ndim())
            throw ShapeError("augment: paired mask rank mismatch");
        for (std::size_t i = 1; i < img.ndim(); ++i)
            if (paired_mask->shape()[i] != img.shape()[i])
                throw ShapeError("augment: paired mask spatial mismatch");
        out.mask = apply_transform(*paired_mask, out.transform, /*binarize=*/true);
    }
    return out;
}

}  // namespace isd
