#include "isd/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace isd::ct {

void HuVolume::validate() const {
    if (dims.size() != 2 && dims.size() != 3)
        throw ShapeError("HuVolume must be 2-d or 3-d, got " + shape_str(dims));
    if (spacing_mm.size() != dims.size()) throw ShapeError("HuVolume spacing rank mismatch");
    for (float s : spacing_mm)
        if (!(s > 0.0f)) throw DomainError("HuVolume spacing must be positive");
    if (values.size() != shape_numel(dims))
        throw ShapeError("HuVolume value count does not match dims " + shape_str(dims));
}

float apply_window_value(float hu, const WindowSpec& spec) {
    const float v = (hu - spec.level + 0.5f * spec.width) / spec.width * 255.0f;
    return std::clamp(v, 0.0f, 255.0f);
}

Tensor<float> apply_window(const HuVolume& slice, const WindowSpec& spec) {
    slice.validate();
    if (slice.dims.size() != 2) throw ShapeError("apply_window expects a 2-d slice");
    if (!(spec.width > 0.0f)) throw DomainError("window width must be positive");
    std::vector<float> out(slice.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_window_value(slice.values[i], spec);
    return Tensor<float>::from(slice.dims, std::move(out));
}

Tensor<float> sobel_magnitude(const Tensor<float>& img) {
    if (img.ndim() != 2) throw ShapeError("sobel_magnitude expects a 2-d image");
    const std::size_t h = img.shape()[0], w = img.shape()[1];
    if (h < 3 || w < 3) throw ShapeError("sobel_magnitude: image must be at least 3x3");
    const auto v = img.value();
    auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        y = std::clamp<std::ptrdiff_t>(y, 0, std::ptrdiff_t(h) - 1);
        x = std::clamp<std::ptrdiff_t>(x, 0, std::ptrdiff_t(w) - 1);
        return v[std::size_t(y) * w + std::size_t(x)];
    };
    std::vector<float> out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const auto yy = std::ptrdiff_t(y), xx = std::ptrdiff_t(x);
            const float sx = -at(yy - 1, xx - 1) + at(yy - 1, xx + 1)
                             - 2.0f * at(yy, xx - 1) + 2.0f * at(yy, xx + 1)
                             - at(yy + 1, xx - 1) + at(yy + 1, xx + 1);
            const float sy = -at(yy - 1, xx - 1) - 2.0f * at(yy - 1, xx) - at(yy - 1, xx + 1)
                             + at(yy + 1, xx - 1) + 2.0f * at(yy + 1, xx) + at(yy + 1, xx + 1);
            out[y * w + x] = std::sqrt(sx * sx + sy * sy);
        }
    }
    return Tensor<float>::from(Shape{h, w}, std::move(out));
}

Tensor<float> synth_rgb(const HuVolume& slice) {
    const Tensor<float> lung = apply_window(slice, WindowSpec::lung());
    const Tensor<float> medi = apply_window(slice, WindowSpec::mediastinum());
    const Tensor<float> edge_lung = sobel_magnitude(lung);
    const Tensor<float> edge_medi = sobel_magnitude(medi);
    const std::size_t n = lung.numel();
    std::vector<float> out(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = lung[i];
        out[n + i] = medi[i];
        out[2 * n + i] = std::clamp(std::max(edge_lung[i], edge_medi[i]), 0.0f, 255.0f);
    }
    return Tensor<float>::from(Shape{3, slice.dims[0], slice.dims[1]}, std::move(out));
}

namespace {

// Align-corners linear resample of one axis of a (H,W,D) volume.
std::vector<float> resample_axis(const std::vector<float>& src, const Shape& dims, std::size_t axis,
                                 std::size_t n_out) {
    const std::size_t n_in = dims[axis];
    Shape out_dims = dims;
    out_dims[axis] = n_out;
    std::vector<float> out(shape_numel(out_dims));

    // Strides for (H,W,D) row-major with D fastest.
    auto strides = [](const Shape& d) {
        Shape s(d.size());
        std::size_t acc = 1;
        for (std::size_t i = d.size(); i-- > 0;) {
            s[i] = acc;
            acc *= d[i];
        }
        return s;
    };
    const Shape in_s = strides(dims);
    const Shape out_s = strides(out_dims);

    const double step = n_out > 1 ? double(n_in - 1) / double(n_out - 1) : 0.0;
    const std::size_t outer = shape_numel(out_dims) / n_out;
    for (std::size_t o = 0; o < outer; ++o) {
        // Decompose o into the non-axis coordinates.
        std::size_t rem = o;
        std::size_t in_base = 0, out_base = 0;
        for (std::size_t d = 0; d < dims.size(); ++d) {
            if (d == axis) continue;
            std::size_t extent = out_dims[d];
            std::size_t block = 1;
            for (std::size_t e = d + 1; e < dims.size(); ++e)
                if (e != axis) block *= out_dims[e];
            const std::size_t coord = (rem / block) % extent;
            rem %= block;
            in_base += coord * in_s[d];
            out_base += coord * out_s[d];
        }
        for (std::size_t i = 0; i < n_out; ++i) {
            const double fx = double(i) * step;
            const std::size_t x0 = std::min(std::size_t(fx), n_in - 1);
            const std::size_t x1 = std::min(x0 + 1, n_in - 1);
            const double t = fx - double(x0);
            const float a = src[in_base + x0 * in_s[axis]];
            const float b = src[in_base + x1 * in_s[axis]];
            out[out_base + i * out_s[axis]] = float(a + t * (b - a));
        }
    }
    return out;
}

}  // namespace

HuVolume resample_volume(const HuVolume& vol, float target_spacing_mm, const Shape& target_dims) {
    vol.validate();
    if (vol.dims.size() != 3) throw ShapeError("resample_volume expects a 3-d volume");
    if (target_dims.size() != 3) throw ShapeError("resample_volume target must be 3-d");
    if (!(target_spacing_mm > 0.0f)) throw DomainError("target spacing must be positive");
    for (std::size_t d : vol.dims)
        if (d < 2) throw DomainError("resample_volume: degenerate axis in " + shape_str(vol.dims));
    for (std::size_t d : target_dims)
        if (d < 1) throw DomainError("resample_volume: empty target axis");

    // Pass 1: isotropic spacing. Physical length is (n-1)*spacing over voxel
    // centers; the new axis keeps the endpoints.
    HuVolume iso;
    iso.dims = vol.dims;
    iso.values = vol.values;
    std::vector<double> length_mm(3);
    for (std::size_t a = 0; a < 3; ++a) {
        length_mm[a] = double(vol.dims[a] - 1) * double(vol.spacing_mm[a]);
        const auto n1 = std::max<std::size_t>(2, std::size_t(std::llround(length_mm[a] / target_spacing_mm)) + 1);
        if (n1 != iso.dims[a]) {
            iso.values = resample_axis(iso.values, iso.dims, a, n1);
            iso.dims[a] = n1;
        }
    }

    // Pass 2: rescale to the requested extents.
    HuVolume out;
    out.dims = iso.dims;
    out.values = std::move(iso.values);
    for (std::size_t a = 0; a < 3; ++a) {
        if (target_dims[a] != out.dims[a]) {
            out.values = resample_axis(out.values, out.dims, a, target_dims[a]);
            out.dims[a] = target_dims[a];
        }
    }
    out.spacing_mm.resize(3);
    for (std::size_t a = 0; a < 3; ++a)
        out.spacing_mm[a] =
            target_dims[a] > 1 ? float(length_mm[a] / double(target_dims[a] - 1)) : float(target_spacing_mm);
    return out;
}

HuVolume extract_slice(const HuVolume& vol, std::size_t d) {
    vol.validate();
    if (vol.dims.size() != 3) throw ShapeError("extract_slice expects a 3-d volume");
    const std::size_t h = vol.dims[0], w = vol.dims[1], depth = vol.dims[2];
    if (d >= depth) throw ShapeError("extract_slice: index out of range");
    HuVolume out;
    out.dims = {h, w};
    out.spacing_mm = {vol.spacing_mm[0], vol.spacing_mm[1]};
    out.values.resize(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.values[y * w + x] = vol.values[(y * w + x) * depth + d];
    return out;
}

Tensor<float> slice_and_synth(const HuVolume& vol) {
    vol.validate();
    if (vol.dims.size() != 3) throw ShapeError("slice_and_synth expects a 3-d volume");
    const std::size_t h = vol.dims[0], w = vol.dims[1], depth = vol.dims[2];
    std::vector<float> out(3 * h * w * depth);
    for (std::size_t d = 0; d < depth; ++d) {
        const Tensor<float> rgb = synth_rgb(extract_slice(vol, d));
        const auto rv = rgb.value();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    out[((c * h + y) * w + x) * depth + d] = rv[(c * h + y) * w + x];
    }
    return Tensor<float>::from(Shape{3, h, w, depth}, std::move(out));
}

}  // namespace isd::ct
