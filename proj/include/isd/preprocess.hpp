#pragma once

#include <vector>

#include "isd/tensor.hpp"

// Raw Hounsfield-unit data -> the 3-channel (lung / mediastinal / edge)
// representation the network trains on. Channel values live in [0, 255] as
// floats; quantization happens only on file export.

namespace isd::ct {

// Row-major HU samples. 2-d volumes are (H,W); 3-d are (H,W,D) with the depth
// index fastest, i.e. values[(h*W + w)*D + d].
struct HuVolume {
    Shape dims;
    std::vector<float> spacing_mm;
    std::vector<float> values;

    void validate() const;
};

struct WindowSpec {
    float level;
    float width;

    static WindowSpec lung() { return {-500.0f, 1200.0f}; }
    static WindowSpec mediastinum() { return {30.0f, 300.0f}; }
};

// clamp(((hu - level + 0.5*width) / width) * 255, 0, 255), elementwise.
Tensor<float> apply_window(const HuVolume& slice, const WindowSpec& spec);
float apply_window_value(float hu, const WindowSpec& spec);

// sqrt(Sx^2 + Sy^2) of the 3x3 Sobel pair, replicate padding at borders.
Tensor<float> sobel_magnitude(const Tensor<float>& img);

// (3,H,W): lung window, mediastinal window, clamped max of the two Sobel maps.
Tensor<float> synth_rgb(const HuVolume& slice);

// Trilinear resample to isotropic target_spacing_mm, then trilinear rescale to
// target_dims (align-corners sampling on both passes).
HuVolume resample_volume(const HuVolume& vol, float target_spacing_mm, const Shape& target_dims);

// One synth_rgb per depth slice, stacked as (3,H,W,D).
Tensor<float> slice_and_synth(const HuVolume& vol);

// Extracts depth slice d of a 3-d volume as a 2-d HuVolume.
HuVolume extract_slice(const HuVolume& vol, std::size_t d);

}  // namespace isd::ct
