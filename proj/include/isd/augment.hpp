#pragma once

#include <cstdint>
#include <optional>

#include "isd/rng.hpp"
#include "isd/tensor.hpp"

// Geometric training augmentation: flips plus rotation/scale about the image
// center with bilinear resampling and zero fill outside. One sampled
// transform is applied identically to an image and its paired mask; the mask
// result is re-binarized at 0.5. 3-d tensors get flips only.

namespace isd {

struct AugmentSpec {
    double p_flip_h = 0.5;
    double p_flip_v = 0.5;
    double p_rot_scale = 0.5;     // apply probability for rotation and for scaling
    double rot_max_deg = 180.0;   // angle uniform in [-rot_max_deg, rot_max_deg]
    double scale_min = 0.8;
    double scale_max = 1.2;

    void validate() const {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(p_flip_h) || !prob(p_flip_v) || !prob(p_rot_scale))
            throw DomainError("augment: probabilities must be in [0,1]");
        if (!(scale_min > 0.0) || !(scale_max >= scale_min))
            throw DomainError("augment: scale bounds must be positive and ordered");
    }
};

struct SampledTransform {
    bool flip_h = false;  // mirror columns
    bool flip_v = false;  // mirror rows
    double angle_deg = 0.0;
    double scale = 1.0;
};

// Always consumes the same number of draws, so stream positions do not depend
// on which branches fire.
SampledTransform sample_transform(const AugmentSpec& spec, rng::Xoshiro256& g);

Tensor<float> apply_transform(const Tensor<float>& img, const SampledTransform& t, bool binarize);

struct Augmented {
    Tensor<float> image;
    std::optional<Tensor<float>> mask;
    SampledTransform transform;
};

// img is (C,H,W) or (C,H,W,D); the optional mask shares the spatial extents.
Augmented augment(const Tensor<float>& img, const Tensor<float>* paired_mask, const AugmentSpec& spec,
                  std::uint64_t seed);

}  // namespace isd
