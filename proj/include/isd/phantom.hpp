#pragma once

#include <cstdint>
#include <filesystem>

#include "isd/preprocess.hpp"

// Synthetic chest-CT-style phantoms with known lesion ground truth: air
// background, soft-tissue body ellipse, low-HU lung ellipses, lesion blobs
// inside the lungs. Stands in for clinical data at desk scale.

namespace isd::phantom {

struct PhantomSpec {
    std::size_t size = 32;  // per-axis extent
    std::size_t count = 64;
    int dims = 2;  // 2 or 3
    float lesion_hu_min = -50.0f;
    float lesion_hu_max = 100.0f;
    double lung_semiaxis_min = 0.15;  // fraction of size
    double lung_semiaxis_max = 0.22;
    std::uint64_t seed = 0;
    bool allow_empty_lesions = false;  // when set, 0 lesions (a negative sample) is allowed
};

struct Phantom {
    ct::HuVolume volume;
    Tensor<float> lesion_mask;  // 0/1, same spatial shape
};

Phantom make_phantom(const PhantomSpec& spec, std::size_t index);

// Writes phantom_NNNN.isdt + mask_NNNN.isdt plus manifest_seg.isdm and
// manifest_cls.isdm with a deterministic 4:1 train/test split.
void gen_phantoms(const PhantomSpec& spec, const std::filesystem::path& out_dir);

}  // namespace isd::phantom
