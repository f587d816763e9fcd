#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "isd/augment.hpp"
#include "isd/masking.hpp"
#include "isd/model.hpp"
#include "isd/optim.hpp"

// Flat `key = value` run configuration. Keys match the field names of the
// structs they populate; stage_channels is a comma-separated list.

namespace isd {

struct RunConfig {
    model::ModelConfig model;
    AugmentSpec augment;

    LrSchedule pretrain_sched{2e-3, 0.96, 100000, LrUnit::BatchStep};
    LrSchedule finetune_sched{1e-3, 0.9, 1, LrUnit::Epoch};
    AdamWConfig adamw;

    std::size_t k_bins = 16;
    double intensity_ratio = 0.5;
    std::size_t spatial_patch = 8;
    double spatial_ratio = 0.5;

    bool ssim_windowed = false;  // sliding 11x11 Gaussian SSIM instead of whole-image stats

    std::size_t batch_size_pretrain = 2;
    std::size_t batch_size_finetune = 16;

    // Applies one key=value pair; throws io::FormatError on unknown keys or
    // unparseable values.
    void set(const std::string& key, const std::string& value);
};

// Defaults, overlaid with the file's pairs when a path is given.
RunConfig load_config(const std::filesystem::path& path);
RunConfig default_config();

}  // namespace isd
