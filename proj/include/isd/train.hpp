#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isd/config.hpp"
#include "isd/manifest.hpp"
#include "isd/masking.hpp"
#include "isd/model.hpp"
#include "isd/objectives.hpp"
#include "isd/optim.hpp"

// Training drivers: dual-branch pretraining, segmentation/classification
// fine-tuning, and read-only evaluation. Every run is a pure function of
// (dataset, config, seed); checkpoints store enough state to resume
// bit-exactly.

namespace isd::train {

enum class Task { Seg, Cls };
enum class Phase { Pretrain, Finetune };

struct TrainState {
    RunConfig cfg;
    model::ModelParams<float> params;
    AdamW<float> optim;
    std::uint64_t root_seed = 0;
    std::uint64_t epochs_done = 0;
    std::uint64_t global_step = 0;
    Phase phase = Phase::Pretrain;
    Task task = Task::Seg;
    mask::Mode mask_mode = mask::Mode::Dual;
};

void save_checkpoint(const std::filesystem::path& path, TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

struct Sample {
    std::string id;
    Tensor<float> image;  // (3,S,S) in [0,1]
    Tensor<float> mask;   // (1,S,S) 0/1, seg datasets only
    int label = 0;        // cls datasets only
};

// Loads and preprocesses one split of a manifest; images are windowed RGB
// scaled to [0,1].
std::vector<Sample> load_samples(const io::Manifest& manifest, const std::string& split,
                                 std::size_t expected_size);

io::Manifest find_manifest(const std::filesystem::path& data_dir, Task task);

struct PretrainOptions {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    std::size_t epochs = 10;
    mask::Mode mask_mode = mask::Mode::Dual;
    RunConfig cfg;
    std::filesystem::path init_checkpoint;  // resume when it holds a pretrain state
};

struct FinetuneOptions {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    std::size_t epochs = 20;
    Task task = Task::Seg;
    RunConfig cfg;
    std::filesystem::path init_checkpoint;  // pretrain warm start or finetune resume
};

// One optimizer update on a batch of original images: augment each sample
// once, mask the augmented image both ways, run both branches through the
// shared weights, combine Eq.-style SSIM + contrastive terms, step.
LossReport pretrain_step(const std::vector<const Sample*>& batch, TrainState& state, double lr,
                         std::uint64_t epoch, std::size_t first_slot, std::size_t n_train);

// One optimizer update of the fine-tuning objective (BCE on the task head).
double finetune_step(const std::vector<const Sample*>& batch, TrainState& state, double lr);

void run_pretrain(const PretrainOptions& opt);
void run_finetune(const FinetuneOptions& opt);

struct EvalResult {
    Task task = Task::Seg;
    double mean_dice = 0.0;  // seg
    double roc_auc = 0.0;    // cls
    std::size_t n_samples = 0;
};

// Evaluates a checkpoint on the test split and writes the metric report CSV.
// Segmentation: `sample_id,dice,hausdorff`; classification:
// `sample_id,score,label`.
EvalResult run_eval(const std::filesystem::path& data_dir, const std::filesystem::path& ckpt,
                    const std::filesystem::path& report_path);

}  // namespace isd::train
