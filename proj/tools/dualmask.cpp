// dualmask: phantom generation, CT preprocessing, mask previews, dual-branch
// self-supervised pretraining, fine-tuning, and evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure (non-finite value detected).

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "isd/config.hpp"
#include "isd/isdt_io.hpp"
#include "isd/masking.hpp"
#include "isd/phantom.hpp"
#include "isd/preprocess.hpp"
#include "isd/train.hpp"

namespace fs = std::filesystem;

namespace {

struct Shared {
    std::uint64_t seed = 0;
    std::string config_path;
    std::string out_dir;
};

void add_shared(CLI::App* cmd, Shared& s, bool out_required = true) {
    cmd->add_option("--seed", s.seed, "PRNG seed");
    cmd->add_option("--config", s.config_path, "key = value config file");
    auto* out = cmd->add_option("--out", s.out_dir, "output directory");
    if (out_required) out->required();
}

isd::Tensor<float> load_preview_input(const fs::path& path) {
    const isd::io::IsdtData raw = isd::io::read_isdt(path);
    if (raw.dims.size() == 2) {
        isd::ct::HuVolume vol;
        vol.dims = raw.dims;
        vol.spacing_mm = {1.0f, 1.0f};
        const auto t = raw.to_float();
        vol.values.assign(t.value().begin(), t.value().end());
        return isd::ct::synth_rgb(vol);
    }
    if ((raw.dims.size() == 3 || raw.dims.size() == 4) && raw.dims[0] == 3) return raw.to_float();
    throw isd::io::FormatError("mask-preview input must be a 2-d HU slice or a (3,...) RGB tensor");
}

void export_view(const fs::path& out_dir, const std::string& stem, const isd::Tensor<float>& view,
                 const isd::Tensor<float>& original) {
    isd::io::write_isdt(out_dir / (stem + ".isdt"), view);
    if (view.ndim() == 3) {
        const std::size_t h = view.shape()[1], w = view.shape()[2];
        for (std::size_t c = 0; c < 3; ++c) {
            std::vector<float> plane(view.value().begin() + c * h * w,
                                     view.value().begin() + (c + 1) * h * w);
            isd::io::write_pgm(out_dir / (stem + "_ch" + std::to_string(c) + ".pgm"),
                               isd::Tensor<float>::from(isd::Shape{h, w}, std::move(plane)));
        }
    }
    const isd::mask::MaskStats st = isd::mask::mask_stats(view, original);
    std::printf("%s: masked_fraction=%.4f runs", stem.c_str(), st.masked_fraction);
    std::size_t shown = 0;
    for (const auto& [len, count] : st.zero_run_histogram) {
        if (++shown > 6) {
            std::printf(" ...");
            break;
        }
        std::printf(" %zux%zu", len, count);
    }
    std::printf("\n");
}

int run(int argc, char** argv) {
    CLI::App app{"dual-mask self-supervised pretraining workbench"};
    app.require_subcommand(1);

    // gen-phantoms
    Shared gp_shared;
    isd::phantom::PhantomSpec phantom_spec;
    auto* gen = app.add_subcommand("gen-phantoms", "generate synthetic CT phantoms + manifests");
    add_shared(gen, gp_shared);
    gen->add_option("--count", phantom_spec.count, "number of phantoms");
    gen->add_option("--size", phantom_spec.size, "per-axis extent");
    gen->add_option("--dims", phantom_spec.dims, "2 or 3")->check(CLI::IsMember({2, 3}));
    gen->add_flag("--allow-empty", phantom_spec.allow_empty_lesions, "permit lesion-free phantoms");

    // preprocess
    Shared pp_shared;
    std::string pp_input;
    std::size_t pp_target = 32;
    double pp_spacing = 1.0;
    bool pp_pgm = false, pp_slices = false;
    auto* pre = app.add_subcommand("preprocess", "HU volumes -> 3-channel RGB tensors");
    add_shared(pre, pp_shared);
    pre->add_option("--input", pp_input, ".isdt file or directory of them")->required();
    pre->add_option("--target-size", pp_target, "3-d resample target extent");
    pre->add_option("--spacing", pp_spacing, "input voxel spacing in mm");
    pre->add_flag("--pgm", pp_pgm, "also export channel previews as PGM");
    pre->add_flag("--split-slices", pp_slices, "write 3-d stacks as per-slice 2-d files");

    // mask-preview
    Shared mp_shared;
    std::string mp_input, mp_mode = "dual";
    std::size_t mp_k = 16, mp_patch = 8;
    double mp_ratio = 0.5;
    auto* mp = app.add_subcommand("mask-preview", "export masked views of one image");
    add_shared(mp, mp_shared);
    mp->add_option("--input", mp_input, "input .isdt")->required();
    mp->add_option("--mode", mp_mode, "intensity | spatial | dual")
        ->check(CLI::IsMember({"intensity", "spatial", "dual"}));
    mp->add_option("--k", mp_k, "intensity bins");
    mp->add_option("--patch", mp_patch, "spatial patch size");
    mp->add_option("--ratio", mp_ratio, "mask ratio for both strategies");

    // pretrain
    Shared pt_shared;
    std::string pt_data, pt_mode = "dual", pt_init;
    std::size_t pt_epochs = 10;
    auto* pt = app.add_subcommand("pretrain", "dual-branch self-supervised pretraining");
    add_shared(pt, pt_shared);
    pt->add_option("--data", pt_data, "dataset directory (with manifest)")->required();
    pt->add_option("--epochs", pt_epochs, "target epoch count");
    pt->add_option("--mask-mode", pt_mode, "dual | intensity_only | spatial_only")
        ->check(CLI::IsMember({"dual", "intensity_only", "spatial_only"}));
    pt->add_option("--init", pt_init, "checkpoint to resume or warm-start from");

    // finetune
    Shared ft_shared;
    std::string ft_data, ft_task = "seg", ft_init;
    std::size_t ft_epochs = 20;
    auto* ft = app.add_subcommand("finetune", "supervised fine-tuning of a task head");
    add_shared(ft, ft_shared);
    ft->add_option("--data", ft_data, "dataset directory (with manifest)")->required();
    ft->add_option("--task", ft_task, "seg | cls")->check(CLI::IsMember({"seg", "cls"}));
    ft->add_option("--init", ft_init, "checkpoint to start from");
    ft->add_option("--epochs", ft_epochs, "target epoch count");

    // eval
    Shared ev_shared;
    std::string ev_data, ev_ckpt, ev_report;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_shared(ev, ev_shared, /*out_required=*/false);
    ev->add_option("--data", ev_data, "dataset directory (with manifest)")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--report", ev_report, "metric report CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    if (gen->parsed()) {
        phantom_spec.seed = gp_shared.seed;
        isd::phantom::gen_phantoms(phantom_spec, gp_shared.out_dir);
        std::printf("wrote %zu phantoms to %s\n", phantom_spec.count, gp_shared.out_dir.c_str());
        return 0;
    }

    if (pre->parsed()) {
        std::vector<fs::path> inputs;
        if (fs::is_directory(pp_input)) {
            for (const auto& e : fs::directory_iterator(pp_input))
                if (e.path().extension() == ".isdt") inputs.push_back(e.path());
            std::sort(inputs.begin(), inputs.end());
        } else {
            inputs.push_back(pp_input);
        }
        fs::create_directories(pp_shared.out_dir);
        for (const auto& in : inputs) {
            const isd::io::IsdtData raw = isd::io::read_isdt(in);
            const auto t = raw.to_float();
            isd::ct::HuVolume vol;
            vol.dims = raw.dims;
            vol.spacing_mm.assign(raw.dims.size(), float(pp_spacing));
            vol.values.assign(t.value().begin(), t.value().end());
            const std::string stem = in.stem().string();
            if (raw.dims.size() == 2) {
                const auto rgb = isd::ct::synth_rgb(vol);
                isd::io::write_isdt(fs::path(pp_shared.out_dir) / (stem + "_rgb.isdt"), rgb);
                if (pp_pgm) {
                    const std::size_t h = rgb.shape()[1], w = rgb.shape()[2];
                    for (std::size_t c = 0; c < 3; ++c) {
                        std::vector<float> plane(rgb.value().begin() + c * h * w,
                                                 rgb.value().begin() + (c + 1) * h * w);
                        isd::io::write_pgm(
                            fs::path(pp_shared.out_dir) / (stem + "_ch" + std::to_string(c) + ".pgm"),
                            isd::Tensor<float>::from(isd::Shape{h, w}, std::move(plane)));
                    }
                }
            } else if (raw.dims.size() == 3) {
                const isd::ct::HuVolume iso = isd::ct::resample_volume(
                    vol, 1.0f, isd::Shape{pp_target, pp_target, pp_target});
                if (pp_slices) {
                    char suffix[32];
                    for (std::size_t d = 0; d < iso.dims[2]; ++d) {
                        const auto slice = isd::ct::extract_slice(iso, d);
                        std::snprintf(suffix, sizeof suffix, "_s%03zu.isdt", d);
                        isd::io::write_isdt(fs::path(pp_shared.out_dir) / (stem + suffix),
                                            isd::Tensor<float>::from(slice.dims, slice.values));
                    }
                } else {
                    const auto stack = isd::ct::slice_and_synth(iso);
                    isd::io::write_isdt(fs::path(pp_shared.out_dir) / (stem + "_rgb.isdt"), stack);
                    if (pp_pgm) {
                        const auto mid = isd::ct::synth_rgb(isd::ct::extract_slice(iso, iso.dims[2] / 2));
                        const std::size_t h = mid.shape()[1], w = mid.shape()[2];
                        for (std::size_t c = 0; c < 3; ++c) {
                            std::vector<float> plane(mid.value().begin() + c * h * w,
                                                     mid.value().begin() + (c + 1) * h * w);
                            isd::io::write_pgm(
                                fs::path(pp_shared.out_dir) / (stem + "_mid_ch" + std::to_string(c) + ".pgm"),
                                isd::Tensor<float>::from(isd::Shape{h, w}, std::move(plane)));
                        }
                    }
                }
            } else {
                throw isd::io::FormatError("preprocess input must be 2-d or 3-d: " + in.string());
            }
        }
        std::printf("preprocessed %zu file(s)\n", inputs.size());
        return 0;
    }

    if (mp->parsed()) {
        const isd::Tensor<float> img = load_preview_input(mp_input);
        fs::create_directories(mp_shared.out_dir);
        isd::mask::IntensityMaskSpec i_spec{mp_k, mp_ratio, mp_shared.seed};
        isd::mask::SpatialMaskSpec s_spec{mp_patch, mp_ratio, mp_shared.seed};
        if (mp_mode == "intensity" || mp_mode == "dual") {
            auto [view, bins] = isd::mask::intensity_mask(img, i_spec);
            export_view(mp_shared.out_dir, "intensity_view", view, img);
        }
        if (mp_mode == "spatial" || mp_mode == "dual") {
            auto [view, patches] = isd::mask::spatial_mask(img, s_spec);
            export_view(mp_shared.out_dir, "spatial_view", view, img);
        }
        return 0;
    }

    if (pt->parsed()) {
        isd::train::PretrainOptions opt;
        opt.data_dir = pt_data;
        opt.out_dir = pt_shared.out_dir;
        opt.seed = pt_shared.seed;
        opt.epochs = pt_epochs;
        opt.cfg = isd::load_config(pt_shared.config_path);
        opt.init_checkpoint = pt_init;
        opt.mask_mode = pt_mode == "dual"             ? isd::mask::Mode::Dual
                        : pt_mode == "intensity_only" ? isd::mask::Mode::IntensityOnly
                                                      : isd::mask::Mode::SpatialOnly;
        isd::train::run_pretrain(opt);
        std::printf("pretraining done: %s\n", pt_shared.out_dir.c_str());
        return 0;
    }

    if (ft->parsed()) {
        isd::train::FinetuneOptions opt;
        opt.data_dir = ft_data;
        opt.out_dir = ft_shared.out_dir;
        opt.seed = ft_shared.seed;
        opt.epochs = ft_epochs;
        opt.task = ft_task == "seg" ? isd::train::Task::Seg : isd::train::Task::Cls;
        opt.cfg = isd::load_config(ft_shared.config_path);
        opt.init_checkpoint = ft_init;
        isd::train::run_finetune(opt);
        std::printf("fine-tuning done: %s\n", ft_shared.out_dir.c_str());
        return 0;
    }

    if (ev->parsed()) {
        const isd::train::EvalResult res = isd::train::run_eval(ev_data, ev_ckpt, ev_report);
        if (res.task == isd::train::Task::Seg)
            std::printf("evaluated %zu samples, mean_dice=%.6f\n", res.n_samples, res.mean_dice);
        else
            std::printf("evaluated %zu samples, roc_auc=%.6f\n", res.n_samples, res.roc_auc);
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const isd::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
