#include "isd/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "isd/isdt_io.hpp"
#include "isd/metrics.hpp"
#include "isd/phantom.hpp"

namespace isd::train {

namespace {

double bitcast_u64(std::uint64_t v) {
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
}

std::uint64_t bitcast_f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof v);
    return v;
}

std::vector<double> encode_config(const RunConfig& c) {
    std::vector<double> v = {
        double(c.model.input_channels), double(c.model.input_size), double(c.model.num_stages),
        double(c.model.decoder_channels), double(c.model.embed_dim), c.model.attention_enabled ? 1.0 : 0.0,
        c.augment.p_flip_h, c.augment.p_flip_v, c.augment.p_rot_scale, c.augment.rot_max_deg,
        c.augment.scale_min, c.augment.scale_max,
        c.pretrain_sched.base_lr, c.pretrain_sched.gamma, double(c.pretrain_sched.step_size),
        c.finetune_sched.base_lr, c.finetune_sched.gamma, double(c.finetune_sched.step_size),
        c.adamw.beta1, c.adamw.beta2, c.adamw.eps, c.adamw.weight_decay,
        double(c.k_bins), c.intensity_ratio, double(c.spatial_patch), c.spatial_ratio,
        double(c.batch_size_pretrain), double(c.batch_size_finetune),
        c.ssim_windowed ? 1.0 : 0.0,
        double(c.model.stage_channels.size()),
    };
    for (std::size_t ch : c.model.stage_channels) v.push_back(double(ch));
    return v;
}

RunConfig decode_config(const std::vector<double>& v) {
    if (v.size() < 31) throw io::FormatError("checkpoint: config vector too short");
    RunConfig c;
    std::size_t i = 0;
    c.model.input_channels = std::size_t(v[i++]);
    c.model.input_size = std::size_t(v[i++]);
    c.model.num_stages = std::size_t(v[i++]);
    c.model.decoder_channels = std::size_t(v[i++]);
    c.model.embed_dim = std::size_t(v[i++]);
    c.model.attention_enabled = v[i++] != 0.0;
    c.augment.p_flip_h = v[i++];
    c.augment.p_flip_v = v[i++];
    c.augment.p_rot_scale = v[i++];
    c.augment.rot_max_deg = v[i++];
    c.augment.scale_min = v[i++];
    c.augment.scale_max = v[i++];
    c.pretrain_sched.base_lr = v[i++];
    c.pretrain_sched.gamma = v[i++];
    c.pretrain_sched.step_size = std::uint64_t(v[i++]);
    c.finetune_sched.base_lr = v[i++];
    c.finetune_sched.gamma = v[i++];
    c.finetune_sched.step_size = std::uint64_t(v[i++]);
    c.adamw.beta1 = v[i++];
    c.adamw.beta2 = v[i++];
    c.adamw.eps = v[i++];
    c.adamw.weight_decay = v[i++];
    c.k_bins = std::size_t(v[i++]);
    c.intensity_ratio = v[i++];
    c.spatial_patch = std::size_t(v[i++]);
    c.spatial_ratio = v[i++];
    c.batch_size_pretrain = std::size_t(v[i++]);
    c.batch_size_finetune = std::size_t(v[i++]);
    c.ssim_windowed = v[i++] != 0.0;
    const std::size_t n_stages = std::size_t(v[i++]);
    if (v.size() != i + n_stages) throw io::FormatError("checkpoint: config vector length mismatch");
    c.model.stage_channels.clear();
    for (std::size_t s = 0; s < n_stages; ++s) c.model.stage_channels.push_back(std::size_t(v[i++]));
    return c;
}

std::string format_csv_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, TrainState& state) {
    io::ContainerWriter w(path);
    const std::vector<double> meta = {
        1.0,
        state.phase == Phase::Pretrain ? 0.0 : 1.0,
        state.task == Task::Seg ? 0.0 : 1.0,
        double(int(state.mask_mode)),
        double(state.epochs_done),
        double(state.global_step),
        double(state.optim.step_count()),
        bitcast_u64(state.root_seed),
    };
    w.add("meta", Tensor<double>::from(Shape{meta.size()}, meta));
    const std::vector<double> cfg = encode_config(state.cfg);
    w.add("config", Tensor<double>::from(Shape{cfg.size()}, cfg));
    state.params.for_each([&](const std::string& name, Tensor<float>& t) { w.add("param/" + name, t); });
    auto& m = state.optim.moments1();
    auto& v = state.optim.moments2();
    if (!m.empty()) {
        std::size_t i = 0;
        state.params.for_each([&](const std::string& name, Tensor<float>& t) {
            w.add("m/" + name, Tensor<float>::from(t.shape(), m[i]));
            w.add("v/" + name, Tensor<float>::from(t.shape(), v[i]));
            ++i;
        });
    }
    w.finish();
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    const io::Container c = io::Container::load(path);
    const auto meta = c.get("meta").to_double();
    if (meta.numel() < 8 || meta[0] != 1.0) throw io::FormatError("checkpoint: bad meta record");

    TrainState st;
    st.phase = meta[1] == 0.0 ? Phase::Pretrain : Phase::Finetune;
    st.task = meta[2] == 0.0 ? Task::Seg : Task::Cls;
    st.mask_mode = mask::Mode(int(meta[3]));
    st.epochs_done = std::uint64_t(meta[4]);
    st.global_step = std::uint64_t(meta[5]);
    const auto optim_step = std::uint64_t(meta[6]);
    st.root_seed = bitcast_f64(meta[7]);

    const auto cfgv = c.get("config").to_double();
    st.cfg = decode_config(std::vector<double>(cfgv.value().begin(), cfgv.value().end()));

    // Rebuild the parameter structure for shapes, then overwrite the data.
    st.params = model::init_params<float>(st.cfg.model, 0);
    st.params.for_each([&](const std::string& name, Tensor<float>& t) {
        const Tensor<float> loaded = c.get("param/" + name).to_float();
        if (loaded.shape() != t.shape())
            throw io::FormatError("checkpoint: shape mismatch for " + name);
        std::copy(loaded.value().begin(), loaded.value().end(), t.data_mut().begin());
    });

    st.optim = AdamW<float>(st.cfg.adamw);
    if (c.has("m/recon.w")) {
        std::vector<std::vector<float>> m, v;
        st.params.for_each([&](const std::string& name, Tensor<float>& t) {
            const auto mt = c.get("m/" + name).to_float();
            const auto vt = c.get("v/" + name).to_float();
            if (mt.numel() != t.numel() || vt.numel() != t.numel())
                throw io::FormatError("checkpoint: optimizer state mismatch for " + name);
            m.emplace_back(mt.value().begin(), mt.value().end());
            v.emplace_back(vt.value().begin(), vt.value().end());
        });
        st.optim.restore(optim_step, std::move(m), std::move(v));
    }
    return st;
}

io::Manifest find_manifest(const std::filesystem::path& data_dir, Task task) {
    const std::filesystem::path preferred =
        data_dir / (task == Task::Seg ? "manifest_seg.isdm" : "manifest_cls.isdm");
    if (std::filesystem::exists(preferred)) return io::read_manifest(preferred);
    const std::filesystem::path fallback = data_dir / "manifest.isdm";
    if (std::filesystem::exists(fallback)) return io::read_manifest(fallback);
    throw io::IoError("no manifest found in " + data_dir.string());
}

std::vector<Sample> load_samples(const io::Manifest& manifest, const std::string& split,
                                 std::size_t expected_size) {
    std::vector<Sample> out;
    for (const auto& e : manifest.split(split)) {
        const io::IsdtData raw = io::read_isdt(manifest.resolve(e.path));
        if (raw.dims.size() != 2)
            throw io::FormatError("training expects 2-d volumes; preprocess 3-d data into slices first (" +
                                  e.path + " is " + shape_str(raw.dims) + ")");
        if (raw.dims[0] != expected_size || raw.dims[1] != expected_size)
            throw io::FormatError("sample " + e.path + " is " + shape_str(raw.dims) +
                                  " but config input_size is " + std::to_string(expected_size));
        ct::HuVolume vol;
        vol.dims = raw.dims;
        vol.spacing_mm = {1.0f, 1.0f};
        const Tensor<float> hu = raw.to_float();
        vol.values.assign(hu.value().begin(), hu.value().end());

        Sample s;
        s.id = std::filesystem::path(e.path).stem().string();
        s.image = scale(ct::synth_rgb(vol), 1.0f / 255.0f).detached();

        if (manifest.task == "seg") {
            const Tensor<float> m = io::read_isdt(manifest.resolve(e.label_or_mask)).to_float();
            if (m.shape() != raw.dims)
                throw io::FormatError("mask " + e.label_or_mask + " does not match its volume");
            std::vector<float> bin(m.numel());
            for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = m[i] >= 0.5f ? 1.0f : 0.0f;
            s.mask = Tensor<float>::from(Shape{1, raw.dims[0], raw.dims[1]}, std::move(bin));
        } else {
            s.label = e.label_or_mask == "1" ? 1 : 0;
        }
        out.push_back(std::move(s));
    }
    return out;
}

LossReport pretrain_step(const std::vector<const Sample*>& batch, TrainState& state, double lr,
                         std::uint64_t epoch, std::size_t first_slot, std::size_t n_train) {
    const RunConfig& cfg = state.cfg;
    std::vector<Tensor<float>> originals, recon_t, recon_p, emb_t, emb_p;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::uint64_t counter = epoch * n_train + (first_slot + i);
        const Augmented aug = augment(batch[i]->image, nullptr, cfg.augment,
                                      rng::derive_seed(state.root_seed, rng::kTagAugment, counter));
        mask::IntensityMaskSpec i_spec{cfg.k_bins, cfg.intensity_ratio,
                                       rng::derive_seed(state.root_seed, rng::kTagIntensityMask, counter)};
        mask::SpatialMaskSpec s_spec{cfg.spatial_patch, cfg.spatial_ratio,
                                     rng::derive_seed(state.root_seed, rng::kTagSpatialMask, counter)};
        const mask::MaskedPair<float> views =
            mask::make_masked_pair(aug.image, i_spec, s_spec, state.mask_mode);

        auto out_t = model::forward(views.intensity_view, state.params);
        auto out_p = model::forward(views.spatial_view, state.params);
        originals.push_back(aug.image);
        recon_t.push_back(std::move(out_t.reconstruction));
        recon_p.push_back(std::move(out_p.reconstruction));
        emb_t.push_back(std::move(out_t.embedding));
        emb_p.push_back(std::move(out_p.embedding));
    }
    const TotalLoss<float> loss = total_loss<float>(
        originals, recon_t, recon_p, stack_rows(emb_t), stack_rows(emb_p),
        float(logit_scale_default()), cfg.ssim_windowed ? SsimMode::Windowed : SsimMode::Global);
    state.params.zero_grad();
    loss.total.backward();
    auto ptrs = state.params.ordered();
    state.optim.step(ptrs, float(lr));
    return loss.report;
}

double finetune_step(const std::vector<const Sample*>& batch, TrainState& state, double lr) {
    Tensor<float> acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = *batch[i];
        auto pyramid = model::encode(s.image, state.params);
        Tensor<float> li;
        if (state.task == Task::Seg) {
            const Tensor<float> decoded = model::decode(pyramid, state.params);
            li = bce_loss(model::seg_head(decoded, state.params), s.mask);
        } else {
            const Tensor<float> logit = model::cls_head(pyramid.back(), state.params);
            li = bce_loss(logit, Tensor<float>::scalar(float(s.label)));
        }
        acc = i ? add(acc, li) : li;
    }
    const Tensor<float> loss = scale(acc, 1.0f / float(batch.size()));
    state.params.zero_grad();
    loss.backward();
    auto ptrs = state.params.ordered();
    state.optim.step(ptrs, float(lr));
    return double(loss.item());
}

namespace {

// Epoch loop shared by both phases. step_fn(batch, lr, epoch, first_slot) -> csv row tail.
template <typename StepFn>
void epoch_loop(TrainState& state, const std::vector<Sample>& train_set, std::size_t batch_size,
                std::size_t target_epochs, const LrSchedule& sched, const std::filesystem::path& out_dir,
                const std::string& csv_name, const std::string& csv_header, StepFn step_fn) {
    if (train_set.empty()) throw io::FormatError("no training samples in split");
    std::filesystem::create_directories(out_dir);
    const std::size_t n = train_set.size();
    std::string csv = csv_header + "\n";

    for (std::uint64_t epoch = state.epochs_done; epoch < target_epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        auto g = rng::substream(state.root_seed, rng::kTagShuffle, epoch);
        rng::shuffle(order, g);

        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t end = std::min(n, start + batch_size);
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
            const double lr =
                lr_at(sched, sched.unit == LrUnit::BatchStep ? state.global_step : epoch);
            csv += std::to_string(state.global_step) + "," + step_fn(batch, lr, epoch, start) + "," +
                   format_csv_value(lr) + "\n";
            ++state.global_step;
        }
        state.epochs_done = epoch + 1;
        char name[48];
        std::snprintf(name, sizeof name, "ckpt_epoch_%04llu.isdt", (unsigned long long)state.epochs_done);
        save_checkpoint(out_dir / name, state);
        io::atomic_write(out_dir / csv_name, csv);
    }
    save_checkpoint(out_dir / "ckpt_final.isdt", state);
    io::atomic_write(out_dir / csv_name, csv);
}

}  // namespace

void run_pretrain(const PretrainOptions& opt) {
    TrainState state;
    if (!opt.init_checkpoint.empty()) {
        TrainState loaded = load_checkpoint(opt.init_checkpoint);
        if (loaded.phase == Phase::Pretrain) {
            state = std::move(loaded);  // exact resume; seed/config/counters come from the file
        } else {
            state.cfg = opt.cfg;
            state.cfg.model = loaded.cfg.model;
            state.root_seed = opt.seed;
            state.params = std::move(loaded.params);
            state.optim = AdamW<float>(state.cfg.adamw);
        }
    } else {
        state.cfg = opt.cfg;
        state.root_seed = opt.seed;
        state.params = model::init_params<float>(state.cfg.model, opt.seed);
        state.optim = AdamW<float>(state.cfg.adamw);
    }
    state.phase = Phase::Pretrain;
    if (opt.init_checkpoint.empty() || state.mask_mode != opt.mask_mode) state.mask_mode = opt.mask_mode;

    const io::Manifest manifest = find_manifest(opt.data_dir, Task::Seg);
    const std::vector<Sample> train_set = load_samples(manifest, "train", state.cfg.model.input_size);
    const std::size_t n = train_set.size();

    epoch_loop(state, train_set, state.cfg.batch_size_pretrain, opt.epochs, state.cfg.pretrain_sched,
               opt.out_dir, "pretrain_loss.csv", "step,ssim_loss,cons_loss,total,lr",
               [&](const std::vector<const Sample*>& batch, double lr, std::uint64_t epoch,
                   std::size_t first_slot) {
                   const LossReport r = pretrain_step(batch, state, lr, epoch, first_slot, n);
                   return format_csv_value(r.ssim_loss) + "," + format_csv_value(r.contrastive_loss) +
                          "," + format_csv_value(r.total);
               });
}

void run_finetune(const FinetuneOptions& opt) {
    TrainState state;
    bool resumed = false;
    if (!opt.init_checkpoint.empty()) {
        TrainState loaded = load_checkpoint(opt.init_checkpoint);
        if (loaded.phase == Phase::Finetune && loaded.task == opt.task) {
            state = std::move(loaded);
            resumed = true;
        } else {
            // Warm start: topology comes from the checkpoint, training
            // hyperparameters from the caller.
            state.cfg = opt.cfg;
            state.cfg.model = loaded.cfg.model;
            state.params = std::move(loaded.params);
        }
    } else {
        state.cfg = opt.cfg;
        state.params = model::init_params<float>(state.cfg.model, opt.seed);
    }
    if (!resumed) {
        state.root_seed = opt.seed;
        state.optim = AdamW<float>(state.cfg.adamw);
        state.epochs_done = 0;
        state.global_step = 0;
    }
    state.phase = Phase::Finetune;
    state.task = opt.task;

    const io::Manifest manifest = find_manifest(opt.data_dir, opt.task);
    if ((opt.task == Task::Seg) != (manifest.task == "seg"))
        throw io::FormatError("manifest task does not match --task");
    const std::vector<Sample> train_set = load_samples(manifest, "train", state.cfg.model.input_size);

    epoch_loop(state, train_set, state.cfg.batch_size_finetune, opt.epochs, state.cfg.finetune_sched,
               opt.out_dir, "finetune_loss.csv", "step,loss,lr",
               [&](const std::vector<const Sample*>& batch, double lr, std::uint64_t, std::size_t) {
                   return format_csv_value(finetune_step(batch, state, lr));
               });
}

EvalResult run_eval(const std::filesystem::path& data_dir, const std::filesystem::path& ckpt,
                    const std::filesystem::path& report_path) {
    TrainState state = load_checkpoint(ckpt);
    const io::Manifest manifest = find_manifest(data_dir, state.task);
    const std::vector<Sample> test_set = load_samples(manifest, "test", state.cfg.model.input_size);
    if (test_set.empty()) throw io::FormatError("no test samples in split");

    EvalResult res;
    res.task = state.task;
    res.n_samples = test_set.size();
    std::string csv;
    if (state.task == Task::Seg) {
        csv = "sample_id,dice,hausdorff\n";
        double dice_sum = 0.0;
        for (const Sample& s : test_set) {
            auto pyramid = model::encode(s.image, state.params);
            const Tensor<float> logits = model::seg_head(model::decode(pyramid, state.params), state.params);
            std::vector<float> pred(logits.numel());
            for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = logits[i] > 0.0f ? 1.0f : 0.0f;
            const Tensor<float> pred_mask = Tensor<float>::from(logits.shape(), std::move(pred));
            const double d = metrics::dice(pred_mask, s.mask);
            dice_sum += d;
            std::string hd_str = "nan";
            try {
                hd_str = format_csv_value(metrics::hausdorff(pred_mask, s.mask));
            } catch (const DomainError&) {
                // empty prediction or ground truth: Hausdorff is undefined
            }
            csv += s.id + "," + format_csv_value(d) + "," + hd_str + "\n";
        }
        res.mean_dice = dice_sum / double(test_set.size());
    } else {
        csv = "sample_id,score,label\n";
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        for (const Sample& s : test_set) {
            auto pyramid = model::encode(s.image, state.params);
            const Tensor<float> logit = model::cls_head(pyramid.back(), state.params);
            const double score = 1.0 / (1.0 + std::exp(-double(logit.item())));
            scores.push_back(score);
            labels.push_back(std::uint8_t(s.label));
            csv += s.id + "," + format_csv_value(score) + "," + std::to_string(s.label) + "\n";
        }
        res.roc_auc = metrics::roc_auc(scores, labels);
    }
    io::atomic_write(report_path, csv);
    return res;
}

}  // namespace isd::train
