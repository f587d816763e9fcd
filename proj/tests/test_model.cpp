#include <doctest.h>

#include <cmath>

#include "isd/masking.hpp"
#include "isd/model.hpp"
#include "isd/objectives.hpp"
#include "testutil.hpp"

using isd::Shape;
using isd::Tensor;
namespace model = isd::model;
using testutil::fd_check;

namespace {

model::ModelConfig desk_config() {
    model::ModelConfig cfg;
    cfg.input_size = 32;
    cfg.num_stages = 3;
    cfg.stage_channels = {16, 32, 64};
    cfg.decoder_channels = 16;
    cfg.embed_dim = 128;
    return cfg;
}

model::ModelConfig tiny_config() {
    model::ModelConfig cfg;
    cfg.input_size = 8;
    cfg.num_stages = 2;
    cfg.stage_channels = {4, 8};
    cfg.decoder_channels = 4;
    cfg.embed_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    model::ModelConfig bad = desk_config();
    bad.input_size = 30;  // not divisible by 2^3
    CHECK_THROWS_AS(bad.validate(), isd::ShapeError);
    bad = desk_config();
    bad.stage_channels = {16, 32};
    CHECK_THROWS_AS(bad.validate(), isd::ShapeError);
    CHECK_NOTHROW(desk_config().validate());
}

TEST_CASE("init: deterministic, zero biases, centered weights") {
    const auto cfg = desk_config();
    auto a = model::init_params<float>(cfg, 7);
    auto b = model::init_params<float>(cfg, 7);
    bool identical = true;
    std::size_t checked = 0;
    a.for_each([&](const std::string& name, Tensor<float>& t) {
        Tensor<float>* other = nullptr;
        b.for_each([&](const std::string& n2, Tensor<float>& t2) {
            if (n2 == name) other = &t2;
        });
        REQUIRE(other != nullptr);
        for (std::size_t i = 0; i < t.numel(); ++i) identical = identical && t[i] == (*other)[i];
        ++checked;
    });
    CHECK(identical);
    CHECK(checked > 10);

    auto c = model::init_params<float>(cfg, 8);
    bool differs = false;
    c.for_each([&](const std::string& name, Tensor<float>& t) {
        if (name != "enc0.down.w") return;
        a.for_each([&](const std::string& n2, Tensor<float>& t2) {
            if (n2 != name) return;
            for (std::size_t i = 0; i < t.numel(); ++i) differs = differs || t[i] != t2[i];
        });
    });
    CHECK(differs);

    a.for_each([&](const std::string& name, Tensor<float>& t) {
        if (name.ends_with(".b") || name.ends_with("recon.b") || name.ends_with("proj.b")) {
            for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);
        }
    });

    // Mean of a large уuniform(-b, b) sample is 0 within 3 sigma.
    model::ModelConfig wide = desk_config();
    wide.embed_dim = 256;
    wide.stage_channels = {16, 32, 64};
    auto params = model::init_params<float>(wide, 99);
    params.for_each([&](const std::string& name, Tensor<float>& t) {
        if (name != "proj.w") return;  // 64*256 = 16384 elements
        const std::size_t n = t.numel();
        REQUIRE(n >= 10000);
        const double bound = std::sqrt(6.0 / 64.0);
        double mean = 0;
        for (std::size_t i = 0; i < n; ++i) mean += double(t[i]) / double(n);
        const double sigma_of_mean = bound / std::sqrt(3.0 * double(n));
        CHECK(std::abs(mean) <= 3.0 * sigma_of_mean);
    });
}

TEST_CASE("encoder/decoder shapes: desk and paper configs") {
    const auto desk = desk_config();
    auto params = model::init_params<float>(desk, 1);
    auto g = isd::rng::substream(2, isd::rng::kTagTest);
    const auto x = Tensor<float>::uniform({3, 32, 32}, 0.f, 1.f, g);
    const auto pyramid = model::encode(x, params);
    REQUIRE(pyramid.size() == 3);
    CHECK(pyramid[0].shape() == Shape{16, 16, 16});
    CHECK(pyramid[1].shape() == Shape{32, 8, 8});
    CHECK(pyramid[2].shape() == Shape{64, 4, 4});

    const auto decoded = model::decode(pyramid, params);
    CHECK(decoded.shape() == Shape{16, 32, 32});
    const auto recon = model::reconstruct_head(decoded, params);
    CHECK(recon.shape() == Shape{3, 32, 32});
    const auto emb = model::project_head(pyramid.back(), params);
    CHECK(emb.shape() == Shape{128});
    CHECK(model::seg_head(decoded, params).shape() == Shape{1, 32, 32});
    CHECK(model::cls_head(pyramid.back(), params).numel() == 1);

    // Paper topology: 256 input, 5 stages to a (512, 8, 8) bottleneck and a
    // (128, 256, 256) decoder output.
    model::ModelConfig paper;
    paper.input_size = 256;
    paper.num_stages = 5;
    paper.stage_channels = {32, 64, 128, 256, 512};
    paper.decoder_channels = 128;
    paper.embed_dim = 128;
    auto pparams = model::init_params<float>(paper, 3);
    const auto px = Tensor<float>::uniform({3, 256, 256}, 0.f, 1.f, g);
    const auto ppyr = model::encode(px, pparams);
    CHECK(ppyr.back().shape() == Shape{512, 8, 8});
    const auto pdec = model::decode(ppyr, pparams);
    CHECK(pdec.shape() == Shape{128, 256, 256});
    CHECK(model::reconstruct_head(pdec, pparams).shape() == Shape{3, 256, 256});
}

TEST_CASE("pyramid shapes are reproducible from config alone (random configs)") {
    auto g = isd::rng::substream(3, isd::rng::kTagTest);
    for (int t = 0; t < 8; ++t) {
        model::ModelConfig cfg;
        cfg.num_stages = 1 + g.next_below(3);
        cfg.input_size = (std::size_t(1) << cfg.num_stages) * (1 + g.next_below(3));
        cfg.stage_channels.clear();
        for (std::size_t i = 0; i < cfg.num_stages; ++i) cfg.stage_channels.push_back(2 + g.next_below(6));
        cfg.decoder_channels = 2 + g.next_below(6);
        cfg.embed_dim = 4 + g.next_below(12);
        cfg.validate();
        auto params = model::init_params<float>(cfg, t);
        const auto x = Tensor<float>::uniform({3, cfg.input_size, cfg.input_size}, 0.f, 1.f, g);
        const auto pyr = model::encode(x, params);
        for (std::size_t i = 0; i < cfg.num_stages; ++i) {
            CHECK(pyr[i].shape() ==
                  Shape{cfg.stage_channels[i], cfg.stage_size(i), cfg.stage_size(i)});
        }
        CHECK(model::decode(pyr, params).shape() ==
              Shape{cfg.decoder_channels, cfg.input_size, cfg.input_size});
    }
}

TEST_CASE("attention-enabled encoder keeps shapes and stays differentiable") {
    model::ModelConfig cfg = tiny_config();
    cfg.attention_enabled = true;
    auto params = model::init_params<double>(cfg, 5);
    auto g = isd::rng::substream(4, isd::rng::kTagTest);
    Tensor<double> x = Tensor<double>::uniform({3, 8, 8}, 0.0, 1.0, g);
    const auto pyr = model::encode(x, params);
    CHECK(pyr[0].shape() == Shape{4, 4, 4});
    CHECK(pyr[1].shape() == Shape{8, 2, 2});
    // Gradient reaches the attention weights.
    isd::sum(model::decode(pyr, params)).backward();
    bool nonzero = false;
    for (const double v : params.stages[0].attn.wq.grad()) nonzero = nonzero || v != 0.0;
    CHECK(nonzero);
}

TEST_CASE("reconstruction head is bounded and zero weights give 0.5") {
    const auto cfg = desk_config();
    auto params = model::init_params<float>(cfg, 11);
    auto g = isd::rng::substream(5, isd::rng::kTagTest);
    const auto x = Tensor<float>::uniform({3, 32, 32}, 0.f, 1.f, g);
    const auto out = model::forward(x, params);
    for (const float v : out.reconstruction.value()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    auto data = params.recon_head.w.data_mut();
    std::fill(data.begin(), data.end(), 0.0f);
    const auto out2 = model::forward(x, params);
    for (const float v : out2.reconstruction.value()) CHECK(v == 0.5f);
}

TEST_CASE("projection head: spatial permutation invariance and hand value") {
    const auto cfg = tiny_config();
    auto params = model::init_params<float>(cfg, 13);
    auto g = isd::rng::substream(6, isd::rng::kTagTest);
    const auto bottleneck = Tensor<float>::uniform({8, 2, 2}, 0.f, 1.f, g);
    const auto emb = model::project_head(bottleneck, params);
    REQUIRE(emb.shape() == Shape{8});

    // Permute the four spatial positions of every channel.
    std::vector<float> perm(bottleneck.value().begin(), bottleneck.value().end());
    for (std::size_t c = 0; c < 8; ++c) {
        std::swap(perm[c * 4 + 0], perm[c * 4 + 3]);
        std::swap(perm[c * 4 + 1], perm[c * 4 + 2]);
    }
    const auto emb2 = model::project_head(Tensor<float>::from({8, 2, 2}, std::move(perm)), params);
    for (std::size_t i = 0; i < 8; ++i) CHECK(emb[i] == doctest::Approx(emb2[i]).epsilon(1e-6));

    // Constant feature map: embedding = c * column sums of the weight.
    const float c = 0.37f;
    const auto emb3 = model::project_head(Tensor<float>::full({8, 2, 2}, c), params);
    const auto w = params.proj_head.w.value();
    for (std::size_t j = 0; j < 8; ++j) {
        float expect = 0.f;
        for (std::size_t i = 0; i < 8; ++i) expect += c * w[i * 8 + j];
        CHECK(emb3[j] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("weight sharing: both branches see every parameter update") {
    const auto cfg = tiny_config();
    auto params = model::init_params<float>(cfg, 17);
    auto g = isd::rng::substream(7, isd::rng::kTagTest);
    const auto img = Tensor<float>::uniform({3, 8, 8}, 0.1f, 1.f, g);
    const auto pair = isd::mask::make_masked_pair(img, {4, 0.5, 1}, {2, 0.5, 2}, isd::mask::Mode::Dual);

    const auto t1 = model::forward(pair.intensity_view, params);
    const auto p1 = model::forward(pair.spatial_view, params);
    auto data = params.stages[0].down.w.data_mut();
    data[0] += 0.25f;
    const auto t2 = model::forward(pair.intensity_view, params);
    const auto p2 = model::forward(pair.spatial_view, params);
    bool t_changed = false, p_changed = false;
    for (std::size_t i = 0; i < t1.reconstruction.numel(); ++i) {
        t_changed = t_changed || t1.reconstruction[i] != t2.reconstruction[i];
        p_changed = p_changed || p1.reconstruction[i] != p2.reconstruction[i];
    }
    CHECK(t_changed);
    CHECK(p_changed);
}

TEST_CASE("gradient flows to every encoder stage through the skips") {
    const auto cfg = desk_config();
    auto params = model::init_params<float>(cfg, 23);
    auto g = isd::rng::substream(8, isd::rng::kTagTest);
    const auto x = Tensor<float>::uniform({3, 32, 32}, 0.1f, 1.f, g);
    const auto out = model::forward(x, params);
    isd::sum(out.reconstruction).backward();
    params.for_each([&](const std::string& name, Tensor<float>& t) {
        // Task and projection heads sit off the reconstruction path.
        if (name.starts_with("seg.") || name.starts_with("cls.") || name.starts_with("proj.")) return;
        bool nonzero = false;
        for (const float v : t.grad()) nonzero = nonzero || v != 0.0f;
        CAPTURE(name);
        CHECK(nonzero);
    });
}

TEST_CASE("fd: end-to-end total loss on the tiny model (double)") {
    const auto cfg = tiny_config();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto params = model::init_params<double>(cfg, seed);
        auto g = isd::rng::substream(seed + 900, isd::rng::kTagTest);
        // Knock every parameter (zero biases included) off exact zero: fresh
        // init plus zero-masked inputs parks relu pre-activations exactly on
        // the kink, where the two-sided difference quotient is meaningless.
        params.for_each([&](const std::string&, Tensor<double>& t) {
            for (auto& v : t.data_mut()) v += g.uniform(-0.2, 0.2);
        });
        std::vector<Tensor<double>> originals;
        std::vector<isd::mask::MaskedPair<double>> views;
        for (int i = 0; i < 2; ++i) {
            originals.push_back(Tensor<double>::uniform({3, 8, 8}, 0.05, 0.95, g));
            views.push_back(isd::mask::make_masked_pair(originals.back(),
                                                        {4, 0.5, seed * 10 + std::uint64_t(i)},
                                                        {2, 0.5, seed * 20 + std::uint64_t(i)},
                                                        isd::mask::Mode::Dual));
        }
        auto loss_fn = [&] {
            std::vector<Tensor<double>> rt, rp, et, ep;
            for (int i = 0; i < 2; ++i) {
                auto ot = model::forward(views[std::size_t(i)].intensity_view, params);
                auto op = model::forward(views[std::size_t(i)].spatial_view, params);
                rt.push_back(ot.reconstruction);
                rp.push_back(op.reconstruction);
                et.push_back(ot.embedding);
                ep.push_back(op.embedding);
            }
            return isd::total_loss<double>(originals, rt, rp, isd::stack_rows(et), isd::stack_rows(ep))
                .total;
        };
        std::vector<Tensor<double>*> leaves = params.ordered();
        fd_check(loss_fn, leaves);
    }
}
