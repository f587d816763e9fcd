#pragma once

#include <functional>
#include <string>
#include <vector>

#include "isd/ops.hpp"
#include "isd/rng.hpp"

// U-shaped dual-branch network: a hierarchical encoder (stride-2 patch-merging
// conv + residual block, optional single-head spatial-reduction attention),
// a skip-connected decoder with nearest-neighbor upsampling, a sigmoid
// reconstruction head, a projection head feeding the contrastive loss, and
// 1x1-conv / linear task heads. Both branches run the same parameter set.

namespace isd::model {

struct ModelConfig {
    std::size_t input_channels = 3;
    std::size_t input_size = 32;
    std::size_t num_stages = 3;
    std::vector<std::size_t> stage_channels = {16, 32, 64};
    std::size_t decoder_channels = 16;
    std::size_t embed_dim = 128;
    bool attention_enabled = false;

    std::size_t bottleneck_channels() const { return stage_channels.back(); }
    std::size_t bottleneck_size() const { return input_size >> num_stages; }

    void validate() const {
        if (input_channels == 0 || input_size == 0 || num_stages == 0 || decoder_channels == 0 ||
            embed_dim == 0)
            throw ShapeError("model config: zero-sized field");
        if (stage_channels.size() != num_stages)
            throw ShapeError("model config: stage_channels must have num_stages entries");
        for (std::size_t c : stage_channels)
            if (c == 0) throw ShapeError("model config: zero stage width");
        if (input_size % (std::size_t(1) << num_stages) != 0)
            throw ShapeError("model config: input_size must be divisible by 2^num_stages");
    }

    // Spatial extent of encoder stage i's output.
    std::size_t stage_size(std::size_t i) const { return input_size >> (i + 1); }
};

template <typename T>
struct ConvParam {
    Tensor<T> w;  // (Cout, Cin, k, k)
    Tensor<T> b;  // (Cout)
};

template <typename T>
struct LinearParam {
    Tensor<T> w;  // (in, out)
    Tensor<T> b;  // (out)
};

template <typename T>
struct AttentionParam {
    Tensor<T> wq, wk, wv, wo;  // (C, C) each
};

template <typename T>
struct StageParams {
    ConvParam<T> down;  // stride-2 patch merge
    ConvParam<T> c1, c2;
    AttentionParam<T> attn;  // only defined when attention is enabled
};

template <typename T>
struct DecoderStageParams {
    ConvParam<T> c1, c2;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    std::vector<StageParams<T>> stages;
    std::vector<DecoderStageParams<T>> decoder;
    ConvParam<T> recon_head;   // 1x1 -> input_channels
    LinearParam<T> proj_head;  // bottleneck channels -> embed_dim
    ConvParam<T> seg_head;     // 1x1 -> 1
    LinearParam<T> cls_head;   // bottleneck channels -> 1

    // Fixed-order traversal of every learnable tensor; the order is part of
    // the checkpoint and optimizer-state contract.
    void for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string p = "enc" + std::to_string(i) + ".";
            fn(p + "down.w", stages[i].down.w);
            fn(p + "down.b", stages[i].down.b);
            fn(p + "c1.w", stages[i].c1.w);
            fn(p + "c1.b", stages[i].c1.b);
            fn(p + "c2.w", stages[i].c2.w);
            fn(p + "c2.b", stages[i].c2.b);
            if (config.attention_enabled) {
                fn(p + "attn.wq", stages[i].attn.wq);
                fn(p + "attn.wk", stages[i].attn.wk);
                fn(p + "attn.wv", stages[i].attn.wv);
                fn(p + "attn.wo", stages[i].attn.wo);
            }
        }
        for (std::size_t i = 0; i < decoder.size(); ++i) {
            const std::string p = "dec" + std::to_string(i) + ".";
            fn(p + "c1.w", decoder[i].c1.w);
            fn(p + "c1.b", decoder[i].c1.b);
            fn(p + "c2.w", decoder[i].c2.w);
            fn(p + "c2.b", decoder[i].c2.b);
        }
        fn("recon.w", recon_head.w);
        fn("recon.b", recon_head.b);
        fn("proj.w", proj_head.w);
        fn("proj.b", proj_head.b);
        fn("seg.w", seg_head.w);
        fn("seg.b", seg_head.b);
        fn("cls.w", cls_head.w);
        fn("cls.b", cls_head.b);
    }

    std::vector<Tensor<T>*> ordered() {
        std::vector<Tensor<T>*> out;
        for_each([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
        return out;
    }

    void zero_grad() {
        for_each([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
    }
};

namespace detail {

// Kaiming-uniform (fan-in, ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, rng::Xoshiro256& g) {
    const T bound = T(std::sqrt(6.0 / double(fan_in)));
    return Tensor<T>::uniform(std::move(shape), -bound, bound, g, /*requires_grad=*/true);
}

template <typename T>
ConvParam<T> init_conv(std::size_t c_out, std::size_t c_in, std::size_t k, rng::Xoshiro256& g) {
    ConvParam<T> p;
    p.w = kaiming_uniform<T>(Shape{c_out, c_in, k, k}, c_in * k * k, g);
    p.b = Tensor<T>::zeros(Shape{c_out}, /*requires_grad=*/true);
    return p;
}

template <typename T>
LinearParam<T> init_linear(std::size_t in, std::size_t out, rng::Xoshiro256& g) {
    LinearParam<T> p;
    p.w = kaiming_uniform<T>(Shape{in, out}, in, g);
    p.b = Tensor<T>::zeros(Shape{out}, /*requires_grad=*/true);
    return p;
}

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ConvParam<T>& c1, const ConvParam<T>& c2) {
    Tensor<T> h = relu(bias_add_channels(conv2d(x, c1.w, 1, 1), c1.b));
    return relu(bias_add_channels(conv2d(h, c2.w, 1, 1), c2.b));
}

// y = relu(x + conv(relu(conv(x)))), channel-preserving.
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, const ConvParam<T>& c1, const ConvParam<T>& c2) {
    Tensor<T> h = relu(bias_add_channels(conv2d(x, c1.w, 1, 1), c1.b));
    h = bias_add_channels(conv2d(h, c2.w, 1, 1), c2.b);
    return relu(add(x, h));
}

// Single-head attention with spatially reduced keys/values (2x average pool
// when the extent allows it).
template <typename T>
Tensor<T> sr_attention(const Tensor<T>& x, const AttentionParam<T>& p) {
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const Tensor<T> tokens = transpose2d(reshape(x, Shape{c, h * w}));  // (N, C)
    const bool reduce = h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2;
    const Tensor<T> red = reduce ? avg_pool2d(x, 2) : x;
    const std::size_t nr = red.shape()[1] * red.shape()[2];
    const Tensor<T> red_tokens = transpose2d(reshape(red, Shape{c, nr}));  // (Nr, C)
    const Tensor<T> q = matmul(tokens, p.wq);
    const Tensor<T> k = matmul(red_tokens, p.wk);
    const Tensor<T> v = matmul(red_tokens, p.wv);
    const Tensor<T> att = softmax_rows(scale(matmul(q, transpose2d(k)), T(1.0 / std::sqrt(double(c)))));
    const Tensor<T> o = matmul(matmul(att, v), p.wo);  // (N, C)
    return add(x, reshape(transpose2d(o), Shape{c, h, w}));
}

}  // namespace detail

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams<T> params;
    params.config = config;
    std::uint64_t ordinal = 0;
    auto next_rng = [&] { return rng::substream(seed, rng::kTagInit, ordinal++); };

    std::size_t c_prev = config.input_channels;
    for (std::size_t i = 0; i < config.num_stages; ++i) {
        StageParams<T> st;
        const std::size_t c = config.stage_channels[i];
        {
            auto g = next_rng();
            st.down = detail::init_conv<T>(c, c_prev, 3, g);
        }
        {
            auto g = next_rng();
            st.c1 = detail::init_conv<T>(c, c, 3, g);
        }
        {
            auto g = next_rng();
            st.c2 = detail::init_conv<T>(c, c, 3, g);
        }
        if (config.attention_enabled) {
            auto g = next_rng();
            st.attn.wq = detail::kaiming_uniform<T>(Shape{c, c}, c, g);
            st.attn.wk = detail::kaiming_uniform<T>(Shape{c, c}, c, g);
            st.attn.wv = detail::kaiming_uniform<T>(Shape{c, c}, c, g);
            st.attn.wo = detail::kaiming_uniform<T>(Shape{c, c}, c, g);
        }
        params.stages.push_back(std::move(st));
        c_prev = c;
    }

    // Decoder step j consumes the upsampled map plus the equal-resolution
    // encoder stage when one exists (every step except the last).
    for (std::size_t j = 0; j < config.num_stages; ++j) {
        DecoderStageParams<T> d;
        std::size_t in_ch = (j == 0) ? config.bottleneck_channels() : config.decoder_channels;
        const std::ptrdiff_t skip = std::ptrdiff_t(config.num_stages) - 2 - std::ptrdiff_t(j);
        if (skip >= 0) in_ch += config.stage_channels[std::size_t(skip)];
        {
            auto g = next_rng();
            d.c1 = detail::init_conv<T>(config.decoder_channels, in_ch, 3, g);
        }
        {
            auto g = next_rng();
            d.c2 = detail::init_conv<T>(config.decoder_channels, config.decoder_channels, 3, g);
        }
        params.decoder.push_back(std::move(d));
    }

    {
        auto g = next_rng();
        params.recon_head = detail::init_conv<T>(config.input_channels, config.decoder_channels, 1, g);
    }
    {
        auto g = next_rng();
        params.proj_head = detail::init_linear<T>(config.bottleneck_channels(), config.embed_dim, g);
    }
    {
        auto g = next_rng();
        params.seg_head = detail::init_conv<T>(1, config.decoder_channels, 1, g);
    }
    {
        auto g = next_rng();
        params.cls_head = detail::init_linear<T>(config.bottleneck_channels(), 1, g);
    }
    return params;
}

// Feature pyramid, one map per stage; stage i is (stage_channels[i], S/2^(i+1), S/2^(i+1)).
template <typename T>
std::vector<Tensor<T>> encode(const Tensor<T>& x, ModelParams<T>& params) {
    const ModelConfig& cfg = params.config;
    if (x.ndim() != 3 || x.shape()[0] != cfg.input_channels || x.shape()[1] != cfg.input_size ||
        x.shape()[2] != cfg.input_size)
        throw ShapeError("encode: input " + shape_str(x.shape()) + " does not match config");
    std::vector<Tensor<T>> pyramid;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < cfg.num_stages; ++i) {
        const StageParams<T>& st = params.stages[i];
        h = relu(bias_add_channels(conv2d(h, st.down.w, 2, 1), st.down.b));
        h = detail::residual_block(h, st.c1, st.c2);
        if (cfg.attention_enabled) h = detail::sr_attention(h, st.attn);
        pyramid.push_back(h);
    }
    return pyramid;
}

// Bottleneck up to full resolution: upsample x2, concat the equal-resolution
// encoder map when one exists, then a conv block.
template <typename T>
Tensor<T> decode(const std::vector<Tensor<T>>& pyramid, ModelParams<T>& params) {
    const ModelConfig& cfg = params.config;
    if (pyramid.size() != cfg.num_stages) throw ShapeError("decode: pyramid/config stage mismatch");
    Tensor<T> h = pyramid.back();
    for (std::size_t j = 0; j < cfg.num_stages; ++j) {
        h = upsample_nearest2d(h, 2);
        const std::ptrdiff_t skip = std::ptrdiff_t(cfg.num_stages) - 2 - std::ptrdiff_t(j);
        if (skip >= 0) h = concat_channels(h, pyramid[std::size_t(skip)]);
        h = detail::conv_block(h, params.decoder[j].c1, params.decoder[j].c2);
    }
    return h;
}

template <typename T>
Tensor<T> reconstruct_head(const Tensor<T>& decoded, ModelParams<T>& params) {
    return sigmoid(bias_add_channels(conv2d(decoded, params.recon_head.w, 1, 0), params.recon_head.b));
}

template <typename T>
Tensor<T> project_head(const Tensor<T>& bottleneck, ModelParams<T>& params) {
    const std::size_t c = bottleneck.shape()[0];
    const Tensor<T> pooled = reshape(global_avg_pool(bottleneck), Shape{1, c});
    const Tensor<T> y = add(matmul(pooled, params.proj_head.w),
                            reshape(params.proj_head.b, Shape{1, params.config.embed_dim}));
    return reshape(y, Shape{params.config.embed_dim});
}

// Segmentation logits (1,S,S) from the decoded map.
template <typename T>
Tensor<T> seg_head(const Tensor<T>& decoded, ModelParams<T>& params) {
    return bias_add_channels(conv2d(decoded, params.seg_head.w, 1, 0), params.seg_head.b);
}

// Scalar classification logit from the bottleneck.
template <typename T>
Tensor<T> cls_head(const Tensor<T>& bottleneck, ModelParams<T>& params) {
    const std::size_t c = bottleneck.shape()[0];
    const Tensor<T> pooled = reshape(global_avg_pool(bottleneck), Shape{1, c});
    const Tensor<T> y = add(matmul(pooled, params.cls_head.w), reshape(params.cls_head.b, Shape{1, 1}));
    return reshape(y, Shape{});
}

template <typename T>
struct ForwardOutputs {
    Tensor<T> reconstruction;  // (C,S,S) in (0,1)
    Tensor<T> embedding;       // (embed_dim)
    std::vector<Tensor<T>> encoder_pyramid;
};

template <typename T>
ForwardOutputs<T> forward(const Tensor<T>& x, ModelParams<T>& params) {
    ForwardOutputs<T> out;
    out.encoder_pyramid = encode(x, params);
    out.embedding = project_head(out.encoder_pyramid.back(), params);
    const Tensor<T> decoded = decode(out.encoder_pyramid, params);
    out.reconstruction = reconstruct_head(decoded, params);
    return out;
}

}  // namespace isd::model
