#pragma once

#include "headsup/nn/ops.hpp"

namespace headsup::nn {

// Layers are thin handles over named parameters in a ParamStore. create()
// registers parameters (deterministically, in call order); operator() builds
// tape nodes.

struct Linear2 {
    Param* w = nullptr;
    Param* b = nullptr;

    static Linear2 create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                          float w_scale = -1.0f, bool bias = true) {
        Linear2 l;
        float s = w_scale >= 0 ? w_scale : 1.0f / std::sqrt(static_cast<float>(in));
        l.w = &ps.add(name + ".weight", Tensor::randn({out, in}, rng, s));
        if (bias) l.b = &ps.add(name + ".bias", Tensor({out}));
        return l;
    }

    Id operator()(Tape& t, Id x) const {
        return linear(t, x, t.param(*w), b ? t.param(*b) : Tape::kNone);
    }
};

struct Conv {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1, pad = 0;

    static Conv create(ParamStore& ps, const std::string& name, int in, int out, int k, int stride,
                       int pad, Rng& rng, float w_scale = -1.0f) {
        Conv c;
        c.stride = stride;
        c.pad = pad;
        float fan_in = static_cast<float>(in * k * k);
        float s = w_scale >= 0 ? w_scale : std::sqrt(2.0f / fan_in);
        c.w = &ps.add(name + ".weight", Tensor::randn({out, in, k, k}, rng, s));
        c.b = &ps.add(name + ".bias", Tensor({out}));
        return c;
    }

    Id operator()(Tape& t, Id x) const {
        return conv2d(t, x, t.param(*w), t.param(*b), stride, pad);
    }
};

struct GroupNormLayer {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    int groups = 8;

    static GroupNormLayer create(ParamStore& ps, const std::string& name, int channels) {
        GroupNormLayer g;
        g.groups = channels % 8 == 0 ? 8 : 1;
        g.gamma = &ps.add(name + ".gamma", Tensor({channels}, 1.0f));
        g.beta = &ps.add(name + ".beta", Tensor({channels}));
        return g;
    }

    Id operator()(Tape& t, Id x) const {
        return group_norm(t, x, groups, t.param(*gamma), t.param(*beta));
    }
};

struct LayerNormLayer {
    Param* gamma = nullptr;
    Param* beta = nullptr;

    static LayerNormLayer create(ParamStore& ps, const std::string& name, int dim) {
        LayerNormLayer l;
        l.gamma = &ps.add(name + ".gamma", Tensor({dim}, 1.0f));
        l.beta = &ps.add(name + ".beta", Tensor({dim}));
        return l;
    }

    Id operator()(Tape& t, Id x) const {
        return layer_norm(t, x, t.param(*gamma), t.param(*beta));
    }
};

struct BatchNormLayer {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    Param* run_mean = nullptr;
    Param* run_var = nullptr;

    static BatchNormLayer create(ParamStore& ps, const std::string& name, int channels) {
        BatchNormLayer b;
        b.gamma = &ps.add(name + ".gamma", Tensor({channels}, 1.0f));
        b.beta = &ps.add(name + ".beta", Tensor({channels}));
        b.run_mean = &ps.add(name + ".running_mean", Tensor({channels}), false);
        b.run_var = &ps.add(name + ".running_var", Tensor({channels}, 1.0f), false);
        return b;
    }

    Id operator()(Tape& t, Id x, bool training) const {
        return batch_norm2d(t, x, t.param(*gamma), t.param(*beta), *run_mean, *run_var, training);
    }
};

// Pre-activation residual block: x + gate * conv(act(norm(conv(act(norm(x))))))
struct ResBlockGN {
    GroupNormLayer n1, n2;
    Conv c1, c2;
    Param* gate = nullptr;  // nullptr: plain residual

    static ResBlockGN create(ParamStore& ps, const std::string& name, int channels, Rng& rng,
                             bool gated) {
        ResBlockGN b;
        b.n1 = GroupNormLayer::create(ps, name + ".norm1", channels);
        b.c1 = Conv::create(ps, name + ".conv1", channels, channels, 3, 1, 1, rng);
        b.n2 = GroupNormLayer::create(ps, name + ".norm2", channels);
        b.c2 = Conv::create(ps, name + ".conv2", channels, channels, 3, 1, 1, rng);
        if (gated) b.gate = &ps.add(name + ".gate", Tensor({1}));  // zero init
        return b;
    }

    Id operator()(Tape& t, Id x) const {
        Id h = c1(t, gelu(t, n1(t, x)));
        h = c2(t, gelu(t, n2(t, h)));
        if (gate) h = scale_by(t, h, t.param(*gate));
        return add(t, x, h);
    }
};

// BatchNorm + LeakyReLU residual block (background decoder style)
struct ResBlockBN {
    BatchNormLayer n1, n2;
    Conv c1, c2;
    Param* gate = nullptr;

    static ResBlockBN create(ParamStore& ps, const std::string& name, int channels, Rng& rng,
                             bool gated) {
        ResBlockBN b;
        b.n1 = BatchNormLayer::create(ps, name + ".norm1", channels);
        b.c1 = Conv::create(ps, name + ".conv1", channels, channels, 3, 1, 1, rng);
        b.n2 = BatchNormLayer::create(ps, name + ".norm2", channels);
        b.c2 = Conv::create(ps, name + ".conv2", channels, channels, 3, 1, 1, rng);
        if (gated) b.gate = &ps.add(name + ".gate", Tensor({1}));
        return b;
    }

    Id operator()(Tape& t, Id x, bool training) const {
        Id h = c1(t, leaky_relu(t, n1(t, x, training)));
        h = c2(t, leaky_relu(t, n2(t, h, training)));
        if (gate) h = scale_by(t, h, t.param(*gate));
        return add(t, x, h);
    }
};

// Pre-LN cross-attention block: queries attend to a fixed memory.
struct CrossAttnBlock {
    LayerNormLayer ln_q, ln_kv, ln_mlp;
    Linear2 wq, wk, wv, wo, mlp1, mlp2;
    int heads = 8;

    static CrossAttnBlock create(ParamStore& ps, const std::string& name, int d_model, int kv_dim,
                                 int heads, int mlp_dim, Rng& rng) {
        CrossAttnBlock b;
        b.heads = heads;
        b.ln_q = LayerNormLayer::create(ps, name + ".ln_q", d_model);
        b.ln_kv = LayerNormLayer::create(ps, name + ".ln_kv", kv_dim);
        b.ln_mlp = LayerNormLayer::create(ps, name + ".ln_mlp", d_model);
        b.wq = Linear2::create(ps, name + ".wq", d_model, d_model, rng);
        b.wk = Linear2::create(ps, name + ".wk", kv_dim, d_model, rng);
        b.wv = Linear2::create(ps, name + ".wv", kv_dim, d_model, rng);
        b.wo = Linear2::create(ps, name + ".wo", d_model, d_model, rng);
        b.mlp1 = Linear2::create(ps, name + ".mlp1", d_model, mlp_dim, rng);
        b.mlp2 = Linear2::create(ps, name + ".mlp2", mlp_dim, d_model, rng);
        return b;
    }

    Id operator()(Tape& t, Id x, Id kv) const {
        Id q = wq(t, ln_q(t, x));
        Id kvn = ln_kv(t, kv);
        Id k = wk(t, kvn);
        Id v = wv(t, kvn);
        Id probs = softmax_lastdim(t, attn_scores(t, q, k, heads));
        Id attn = wo(t, attn_mix(t, probs, v, heads));
        x = add(t, x, attn);
        Id m = mlp2(t, gelu(t, mlp1(t, ln_mlp(t, x))));
        return add(t, x, m);
    }
};

}  // namespace headsup::nn
