// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/ops.hpp"

#include <cmath>
#include <random>
#include <string>

namespace dmae {

enum class Mode { train, eval };
enum class NormKind { batch, layer };

inline const char* to_string(NormKind k) { return k == NormKind::batch ? "batch" : "layer"; }

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
Tensor<S> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<S>(u(rng));
    return t;
}

template <typename S>
struct Linear {
    Parameter<S>* weight = nullptr;  // (in, out)
    Parameter<S>* bias = nullptr;    // (out), may be null

    static Linear create(ParamStore<S>& ps, const std::string& name, std::size_t in, std::size_t out,
                         std::mt19937_64& rng, bool with_bias = true) {
        Linear l;
        l.weight = &ps.add(name + ".weight", fan_in_uniform<S>({in, out}, in, rng));
        if (with_bias) l.bias = &ps.add(name + ".bias", fan_in_uniform<S>({out}, in, rng));
        return l;
    }

    [[nodiscard]] std::size_t in() const { return weight->value.dim(0); }
    [[nodiscard]] std::size_t out() const { return weight->value.dim(1); }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        if (bias) return ops::linear<S>(x, t.param(*weight), t.param(*bias));
        return ops::linear(x, t.param(*weight));
    }
};

template <typename S>
struct Norm {
    NormKind kind = NormKind::batch;
    Parameter<S>* gain = nullptr;
    Parameter<S>* bias = nullptr;
    Parameter<S>* running_mean = nullptr;  // batch norm only
    Parameter<S>* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;

    static Norm create(ParamStore<S>& ps, const std::string& name, std::size_t width, NormKind kind) {
        Norm n;
        n.kind = kind;
        n.gain = &ps.add(name + ".gain", Tensor<S>({width}, S{1}));
        n.bias = &ps.add(name + ".bias", Tensor<S>({width}, S{0}));
        if (kind == NormKind::batch) {
            n.running_mean = &ps.add(name + ".running_mean", Tensor<S>({width}, S{0}), false);
            n.running_var = &ps.add(name + ".running_var", Tensor<S>({width}, S{1}), false);
        }
        return n;
    }

    Var<S> operator()(Tape<S>& t, Var<S> x, Mode mode) const {
        if (kind == NormKind::layer) return ops::layer_norm(x, t.param(*gain), t.param(*bias), eps);
        return ops::batch_norm(x, t.param(*gain), t.param(*bias), *running_mean, *running_var,
                               mode == Mode::train, momentum, eps);
    }
};

/// Projections and output map of one multi-head attention layer.
template <typename S>
struct AttentionParams {
    Linear<S> q, k, v, o;
    std::size_t heads = 1;

    static AttentionParams create(ParamStore<S>& ps, const std::string& name, std::size_t d_model,
                                  std::size_t d_attn, std::size_t heads, std::mt19937_64& rng) {
        if (heads == 0 || d_attn % heads != 0)
            throw std::invalid_argument("attention width " + std::to_string(d_attn) + " not divisible by " +
                                        std::to_string(heads) + " heads");
        AttentionParams a;
        a.q = Linear<S>::create(ps, name + ".q", d_model, d_attn, rng);
        a.k = Linear<S>::create(ps, name + ".k", d_model, d_attn, rng);
        a.v = Linear<S>::create(ps, name + ".v", d_model, d_attn, rng);
        a.o = Linear<S>::create(ps, name + ".o", d_attn, d_model, rng);
        a.heads = heads;
        return a;
    }
};

template <typename S>
struct QKV {
    Var<S> q, k, v;
};

/// Queries from `x_q`, keys and values from `x_kv`.
template <typename S>
QKV<S> project_qkv(Tape<S>& t, Var<S> x_q, Var<S> x_kv, const AttentionParams<S>& p) {
    return {p.q(t, x_q), p.k(t, x_kv), p.v(t, x_kv)};
}

template <typename S>
QKV<S> project_qkv(Tape<S>& t, Var<S> x, const AttentionParams<S>& p) {
    return project_qkv(t, x, x, p);
}

/// Concat(head_1..head_h) W_O. Self-attention when x_q and x_kv are the same var.
template <typename S>
Var<S> multi_head(Tape<S>& t, Var<S> x_q, Var<S> x_kv, const AttentionParams<S>& p, Mode mode = Mode::eval,
                  double dropout = 0.0) {
    auto [q, k, v] = project_qkv(t, x_q, x_kv, p);
    auto heads = ops::attention(q, k, v, p.heads, dropout, mode == Mode::train);
    return p.o(t, heads);
}

template <typename S>
struct FfnParams {
    Linear<S> in, out;

    static FfnParams create(ParamStore<S>& ps, const std::string& name, std::size_t d_model, std::size_t hidden,
                            std::mt19937_64& rng) {
        return {Linear<S>::create(ps, name + ".fc1", d_model, hidden, rng),
                Linear<S>::create(ps, name + ".fc2", hidden, d_model, rng)};
    }
};

/// max(0, x W1 + b1) W2 + b2
template <typename S>
Var<S> ffn(Tape<S>& t, Var<S> x, const FfnParams<S>& p, Mode mode = Mode::eval, double dropout = 0.0) {
    auto h = ops::relu(p.in(t, x));
    h = ops::dropout(h, dropout, mode == Mode::train);
    return p.out(t, h);
}

/// Post-norm transformer block:
///   x = norm1(x_q + MultiHead(x_q, x_kv)); x = norm2(x + FFN(x)).
template <typename S>
struct BlockParams {
    AttentionParams<S> attn;
    Norm<S> norm1;
    FfnParams<S> ffn;
    Norm<S> norm2;

    static BlockParams create(ParamStore<S>& ps, const std::string& name, std::size_t d_model, std::size_t d_attn,
                              std::size_t heads, std::size_t d_ffn, NormKind norm, std::mt19937_64& rng) {
        BlockParams b;
        b.attn = AttentionParams<S>::create(ps, name + ".attn", d_model, d_attn, heads, rng);
        b.norm1 = Norm<S>::create(ps, name + ".norm1", d_model, norm);
        b.ffn = FfnParams<S>::create(ps, name + ".ffn", d_model, d_ffn, rng);
        b.norm2 = Norm<S>::create(ps, name + ".norm2", d_model, norm);
        return b;
    }
};

template <typename S>
Var<S> block_forward(Tape<S>& t, Var<S> x_q, Var<S> x_kv, const BlockParams<S>& p, Mode mode, double dropout = 0.0) {
    auto x = p.norm1(t, ops::add(x_q, multi_head(t, x_q, x_kv, p.attn, mode, dropout)), mode);
    return p.norm2(t, ops::add(x, ffn(t, x, p.ffn, mode, dropout)), mode);
}

}  // namespace dmae
