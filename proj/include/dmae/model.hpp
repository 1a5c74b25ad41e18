// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/data.hpp"
#include "dmae/layers.hpp"
#include "dmae/masking.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dmae {

enum class Activation { identity, relu };

inline const char* to_string(Activation a) { return a == Activation::identity ? "identity" : "relu"; }

struct ModelConfig {
    std::size_t n_vars = 1;
    std::size_t t_max = 1;
    std::size_t d_model = 128;
    std::size_t n_blocks = 3;
    std::size_t n_heads = 16;
    std::size_t d_attn = 256;  // total Q/K/V width across heads
    std::size_t d_ffn = 0;     // 0 -> 4 * d_model
    std::size_t fq_blocks = 1;
    NormKind norm = NormKind::batch;
    Activation decoder_activation = Activation::identity;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t ffn_width() const { return d_ffn ? d_ffn : 4 * d_model; }
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"n_vars", c.n_vars},
            {"t_max", c.t_max},
            {"d_model", c.d_model},
            {"n_blocks", c.n_blocks},
            {"n_heads", c.n_heads},
            {"d_attn", c.d_attn},
            {"d_ffn", c.ffn_width()},
            {"fq_blocks", c.fq_blocks},
            {"norm", to_string(c.norm)},
            {"decoder_activation", to_string(c.decoder_activation)},
            {"dropout", c.dropout},
            {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_vars = j.at("n_vars");
    c.t_max = j.at("t_max");
    c.d_model = j.at("d_model");
    c.n_blocks = j.at("n_blocks");
    c.n_heads = j.at("n_heads");
    c.d_attn = j.at("d_attn");
    c.d_ffn = j.at("d_ffn");
    c.fq_blocks = j.at("fq_blocks");
    c.norm = j.at("norm") == "layer" ? NormKind::layer : NormKind::batch;
    c.decoder_activation = j.at("decoder_activation") == "relu" ? Activation::relu : Activation::identity;
    c.dropout = j.at("dropout");
    c.seed = j.at("seed");
    return c;
}

/// Teacher-path tensors precomputed outside the current tape.
template <typename S>
struct TeacherTargets {
    Tensor<S> u_tea;
    Tensor<S> z_tea;
};

template <typename S>
struct PretrainOutputs {
    Var<S> y;      // (B, T, V) reconstruction
    Var<S> z_pre;  // (B, T, D) predicted latents
    Var<S> z_tea;  // (B, T, D) teacher latents (no tape edges)
    Var<S> z_enc;  // (B, T, D) student latents
    Var<S> u_tea;  // (B, T, D) teacher embedding (no tape edges)
};

/// Model input (B, T, V) built from selected samples of a (B, V, T) batch.
template <typename S>
Tensor<S> model_input(const SeriesBatch& batch, const std::vector<std::size_t>& idx) {
    const std::size_t V = batch.n_vars(), T = batch.length();
    Tensor<S> x({idx.size(), T, V});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t v = 0; v < V; ++v)
            for (std::size_t t = 0; t < T; ++t) x[(i * T + t) * V + v] = static_cast<S>(batch.values.at(idx[i], v, t));
    return x;
}

/// Stack (V, T) masks into a (B, T, V) tensor of 0/1.
template <typename S>
Tensor<S> mask_tensor(const std::vector<MaskMatrix>& masks) {
    if (masks.empty()) throw std::invalid_argument("mask_tensor: no masks");
    const std::size_t V = masks[0].vars(), T = masks[0].length();
    Tensor<S> m({masks.size(), T, V});
    for (std::size_t b = 0; b < masks.size(); ++b) {
        if (masks[b].vars() != V || masks[b].length() != T) throw ShapeError("mask shapes differ within batch");
        for (std::size_t v = 0; v < V; ++v)
            for (std::size_t t = 0; t < T; ++t) m[(b * T + t) * V + v] = static_cast<S>(masks[b](v, t));
    }
    return m;
}

/// Dual-masked autoencoder. The student and teacher paths share one set of
/// embedding, positional and encoder parameters; the teacher path is always
/// evaluated without gradient.
template <typename S>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        if (cfg.n_vars == 0 || cfg.t_max == 0 || cfg.d_model == 0)
            throw std::invalid_argument("model dimensions must be positive");
        std::mt19937_64 rng(splitmix64(cfg.seed));
        in_proj_ = Linear<S>::create(params_, "embed", cfg.n_vars, cfg.d_model, rng);
        {
            std::uniform_real_distribution<double> u(-0.02, 0.02);
            Tensor<S> pos({cfg.t_max, cfg.d_model});
            for (auto& v : pos.data()) v = static_cast<S>(u(rng));
            pos_ = &params_.add("pos", std::move(pos));
        }
        for (std::size_t i = 0; i < cfg.n_blocks; ++i)
            encoder_.push_back(BlockParams<S>::create(params_, "encoder." + std::to_string(i), cfg.d_model, cfg.d_attn,
                                                      cfg.n_heads, cfg.ffn_width(), cfg.norm, rng));
        query_proj_ = Linear<S>::create(params_, "query_proj", cfg.d_model, cfg.d_model, rng);
        for (std::size_t i = 0; i < cfg.fq_blocks; ++i)
            fq_.push_back(BlockParams<S>::create(params_, "fq." + std::to_string(i), cfg.d_model, cfg.d_attn,
                                                 cfg.n_heads, cfg.ffn_width(), cfg.norm, rng));
        decoder_ = Linear<S>::create(params_, "decoder", cfg.d_model, cfg.n_vars, rng);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] ParamStore<S>& params() noexcept { return params_; }
    [[nodiscard]] const ParamStore<S>& params() const noexcept { return params_; }
    [[nodiscard]] bool has_head() const noexcept { return head_.has_value(); }
    [[nodiscard]] std::size_t head_width() const { return head_ ? head_->out() : 0; }

    /// Add (or replace the values of) the n-way linear head.
    void attach_head(std::size_t n) {
        std::mt19937_64 rng(splitmix64(cfg_.seed ^ 0x68656164ULL));
        if (head_) {
            if (head_->out() != n) throw std::invalid_argument("model already has a head of a different width");
            head_->weight->value = fan_in_uniform<S>({cfg_.d_model, n}, cfg_.d_model, rng);
            head_->bias->value = fan_in_uniform<S>({n}, cfg_.d_model, rng);
            return;
        }
        head_ = Linear<S>::create(params_, "head", cfg_.d_model, n, rng);
    }

    /// U = x W_in + b_in + W_pos[:T]; x is (B, T, V).
    Var<S> embed(Tape<S>& t, const Tensor<S>& x) const {
        if (x.rank() != 3 || x.dim(2) != cfg_.n_vars)
            throw ShapeError("embed: expected (B, T, " + std::to_string(cfg_.n_vars) + "), got " + shape_str(x.shape()));
        if (x.dim(1) > cfg_.t_max)
            throw ShapeError("sequence length " + std::to_string(x.dim(1)) + " exceeds T_max " +
                             std::to_string(cfg_.t_max));
        return ops::add_positional(in_proj_(t, t.constant(x)), t.param(*pos_));
    }

    /// Encoder stack: self-attention across timesteps.
    Var<S> encode(Tape<S>& t, Var<S> u, Mode mode) const {
        for (const auto& b : encoder_) u = block_forward(t, u, u, b, mode, cfg_.dropout);
        return u;
    }

    /// Teacher path on the complementary view, entirely without gradient.
    std::pair<Var<S>, Var<S>> teacher_forward(Tape<S>& t, const Tensor<S>& x_comp, Mode mode) const {
        NoGradScope<S> ng(t);
        auto u = embed(t, x_comp);
        return {u, encode(t, u, mode)};
    }

    /// Queries projected from the teacher embedding cross-attend into z_enc,
    /// which serves as keys and values at every block.
    Var<S> feature_query(Tape<S>& t, Var<S> u_tea, Var<S> z_enc, Mode mode) const {
        auto q = query_proj_(t, u_tea);
        for (const auto& b : fq_) q = block_forward(t, q, z_enc, b, mode, cfg_.dropout);
        return q;
    }

    Var<S> decode(Tape<S>& t, Var<S> z_pre) const {
        auto y = decoder_(t, z_pre);
        return cfg_.decoder_activation == Activation::relu ? ops::relu(y) : y;
    }

    /// Student: x * M -> embed -> encode. Teacher: x * (1 - M) -> embed ->
    /// encode under no-grad. Then feature query and decode.
    ///
    /// `fixed` substitutes precomputed teacher tensors; `run_teacher = false`
    /// skips the teacher encoder (z_tea is then left empty) and only computes
    /// the teacher embedding needed for the queries.
    PretrainOutputs<S> forward_pretrain(Tape<S>& t, const Tensor<S>& x, const Tensor<S>& mask, Mode mode,
                                        const TeacherTargets<S>* fixed = nullptr, bool run_teacher = true) const {
        x.require_same_shape(mask, "forward_pretrain mask");
        Tensor<S> x_student(x.shape()), x_teacher(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x_student[i] = x[i] * mask[i];
            x_teacher[i] = x[i] * (S{1} - mask[i]);
        }
        PretrainOutputs<S> out;
        if (fixed) {
            out.u_tea = t.constant(fixed->u_tea);
            out.z_tea = t.constant(fixed->z_tea);
        } else if (run_teacher) {
            std::tie(out.u_tea, out.z_tea) = teacher_forward(t, x_teacher, mode);
        } else {
            NoGradScope<S> ng(t);
            out.u_tea = embed(t, x_teacher);
            out.z_tea = t.constant(Tensor<S>());
        }
        out.z_enc = encode(t, embed(t, x_student), mode);
        out.z_pre = feature_query(t, out.u_tea, out.z_enc, mode);
        out.y = decode(t, out.z_pre);
        return out;
    }

    /// Fine-tuning path: unmasked input -> embed -> encode -> mean over time.
    Var<S> pooled_features(Tape<S>& t, const Tensor<S>& x, Mode mode) const {
        return ops::mean_time(encode(t, embed(t, x), mode));
    }

    Var<S> head(Tape<S>& t, Var<S> z_o) const {
        if (!head_) throw std::logic_error("model has no task head attached");
        return (*head_)(t, z_o);
    }

    /// Names of the tensors used by the downstream (fine-tuning) graph.
    [[nodiscard]] bool is_downstream_tensor(const std::string& name) const {
        return name.rfind("embed.", 0) == 0 || name == "pos" || name.rfind("encoder.", 0) == 0 ||
               name.rfind("head.", 0) == 0;
    }

    /// Parameters of the encoder path (embedding, positions, encoder blocks).
    [[nodiscard]] std::vector<Parameter<S>*> encoder_params() {
        std::vector<Parameter<S>*> out;
        for (auto& p : params_)
            if (p->name.rfind("embed.", 0) == 0 || p->name == "pos" || p->name.rfind("encoder.", 0) == 0)
                out.push_back(p.get());
        return out;
    }

    [[nodiscard]] std::vector<Parameter<S>*> trainable_params() {
        std::vector<Parameter<S>*> out;
        for (auto& p : params_)
            if (p->trainable) out.push_back(p.get());
        return out;
    }

private:
    ModelConfig cfg_;
    ParamStore<S> params_;
    Linear<S> in_proj_;
    Parameter<S>* pos_ = nullptr;
    std::vector<BlockParams<S>> encoder_;
    Linear<S> query_proj_;
    std::vector<BlockParams<S>> fq_;
    Linear<S> decoder_;
    std::optional<Linear<S>> head_;
};

/// Trainable scalar count implied by a configuration, with exactly one
/// encoder stack (the teacher owns no parameters).
inline std::size_t expected_parameter_count(const ModelConfig& c, std::size_t head_width = 0) {
    const std::size_t D = c.d_model, A = c.d_attn, F = c.ffn_width(), V = c.n_vars;
    const std::size_t block = 3 * (D * A + A) + (A * D + D) + 2 * (2 * D) + (D * F + F) + (F * D + D);
    std::size_t n = (V * D + D) + c.t_max * D + c.n_blocks * block;
    n += (D * D + D) + c.fq_blocks * block + (D * V + V);
    if (head_width) n += D * head_width + head_width;
    return n;
}

}  // namespace dmae
