// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training configuration and its JSON form. JSON keys mirror the field names;
// unknown keys are rejected so a typo never silently falls back to a default.

#include "dmae/masking.hpp"
#include "dmae/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <set>
#include <string>

namespace dmae {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Which timesteps the alignment loss covers: `any` takes timesteps where at
/// least one variable is student-masked; `weighted` weights every timestep by
/// its fraction of masked variables.
enum class AlignRule { any, weighted };
enum class Schedule { constant, cosine };

/// Architecture knobs not derived from the data.
struct ModelShape {
    std::size_t d_model = 128;
    std::size_t n_blocks = 3;
    std::size_t n_heads = 16;
    std::size_t d_attn = 256;
    std::size_t d_ffn = 0;
    std::size_t fq_blocks = 1;
    double dropout = 0.0;
    std::size_t t_max = 0;  // 0 -> dataset length
};

struct FinetuneConfig {
    std::size_t epochs = 200;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    bool linear_probe = false;
    double grad_clip = 0.0;
};

struct TrainConfig {
    std::size_t epochs = 500;
    double lr = 1e-3;
    double lambda = 1.0;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    MaskConfig mask;
    NormKind norm = NormKind::batch;
    Activation decoder_activation = Activation::identity;
    std::size_t val_every = 1;
    AdamConfig adam;

    bool use_dec_loss = true;  // false: loss_dec reported but excluded from gradients
    AlignRule align_rule = AlignRule::any;
    Schedule schedule = Schedule::constant;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    ModelShape model;
    FinetuneConfig finetune;
    bool checked = false;  // numerics.checked

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be > 0");
        if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (val_every < 1) throw ConfigError("val_every must be >= 1");
        if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
        if (model.n_heads == 0 || model.d_attn % model.n_heads != 0)
            throw ConfigError("model.d_attn must be divisible by model.n_heads");
        if (model.d_model == 0) throw ConfigError("model.d_model must be > 0");
        if (!(model.dropout >= 0 && model.dropout < 1)) throw ConfigError("model.dropout must lie in [0, 1)");
        if (finetune.epochs < 1 || !(finetune.lr > 0) || finetune.batch_size < 1)
            throw ConfigError("finetune.epochs, finetune.lr and finetune.batch_size must be positive");
        try {
            mask.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("mask: ") + e.what());
        }
    }

    [[nodiscard]] ModelConfig model_config(std::size_t n_vars, std::size_t length) const {
        ModelConfig c;
        c.n_vars = n_vars;
        c.t_max = model.t_max ? model.t_max : length;
        c.d_model = model.d_model;
        c.n_blocks = model.n_blocks;
        c.n_heads = model.n_heads;
        c.d_attn = model.d_attn;
        c.d_ffn = model.d_ffn;
        c.fq_blocks = model.fq_blocks;
        c.norm = norm;
        c.decoder_activation = decoder_activation;
        c.dropout = model.dropout;
        c.seed = seed;
        return c;
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"lr", c.lr},
            {"lambda", c.lambda},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"mask",
             {{"strategy", c.mask.strategy == MaskStrategy::span ? "span" : "independent"},
              {"r", c.mask.r},
              {"l_m", c.mask.l_m},
              {"p", c.mask.p}}},
            {"norm", to_string(c.norm)},
            {"decoder_activation", to_string(c.decoder_activation)},
            {"val_every", c.val_every},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"use_dec_loss", c.use_dec_loss},
            {"align_rule", c.align_rule == AlignRule::any ? "any" : "weighted"},
            {"schedule", c.schedule == Schedule::constant ? "constant" : "cosine"},
            {"grad_clip", c.grad_clip},
            {"model",
             {{"d_model", c.model.d_model},
              {"n_blocks", c.model.n_blocks},
              {"n_heads", c.model.n_heads},
              {"d_attn", c.model.d_attn},
              {"d_ffn", c.model.d_ffn},
              {"fq_blocks", c.model.fq_blocks},
              {"dropout", c.model.dropout},
              {"t_max", c.model.t_max}}},
            {"finetune",
             {{"epochs", c.finetune.epochs},
              {"lr", c.finetune.lr},
              {"batch_size", c.finetune.batch_size},
              {"linear_probe", c.finetune.linear_probe},
              {"grad_clip", c.finetune.grad_clip}}},
            {"numerics", {{"checked", c.checked}}}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const nlohmann::json& reference, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!reference.contains(k)) throw ConfigError("unknown config key: " + where + k);
        if (reference[k].is_object()) reject_unknown(v, reference[k], where + k + ".");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for config key ") + key + ": " + j.at(key).dump());
    }
}

template <typename E>
void read_enum(const nlohmann::json& j, const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    if (!j.contains(key)) return;
    const auto s = j.at(key).is_string() ? j.at(key).get<std::string>() : std::string{};
    for (const auto& [n, e] : names)
        if (s == n) {
            out = e;
            return;
        }
    throw ConfigError(std::string("bad value for config key ") + key + ": " + j.at(key).dump());
}

}  // namespace detail

/// Overlay `j` onto `base` (defaults when omitted) and validate.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    detail::reject_unknown(j, to_json(c), "");
    using detail::read;
    using detail::read_enum;
    read(j, "epochs", c.epochs);
    read(j, "lr", c.lr);
    read(j, "lambda", c.lambda);
    read(j, "batch_size", c.batch_size);
    read(j, "seed", c.seed);
    if (j.contains("mask")) {
        const auto& m = j["mask"];
        read_enum(m, "strategy", c.mask.strategy, {{"span", MaskStrategy::span}, {"independent", MaskStrategy::independent}});
        read(m, "r", c.mask.r);
        read(m, "l_m", c.mask.l_m);
        read(m, "p", c.mask.p);
    }
    read_enum(j, "norm", c.norm, {{"batch", NormKind::batch}, {"layer", NormKind::layer}});
    read_enum(j, "decoder_activation", c.decoder_activation,
              {{"identity", Activation::identity}, {"relu", Activation::relu}});
    read(j, "val_every", c.val_every);
    if (j.contains("adam")) {
        read(j["adam"], "beta1", c.adam.beta1);
        read(j["adam"], "beta2", c.adam.beta2);
        read(j["adam"], "eps", c.adam.eps);
    }
    read(j, "use_dec_loss", c.use_dec_loss);
    read_enum(j, "align_rule", c.align_rule, {{"any", AlignRule::any}, {"weighted", AlignRule::weighted}});
    read_enum(j, "schedule", c.schedule, {{"constant", Schedule::constant}, {"cosine", Schedule::cosine}});
    read(j, "grad_clip", c.grad_clip);
    if (j.contains("model")) {
        const auto& m = j["model"];
        read(m, "d_model", c.model.d_model);
        read(m, "n_blocks", c.model.n_blocks);
        read(m, "n_heads", c.model.n_heads);
        read(m, "d_attn", c.model.d_attn);
        read(m, "d_ffn", c.model.d_ffn);
        read(m, "fq_blocks", c.model.fq_blocks);
        read(m, "dropout", c.model.dropout);
        read(m, "t_max", c.model.t_max);
    }
    if (j.contains("finetune")) {
        const auto& f = j["finetune"];
        read(f, "epochs", c.finetune.epochs);
        read(f, "lr", c.finetune.lr);
        read(f, "batch_size", c.finetune.batch_size);
        read(f, "linear_probe", c.finetune.linear_probe);
        read(f, "grad_clip", c.finetune.grad_clip);
    }
    if (j.contains("numerics")) read(j["numerics"], "checked", c.checked);
    c.validate();
    return c;
}

}  // namespace dmae
