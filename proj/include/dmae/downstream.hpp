// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fine-tuning: the teacher, query and decoder parts are dropped from the graph;
// unmasked inputs go through embed -> encode -> mean over time -> linear head.

#include "dmae/config.hpp"
#include "dmae/model.hpp"
#include "dmae/optim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

namespace dmae {

struct TaskSpec {
    TaskKind kind = TaskKind::classification;
    std::size_t n = 1;        // head width
    std::size_t horizon = 0;  // forecasting only
    std::optional<std::size_t> channel;  // forecasting: predict one variable only

    void validate() const {
        if (n < 1) throw std::invalid_argument("task head width must be >= 1");
        if (kind == TaskKind::forecasting && horizon < 1) throw std::invalid_argument("forecasting requires horizon >= 1");
    }
};

/// Derive the task from the labels attached to a batch.
inline TaskSpec task_from_labels(const SeriesBatch& b, std::optional<std::size_t> channel = std::nullopt) {
    if (!b.labels) throw std::invalid_argument("batch has no labels");
    const auto& l = *b.labels;
    TaskSpec t;
    t.kind = l.kind;
    switch (l.kind) {
        case TaskKind::classification: t.n = l.class_names.size(); break;
        case TaskKind::regression: t.n = 1; break;
        case TaskKind::forecasting:
            t.horizon = l.horizon;
            t.channel = channel;
            if (channel && *channel >= b.n_vars()) throw std::invalid_argument("forecast channel out of range");
            t.n = channel ? l.horizon : b.n_vars() * l.horizon;
            break;
    }
    t.validate();
    return t;
}

/// Regression / forecasting targets of the selected samples as a (B, n) tensor.
template <typename S>
Tensor<S> task_targets(const SeriesBatch& b, const TaskSpec& task, const std::vector<std::size_t>& idx) {
    if (!b.labels || b.labels->kind != task.kind) throw std::invalid_argument("labels do not match the task");
    const auto& tg = b.labels->targets;
    const std::size_t w = tg.dim(1);
    Tensor<S> out({idx.size(), task.n});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (task.kind == TaskKind::forecasting && task.channel) {
            for (std::size_t o = 0; o < task.horizon; ++o)
                out[i * task.n + o] = static_cast<S>(tg[idx[i] * w + *task.channel * task.horizon + o]);
        } else {
            if (w != task.n) throw ShapeError("target width " + std::to_string(w) + " != head width " + std::to_string(task.n));
            for (std::size_t k = 0; k < w; ++k) out[i * task.n + k] = static_cast<S>(tg[idx[i] * w + k]);
        }
    }
    return out;
}

inline std::vector<int> task_classes(const SeriesBatch& b, const std::vector<std::size_t>& idx) {
    if (!b.labels || b.labels->kind != TaskKind::classification) throw std::invalid_argument("labels are not class labels");
    std::vector<int> out;
    for (std::size_t i : idx) out.push_back(b.labels->classes.at(i));
    return out;
}

struct Metrics {
    TaskKind kind = TaskKind::classification;
    std::size_t count = 0;
    double loss = 0;  // task loss (cross-entropy or MSE)
    std::optional<double> accuracy, rmse, mse, mae;

    /// Lower is better: the quantity used for model selection.
    [[nodiscard]] double selection_key() const {
        switch (kind) {
            case TaskKind::classification: return -accuracy.value_or(0.0);
            case TaskKind::regression: return rmse.value_or(std::numeric_limits<double>::infinity());
            case TaskKind::forecasting: return mse.value_or(std::numeric_limits<double>::infinity());
        }
        return 0.0;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = {{"task", to_string(kind)}, {"count", count}, {"loss", loss}};
        if (accuracy) j["accuracy"] = *accuracy;
        if (rmse) j["rmse"] = *rmse;
        if (mse) j["mse"] = *mse;
        if (mae) j["mae"] = *mae;
        return j;
    }
};

/// Metrics from head outputs (B, n). Classification takes the argmax of
/// each row (first maximum on ties).
inline Metrics compute_metrics(const Tensor<double>& outputs, const TaskSpec& task, const std::vector<int>& classes,
                               const Tensor<double>& targets) {
    Metrics m;
    m.kind = task.kind;
    const std::size_t B = outputs.rows(), n = outputs.cols();
    if (B == 0) throw std::invalid_argument("metrics: empty evaluation set");
    m.count = B;
    if (task.kind == TaskKind::classification) {
        if (classes.size() != B) throw ShapeError("metrics: label count mismatch");
        std::size_t correct = 0;
        double ce = 0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* row = outputs.ptr() + b * n;
            const auto best = static_cast<int>(std::max_element(row, row + n) - row);
            correct += best == classes[b];
            const double mx = row[best];
            double z = 0;
            for (std::size_t k = 0; k < n; ++k) z += std::exp(row[k] - mx);
            ce += std::log(z) + mx - row[classes[b]];
        }
        m.accuracy = static_cast<double>(correct) / static_cast<double>(B);
        m.loss = ce / static_cast<double>(B);
    } else {
        outputs.require_same_shape(targets, "metrics targets");
        double se = 0, ae = 0;
        for (std::size_t i = 0; i < outputs.size(); ++i) {
            const double d = outputs[i] - targets[i];
            se += d * d;
            ae += std::abs(d);
        }
        const double cells = static_cast<double>(outputs.size());
        m.loss = se / cells;
        if (task.kind == TaskKind::regression) {
            m.rmse = std::sqrt(se / cells);
        } else {
            m.mse = se / cells;
            m.mae = ae / cells;
        }
    }
    return m;
}

/// Head outputs for every sample, eval mode, no gradient.
template <typename S>
Tensor<double> predict(const Model<S>& model, const SeriesBatch& data, std::size_t chunk = 64) {
    if (data.size() == 0) throw std::invalid_argument("predict: empty set");
    const std::size_t n = model.head_width();
    Tensor<double> out({data.size(), n});
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
        Tape<S> tape;
        NoGradScope<S> ng(tape);
        const auto y = model.head(tape, model.pooled_features(tape, model_input<S>(data, idx), Mode::eval));
        for (std::size_t i = 0; i < y.value().size(); ++i) out[start * n + i] = static_cast<double>(y.value()[i]);
    }
    return out;
}

template <typename S>
Metrics evaluate(const Model<S>& model, const SeriesBatch& data, const TaskSpec& task) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    if (!model.has_head() || model.head_width() != task.n) throw std::invalid_argument("model head does not match the task");
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto out = predict(model, data);
    if (task.kind == TaskKind::classification) return compute_metrics(out, task, task_classes(data, all), {});
    return compute_metrics(out, task, {}, task_targets<double>(data, task, all));
}

/// Task loss of one minibatch: cross-entropy on logits or MSE on outputs.
template <typename S>
Var<S> task_loss(Tape<S>& t, const Model<S>& model, const SeriesBatch& data, const TaskSpec& task,
                 const std::vector<std::size_t>& idx, Mode encoder_mode) {
    const auto y = model.head(t, model.pooled_features(t, model_input<S>(data, idx), encoder_mode));
    if (task.kind == TaskKind::classification) return ops::cross_entropy(y, task_classes(data, idx));
    return ops::mse(y, task_targets<S>(data, task, idx));
}

struct FinetuneEpoch {
    std::size_t epoch = 0;
    double train_loss = 0;
    Metrics val;
};

struct FinetuneResult {
    std::vector<FinetuneEpoch> epochs;
    std::size_t selected_epoch = 0;
    Metrics best_val;

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json e = nlohmann::json::array();
        for (const auto& r : epochs) e.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val", r.val.to_json()}});
        return {{"epochs", e}, {"selected_epoch", selected_epoch}, {"best_val", best_val.to_json()}};
    }
};

/// Attach a fresh head and train on unmasked inputs. Selection: best
/// validation metric, ties broken by lower validation loss, then earliest.
/// With `linear_probe` only the head trains and the encoder runs in eval mode.
template <typename S>
FinetuneResult finetune(Model<S>& model, const SeriesBatch& train, const SeriesBatch& val, const TaskSpec& task,
                        const FinetuneConfig& cfg, std::uint64_t seed, bool checked = false,
                        const std::function<void(const FinetuneEpoch&)>& on_epoch = {}) {
    task.validate();
    if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("finetune: empty train or validation set");
    if (!train.labels || !val.labels || train.labels->kind != task.kind || val.labels->kind != task.kind)
        throw std::invalid_argument("finetune: labels do not match the task");
    model.attach_head(task.n);

    auto& ps = model.params();
    std::vector<bool> was_frozen;
    for (auto& p : ps) {
        was_frozen.push_back(p->frozen);
        const bool in_graph = model.is_downstream_tensor(p->name);
        p->frozen = !in_graph || (cfg.linear_probe && p->name.rfind("head.", 0) != 0);
    }
    const Mode enc_mode = cfg.linear_probe ? Mode::eval : Mode::train;

    Adam<S> opt;
    std::mt19937_64 order_rng(splitmix64(seed ^ 0x66696e65ULL));
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;

    FinetuneResult res;
    std::vector<Tensor<S>> best;
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        FinetuneEpoch fe;
        fe.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
            Tape<S> tape(checked, splitmix64(seed ^ (0x1000000ULL + step)));
            const auto loss = task_loss(tape, model, train, task, idx, enc_mode);
            const double l = loss.value()[0];
            if (!std::isfinite(l))
                throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            tape.backward(loss);
            if (cfg.grad_clip > 0) clip_grad_norm(ps, cfg.grad_clip);
            opt.step(ps, cfg.lr);
            ps.zero_grad();
            fe.train_loss += l;
            ++step;
        }
        fe.train_loss /= static_cast<double>(steps_per_epoch);
        fe.val = evaluate(model, val, task);
        const bool better = res.selected_epoch == 0 || fe.val.selection_key() < res.best_val.selection_key() ||
                            (fe.val.selection_key() == res.best_val.selection_key() && fe.val.loss < res.best_val.loss);
        if (better) {
            res.selected_epoch = epoch;
            res.best_val = fe.val;
            best = ps.snapshot();
        }
        res.epochs.push_back(fe);
        if (on_epoch) on_epoch(fe);
    }
    ps.restore(best);
    std::size_t i = 0;
    for (auto& p : ps) p->frozen = was_frozen[i++];
    return res;
}

}  // namespace dmae
