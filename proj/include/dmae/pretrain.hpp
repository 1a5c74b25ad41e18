// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/config.hpp"
#include "dmae/model.hpp"
#include "dmae/optim.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

namespace dmae {

// ---------------------------------------------------------------------------
// Losses. Masks are (B, T, V) tensors of 0 (masked) / 1 (visible).

/// MSE between y and x over student-masked cells only.
template <typename S>
Var<S> loss_dec(Var<S> y, const Tensor<S>& x, const Tensor<S>& mask) {
    Tensor<S> w(mask.shape());
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        w[i] = mask[i] == S{0} ? S{1} : S{0};
        any = any || mask[i] == S{0};
    }
    if (!any) throw std::invalid_argument("loss_dec: degenerate mask with no masked cells");
    return ops::masked_mse(y, y.tape->constant(x), w);
}

/// (B, T, D) weights selecting the alignment timesteps of each sample.
template <typename S>
Tensor<S> alignment_weights(const Tensor<S>& mask, std::size_t d, AlignRule rule = AlignRule::any) {
    const std::size_t B = mask.dim(0), T = mask.dim(1), V = mask.dim(2);
    Tensor<S> w({B, T, d});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) {
            std::size_t masked = 0;
            for (std::size_t v = 0; v < V; ++v) masked += mask[(b * T + t) * V + v] == S{0};
            const S wt = rule == AlignRule::any ? S(masked > 0 ? 1 : 0) : static_cast<S>(masked) / static_cast<S>(V);
            for (std::size_t k = 0; k < d; ++k) w[(b * T + t) * d + k] = wt;
        }
    return w;
}

/// Feature-level MSE between the teacher latents (held constant) and the
/// predicted latents, over timesteps with at least one student-masked variable.
template <typename S>
Var<S> loss_ali(Var<S> z_tea, Var<S> z_pre, const Tensor<S>& mask, AlignRule rule = AlignRule::any) {
    const auto w = alignment_weights(mask, z_pre.shape().back(), rule);
    bool any = false;
    for (S v : w.data()) any = any || v != S{0};
    if (!any) throw std::invalid_argument("loss_ali: no student-masked timesteps");
    return ops::masked_mse(z_pre.tape->constant(z_tea.value()), z_pre, w);
}

/// L = L_dec + lambda * L_ali. With `use_dec` false the decoding term is
/// dropped from the result (it can still be reported separately).
template <typename S>
Var<S> total_loss(Var<S> dec, Var<S> ali, double lambda, bool use_dec = true) {
    std::vector<std::pair<Var<S>, S>> terms;
    if (use_dec) terms.emplace_back(dec, S{1});
    if (lambda != 0.0 || !use_dec) terms.emplace_back(ali, static_cast<S>(lambda));
    return ops::weighted_sum(terms);
}

// ---------------------------------------------------------------------------
// Run bookkeeping

struct StepLoss {
    double total = 0, dec = 0, ali = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0, dec = 0, ali = 0;
    std::optional<double> val_loss, val_dec, val_ali;
    double seconds = 0;
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    std::vector<StepLoss> steps;
    std::size_t selected_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json e = nlohmann::json::array();
        for (const auto& r : epochs) {
            nlohmann::json j = {{"epoch", r.epoch}, {"loss", r.loss}, {"loss_dec", r.dec}, {"loss_ali", r.ali},
                                {"seconds", r.seconds}};
            j["val_loss"] = r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json(nullptr);
            j["val_loss_dec"] = r.val_dec ? nlohmann::json(*r.val_dec) : nlohmann::json(nullptr);
            j["val_loss_ali"] = r.val_ali ? nlohmann::json(*r.val_ali) : nlohmann::json(nullptr);
            e.push_back(j);
        }
        return {{"epochs", e}, {"selected_epoch", selected_epoch}, {"best_val_loss", best_val_loss},
                {"steps", steps.size()}};
    }

    /// epoch,L,L_dec,L_ali,val_L
    [[nodiscard]] std::string epoch_csv() const {
        std::ostringstream os;
        os.precision(10);
        os << "epoch,L,L_dec,L_ali,val_L\n";
        for (const auto& r : epochs) {
            os << r.epoch << ',' << r.loss << ',' << r.dec << ',' << r.ali << ',';
            if (r.val_loss) os << *r.val_loss;
            os << '\n';
        }
        return os.str();
    }
};

/// Loss of a batch evaluated without gradient, as sums and supports so that
/// chunks can be combined exactly.
struct LossSums {
    double dec_sum = 0, dec_count = 0, ali_sum = 0, ali_count = 0;

    LossSums& operator+=(const LossSums& o) {
        dec_sum += o.dec_sum;
        dec_count += o.dec_count;
        ali_sum += o.ali_sum;
        ali_count += o.ali_count;
        return *this;
    }
    [[nodiscard]] double dec() const { return dec_count > 0 ? dec_sum / dec_count : 0.0; }
    [[nodiscard]] double ali() const { return ali_count > 0 ? ali_sum / ali_count : 0.0; }
    [[nodiscard]] double total(double lambda, bool use_dec = true) const {
        return (use_dec ? dec() : 0.0) + lambda * ali();
    }
};

template <typename S>
LossSums pretrain_loss_sums(const PretrainOutputs<S>& out, const Tensor<S>& x, const Tensor<S>& mask, AlignRule rule) {
    LossSums s;
    const auto& y = out.y.value();
    for (std::size_t i = 0; i < x.size(); ++i)
        if (mask[i] == S{0}) {
            const double d = static_cast<double>(y[i]) - x[i];
            s.dec_sum += d * d;
            s.dec_count += 1;
        }
    const auto& zp = out.z_pre.value();
    const auto& zt = out.z_tea.value();
    const auto w = alignment_weights(mask, zp.shape().back(), rule);
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] != S{0}) {
            const double d = static_cast<double>(zp[i]) - zt[i];
            s.ali_sum += w[i] * d * d;
            s.ali_count += w[i];
        }
    return s;
}

/// Fixed validation masks derived from the seed and sample ids.
inline std::vector<MaskMatrix> validation_masks(const SeriesBatch& val, const TrainConfig& cfg) {
    std::vector<MaskMatrix> out;
    for (const auto& id : val.sample_ids) {
        std::mt19937_64 rng(mask_seed(cfg.seed ^ 0x76616c6964ULL, id, 0));
        out.push_back(sample_mask(val.n_vars(), val.length(), cfg.mask, rng));
    }
    return out;
}

/// Training masks for one step: one fresh mask per sample.
inline std::vector<MaskMatrix> step_masks(const SeriesBatch& batch, const std::vector<std::size_t>& idx,
                                          const TrainConfig& cfg, std::uint64_t step) {
    std::vector<MaskMatrix> out;
    for (std::size_t i : idx) {
        std::mt19937_64 rng(mask_seed(cfg.seed, batch.sample_ids[i], step));
        out.push_back(sample_mask(batch.n_vars(), batch.length(), cfg.mask, rng));
    }
    return out;
}

/// Pretraining loss over a whole batch in the given mode, no gradient.
template <typename S>
LossSums evaluate_pretrain_loss(const Model<S>& model, const SeriesBatch& data, const std::vector<MaskMatrix>& masks,
                                const TrainConfig& cfg, Mode mode = Mode::eval) {
    LossSums total;
    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
        std::vector<std::size_t> idx;
        std::vector<MaskMatrix> m;
        for (std::size_t i = start; i < std::min(data.size(), start + cfg.batch_size); ++i) {
            idx.push_back(i);
            m.push_back(masks[i]);
        }
        Tape<S> tape(cfg.checked);
        NoGradScope<S> ng(tape);
        const auto x = model_input<S>(data, idx);
        const auto mt = mask_tensor<S>(m);
        const auto out = model.forward_pretrain(tape, x, mt, mode);
        total += pretrain_loss_sums(out, x, mt, cfg.align_rule);
    }
    return total;
}

struct PretrainHooks {
    std::function<void(std::size_t step, const StepLoss&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Pretraining: per step, fresh per-sample masks, forward, total loss, Adam.
/// Validation uses fixed masks in eval mode; the model ends holding the
/// parameters of the epoch with the lowest validation loss (earliest on ties).
template <typename S>
RunRecord pretrain(Model<S>& model, const SeriesBatch& train, const SeriesBatch& val, const TrainConfig& cfg,
                   const PretrainHooks& hooks = {}) {
    cfg.validate();
    if (train.size() == 0) throw std::invalid_argument("pretrain: empty training set");
    if (val.size() == 0) throw std::invalid_argument("pretrain: empty validation set");
    if (train.n_vars() != model.config().n_vars || val.n_vars() != model.config().n_vars)
        throw ShapeError("pretrain: data variable count does not match the model");

    auto& ps = model.params();
    ps.zero_grad();
    Adam<S> opt(cfg.adam);
    const auto vmasks = validation_masks(val, cfg);
    std::mt19937_64 order_rng(splitmix64(cfg.seed ^ 0x6f72646572ULL));
    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    RunRecord rec;
    std::vector<Tensor<S>> best;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::uint64_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), order_rng);
        EpochRecord er;
        er.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
            const auto masks = step_masks(train, idx, cfg, step);
            const auto x = model_input<S>(train, idx);
            const auto mt = mask_tensor<S>(masks);

            Tape<S> tape(cfg.checked, splitmix64(cfg.seed ^ (step + 1)));
            StepLoss sl;
            try {
                const auto out = model.forward_pretrain(tape, x, mt, Mode::train);
                const auto dec = loss_dec(out.y, x, mt);
                const auto ali = loss_ali(out.z_tea, out.z_pre, mt, cfg.align_rule);
                const auto total = total_loss(dec, ali, cfg.lambda, cfg.use_dec_loss);
                sl = {total.value()[0], dec.value()[0], ali.value()[0]};
                if (!std::isfinite(sl.total) || !std::isfinite(sl.dec) || !std::isfinite(sl.ali)) {
                    std::ostringstream os;
                    os << "non-finite pretraining loss at step " << step << " (L=" << sl.total << ", L_dec=" << sl.dec
                       << ", L_ali=" << sl.ali << ")";
                    throw NumericError(os.str());
                }
                tape.backward(total);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " [step " + std::to_string(step) + "]");
            }
            if (cfg.grad_clip > 0) clip_grad_norm(ps, cfg.grad_clip);
            opt.step(ps, scheduled_lr(cfg.lr, cfg.schedule, step, total_steps));
            ps.zero_grad();

            rec.steps.push_back(sl);
            if (hooks.on_step) hooks.on_step(step, sl);
            er.loss += sl.total;
            er.dec += sl.dec;
            er.ali += sl.ali;
            ++step;
        }
        er.loss /= static_cast<double>(steps_per_epoch);
        er.dec /= static_cast<double>(steps_per_epoch);
        er.ali /= static_cast<double>(steps_per_epoch);

        if (epoch % cfg.val_every == 0 || epoch == cfg.epochs) {
            const auto v = evaluate_pretrain_loss(model, val, vmasks, cfg, Mode::eval);
            er.val_loss = v.total(cfg.lambda, cfg.use_dec_loss);
            er.val_dec = v.dec();
            er.val_ali = v.ali();
            if (!std::isfinite(*er.val_loss))
                throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
            if (*er.val_loss < rec.best_val_loss) {
                rec.best_val_loss = *er.val_loss;
                rec.selected_epoch = epoch;
                best = ps.snapshot();
            }
        }
        er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.epochs.push_back(er);
        if (hooks.on_epoch) hooks.on_epoch(er);
    }
    if (!best.empty()) ps.restore(best);
    return rec;
}

}  // namespace dmae
