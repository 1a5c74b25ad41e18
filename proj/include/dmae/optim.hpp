// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/config.hpp"
#include "dmae/tape.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

namespace dmae {

struct AdamState {
    std::vector<double> m, v;
};

/// One bias-corrected Adam update of `w` in place. `step` is 1-based.
template <typename S>
void adam_step(std::span<S> w, std::span<const S> g, AdamState& st, std::size_t step, double lr,
               const AdamConfig& cfg = {}) {
    if (w.size() != g.size()) throw ShapeError("adam_step: parameter/gradient size mismatch");
    if (st.m.size() != w.size()) {
        st.m.assign(w.size(), 0.0);
        st.v.assign(w.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * gi;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double mh = st.m[i] / bc1;
        const double vh = st.v[i] / bc2;
        w[i] = static_cast<S>(w[i] - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
}

/// Adam over every trainable, non-frozen parameter of a store.
template <typename S>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore<S>& ps, double lr) {
        ++t_;
        for (auto& p : ps) {
            if (!p->trainable || p->frozen) continue;
            if (p->grad.shape() != p->value.shape()) p->zero_grad();
            adam_step<S>(p->value.data(), p->grad.data(), state_[p.get()], t_, lr, cfg_);
        }
    }

    [[nodiscard]] std::size_t steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::unordered_map<const Parameter<S>*, AdamState> state_;
};

/// Scale gradients so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
template <typename S>
double clip_grad_norm(ParamStore<S>& ps, double max_norm) {
    double sq = 0.0;
    for (const auto& p : ps)
        if (p->trainable && !p->frozen)
            for (S g : p->grad.data()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const auto k = static_cast<S>(max_norm / norm);
        for (auto& p : ps)
            for (auto& g : p->grad.data()) g *= k;
    }
    return norm;
}

inline double scheduled_lr(double base, Schedule s, std::size_t step, std::size_t total_steps) {
    if (s == Schedule::constant || total_steps <= 1) return base;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return 0.5 * base * (1.0 + std::cos(std::numbers::pi * std::min(frac, 1.0)));
}

}  // namespace dmae
