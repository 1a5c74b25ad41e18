// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dmae {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// Relative error with a floor on the denominator so that gradients below
/// `floor` in magnitude are compared in absolute terms.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` builds the function on the tape it is given and returns the scalar
/// output. Every trainable coordinate is checked, unless a parameter holds
/// more than 10^4 scalars, in which case a seeded 1% subsample is used.
template <typename S>
GradCheckReport grad_check(const std::function<Var<S>(Tape<S>&)>& f, const std::vector<Parameter<S>*>& params,
                           double eps = 1e-5, std::uint64_t seed = 0, double floor = 1e-5) {
    for (auto* p : params) p->zero_grad();
    {
        Tape<S> tape;
        auto out = f(tape);
        tape.backward(out);
    }
    auto eval = [&] {
        Tape<S> tape;
        return static_cast<double>(f(tape).value()[0]);
    };

    std::mt19937_64 rng(seed);
    GradCheckReport rep;
    for (auto* p : params) {
        if (!p->trainable || p->frozen) continue;
        std::vector<std::size_t> idx(p->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > 10000) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(idx.size() / 100);
        }
        for (std::size_t i : idx) {
            const S orig = p->value[i];
            p->value[i] = static_cast<S>(orig + eps);
            const double fp = eval();
            p->value[i] = static_cast<S>(orig - eps);
            const double fm = eval();
            p->value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = p->grad[i];
            const double err = relative_error(analytic, numeric, floor);
            if (rep.checked++ == 0 || err > rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.worst_param = p->name;
                rep.worst_index = i;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace dmae
