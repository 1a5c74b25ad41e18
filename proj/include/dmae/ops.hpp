// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives recorded on a Tape. Activations are laid out as
// (batch, time, feature) so every linear map is a single matrix product over
// the folded (batch * time) rows.

#include "dmae/tape.hpp"
#include "dmae/tensor.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace dmae::ops {

template <typename S>
using StridedMap = Eigen::Map<RowMatrix<S>, 0, Eigen::OuterStride<>>;

namespace detail {

template <typename S>
Shape with_last(Shape s, std::size_t last) {
    s.back() = last;
    return s;
}

template <typename S>
StridedMap<S> block(S* base, std::size_t rows, std::size_t cols, std::size_t stride) {
    return StridedMap<S>(base, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                         Eigen::OuterStride<>(static_cast<Eigen::Index>(stride)));
}

template <typename S>
StridedMap<S> block(const S* base, std::size_t rows, std::size_t cols, std::size_t stride) {
    return block(const_cast<S*>(base), rows, cols, stride);
}

}  // namespace detail

/// y = x W + b over the last axis. W is (in, out).
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, std::optional<Var<S>> b = std::nullopt) {
    Tape<S>& t = *x.tape;
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (wv.rank() != 2 || x.shape().empty() || x.shape().back() != wv.dim(0))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(wv.shape()));
    Tensor<S> out(detail::with_last<S>(x.shape(), wv.dim(1)));
    // One product per leading index: a sample's rows then take the same GEMM
    // path whatever the batch size, keeping eval outputs bitwise per-sample.
    const std::size_t slices = xv.rank() >= 3 ? xv.dim(0) : 1;
    const std::size_t rows = slices ? xv.rows() / slices : 0;
    const auto W = wv.matrix();
    for (std::size_t s = 0; s < slices; ++s) {
        ConstMatrixMap<S> X(xv.ptr() + s * rows * wv.dim(0), static_cast<Eigen::Index>(rows),
                            static_cast<Eigen::Index>(wv.dim(0)));
        MatrixMap<S> Y(out.ptr() + s * rows * wv.dim(1), static_cast<Eigen::Index>(rows),
                       static_cast<Eigen::Index>(wv.dim(1)));
        Y.noalias() = X * W;
    }
    if (b) {
        if (b->value().size() != wv.dim(1)) throw ShapeError("linear: bias width mismatch");
        out.matrix().rowwise() += b->value().matrix().row(0);
    }
    return t.record(std::move(out), b ? std::initializer_list<Var<S>>{x, w, *b} : std::initializer_list<Var<S>>{x, w},
                    [x, w, b](Tape<S>& tp, const Tensor<S>& g) {
                        if (tp.needs_grad(x)) {
                            Tensor<S> dx(x.shape());
                            dx.matrix().noalias() = g.matrix() * w.value().matrix().transpose();
                            tp.accumulate(x, dx);
                        }
                        if (tp.needs_grad(w)) {
                            Tensor<S> dw(w.shape());
                            dw.matrix().noalias() = x.value().matrix().transpose() * g.matrix();
                            tp.accumulate(w, dw);
                        }
                        if (b && tp.needs_grad(*b)) {
                            Tensor<S> db(b->shape());
                            const std::size_t n = b->value().size();
                            for (std::size_t r = 0; r < g.size() / n; ++r)
                                for (std::size_t j = 0; j < n; ++j) db[j] += g[r * n + j];
                            tp.accumulate(*b, db);
                        }
                    },
                    "linear");
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    a.value().require_same_shape(b.value(), "add");
    Tensor<S> out = a.value();
    out += b.value();
    return a.tape->record(std::move(out), {a, b},
                          [a, b](Tape<S>& tp, const Tensor<S>& g) {
                              tp.accumulate(a, g);
                              tp.accumulate(b, g);
                          },
                          "add");
}

/// x (B, T, D) + pos[:T] broadcast over the batch; pos is (T_max, D).
template <typename S>
Var<S> add_positional(Var<S> x, Var<S> pos) {
    const auto& xv = x.value();
    const auto& pv = pos.value();
    if (xv.rank() != 3 || pv.rank() != 2 || xv.dim(2) != pv.dim(1))
        throw ShapeError("add_positional: " + shape_str(xv.shape()) + " vs " + shape_str(pv.shape()));
    const std::size_t B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
    if (T > pv.dim(0))
        throw ShapeError("sequence length " + std::to_string(T) + " exceeds T_max " + std::to_string(pv.dim(0)));
    Tensor<S> out = xv;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < T * D; ++i) out[b * T * D + i] += pv[i];
    return x.tape->record(std::move(out), {x, pos},
                          [x, pos, B, T, D](Tape<S>& tp, const Tensor<S>& g) {
                              tp.accumulate(x, g);
                              if (tp.needs_grad(pos)) {
                                  Tensor<S> dp(pos.shape());
                                  for (std::size_t b = 0; b < B; ++b)
                                      for (std::size_t i = 0; i < T * D; ++i) dp[i] += g[b * T * D + i];
                                  tp.accumulate(pos, dp);
                              }
                          },
                          "add_positional");
}

template <typename S>
Var<S> relu(Var<S> x) {
    Tensor<S> out = x.value();
    for (auto& v : out.data()) v = v > S{0} ? v : S{0};
    return x.tape->record(std::move(out), {x},
                          [x](Tape<S>& tp, const Tensor<S>& g) {
                              Tensor<S> dx = g;
                              const auto& xv = x.value();
                              for (std::size_t i = 0; i < dx.size(); ++i)
                                  if (!(xv[i] > S{0})) dx[i] = S{0};
                              tp.accumulate(x, dx);
                          },
                          "relu");
}

template <typename S>
Var<S> scale(Var<S> x, S c) {
    Tensor<S> out = x.value();
    for (auto& v : out.data()) v *= c;
    return x.tape->record(std::move(out), {x},
                          [x, c](Tape<S>& tp, const Tensor<S>& g) {
                              Tensor<S> dx = g;
                              for (auto& v : dx.data()) v *= c;
                              tp.accumulate(x, dx);
                          },
                          "scale");
}

/// Inverted dropout; identity when p == 0 or outside training.
template <typename S>
Var<S> dropout(Var<S> x, double p, bool training) {
    if (!training || p <= 0.0) return x;
    Tape<S>& t = *x.tape;
    std::bernoulli_distribution keep(1.0 - p);
    Tensor<S> m(x.shape());
    const S inv = static_cast<S>(1.0 / (1.0 - p));
    for (auto& v : m.data()) v = keep(t.rng()) ? inv : S{0};
    Tensor<S> out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    return t.record(std::move(out), {x},
                    [x, m = std::move(m)](Tape<S>& tp, const Tensor<S>& g) {
                        Tensor<S> dx = g;
                        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= m[i];
                        tp.accumulate(x, dx);
                    },
                    "dropout");
}

/// Row-wise numerically stable softmax of a (rows x cols) block, in place.
/// Each row is processed in an owned (aligned) buffer: Eigen's vectorized
/// loops peel by pointer alignment, so working in place would make results
/// depend on where the block sits in memory.
template <typename M>
void softmax_rows(M&& m) {
    using S = typename std::decay_t<M>::Scalar;
    Eigen::Array<S, Eigen::Dynamic, 1> buf(m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (Eigen::Index c = 0; c < row.size(); ++c) buf(c) = row(c);
        buf = (buf - buf.maxCoeff()).exp();
        const S sum = buf.sum();
        for (Eigen::Index c = 0; c < row.size(); ++c) row(c) = buf(c) / sum;
    }
}

/// Scaled dot-product attention, split into `heads` equal column groups.
/// q: (B, Tq, H*dk), k: (B, Tk, H*dk), v: (B, Tk, H*dv) -> (B, Tq, H*dv).
/// `attn_dropout` is applied to the attention weights when training.
template <typename S>
Var<S> attention(Var<S> q, Var<S> k, Var<S> v, std::size_t heads, double attn_dropout = 0.0,
                 bool training = false) {
    Tape<S>& t = *q.tape;
    const auto& qv = q.value();
    const auto& kv = k.value();
    const auto& vv = v.value();
    if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3 || qv.dim(0) != kv.dim(0) ||
        kv.dim(0) != vv.dim(0) || kv.dim(1) != vv.dim(1) || qv.dim(2) != kv.dim(2))
        throw ShapeError("attention: q " + shape_str(qv.shape()) + ", k " + shape_str(kv.shape()) + ", v " +
                         shape_str(vv.shape()));
    if (heads == 0 || qv.dim(2) % heads != 0 || vv.dim(2) % heads != 0)
        throw ShapeError("attention: width not divisible by head count " + std::to_string(heads));
    const std::size_t B = qv.dim(0), Tq = qv.dim(1), Tk = kv.dim(1);
    const std::size_t WK = qv.dim(2), WV = vv.dim(2);
    const std::size_t dk = WK / heads, dv = WV / heads;
    const S inv_sqrt = S{1} / std::sqrt(static_cast<S>(dk));
    const bool drop = training && attn_dropout > 0.0;

    Tensor<S> probs({B, heads, Tq, Tk});
    Tensor<S> dmask;
    if (drop) dmask = Tensor<S>({B, heads, Tq, Tk});
    Tensor<S> out({B, Tq, WV});
    std::bernoulli_distribution keep(1.0 - attn_dropout);
    const S inv_keep = drop ? static_cast<S>(1.0 / (1.0 - attn_dropout)) : S{1};

    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            auto Q = detail::block(qv.ptr() + b * Tq * WK + h * dk, Tq, dk, WK);
            auto K = detail::block(kv.ptr() + b * Tk * WK + h * dk, Tk, dk, WK);
            auto V = detail::block(vv.ptr() + b * Tk * WV + h * dv, Tk, dv, WV);
            MatrixMap<S> P(probs.ptr() + (b * heads + h) * Tq * Tk, static_cast<Eigen::Index>(Tq),
                           static_cast<Eigen::Index>(Tk));
            P.noalias() = (Q * K.transpose()) * inv_sqrt;
            softmax_rows(P);
            auto O = detail::block(out.ptr() + b * Tq * WV + h * dv, Tq, dv, WV);
            if (drop) {
                MatrixMap<S> Mk(dmask.ptr() + (b * heads + h) * Tq * Tk, static_cast<Eigen::Index>(Tq),
                                static_cast<Eigen::Index>(Tk));
                for (Eigen::Index i = 0; i < Mk.size(); ++i) Mk.data()[i] = keep(t.rng()) ? inv_keep : S{0};
                O.noalias() = P.cwiseProduct(Mk) * V;
            } else {
                O.noalias() = P * V;
            }
        }
    }

    return t.record(
        std::move(out), {q, k, v},
        [q, k, v, heads, probs = std::move(probs), dmask = std::move(dmask), drop, B, Tq, Tk, WK, WV, dk, dv,
         inv_sqrt](Tape<S>& tp, const Tensor<S>& g) {
            const auto& qv = q.value();
            const auto& kv = k.value();
            const auto& vv = v.value();
            Tensor<S> dq(qv.shape()), dk_(kv.shape()), dv_(vv.shape());
            RowMatrix<S> dP, Pd, dS;
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    auto Q = detail::block(qv.ptr() + b * Tq * WK + h * dk, Tq, dk, WK);
                    auto K = detail::block(kv.ptr() + b * Tk * WK + h * dk, Tk, dk, WK);
                    auto V = detail::block(vv.ptr() + b * Tk * WV + h * dv, Tk, dv, WV);
                    auto G = detail::block(g.ptr() + b * Tq * WV + h * dv, Tq, dv, WV);
                    ConstMatrixMap<S> P(probs.ptr() + (b * heads + h) * Tq * Tk, static_cast<Eigen::Index>(Tq),
                                        static_cast<Eigen::Index>(Tk));
                    auto dQ = detail::block(dq.ptr() + b * Tq * WK + h * dk, Tq, dk, WK);
                    auto dK = detail::block(dk_.ptr() + b * Tk * WK + h * dk, Tk, dk, WK);
                    auto dV = detail::block(dv_.ptr() + b * Tk * WV + h * dv, Tk, dv, WV);
                    dP.noalias() = G * V.transpose();
                    if (drop) {
                        ConstMatrixMap<S> Mk(dmask.ptr() + (b * heads + h) * Tq * Tk, static_cast<Eigen::Index>(Tq),
                                             static_cast<Eigen::Index>(Tk));
                        Pd = P.cwiseProduct(Mk);
                        dV.noalias() = Pd.transpose() * G;
                        dP = dP.cwiseProduct(Mk);
                    } else {
                        dV.noalias() = P.transpose() * G;
                    }
                    // softmax backward: dS = P * (dP - rowsum(dP * P))
                    dS = P.cwiseProduct(dP);
                    const auto rs = dS.rowwise().sum().eval();
                    dS -= P.cwiseProduct(rs.replicate(1, static_cast<Eigen::Index>(Tk)));
                    dS *= inv_sqrt;
                    dQ.noalias() = dS * K;
                    dK.noalias() = dS.transpose() * Q;
                }
            }
            tp.accumulate(q, dq);
            tp.accumulate(k, dk_);
            tp.accumulate(v, dv_);
        },
        "attention");
}

/// Batch normalization of each feature channel (last axis) over every
/// leading axis, i.e. over (batch x time). Training mode normalizes with batch
/// statistics and, when `update_running`, folds them into the running buffers
/// with the given momentum; eval mode uses the running buffers only.
template <typename S>
Var<S> batch_norm(Var<S> x, Var<S> gain, Var<S> bias, Parameter<S>& running_mean, Parameter<S>& running_var,
                  bool training, double momentum = 0.1, double eps = 1e-5, bool update_running = true) {
    const auto& xv = x.value();
    const std::size_t N = xv.rows(), C = xv.cols();
    if (gain.value().size() != C || bias.value().size() != C || running_mean.value.size() != C ||
        running_var.value.size() != C)
        throw ShapeError("batch_norm: channel count mismatch");
    if (training && N < 2) throw std::invalid_argument("batch_norm: training needs at least 2 values per channel");

    std::vector<S> mean(C), invstd(C);
    if (training) {
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < N; ++r) m += xv[r * C + c];
            m /= static_cast<double>(N);
            double var = 0.0;
            for (std::size_t r = 0; r < N; ++r) {
                const double d = xv[r * C + c] - m;
                var += d * d;
            }
            var /= static_cast<double>(N);
            mean[c] = static_cast<S>(m);
            invstd[c] = static_cast<S>(1.0 / std::sqrt(var + eps));
            if (update_running) {
                auto& rm = running_mean.value[c];
                auto& rv = running_var.value[c];
                rm = static_cast<S>((1.0 - momentum) * rm + momentum * m);
                rv = static_cast<S>((1.0 - momentum) * rv + momentum * var * N / (N - 1.0));
            }
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = running_mean.value[c];
            invstd[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var.value[c]) + eps));
        }
    }

    Tensor<S> xhat(xv.shape());
    Tensor<S> out(xv.shape());
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            const S h = (xv[r * C + c] - mean[c]) * invstd[c];
            xhat[r * C + c] = h;
            out[r * C + c] = gv[c] * h + bv[c];
        }

    return x.tape->record(
        std::move(out), {x, gain, bias},
        [x, gain, bias, xhat = std::move(xhat), invstd = std::move(invstd), training, N, C](Tape<S>& tp,
                                                                                          const Tensor<S>& g) {
            const auto& gv = gain.value();
            std::vector<S> sum_g(C, S{0}), sum_gx(C, S{0});
            for (std::size_t r = 0; r < N; ++r)
                for (std::size_t c = 0; c < C; ++c) {
                    sum_g[c] += g[r * C + c];
                    sum_gx[c] += g[r * C + c] * xhat[r * C + c];
                }
            if (tp.needs_grad(gain)) tp.accumulate(gain, Tensor<S>(gain.shape(), sum_gx));
            if (tp.needs_grad(bias)) tp.accumulate(bias, Tensor<S>(bias.shape(), sum_g));
            if (!tp.needs_grad(x)) return;
            Tensor<S> dx(x.shape());
            const S n = static_cast<S>(N);
            for (std::size_t r = 0; r < N; ++r)
                for (std::size_t c = 0; c < C; ++c) {
                    const S gh = g[r * C + c] * gv[c];
                    if (training)
                        dx[r * C + c] =
                            invstd[c] * (gh - gv[c] * sum_g[c] / n - xhat[r * C + c] * gv[c] * sum_gx[c] / n);
                    else
                        dx[r * C + c] = invstd[c] * gh;
                }
            tp.accumulate(x, dx);
        },
        "batch_norm");
}

/// Layer normalization over the last axis of every row.
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, double eps = 1e-5) {
    const auto& xv = x.value();
    const std::size_t N = xv.rows(), C = xv.cols();
    if (gain.value().size() != C || bias.value().size() != C) throw ShapeError("layer_norm: width mismatch");
    Tensor<S> xhat(xv.shape()), out(xv.shape());
    std::vector<S> invstd(N);
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    for (std::size_t r = 0; r < N; ++r) {
        double m = 0.0;
        for (std::size_t c = 0; c < C; ++c) m += xv[r * C + c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = xv[r * C + c] - m;
            var += d * d;
        }
        var /= static_cast<double>(C);
        invstd[r] = static_cast<S>(1.0 / std::sqrt(var + eps));
        for (std::size_t c = 0; c < C; ++c) {
            const S h = static_cast<S>(xv[r * C + c] - m) * invstd[r];
            xhat[r * C + c] = h;
            out[r * C + c] = gv[c] * h + bv[c];
        }
    }
    return x.tape->record(
        std::move(out), {x, gain, bias},
        [x, gain, bias, xhat = std::move(xhat), invstd = std::move(invstd), N, C](Tape<S>& tp, const Tensor<S>& g) {
            const auto& gv = gain.value();
            if (tp.needs_grad(gain) || tp.needs_grad(bias)) {
                Tensor<S> dg(gain.shape()), db(bias.shape());
                for (std::size_t r = 0; r < N; ++r)
                    for (std::size_t c = 0; c < C; ++c) {
                        dg[c] += g[r * C + c] * xhat[r * C + c];
                        db[c] += g[r * C + c];
                    }
                tp.accumulate(gain, dg);
                tp.accumulate(bias, db);
            }
            if (!tp.needs_grad(x)) return;
            Tensor<S> dx(x.shape());
            const S n = static_cast<S>(C);
            for (std::size_t r = 0; r < N; ++r) {
                S s1{0}, s2{0};
                for (std::size_t c = 0; c < C; ++c) {
                    const S gh = g[r * C + c] * gv[c];
                    s1 += gh;
                    s2 += gh * xhat[r * C + c];
                }
                for (std::size_t c = 0; c < C; ++c) {
                    const S gh = g[r * C + c] * gv[c];
                    dx[r * C + c] = invstd[r] * (gh - s1 / n - xhat[r * C + c] * s2 / n);
                }
            }
            tp.accumulate(x, dx);
        },
        "layer_norm");
}

/// Mean over the time axis: (B, T, D) -> (B, D).
template <typename S>
Var<S> mean_time(Var<S> x) {
    const auto& xv = x.value();
    if (xv.rank() != 3 || xv.dim(1) == 0) throw ShapeError("mean_time expects (B, T>=1, D)");
    const std::size_t B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
    Tensor<S> out({B, D});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t d = 0; d < D; ++d) out[b * D + d] += xv[(b * T + t) * D + d];
    const S inv = S{1} / static_cast<S>(T);
    for (auto& v : out.data()) v *= inv;
    return x.tape->record(std::move(out), {x},
                          [x, B, T, D, inv](Tape<S>& tp, const Tensor<S>& g) {
                              Tensor<S> dx(x.shape());
                              for (std::size_t b = 0; b < B; ++b)
                                  for (std::size_t t = 0; t < T; ++t)
                                      for (std::size_t d = 0; d < D; ++d)
                                          dx[(b * T + t) * D + d] = g[b * D + d] * inv;
                              tp.accumulate(x, dx);
                          },
                          "mean_time");
}

/// sum(w * (a - b)^2) / sum(w). Throws when the weights have no support.
template <typename S>
Var<S> masked_mse(Var<S> a, Var<S> b, const Tensor<S>& w) {
    a.value().require_same_shape(b.value(), "masked_mse");
    a.value().require_same_shape(w, "masked_mse weights");
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        wsum += w[i];
        const double d = static_cast<double>(a.value()[i]) - b.value()[i];
        acc += w[i] * d * d;
    }
    if (!(wsum > 0.0)) throw std::invalid_argument("masked_mse: no supported entries");
    Tensor<S> out({1}, static_cast<S>(acc / wsum));
    return a.tape->record(std::move(out), {a, b},
                          [a, b, w, wsum](Tape<S>& tp, const Tensor<S>& g) {
                              Tensor<S> da(a.shape());
                              const S k = static_cast<S>(2.0 / wsum) * g[0];
                              for (std::size_t i = 0; i < da.size(); ++i)
                                  da[i] = k * w[i] * (a.value()[i] - b.value()[i]);
                              tp.accumulate(a, da);
                              if (tp.needs_grad(b)) {
                                  for (auto& v : da.data()) v = -v;
                                  tp.accumulate(b, da);
                              }
                          },
                          "masked_mse");
}

/// Mean squared error against a constant target.
template <typename S>
Var<S> mse(Var<S> pred, const Tensor<S>& target) {
    Tape<S>& t = *pred.tape;
    return masked_mse(pred, t.constant(target), Tensor<S>(target.shape(), S{1}));
}

/// Mean softmax cross-entropy of logits (B, n) against class indices.
template <typename S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
    const auto& lv = logits.value();
    if (lv.rank() != 2 || lv.dim(0) != labels.size()) throw ShapeError("cross_entropy: logits/labels mismatch");
    const std::size_t B = lv.dim(0), n = lv.dim(1);
    Tensor<S> probs(lv.shape());
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= n)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
        S mx = lv[b * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, lv[b * n + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(lv[b * n + j] - mx));
        for (std::size_t j = 0; j < n; ++j)
            probs[b * n + j] = static_cast<S>(std::exp(static_cast<double>(lv[b * n + j] - mx)) / z);
        loss += std::log(z) - static_cast<double>(lv[b * n + y] - mx);
    }
    Tensor<S> out({1}, static_cast<S>(loss / static_cast<double>(B)));
    return logits.tape->record(std::move(out), {logits},
                               [logits, labels, probs = std::move(probs), B, n](Tape<S>& tp, const Tensor<S>& g) {
                                   Tensor<S> d = probs;
                                   for (std::size_t b = 0; b < B; ++b) d[b * n + labels[b]] -= S{1};
                                   const S k = g[0] / static_cast<S>(B);
                                   for (auto& v : d.data()) v *= k;
                                   tp.accumulate(logits, d);
                               },
                               "cross_entropy");
}

/// Scalar linear combination of scalar vars, recorded as a chain so that
/// every term is a parent of the result.
template <typename S>
Var<S> weighted_sum(const std::vector<std::pair<Var<S>, S>>& terms) {
    if (terms.empty()) throw std::invalid_argument("weighted_sum: no terms");
    for (const auto& term : terms)
        if (term.first.value().size() != 1) throw ShapeError("weighted_sum expects scalars");
    Tape<S>& t = *terms.front().first.tape;
    const auto [v0, c0] = terms.front();
    Var<S> out = t.record(Tensor<S>({1}, c0 * v0.value()[0]), {v0},
                          [v0, c0](Tape<S>& tp, const Tensor<S>& g) {
                              tp.accumulate(v0, Tensor<S>({1}, c0 * g[0]));
                          },
                          "weighted_sum");
    for (std::size_t i = 1; i < terms.size(); ++i) {
        const auto [v, c] = terms[i];
        out = t.record(Tensor<S>({1}, out.value()[0] + c * v.value()[0]), {out, v},
                       [prev = out, v, c](Tape<S>& tp, const Tensor<S>& g) {
                           tp.accumulate(prev, g);
                           tp.accumulate(v, Tensor<S>({1}, c * g[0]));
                       },
                       "weighted_sum");
    }
    return out;
}

/// Sum of squares of every entry.
template <typename S>
Var<S> sum_squares(Var<S> x) {
    S acc{0};
    for (S v : x.value().data()) acc += v * v;
    return x.tape->record(Tensor<S>({1}, acc), {x},
                          [x](Tape<S>& tp, const Tensor<S>& g) {
                              Tensor<S> dx = x.value();
                              for (auto& v : dx.data()) v *= S{2} * g[0];
                              tp.accumulate(x, dx);
                          },
                          "sum_squares");
}

/// Sum of elementwise products with a constant tensor; handy for projecting a
/// tensor-valued op onto a scalar in gradient checks.
template <typename S>
Var<S> dot(Var<S> x, const Tensor<S>& c) {
    x.value().require_same_shape(c, "dot");
    S acc{0};
    for (std::size_t i = 0; i < c.size(); ++i) acc += x.value()[i] * c[i];
    return x.tape->record(Tensor<S>({1}, acc), {x},
                          [x, c](Tape<S>& tp, const Tensor<S>& g) {
                              Tensor<S> dx = c;
                              for (auto& v : dx.data()) v *= g[0];
                              tp.accumulate(x, dx);
                          },
                          "dot");
}

}  // namespace dmae::ops
