// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exporters for qualitative analysis: latent cosine-similarity matrices,
// per-timestep feature dumps and mask pictures. Figures are plain PGM.

#include "dmae/config.hpp"
#include "dmae/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace dmae {

/// S[i, j] = cos(a[i, :], b[j, :]) for (T, D) inputs; 0 when either row is zero.
inline Tensor<double> cosine_similarity(const Tensor<double>& a, const Tensor<double>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("cosine_similarity: expected (T, D) inputs of equal width");
    const auto ma = a.matrix(), mb = b.matrix();
    const Eigen::VectorXd na = ma.rowwise().norm(), nb = mb.rowwise().norm();
    const Eigen::MatrixXd dots = ma * mb.transpose();
    Tensor<double> s({a.dim(0), b.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(0); ++j) {
            const double den = na(static_cast<Eigen::Index>(i)) * nb(static_cast<Eigen::Index>(j));
            s.at(i, j) = den > 0 ? dots(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / den : 0.0;
        }
    return s;
}

struct DiagonalContrast {
    double mean_diagonal = 0;
    double mean_off_diagonal = 0;
    [[nodiscard]] double gap() const { return mean_diagonal - mean_off_diagonal; }
};

inline DiagonalContrast diagonal_contrast(const Tensor<double>& s) {
    const std::size_t n = s.dim(0);
    if (s.rank() != 2 || s.dim(1) != n || n < 2) throw ShapeError("diagonal_contrast: expected a square matrix, n >= 2");
    DiagonalContrast c;
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) (i == j ? c.mean_diagonal : off) += s.at(i, j);
    c.mean_diagonal /= static_cast<double>(n);
    c.mean_off_diagonal = off / static_cast<double>(n * (n - 1));
    return c;
}

/// Latents of one forward pass, each (B, T, D) in double precision.
struct LatentPair {
    Tensor<double> z_pre, z_tea;
};

/// Eval-mode pretraining forward on the selected samples with the given masks.
template <typename S>
LatentPair latents(const Model<S>& model, const SeriesBatch& data, const std::vector<std::size_t>& idx,
                   const std::vector<MaskMatrix>& masks) {
    Tape<S> tape;
    NoGradScope<S> ng(tape);
    const auto out = model.forward_pretrain(tape, model_input<S>(data, idx), mask_tensor<S>(masks), Mode::eval);
    return {out.z_pre.value().template cast<double>(), out.z_tea.value().template cast<double>()};
}

/// Mask of one sample as used by the exporters: seeded by (seed, sample id).
inline MaskMatrix diagnostic_mask(const SeriesBatch& data, std::size_t i, const MaskConfig& mc, std::uint64_t seed) {
    std::mt19937_64 rng(mask_seed(seed, data.sample_ids.at(i), 0));
    return sample_mask(data.n_vars(), data.length(), mc, rng);
}

/// T x T cosine similarity between Z_pre and Z_tea of sample `i`.
template <typename S>
Tensor<double> similarity_matrix(const Model<S>& model, const SeriesBatch& data, std::size_t i, const MaskConfig& mc,
                                 std::uint64_t mask_seed_value) {
    const auto lp = latents(model, data, {i}, {diagnostic_mask(data, i, mc, mask_seed_value)});
    const std::size_t T = lp.z_pre.dim(1), D = lp.z_pre.dim(2);
    return cosine_similarity(lp.z_pre.reshaped({T, D}), lp.z_tea.reshaped({T, D}));
}

/// Similarity averaged over every sample of a set.
template <typename S>
Tensor<double> mean_similarity_matrix(const Model<S>& model, const SeriesBatch& data, const MaskConfig& mc,
                                      std::uint64_t mask_seed_value) {
    Tensor<double> acc;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto s = similarity_matrix(model, data, i, mc, mask_seed_value);
        if (acc.empty())
            acc = std::move(s);
        else
            acc += s;
    }
    for (auto& v : acc.data()) v /= static_cast<double>(data.size());
    return acc;
}

inline std::string matrix_csv(const Tensor<double>& m) {
    std::ostringstream os;
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        for (std::size_t j = 0; j < m.dim(1); ++j) os << (j ? "," : "") << detail::format_double(m.at(i, j));
        os << '\n';
    }
    return os.str();
}

/// ASCII PGM (P2), min-max normalized to 0..255. A constant matrix maps to 0.
inline std::string matrix_pgm(const Tensor<double>& m) {
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    const double a = m.empty() ? 0 : *lo, range = m.empty() ? 0 : *hi - *lo;
    std::ostringstream os;
    os << "P2\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        for (std::size_t j = 0; j < m.dim(1); ++j) {
            const int g = range > 0 ? static_cast<int>(std::lround(255.0 * (m.at(i, j) - a) / range)) : 0;
            os << (j ? " " : "") << g;
        }
        os << '\n';
    }
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << s;
}

/// Rows `sample_id,timestep,role,f_0..f_{D-1}` ordered by sample id, then
/// timestep, then role (Z_pre before Z_tea).
template <typename S>
std::string export_features(const Model<S>& model, const SeriesBatch& data, const MaskConfig& mc,
                            std::uint64_t mask_seed_value) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return data.sample_ids[a] < data.sample_ids[b]; });
    const std::size_t D = model.config().d_model;
    std::ostringstream os;
    os << "sample_id,timestep,role";
    for (std::size_t k = 0; k < D; ++k) os << ",f_" << k;
    os << '\n';
    for (std::size_t i : order) {
        const auto lp = latents(model, data, {i}, {diagnostic_mask(data, i, mc, mask_seed_value)});
        const std::size_t T = lp.z_pre.dim(1);
        for (std::size_t t = 0; t < T; ++t)
            for (const auto* role : {"Z_pre", "Z_tea"}) {
                const auto& z = role[2] == 'p' ? lp.z_pre : lp.z_tea;
                os << data.sample_ids[i] << ',' << t << ',' << role;
                for (std::size_t k = 0; k < D; ++k) os << ',' << detail::format_double(z[t * D + k]);
                os << '\n';
            }
    }
    return os.str();
}

/// Mask picture: V rows by T columns, masked cells black, visible white.
inline std::string mask_pgm(const MaskMatrix& m) {
    std::ostringstream os;
    os << "P2\n" << m.length() << ' ' << m.vars() << "\n255\n";
    for (std::size_t v = 0; v < m.vars(); ++v) {
        for (std::size_t t = 0; t < m.length(); ++t) os << (t ? " " : "") << (m(v, t) ? 255 : 0);
        os << '\n';
    }
    return os.str();
}

/// `kind,length,count` for masked and visible runs.
inline std::string run_histogram_csv(const MaskReport& r) {
    std::ostringstream os;
    os << "kind,length,count\n";
    for (const auto& [len, c] : r.masked_runs.counts) os << "masked," << len << ',' << c << '\n';
    for (const auto& [len, c] : r.visible_runs.counts) os << "visible," << len << ',' << c << '\n';
    return os.str();
}

}  // namespace dmae
