// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dmae {

/// Binary (V x T) mask: 0 = masked, 1 = visible.
class MaskMatrix {
public:
    MaskMatrix() = default;
    MaskMatrix(std::size_t vars, std::size_t length, std::uint8_t fill = 1)
        : vars_(vars), length_(length), bits_(vars * length, fill) {}
    MaskMatrix(std::size_t vars, std::size_t length, std::vector<std::uint8_t> bits)
        : vars_(vars), length_(length), bits_(std::move(bits)) {
        if (bits_.size() != vars * length) throw ShapeError("mask bits do not match shape");
        for (auto b : bits_)
            if (b > 1) throw std::invalid_argument("mask entries must be 0 or 1");
    }

    [[nodiscard]] std::size_t vars() const noexcept { return vars_; }
    [[nodiscard]] std::size_t length() const noexcept { return length_; }
    [[nodiscard]] std::uint8_t operator()(std::size_t v, std::size_t t) const { return bits_[v * length_ + t]; }
    std::uint8_t& operator()(std::size_t v, std::size_t t) { return bits_[v * length_ + t]; }
    [[nodiscard]] std::span<const std::uint8_t> bits() const noexcept { return bits_; }
    [[nodiscard]] std::span<const std::uint8_t> row(std::size_t v) const {
        return std::span<const std::uint8_t>(bits_).subspan(v * length_, length_);
    }

    [[nodiscard]] std::size_t masked_count() const {
        std::size_t n = 0;
        for (auto b : bits_) n += (b == 0);
        return n;
    }

    friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;

private:
    std::size_t vars_ = 0;
    std::size_t length_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class MaskStrategy { span, independent };

struct MaskConfig {
    MaskStrategy strategy = MaskStrategy::span;
    double r = 0.15;    // target masked fraction
    double l_m = 3.0;   // mean masked run length
    double p = 0.15;    // Bernoulli rate for independent masking

    /// Mean visible run length, (1 - r) / r * l_m.
    [[nodiscard]] double l_u() const { return (1.0 - r) / r * l_m; }

    void validate() const {
        if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("mask ratio r must lie in (0, 1)");
        if (!(l_m >= 1.0)) throw std::invalid_argument("mean masked length l_m must be >= 1");
        if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("Bernoulli rate p must lie in (0, 1)");
    }
};

/// Per-variable alternating chain of masked and visible runs with geometric
/// lengths on {1, 2, ...} (means l_m and l_u). The chain starts masked with
/// probability r; runs are truncated at `length`.
template <typename Rng>
MaskMatrix sample_span_mask(std::size_t vars, std::size_t length, const MaskConfig& cfg, Rng& rng) {
    cfg.validate();
    MaskMatrix m(vars, length, 1);
    std::geometric_distribution<std::size_t> masked_len(1.0 / cfg.l_m);
    std::geometric_distribution<std::size_t> visible_len(1.0 / cfg.l_u());
    std::bernoulli_distribution start_masked(cfg.r);
    for (std::size_t v = 0; v < vars; ++v) {
        bool masked = start_masked(rng);
        std::size_t t = 0;
        while (t < length) {
            const std::size_t run = 1 + (masked ? masked_len(rng) : visible_len(rng));
            const std::size_t end = std::min(length, t + run);
            for (; t < end; ++t) m(v, t) = masked ? 0 : 1;
            masked = !masked;
        }
    }
    return m;
}

/// Each cell masked independently with probability p.
template <typename Rng>
MaskMatrix sample_independent_mask(std::size_t vars, std::size_t length, double p, Rng& rng) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("Bernoulli rate p must lie in (0, 1)");
    MaskMatrix m(vars, length, 1);
    std::bernoulli_distribution masked(p);
    for (std::size_t v = 0; v < vars; ++v)
        for (std::size_t t = 0; t < length; ++t) m(v, t) = masked(rng) ? 0 : 1;
    return m;
}

template <typename Rng>
MaskMatrix sample_mask(std::size_t vars, std::size_t length, const MaskConfig& cfg, Rng& rng) {
    return cfg.strategy == MaskStrategy::span ? sample_span_mask(vars, length, cfg, rng)
                                              : sample_independent_mask(vars, length, cfg.p, rng);
}

/// 1 - m.
inline MaskMatrix complement(const MaskMatrix& m) {
    MaskMatrix out(m.vars(), m.length());
    for (std::size_t v = 0; v < m.vars(); ++v)
        for (std::size_t t = 0; t < m.length(); ++t) out(v, t) = static_cast<std::uint8_t>(1 - m(v, t));
    return out;
}

/// x (V, T) elementwise times m; masked cells become exactly zero (signed
/// like the product, so x * m + x * (1 - m) reproduces x bit for bit).
template <typename S>
Tensor<S> apply_mask(const Tensor<S>& x, const MaskMatrix& m) {
    if (x.rank() != 2 || x.dim(0) != m.vars() || x.dim(1) != m.length())
        throw ShapeError("apply_mask: series " + shape_str(x.shape()) + " vs mask [" + std::to_string(m.vars()) + "," +
                         std::to_string(m.length()) + "]");
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * static_cast<S>(m.bits()[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Per-(sample, step) seed so masks are reproducible regardless of batch order.
inline std::uint64_t mask_seed(std::uint64_t global_seed, std::string_view sample_id, std::uint64_t step) {
    return splitmix64(splitmix64(global_seed ^ fnv1a(sample_id)) ^ splitmix64(step));
}

// ---------------------------------------------------------------------------
// Statistics

struct RunHistogram {
    std::map<std::size_t, std::size_t> counts;  // run length -> number of runs

    [[nodiscard]] std::size_t runs() const {
        std::size_t n = 0;
        for (const auto& [len, c] : counts) n += c;
        return n;
    }
    [[nodiscard]] double mean() const {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& [len, c] : counts) {
            s += static_cast<double>(len * c);
            n += c;
        }
        return n ? s / static_cast<double>(n) : 0.0;
    }
};

struct MaskReport {
    std::size_t cells = 0;
    std::size_t masked = 0;
    RunHistogram masked_runs, visible_runs;                    // every run
    RunHistogram interior_masked_runs, interior_visible_runs;  // runs touching neither end of a row

    [[nodiscard]] double masked_fraction() const {
        return cells ? static_cast<double>(masked) / static_cast<double>(cells) : 0.0;
    }
};

inline MaskReport mask_stats(std::span<const MaskMatrix> masks) {
    if (masks.empty()) throw std::invalid_argument("mask_stats: empty collection");
    MaskReport rep;
    for (const auto& m : masks) {
        rep.cells += m.vars() * m.length();
        rep.masked += m.masked_count();
        for (std::size_t v = 0; v < m.vars(); ++v) {
            const auto row = m.row(v);
            std::size_t start = 0;
            while (start < row.size()) {
                std::size_t end = start;
                while (end < row.size() && row[end] == row[start]) ++end;
                const std::size_t len = end - start;
                const bool interior = start > 0 && end < row.size();
                if (row[start] == 0) {
                    ++rep.masked_runs.counts[len];
                    if (interior) ++rep.interior_masked_runs.counts[len];
                } else {
                    ++rep.visible_runs.counts[len];
                    if (interior) ++rep.interior_visible_runs.counts[len];
                }
                start = end;
            }
        }
    }
    return rep;
}

inline MaskReport mask_stats(const MaskMatrix& m) { return mask_stats(std::span<const MaskMatrix>(&m, 1)); }

}  // namespace dmae
