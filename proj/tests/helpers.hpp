// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/dmae.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace dmae::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

/// Small model configuration used across tests.
inline ModelConfig tiny_config(std::size_t v = 3, std::size_t t = 8, NormKind norm = NormKind::batch) {
    ModelConfig c;
    c.n_vars = v;
    c.t_max = t;
    c.d_model = 16;
    c.n_blocks = 1;
    c.n_heads = 2;
    c.d_attn = 16;
    c.d_ffn = 32;
    c.fq_blocks = 1;
    c.norm = norm;
    c.seed = 11;
    return c;
}

inline std::vector<MaskMatrix> random_masks(std::size_t n, std::size_t v, std::size_t t, std::uint64_t seed,
                                            const MaskConfig& mc = {}) {
    std::mt19937_64 rng(seed);
    std::vector<MaskMatrix> out;
    while (out.size() < n) {
        auto m = sample_mask(v, t, mc, rng);
        if (m.masked_count() > 0) out.push_back(std::move(m));
    }
    return out;
}

inline std::vector<Parameter<double>*> all_params(Model<double>& m) {
    std::vector<Parameter<double>*> out;
    for (auto& p : m.params()) out.push_back(p.get());
    return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("dmae_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace dmae::testing
