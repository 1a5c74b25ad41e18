// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset ingestion, per-variable standardization, splitting and synthetic
// generators.
//
// CSV layout, one row per (sample, variable):
//   sample_id,variable_index,v_0,v_1,...,v_{T-1}
// Labels: `sample_id,label`. A header line whose first cell is `sample_id` is
// accepted and skipped.

#include "dmae/tensor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dmae {

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TaskKind { classification, regression, forecasting };

inline const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::classification: return "classification";
        case TaskKind::regression: return "regression";
        case TaskKind::forecasting: return "forecasting";
    }
    return "?";
}

/// Per-sample targets. Classification uses `classes` (indices into
/// `class_names`); regression and forecasting use `targets`, shaped (B, n)
/// with n = 1 or V * horizon.
struct Labels {
    TaskKind kind = TaskKind::classification;
    std::vector<std::string> class_names;
    std::vector<int> classes;
    Tensor<double> targets;
    std::size_t horizon = 0;
};

/// Values are (B, V, T).
struct SeriesBatch {
    Tensor<double> values;
    std::vector<std::string> sample_ids;
    std::optional<Labels> labels;

    [[nodiscard]] std::size_t size() const { return values.empty() ? 0 : values.dim(0); }
    [[nodiscard]] std::size_t n_vars() const { return values.empty() ? 0 : values.dim(1); }
    [[nodiscard]] std::size_t length() const { return values.empty() ? 0 : values.dim(2); }

    /// Copy of sample b as a (V, T) tensor.
    [[nodiscard]] Tensor<double> sample(std::size_t b) const {
        const std::size_t n = n_vars() * length();
        std::vector<double> v(values.ptr() + b * n, values.ptr() + (b + 1) * n);
        return Tensor<double>({n_vars(), length()}, std::move(v));
    }

    [[nodiscard]] SeriesBatch subset(const std::vector<std::size_t>& idx) const {
        SeriesBatch out;
        const std::size_t n = n_vars() * length();
        std::vector<double> v;
        v.reserve(idx.size() * n);
        for (std::size_t i : idx) {
            v.insert(v.end(), values.ptr() + i * n, values.ptr() + (i + 1) * n);
            out.sample_ids.push_back(sample_ids.at(i));
        }
        out.values = Tensor<double>({idx.size(), n_vars(), length()}, std::move(v));
        if (labels) {
            Labels l;
            l.kind = labels->kind;
            l.class_names = labels->class_names;
            l.horizon = labels->horizon;
            if (!labels->classes.empty())
                for (std::size_t i : idx) l.classes.push_back(labels->classes.at(i));
            if (!labels->targets.empty()) {
                const std::size_t w = labels->targets.dim(1);
                std::vector<double> tv;
                for (std::size_t i : idx) tv.insert(tv.end(), labels->targets.ptr() + i * w, labels->targets.ptr() + (i + 1) * w);
                l.targets = Tensor<double>({idx.size(), w}, std::move(tv));
            }
            out.labels = std::move(l);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    for (auto& c : cells) {
        while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
        while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
    }
    return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace detail

/// Parse a series CSV. Errors name the 1-based data row (header excluded).
inline SeriesBatch load_csv(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> id_index;
    std::vector<std::vector<std::vector<double>>> rows;  // [sample][var] -> series
    std::optional<std::size_t> T;
    std::size_t row = 0;
    bool first = true;
    for (const auto& line : lines) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (first) {
            first = false;
            if (cells[0] == "sample_id") continue;
        }
        ++row;
        const std::string where = " at row " + std::to_string(row);
        if (cells.size() < 3) throw LoadError("malformed row (expected sample_id,variable_index,values...)" + where);
        const auto vi = detail::parse_double(cells[1]);
        if (!vi || *vi < 0 || std::floor(*vi) != *vi) throw LoadError("non-numeric variable index" + where);
        const std::size_t len = cells.size() - 2;
        if (T && *T != len) throw LoadError("inconsistent length" + where);
        T = len;
        std::vector<double> series(len);
        for (std::size_t i = 0; i < len; ++i) {
            const auto v = detail::parse_double(cells[i + 2]);
            if (!v) throw LoadError("non-numeric cell '" + std::string(cells[i + 2]) + "'" + where);
            if (!std::isfinite(*v)) throw LoadError("non-finite value" + where);
            series[i] = *v;
        }
        const std::string id(cells[0]);
        auto [it, inserted] = id_index.emplace(id, ids.size());
        if (inserted) {
            ids.push_back(id);
            rows.emplace_back();
        }
        auto& vars = rows[it->second];
        const auto v = static_cast<std::size_t>(*vi);
        if (v != vars.size())
            throw LoadError("variable index " + std::to_string(v) + " out of order for sample '" + id + "'" + where);
        vars.push_back(std::move(series));
    }
    if (rows.empty()) throw LoadError("no data rows in " + path.string());
    const std::size_t V = rows.front().size();
    for (std::size_t s = 0; s < rows.size(); ++s)
        if (rows[s].size() != V)
            throw LoadError("sample '" + ids[s] + "' has " + std::to_string(rows[s].size()) + " variables, expected " +
                            std::to_string(V));
    SeriesBatch out;
    std::vector<double> values;
    values.reserve(rows.size() * V * *T);
    for (const auto& vars : rows)
        for (const auto& s : vars) values.insert(values.end(), s.begin(), s.end());
    out.values = Tensor<double>({rows.size(), V, *T}, std::move(values));
    out.sample_ids = std::move(ids);
    return out;
}

inline void save_csv(const SeriesBatch& batch, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    const std::size_t V = batch.n_vars(), T = batch.length();
    out << "sample_id,variable_index";
    for (std::size_t t = 0; t < T; ++t) out << ",v_" << t;
    out << '\n';
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t v = 0; v < V; ++v) {
            out << batch.sample_ids[b] << ',' << v;
            for (std::size_t t = 0; t < T; ++t) out << ',' << detail::format_double(batch.values.at(b, v, t));
            out << '\n';
        }
}

/// Raw `sample_id,label` pairs in file order.
inline std::vector<std::pair<std::string, std::string>> read_label_pairs(const std::filesystem::path& path) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t row = 0;
    bool first = true;
    for (const auto& line : detail::read_lines(path)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (first) {
            first = false;
            if (cells[0] == "sample_id") continue;
        }
        ++row;
        if (cells.size() != 2) throw LoadError("malformed label row at row " + std::to_string(row));
        out.emplace_back(std::string(cells[0]), std::string(cells[1]));
    }
    return out;
}

/// Attach labels to `batch`. Class strings map to indices in sorted order of
/// `class_names` (defaults to the sorted distinct labels in the file).
inline void attach_labels(SeriesBatch& batch, const std::vector<std::pair<std::string, std::string>>& pairs,
                          TaskKind kind, std::vector<std::string> class_names = {}) {
    std::map<std::string, std::string> by_id(pairs.begin(), pairs.end());
    Labels l;
    l.kind = kind;
    if (kind == TaskKind::classification) {
        if (class_names.empty()) {
            std::set<std::string> distinct;
            for (const auto& [id, lab] : pairs) distinct.insert(lab);
            class_names.assign(distinct.begin(), distinct.end());
        }
        std::sort(class_names.begin(), class_names.end());
        l.class_names = class_names;
        for (const auto& id : batch.sample_ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw LoadError("no label for sample '" + id + "'");
            auto pos = std::lower_bound(class_names.begin(), class_names.end(), it->second);
            if (pos == class_names.end() || *pos != it->second) throw LoadError("unknown class '" + it->second + "'");
            l.classes.push_back(static_cast<int>(pos - class_names.begin()));
        }
    } else if (kind == TaskKind::regression) {
        std::vector<double> t;
        for (const auto& id : batch.sample_ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw LoadError("no label for sample '" + id + "'");
            const auto v = detail::parse_double(it->second);
            if (!v || !std::isfinite(*v)) throw LoadError("non-numeric regression target for '" + id + "'");
            t.push_back(*v);
        }
        const std::size_t n = t.size();
        l.targets = Tensor<double>({n, 1}, std::move(t));
    } else {
        throw LoadError("forecasting targets come from a horizon CSV; use attach_horizon");
    }
    batch.labels = std::move(l);
}

inline void load_labels(SeriesBatch& batch, const std::filesystem::path& path, TaskKind kind,
                        std::vector<std::string> class_names = {}) {
    attach_labels(batch, read_label_pairs(path), kind, std::move(class_names));
}

/// Forecasting targets: a second series CSV holding the (V, O) horizon block.
inline void attach_horizon(SeriesBatch& batch, const SeriesBatch& horizon) {
    if (horizon.n_vars() != batch.n_vars()) throw LoadError("horizon block variable count mismatch");
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < horizon.size(); ++i) idx.emplace(horizon.sample_ids[i], i);
    const std::size_t w = horizon.n_vars() * horizon.length();
    std::vector<double> t;
    t.reserve(batch.size() * w);
    for (const auto& id : batch.sample_ids) {
        auto it = idx.find(id);
        if (it == idx.end()) throw LoadError("no horizon block for sample '" + id + "'");
        t.insert(t.end(), horizon.values.ptr() + it->second * w, horizon.values.ptr() + (it->second + 1) * w);
    }
    Labels l;
    l.kind = TaskKind::forecasting;
    l.horizon = horizon.length();
    l.targets = Tensor<double>({batch.size(), w}, std::move(t));
    batch.labels = std::move(l);
}

inline void save_labels(const SeriesBatch& batch, const std::filesystem::path& path) {
    if (!batch.labels) throw LoadError("batch has no labels");
    const auto& l = *batch.labels;
    std::ofstream out(path);
    out << "sample_id,label\n";
    for (std::size_t b = 0; b < batch.size(); ++b) {
        out << batch.sample_ids[b] << ',';
        if (l.kind == TaskKind::classification)
            out << l.class_names.at(static_cast<std::size_t>(l.classes[b]));
        else
            out << detail::format_double(l.targets.at(b, 0));
        out << '\n';
    }
}

/// Horizon block of a forecasting batch as a series batch (B, V, O).
inline SeriesBatch horizon_batch(const SeriesBatch& batch) {
    if (!batch.labels || batch.labels->kind != TaskKind::forecasting) throw LoadError("batch has no horizon targets");
    SeriesBatch h;
    h.sample_ids = batch.sample_ids;
    h.values = batch.labels->targets.reshaped({batch.size(), batch.n_vars(), batch.labels->horizon});
    return h;
}

// ---------------------------------------------------------------------------
// npy manifest: {"values": "x.npy", "sample_ids": [...], "labels": "y.csv"}
// with a little-endian float64 or float32 C-order array of shape (B, V, T).

namespace detail {

inline Tensor<double> read_npy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    char magic[6];
    in.read(magic, 6);
    if (std::string_view(magic, 6) != "\x93NUMPY") throw LoadError("not an npy file: " + path.string());
    unsigned char ver[2];
    in.read(reinterpret_cast<char*>(ver), 2);
    std::uint32_t hlen = 0;
    if (ver[0] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        hlen = b[0] | (b[1] << 8);
    } else {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        hlen = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::string header(hlen, '\0');
    in.read(header.data(), hlen);
    const bool f8 = header.find("'<f8'") != std::string::npos;
    const bool f4 = header.find("'<f4'") != std::string::npos;
    if (!f8 && !f4) throw LoadError("npy dtype must be <f8 or <f4");
    if (header.find("'fortran_order': True") != std::string::npos) throw LoadError("npy must be C-order");
    const auto lp = header.find('('), rp = header.find(')');
    Shape shape;
    std::stringstream ss(header.substr(lp + 1, rp - lp - 1));
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (tok.find_first_not_of(' ') != std::string::npos) shape.push_back(std::stoul(tok));
    if (shape.size() != 3) throw LoadError("npy array must be rank 3 (B, V, T)");
    std::vector<double> v(shape_size(shape));
    if (f8) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    } else {
        std::vector<float> f(v.size());
        in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
        std::copy(f.begin(), f.end(), v.begin());
    }
    if (!in) throw LoadError("truncated npy payload: " + path.string());
    for (double x : v)
        if (!std::isfinite(x)) throw LoadError("non-finite value in " + path.string());
    return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace detail

enum class DataFormat { csv, npy_manifest };

inline SeriesBatch load_dataset(const std::filesystem::path& path, DataFormat format = DataFormat::csv) {
    if (!std::filesystem::exists(path)) throw LoadError("no such file: " + path.string());
    if (format == DataFormat::csv) {
        SeriesBatch b = load_csv(path);
        auto labels = path;
        labels.replace_filename(path.stem().string() + "_labels.csv");
        if (std::filesystem::exists(labels)) load_labels(b, labels, TaskKind::classification);
        return b;
    }
    std::ifstream in(path);
    nlohmann::json m;
    try {
        in >> m;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("bad manifest: ") + e.what());
    }
    const auto dir = path.parent_path();
    SeriesBatch b;
    b.values = detail::read_npy(dir / m.at("values").get<std::string>());
    if (m.contains("sample_ids")) {
        b.sample_ids = m["sample_ids"].get<std::vector<std::string>>();
        if (b.sample_ids.size() != b.size()) throw LoadError("sample_ids length does not match array");
    } else {
        for (std::size_t i = 0; i < b.size(); ++i) b.sample_ids.push_back(std::to_string(i));
    }
    if (m.contains("labels")) load_labels(b, dir / m["labels"].get<std::string>(), TaskKind::classification);
    return b;
}

// ---------------------------------------------------------------------------
// Standardization

enum class ScaleRule { std_dev, variance };

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;
    static constexpr double floor = 1e-8;

    [[nodiscard]] nlohmann::json to_json() const { return {{"mean", mean}, {"scale", scale}}; }
    static Standardizer from_json(const nlohmann::json& j) {
        return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
    }
};

/// Per-variable mean and population standard deviation over every sample and
/// timestep of `train`. `ScaleRule::variance` divides by the variance instead.
inline Standardizer fit_standardizer(const SeriesBatch& train, ScaleRule rule = ScaleRule::std_dev) {
    if (train.size() == 0) throw std::invalid_argument("fit_standardizer: empty training split");
    const std::size_t B = train.size(), V = train.n_vars(), T = train.length();
    Standardizer s{std::vector<double>(V), std::vector<double>(V)};
    const double n = static_cast<double>(B * T);
    for (std::size_t v = 0; v < V; ++v) {
        double m = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t) m += train.values.at(b, v, t);
        m /= n;
        double var = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t) {
                const double d = train.values.at(b, v, t) - m;
                var += d * d;
            }
        var /= n;
        s.mean[v] = m;
        s.scale[v] = std::max(rule == ScaleRule::std_dev ? std::sqrt(var) : var, Standardizer::floor);
    }
    return s;
}

inline SeriesBatch apply_standardizer(const SeriesBatch& x, const Standardizer& s) {
    if (s.mean.size() != x.n_vars()) throw ShapeError("standardizer has " + std::to_string(s.mean.size()) +
                                                      " variables, batch has " + std::to_string(x.n_vars()));
    SeriesBatch out = x;
    for (std::size_t b = 0; b < x.size(); ++b)
        for (std::size_t v = 0; v < x.n_vars(); ++v)
            for (std::size_t t = 0; t < x.length(); ++t)
                out.values.at(b, v, t) = (x.values.at(b, v, t) - s.mean[v]) / s.scale[v];
    return out;
}

inline SeriesBatch destandardize(const SeriesBatch& x, const Standardizer& s) {
    if (s.mean.size() != x.n_vars()) throw ShapeError("standardizer/batch variable count mismatch");
    SeriesBatch out = x;
    for (std::size_t b = 0; b < x.size(); ++b)
        for (std::size_t v = 0; v < x.n_vars(); ++v)
            for (std::size_t t = 0; t < x.length(); ++t)
                out.values.at(b, v, t) = x.values.at(b, v, t) * s.scale[v] + s.mean[v];
    return out;
}

/// Standardize a forecasting batch's horizon targets with the input statistics.
inline void standardize_horizon(SeriesBatch& x, const Standardizer& s) {
    if (!x.labels || x.labels->kind != TaskKind::forecasting) return;
    auto& t = x.labels->targets;
    const std::size_t O = x.labels->horizon;
    for (std::size_t b = 0; b < x.size(); ++b)
        for (std::size_t v = 0; v < x.n_vars(); ++v)
            for (std::size_t o = 0; o < O; ++o) {
                auto& c = t[b * x.n_vars() * O + v * O + o];
                c = (c - s.mean[v]) / s.scale[v];
            }
}

// ---------------------------------------------------------------------------
// Splitting

struct DatasetSplit {
    SeriesBatch train, val, test;
    std::uint64_t seed = 0;
};

/// Shuffled split. Val and test get floor(n * fraction) samples each; the
/// remainder goes to train.
inline DatasetSplit split_dataset(const SeriesBatch& d, double f_train, double f_val, double f_test,
                                  std::uint64_t seed) {
    if (!(f_train > 0 && f_val > 0 && f_test > 0) || std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must be positive and sum to 1");
    const std::size_t n = d.size();
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f_val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f_test + 1e-9));
    if (n_val == 0 || n_test == 0 || n_val + n_test >= n)
        throw std::invalid_argument("split of " + std::to_string(n) + " samples leaves an empty partition");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                                  idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
    for (auto* v : {&train, &val, &test}) std::sort(v->begin(), v->end());
    return {d.subset(train), d.subset(val), d.subset(test), seed};
}

/// Two-way split used when a dataset ships with its own test set.
inline std::pair<SeriesBatch, SeriesBatch> split_holdout(const SeriesBatch& d, double f_holdout, std::uint64_t seed) {
    const std::size_t n = d.size();
    const auto n_hold = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f_holdout + 1e-9));
    if (n_hold == 0 || n_hold >= n) throw std::invalid_argument("holdout split leaves an empty partition");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> hold(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> rest(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
    std::sort(hold.begin(), hold.end());
    std::sort(rest.begin(), rest.end());
    return {d.subset(rest), d.subset(hold)};
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind { sinusoid_mix, ar_process, two_class_frequency };

struct SyntheticOptions {
    double amplitude = 1.0;
    double noise = 0.0;           // additive Gaussian noise std (sinusoid-mix, two-class)
    double ar_coefficient = 0.5;  // ar-process
};

/// - sinusoid-mix: each variable is a sum of two sinusoids with random
///   frequency (1..4 cycles per window), phase and weight.
/// - ar-process: x_t = a * x_{t-1} + e_t, e_t ~ N(0, 1).
/// - two-class-frequency: label i % 2; class 0 oscillates at 2 cycles per
///   window, class 1 at 6, with random phase per variable plus noise.
inline SeriesBatch generate_synthetic(SyntheticKind kind, std::size_t v, std::size_t t, std::size_t n,
                                      std::uint64_t seed, const SyntheticOptions& opt = {}) {
    if (v == 0 || t == 0 || n == 0) throw std::invalid_argument("generate_synthetic: v, t, n must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    SeriesBatch out;
    out.values = Tensor<double>({n, v, t});
    for (std::size_t b = 0; b < n; ++b) {
        out.sample_ids.push_back("s" + std::to_string(b));
        for (std::size_t j = 0; j < v; ++j) {
            switch (kind) {
                case SyntheticKind::sinusoid_mix: {
                    const double f1 = 1.0 + 3.0 * unif(rng), f2 = 1.0 + 3.0 * unif(rng);
                    const double p1 = two_pi * unif(rng), p2 = two_pi * unif(rng);
                    const double w2 = 0.5 * unif(rng);
                    for (std::size_t i = 0; i < t; ++i) {
                        const double x = static_cast<double>(i) / static_cast<double>(t);
                        double val = std::sin(two_pi * f1 * x + p1) + w2 * std::sin(two_pi * f2 * x + p2);
                        out.values.at(b, j, i) = opt.amplitude * val + (opt.noise > 0 ? opt.noise * gauss(rng) : 0.0);
                    }
                    break;
                }
                case SyntheticKind::ar_process: {
                    double prev = 0.0;
                    for (std::size_t i = 0; i < t; ++i) {
                        prev = opt.ar_coefficient * prev + gauss(rng);
                        out.values.at(b, j, i) = prev;
                    }
                    break;
                }
                case SyntheticKind::two_class_frequency: {
                    const double f = (b % 2 == 0) ? 2.0 : 6.0;
                    const double ph = two_pi * unif(rng);
                    const double amp = opt.amplitude * (0.8 + 0.4 * unif(rng));
                    for (std::size_t i = 0; i < t; ++i) {
                        const double x = static_cast<double>(i) / static_cast<double>(t);
                        out.values.at(b, j, i) = amp * std::sin(two_pi * f * x + ph) +
                                                 (opt.noise > 0 ? opt.noise * gauss(rng) : 0.0);
                    }
                    break;
                }
            }
        }
    }
    if (kind == SyntheticKind::two_class_frequency) {
        Labels l;
        l.kind = TaskKind::classification;
        l.class_names = {"0", "1"};
        for (std::size_t b = 0; b < n; ++b) l.classes.push_back(static_cast<int>(b % 2));
        out.labels = std::move(l);
    }
    return out;
}

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "sinusoid-mix") return SyntheticKind::sinusoid_mix;
    if (s == "ar-process") return SyntheticKind::ar_process;
    if (s == "two-class-frequency") return SyntheticKind::two_class_frequency;
    throw std::invalid_argument("unknown synthetic kind: " + s);
}

}  // namespace dmae
