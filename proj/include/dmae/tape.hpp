// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace dmae {

/// A named learnable tensor (or a non-trainable buffer such as running
/// statistics). Gradients accumulate into `grad` after a tape's backward pass.
template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool trainable = true;
    bool frozen = false;

    void zero_grad() {
        if (grad.shape() != value.shape())
            grad = Tensor<S>(value.shape());
        else
            grad.fill(S{0});
    }
};

/// Owns every parameter of a model. Addresses are stable for the store's
/// lifetime, so layers hold raw pointers into it.
template <typename S>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Parameter<S>& add(std::string name, Tensor<S> value, bool trainable = true) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<S>>();
        p->name = name;
        p->value = std::move(value);
        p->trainable = trainable;
        p->zero_grad();
        index_.emplace(std::move(name), items_.size());
        items_.push_back(std::move(p));
        return *items_.back();
    }

    [[nodiscard]] Parameter<S>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }
    [[nodiscard]] const Parameter<S>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] Parameter<S>& operator[](std::size_t i) { return *items_[i]; }
    [[nodiscard]] const Parameter<S>& operator[](std::size_t i) const { return *items_[i]; }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.cbegin(); }
    auto end() const { return items_.cend(); }

    void zero_grad() {
        for (auto& p : items_) p->zero_grad();
    }

    /// Number of trainable scalars.
    [[nodiscard]] std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& p : items_)
            if (p->trainable) n += p->value.size();
        return n;
    }

    [[nodiscard]] std::vector<Tensor<S>> snapshot() const {
        std::vector<Tensor<S>> out;
        out.reserve(items_.size());
        for (const auto& p : items_) out.push_back(p->value);
        return out;
    }

    void restore(const std::vector<Tensor<S>>& snap) {
        if (snap.size() != items_.size()) throw std::invalid_argument("snapshot size mismatch");
        for (std::size_t i = 0; i < items_.size(); ++i) {
            items_[i]->value.require_same_shape(snap[i], "restore");
            items_[i]->value = snap[i];
        }
    }

private:
    std::vector<std::unique_ptr<Parameter<S>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename S>
class Tape;

/// Handle to a value recorded on a tape.
template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor<S>& value() const { return tape->value(id); }
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] bool requires_grad() const { return tape->requires_grad(id); }
    [[nodiscard]] const Tensor<S>& grad() const { return tape->grad(id); }
};

/// Reverse-mode recording of one forward evaluation. A tape is single-use:
/// build the graph, call backward once, read gradients.
template <typename S>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<S>& grad_out)>;

    explicit Tape(bool checked = false, std::uint64_t seed = 0) : checked_(checked), rng_(seed) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<S> constant(Tensor<S> value) {
        check_finite(value, "constant");
        nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
        return {this, nodes_.size() - 1};
    }

    /// Leaf bound to a parameter. Binding the same parameter twice returns the
    /// same node, so shared weights share one gradient accumulator.
    Var<S> param(Parameter<S>& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return {this, it->second};
        const bool req = p.trainable && !p.frozen;
        nodes_.push_back(Node{p.value, {}, req, {}, &p});
        bound_.emplace(&p, nodes_.size() - 1);
        return {this, nodes_.size() - 1};
    }

    /// Record an op output. The node needs a gradient only if grad mode is on
    /// and some input needs one; otherwise the backward closure is dropped.
    Var<S> record(Tensor<S> value, std::initializer_list<Var<S>> inputs, BackwardFn fn,
                  const char* op = "op") {
        check_finite(value, op);
        bool req = false;
        if (grad_enabled_)
            for (const auto& in : inputs) req = req || requires_grad(in.id);
        nodes_.push_back(Node{std::move(value), {}, req, req ? std::move(fn) : BackwardFn{}, nullptr});
        return {this, nodes_.size() - 1};
    }

    [[nodiscard]] const Tensor<S>& value(std::size_t id) const { return nodes_.at(id).value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    [[nodiscard]] const Tensor<S>& grad(std::size_t id) const { return nodes_.at(id).grad; }
    [[nodiscard]] bool needs_grad(const Var<S>& v) const { return requires_grad(v.id); }

    void accumulate(const Var<S>& v, const Tensor<S>& g) {
        Node& n = nodes_.at(v.id);
        if (!n.requires_grad) return;
        if (n.grad.empty() && !n.value.empty())
            n.grad = g;
        else
            n.grad += g;
    }

    /// Backpropagate from a scalar output and add leaf gradients into the
    /// bound parameters' `grad` tensors.
    void backward(const Var<S>& out) {
        Node& root = nodes_.at(out.id);
        if (root.value.size() != 1) throw ShapeError("backward expects a scalar output");
        if (!root.requires_grad) return;
        root.grad = Tensor<S>(root.value.shape(), S{1});
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backward) {
                BackwardFn fn = std::move(n.backward);
                fn(*this, nodes_[i].grad);
            }
        }
        for (auto& [p, id] : bound_) {
            const Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (p->grad.shape() != p->value.shape()) p->zero_grad();
            p->grad += n.grad;
        }
    }

    [[nodiscard]] bool grad_enabled() const noexcept { return grad_enabled_; }
    void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
    [[nodiscard]] bool checked() const noexcept { return checked_; }
    [[nodiscard]] std::mt19937_64& rng() noexcept { return rng_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        bool requires_grad;
        BackwardFn backward;
        Parameter<S>* param;
    };

    void check_finite(const Tensor<S>& v, const char* op) const {
        if (checked_ && !v.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
    }

    std::vector<Node> nodes_;
    std::unordered_map<Parameter<S>*, std::size_t> bound_;
    bool grad_enabled_ = true;
    bool checked_;
    std::mt19937_64 rng_;
};

/// Ops recorded while a NoGradScope is alive contribute values only.
template <typename S>
class NoGradScope {
public:
    explicit NoGradScope(Tape<S>& t) : tape_(t), prev_(t.grad_enabled()) { t.set_grad_enabled(false); }
    ~NoGradScope() { tape_.set_grad_enabled(prev_); }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<S>& tape_;
    bool prev_;
};

}  // namespace dmae
