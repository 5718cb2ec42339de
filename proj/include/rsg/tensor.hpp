#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>

#include "rsg/common.hpp"
#include "rsg/rng.hpp"

namespace rsg {

template <typename S>
class Tape;

// Dense row-major tensor. Copying a Tensor copies the handle, not the buffer;
// clone() deep-copies. A tensor participating in autodiff carries a non-owning
// pointer to its tape; gradients accumulate into the tensor's own buffer.
template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> v;
    std::vector<S> g;  // allocated on first use
    bool requires_grad = false;
    Tape<S>* tape = nullptr;
};

template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    static Tensor zeros(const Shape& shape) {
        Tensor t;
        t.n_ = std::make_shared<TensorNode<S>>();
        t.n_->shape = shape;
        t.n_->v.assign(static_cast<size_t>(numel_of(shape)), S(0));
        return t;
    }

    static Tensor full(const Shape& shape, S value) {
        Tensor t = zeros(shape);
        std::fill(t.n_->v.begin(), t.n_->v.end(), value);
        return t;
    }

    static Tensor ones(const Shape& shape) { return full(shape, S(1)); }

    static Tensor scalar(S value) { return full(Shape{}, value); }

    static Tensor from(const Shape& shape, std::vector<S> values) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw DimError("tensor: " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
        Tensor t;
        t.n_ = std::make_shared<TensorNode<S>>();
        t.n_->shape = shape;
        t.n_->v = std::move(values);
        return t;
    }

    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(shape);
        for (auto& x : t.n_->v) x = static_cast<S>(rng.normal(0.0, stddev));
        return t;
    }

    static Tensor rand(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
        Tensor t = zeros(shape);
        for (auto& x : t.n_->v) x = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return static_cast<int64_t>(n_->v.size()); }
    size_t rank() const { return n_->shape.size(); }
    int64_t dim(size_t i) const { return n_->shape[i]; }

    std::vector<S>& values() { return n_->v; }
    const std::vector<S>& values() const { return n_->v; }
    S* data() { return n_->v.data(); }
    const S* data() const { return n_->v.data(); }

    S& at(std::initializer_list<int64_t> idx) { return n_->v[flat_index(idx)]; }
    S at(std::initializer_list<int64_t> idx) const { return n_->v[flat_index(idx)]; }

    S item() const {
        if (numel() != 1) throw ContractError("item(): tensor is not scalar");
        return n_->v[0];
    }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    Tape<S>* tape() const { return n_ ? n_->tape : nullptr; }

    // Grad buffer, zero-initialised on first access.
    std::vector<S>& grad() {
        if (n_->g.empty()) n_->g.assign(n_->v.size(), S(0));
        return n_->g;
    }
    const std::vector<S>& grad_view() const { return n_->g; }
    bool has_grad() const { return !n_->g.empty(); }
    void zero_grad() {
        if (!n_->g.empty()) std::fill(n_->g.begin(), n_->g.end(), S(0));
    }

    Tensor clone() const {
        Tensor t = zeros(shape());
        t.n_->v = n_->v;
        return t;
    }

    // Value copy with no tape/grad attachment.
    Tensor detach() const { return clone(); }

    std::shared_ptr<TensorNode<S>> node() const { return n_; }

    void bind(Tape<S>* tape, bool requires_grad) {
        n_->tape = tape;
        n_->requires_grad = requires_grad;
    }

    void check_finite(const char* op) const {
        for (S x : n_->v)
            if (!std::isfinite(static_cast<double>(x)))
                throw NumericalError(std::string(op) + ": non-finite value in output");
    }

private:
    int64_t flat_index(std::initializer_list<int64_t> idx) const {
        if (idx.size() != n_->shape.size()) throw DimError("at(): index rank mismatch");
        int64_t flat = 0;
        size_t i = 0;
        for (int64_t k : idx) {
            flat = flat * n_->shape[i] + k;
            ++i;
        }
        return flat;
    }

    std::shared_ptr<TensorNode<S>> n_;
};

// Reverse-mode tape. Ops append nodes in execution order; backward() sweeps
// them once in reverse and then discards them (retain=true keeps the nodes so
// a sweep can be replayed).
template <typename S>
class Tape {
public:
    Tensor<S> leaf(const Shape& shape, bool requires_grad = true) {
        Tensor<S> t = Tensor<S>::zeros(shape);
        t.bind(this, requires_grad);
        return t;
    }

    // Adopt an existing tensor's storage as a leaf of this tape.
    Tensor<S> leaf_of(Tensor<S> t, bool requires_grad = true) {
        t.bind(this, requires_grad);
        return t;
    }

    void record(std::vector<Tensor<S>> inputs, Tensor<S> output, std::function<void()> backward) {
        if (!recording_) return;
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
    }

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }

    void backward(Tensor<S>& loss, bool retain = false) {
        if (loss.numel() != 1) throw ContractError("backward: loss must be scalar");
        if (loss.tape() != this) throw ContractError("backward: loss is not on this tape");
        loss.grad()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->backward) it->backward();
        if (!retain) nodes_.clear();
    }

    void clear() { nodes_.clear(); }

    // Scoped no-record mode (function evaluation without graph growth).
    struct NoGrad {
        explicit NoGrad(Tape& t) : t_(t), prev_(t.recording_) { t_.recording_ = false; }
        ~NoGrad() { t_.recording_ = prev_; }
        Tape& t_;
        bool prev_;
    };

private:
    struct Node {
        std::vector<Tensor<S>> inputs;
        Tensor<S> output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
};

namespace detail {

// Tape/requires-grad propagation for op outputs.
template <typename S>
struct GradCtx {
    Tape<S>* tape = nullptr;
    bool rg = false;

    void see(const Tensor<S>& t) {
        if (!t.defined()) return;
        if (t.tape()) {
            if (tape && tape != t.tape()) throw ContractError("op inputs live on different tapes");
            tape = t.tape();
        }
        rg = rg || t.requires_grad();
    }
    bool active() const { return tape && rg && tape->recording(); }
    void attach(Tensor<S>& out) const {
        if (active()) out.bind(tape, true);
    }
};

}  // namespace detail

}  // namespace rsg
