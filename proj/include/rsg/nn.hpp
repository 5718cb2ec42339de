#pragma once

#include "rsg/ops.hpp"

// Thin parameter-holding modules. Construction takes a tape, a name prefix and
// a seed; each parameter draws its init from a stream keyed by (seed, name),
// so identically named parameters are identical across model variants.

namespace rsg {

template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

template <typename S>
Tensor<S> init_param(Tape<S>& tape, const std::string& name, const Shape& shape, uint64_t seed,
                     double stddev) {
    Rng rng(mix_seed(seed, hash_str(name.c_str())));
    Tensor<S> t = stddev == 0.0 ? Tensor<S>::zeros(shape) : Tensor<S>::randn(shape, rng, stddev);
    return tape.leaf_of(t, true);
}

template <typename S>
class Linear {
public:
    Linear() = default;
    Linear(Tape<S>& tape, const std::string& name, int64_t d_in, int64_t d_out, uint64_t seed,
           bool with_bias = true, double stddev = -1.0) {
        if (stddev < 0) stddev = 1.0 / std::sqrt(static_cast<double>(d_in));
        w_ = init_param(tape, name + ".w", {d_out, d_in}, seed, stddev);
        if (with_bias) b_ = init_param(tape, name + ".b", {d_out}, seed, 0.0);
        name_ = name;
    }

    Tensor<S> forward(const Tensor<S>& x) const { return linear(x, w_, b_); }

    void zero_init() {
        std::fill(w_.values().begin(), w_.values().end(), S(0));
        if (b_.defined()) std::fill(b_.values().begin(), b_.values().end(), S(0));
    }

    void collect(ParamList<S>& out) const {
        out.push_back({name_ + ".w", w_});
        if (b_.defined()) out.push_back({name_ + ".b", b_});
    }

    Tensor<S> w_, b_;
    std::string name_;
};

template <typename S>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(Tape<S>& tape, const std::string& name, int64_t d, uint64_t seed) : name_(name) {
        gamma_ = tape.leaf_of(Tensor<S>::ones({d}), true);
        beta_ = init_param(tape, name + ".beta", {d}, seed, 0.0);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return layernorm(x, gamma_, beta_, S(1e-5)); }

    void collect(ParamList<S>& out) const {
        out.push_back({name_ + ".gamma", gamma_});
        out.push_back({name_ + ".beta", beta_});
    }

    Tensor<S> gamma_, beta_;
    std::string name_;
};

template <typename S>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(Tape<S>& tape, const std::string& name, int64_t c_in, int64_t c_out, int k, int stride,
           int pad, int groups, uint64_t seed, bool with_bias = true, double bias_stddev = 0.0)
        : stride_(stride), pad_(pad), groups_(groups), name_(name) {
        double fan_in = static_cast<double>(c_in / groups * k * k);
        w_ = init_param(tape, name + ".w", {c_out, c_in / groups, k, k}, seed,
                        std::sqrt(2.0 / fan_in));
        if (with_bias) b_ = init_param(tape, name + ".b", {c_out}, seed, bias_stddev);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return conv2d(x, w_, b_, groups_, stride_, pad_);
    }

    void zero_init() {
        std::fill(w_.values().begin(), w_.values().end(), S(0));
        if (b_.defined()) std::fill(b_.values().begin(), b_.values().end(), S(0));
    }

    void collect(ParamList<S>& out) const {
        out.push_back({name_ + ".w", w_});
        if (b_.defined()) out.push_back({name_ + ".b", b_});
    }

    int stride_ = 1, pad_ = 0, groups_ = 1;
    Tensor<S> w_, b_;
    std::string name_;
};

// [B,C,H,W] <-> [B,H,W,C]
template <typename S>
Tensor<S> to_bhwc(const Tensor<S>& x) {
    return permute(x, {0, 2, 3, 1});
}

template <typename S>
Tensor<S> to_nchw(const Tensor<S>& x) {
    return permute(x, {0, 3, 1, 2});
}

template <typename S>
int64_t param_count(const ParamList<S>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

}  // namespace rsg
