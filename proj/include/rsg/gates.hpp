#pragma once

#include "rsg/nn.hpp"
#include "rsg/ops.hpp"

// Reliability gating: low-rank projections with a learnable scale, per-token
// uncertainty and consistency gates, and the effective readout composition
// that turns gate values into cross-state readout strength.

namespace rsg {

// W ~ alpha * W_up * W_down, rank r: r*(d_in + d_out) + 1 parameters.
template <typename S>
class LowRankProjection {
public:
    LowRankProjection() = default;
    // up_scale scales the W_up init; 0 starts the projection as the zero map.
    LowRankProjection(Tape<S>& tape, const std::string& name, int64_t d_in, int64_t d_out,
                      int64_t r, uint64_t seed, double up_scale = 1.0)
        : d_in_(d_in), d_out_(d_out), r_(r), name_(name) {
        if (r < 1 || r > std::min(d_in, d_out))
            throw ConfigError("low-rank projection: rank " + std::to_string(r) + " out of range");
        w_down_ = init_param(tape, name + ".w_down", {r, d_in}, seed,
                             1.0 / std::sqrt(static_cast<double>(d_in)));
        w_up_ = init_param(tape, name + ".w_up", {d_out, r}, seed,
                           up_scale / std::sqrt(static_cast<double>(r)));
        alpha_ = tape.leaf_of(Tensor<S>::ones({1}), true);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        if (x.dim(x.rank() - 1) != d_in_)
            throw DimError("low-rank projection: last extent " + std::to_string(x.dim(x.rank() - 1)) +
                           " != " + std::to_string(d_in_));
        return mul(alpha_, linear(linear(x, w_down_), w_up_));
    }

    int64_t param_count() const { return r_ * (d_in_ + d_out_) + 1; }

    void collect(ParamList<S>& out) const {
        out.push_back({name_ + ".w_down", w_down_});
        out.push_back({name_ + ".w_up", w_up_});
        out.push_back({name_ + ".alpha", alpha_});
    }

    Tensor<S> w_down_, w_up_, alpha_;
    int64_t d_in_ = 0, d_out_ = 0, r_ = 0;
    std::string name_;
};

// Either a low-rank or a plain dense linear map behind one interface; the
// ablation harness swaps them per config.
template <typename S>
class Projection {
public:
    Projection() = default;

    static Projection lowrank(Tape<S>& tape, const std::string& name, int64_t d_in, int64_t d_out,
                              int64_t r, uint64_t seed, double up_scale = 1.0) {
        Projection p;
        p.low_ = LowRankProjection<S>(tape, name, d_in, d_out, r, seed, up_scale);
        p.is_lowrank_ = true;
        return p;
    }

    static Projection dense(Tape<S>& tape, const std::string& name, int64_t d_in, int64_t d_out,
                            uint64_t seed, double scale = 1.0) {
        Projection p;
        double stddev = scale / std::sqrt(static_cast<double>(d_in));
        p.dense_ = Linear<S>(tape, name, d_in, d_out, seed, /*with_bias=*/false, stddev);
        if (scale == 0.0) p.dense_.zero_init();
        p.is_lowrank_ = false;
        return p;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return is_lowrank_ ? low_.forward(x) : dense_.forward(x);
    }

    void collect(ParamList<S>& out) const {
        if (is_lowrank_)
            low_.collect(out);
        else
            dense_.collect(out);
    }

    bool is_lowrank_ = false;
    LowRankProjection<S> low_;
    Linear<S> dense_;
};

// sigma(MLP(LN(f))) -> per-token scalar in (0, 1). One instance per modality;
// hidden width d/4, small-weight init so the gate starts near 0.5.
template <typename S>
class UncertaintyGate {
public:
    UncertaintyGate() = default;
    UncertaintyGate(Tape<S>& tape, const std::string& name, int64_t d, uint64_t seed)
        : norm_(tape, name + ".ln", d, seed),
          fc1_(tape, name + ".fc1", d, std::max<int64_t>(1, d / 4), seed, true, 0.02),
          fc2_(tape, name + ".fc2", std::max<int64_t>(1, d / 4), 1, seed, true, 0.02),
          name_(name) {}

    Tensor<S> forward(const Tensor<S>& f) const {
        return sigmoid(fc2_.forward(relu(fc1_.forward(norm_.forward(f)))));
    }

    void zero_init() {
        fc1_.zero_init();
        fc2_.zero_init();
    }

    void collect(ParamList<S>& out) const {
        norm_.collect(out);
        fc1_.collect(out);
        fc2_.collect(out);
    }

    LayerNorm<S> norm_;
    Linear<S> fc1_, fc2_;
    std::string name_;
};

// sigma(MLP(LN([f_rgb, f_x, |f_rgb - f_x|]))) -> per-token scalar in (0, 1).
template <typename S>
class ConsistencyGate {
public:
    ConsistencyGate() = default;
    ConsistencyGate(Tape<S>& tape, const std::string& name, int64_t d, uint64_t seed)
        : norm_(tape, name + ".ln", 3 * d, seed),
          fc1_(tape, name + ".fc1", 3 * d, std::max<int64_t>(1, d / 4), seed, true, 0.02),
          fc2_(tape, name + ".fc2", std::max<int64_t>(1, d / 4), 1, seed, true, 0.02),
          name_(name) {}

    Tensor<S> forward(const Tensor<S>& f_rgb, const Tensor<S>& f_x) const {
        if (f_rgb.shape() != f_x.shape()) throw DimError("consistency gate: shape mismatch");
        Tensor<S> packed = concat<S>({f_rgb, f_x, rsg::abs(sub(f_rgb, f_x))},
                                     static_cast<int>(f_rgb.rank()) - 1);
        return sigmoid(fc2_.forward(relu(fc1_.forward(norm_.forward(packed)))));
    }

    void zero_init() {
        fc1_.zero_init();
        fc2_.zero_init();
    }

    void collect(ParamList<S>& out) const {
        norm_.collect(out);
        fc1_.collect(out);
        fc2_.collect(out);
    }

    LayerNorm<S> norm_;
    Linear<S> fc1_, fc2_;
    std::string name_;
};

// Effective cross-state readout matrices:
//   C_eff_rgb = g_u_rgb * (1 - g_c) * C_rgb
//   C_eff_x   = g_u_x   *      g_c  * C_x
// Gates are [B,L,1] and broadcast over the state dimension. At g_c = 0 the
// auxiliary readout vanishes and the block falls back to single-modality
// modeling; at g_c = 1 the auxiliary stream reads out at full strength.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> compose_effective_c(const Tensor<S>& g_u_rgb,
                                                    const Tensor<S>& g_u_x, const Tensor<S>& g_c,
                                                    const Tensor<S>& c_rgb,
                                                    const Tensor<S>& c_x) {
    Tensor<S> c_eff_rgb = mul(mul(g_u_rgb, one_minus(g_c)), c_rgb);
    Tensor<S> c_eff_x = mul(mul(g_u_x, g_c), c_x);
    return {c_eff_rgb, c_eff_x};
}

}  // namespace rsg
