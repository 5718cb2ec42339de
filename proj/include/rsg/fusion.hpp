#pragma once

#include <optional>
#include <variant>

#include "rsg/gates.hpp"
#include "rsg/ssm.hpp"

// Per-stage fusion of an RGB feature map with an auxiliary-modality feature
// map, both [B,H,W,d]. The global branch runs two parallel state-space
// streams whose readouts are mixed through reliability gates; the local
// branch (LCGM) cross-modulates depthwise-filtered local responses.

namespace rsg {

enum class FusionKind { Concat, Add, CrossAttention, CrossMamba, Rsgmb };

inline const char* fusion_name(FusionKind k) {
    switch (k) {
        case FusionKind::Concat: return "concat";
        case FusionKind::Add: return "add";
        case FusionKind::CrossAttention: return "cross_attention";
        case FusionKind::CrossMamba: return "cross_mamba";
        case FusionKind::Rsgmb: return "rsgmb";
    }
    return "?";
}

inline FusionKind fusion_from_name(const std::string& s) {
    if (s == "concat") return FusionKind::Concat;
    if (s == "add") return FusionKind::Add;
    if (s == "cross_attention") return FusionKind::CrossAttention;
    if (s == "cross_mamba") return FusionKind::CrossMamba;
    if (s == "rsgmb") return FusionKind::Rsgmb;
    throw ConfigError("unknown fusion tag: " + s);
}

// Captured gate maps from the latest forward (values, no grad path).
template <typename S>
struct GateMaps {
    Tensor<S> g_u_rgb, g_u_x, g_c;  // each [B, L, 1]
};

struct RsgmbOptions {
    int64_t d_inner = 0;      // 0 -> same as d
    int64_t n_state = 8;
    int64_t rank = 0;         // 0 -> dense projections
    bool use_g_u = true;
    bool use_g_c = true;
    double out_init = 0.1;    // W scale of the out-projection; 0 = exact identity at init
};

// Reliability-aware self-gated state-space fusion block. Two per-modality
// streams are discretized and scanned in parallel over the flattened raster
// (forward and reversed, averaged); the readout matrices are scaled by the
// uncertainty/consistency gates before the scan readout, the fused token
// output is the sum of the two stream readouts, and a zero-initialised
// out-projection plus the RGB residual make the block an identity at init.
template <typename S>
class RsgmBlock {
public:
    RsgmBlock() = default;
    RsgmBlock(Tape<S>& tape, const std::string& name, int64_t d, const RsgmbOptions& opt,
              uint64_t seed)
        : d_(d), opt_(opt), name_(name) {
        int64_t di = opt.d_inner > 0 ? opt.d_inner : d;
        opt_.d_inner = di;
        norm_rgb_ = LayerNorm<S>(tape, name + ".norm_rgb", d, seed);
        norm_x_ = LayerNorm<S>(tape, name + ".norm_x", d, seed);
        auto proj = [&](const std::string& n, int64_t a, int64_t b, double scale) {
            return opt.rank > 0 ? Projection<S>::lowrank(tape, n, a, b,
                                                         std::min<int64_t>(opt.rank, std::min(a, b)),
                                                         seed, scale)
                                : Projection<S>::dense(tape, n, a, b, seed, scale);
        };
        proj_in_rgb_ = proj(name + ".in_rgb", d, di, 1.0);
        proj_in_x_ = proj(name + ".in_x", d, di, 1.0);
        proj_out_ = proj(name + ".out", di, d, opt.out_init);
        ssm_rgb_ = SsmParams<S>(tape, name + ".ssm_rgb", di, opt.n_state, seed);
        ssm_x_ = SsmParams<S>(tape, name + ".ssm_x", di, opt.n_state, seed);
        if (opt.use_g_u) {
            gate_u_rgb_ = UncertaintyGate<S>(tape, name + ".g_u_rgb", di, seed);
            gate_u_x_ = UncertaintyGate<S>(tape, name + ".g_u_x", di, seed);
        }
        if (opt.use_g_c) gate_c_ = ConsistencyGate<S>(tape, name + ".g_c", di, seed);
    }

    Tensor<S> forward(const Tensor<S>& e_rgb, const Tensor<S>& e_x) {
        if (e_rgb.shape() != e_x.shape() || e_rgb.rank() != 4 || e_rgb.dim(3) != d_)
            throw DimError("rsgmb: inputs must both be [B,H,W," + std::to_string(d_) + "]");
        int64_t B = e_rgb.dim(0), H = e_rgb.dim(1), W = e_rgb.dim(2), L = H * W;

        Tensor<S> r = reshape(e_rgb, {B, L, d_});
        Tensor<S> x = reshape(e_x, {B, L, d_});
        Tensor<S> f_rgb = proj_in_rgb_.forward(norm_rgb_.forward(r));
        Tensor<S> f_x = proj_in_x_.forward(norm_x_.forward(x));

        Tensor<S> g_u_rgb = gate_value(gate_u_rgb_, f_rgb, B, L, S(1));
        Tensor<S> g_u_x = gate_value(gate_u_x_, f_x, B, L, S(1));
        Tensor<S> g_c = opt_.use_g_c ? gate_c_.forward(f_rgb, f_x)
                                     : Tensor<S>::full({B, L, 1}, S(0.5));
#ifdef RSG_TEST_HOOKS
        if (override_g_u_rgb) g_u_rgb = Tensor<S>::full({B, L, 1}, S(*override_g_u_rgb));
        if (override_g_u_x) g_u_x = Tensor<S>::full({B, L, 1}, S(*override_g_u_x));
        if (override_g_c) g_c = Tensor<S>::full({B, L, 1}, S(*override_g_c));
#endif
        if (capture_gates) last_gates_ = GateMaps<S>{g_u_rgb.detach(), g_u_x.detach(), g_c.detach()};

        ScanParams<S> sp_rgb = discretize(ssm_rgb_, f_rgb);
        ScanParams<S> sp_x = discretize(ssm_x_, f_x);
        auto [c_eff_rgb, c_eff_x] = compose_effective_c(g_u_rgb, g_u_x, g_c, sp_rgb.c, sp_x.c);
        sp_rgb.c = c_eff_rgb;
        sp_x.c = c_eff_x;

        // forward raster
        Tensor<S> y_fwd = add(scan_sequential(sp_rgb, f_rgb).y, scan_sequential(sp_x, f_x).y);
        // reversed raster: the discretization is per-token, so flipping the
        // operators and inputs along L and un-flipping y is an exact reverse scan
        ScanParams<S> rp_rgb{flip(sp_rgb.a_bar, 1), flip(sp_rgb.b_bar, 1), flip(sp_rgb.c, 1),
                             sp_rgb.d_skip, sp_rgb.delta};
        ScanParams<S> rp_x{flip(sp_x.a_bar, 1), flip(sp_x.b_bar, 1), flip(sp_x.c, 1), sp_x.d_skip,
                           sp_x.delta};
        Tensor<S> y_bwd = add(scan_sequential(rp_rgb, flip(f_rgb, 1)).y,
                              scan_sequential(rp_x, flip(f_x, 1)).y);
        Tensor<S> y = affine(add(y_fwd, flip(y_bwd, 1)), S(0.5), S(0));

        Tensor<S> out = add(proj_out_.forward(y), r);
        return reshape(out, {B, H, W, d_});
    }

    void collect(ParamList<S>& out) const {
        norm_rgb_.collect(out);
        norm_x_.collect(out);
        proj_in_rgb_.collect(out);
        proj_in_x_.collect(out);
        ssm_rgb_.collect(out);
        ssm_x_.collect(out);
        if (opt_.use_g_u) {
            gate_u_rgb_.collect(out);
            gate_u_x_.collect(out);
        }
        if (opt_.use_g_c) gate_c_.collect(out);
        proj_out_.collect(out);
    }

    bool capture_gates = false;
    GateMaps<S> last_gates_;
#ifdef RSG_TEST_HOOKS
    std::optional<double> override_g_u_rgb, override_g_u_x, override_g_c;
#endif

    int64_t d_ = 0;
    RsgmbOptions opt_;
    LayerNorm<S> norm_rgb_, norm_x_;
    Projection<S> proj_in_rgb_, proj_in_x_, proj_out_;
    SsmParams<S> ssm_rgb_, ssm_x_;
    UncertaintyGate<S> gate_u_rgb_, gate_u_x_;
    ConsistencyGate<S> gate_c_;
    std::string name_;

private:
    Tensor<S> gate_value(const UncertaintyGate<S>& g, const Tensor<S>& f, int64_t B, int64_t L,
                         S off_value) {
        return opt_.use_g_u ? g.forward(f) : Tensor<S>::full({B, L, 1}, off_value);
    }
};

// Local cross-gated modulation: project both modalities into a reduced space,
// self-gate them with a shallow conv + sigmoid, refine with a depthwise conv,
// cross-multiply the branches and add the projected cross terms back onto the
// RGB feature. Zero auxiliary input annihilates both cross terms exactly.
template <typename S>
class LcgmBlock {
public:
    LcgmBlock() = default;
    LcgmBlock(Tape<S>& tape, const std::string& name, int64_t d, int64_t d_loc, uint64_t seed,
              double out_init = 0.1)
        : d_(d), d_loc_(d_loc), name_(name) {
        lin_rgb_ = Linear<S>(tape, name + ".lin_rgb", d, d_loc, seed);
        lin_x_ = Linear<S>(tape, name + ".lin_x", d, d_loc, seed);
        gate_conv_rgb_ = Conv2d<S>(tape, name + ".gate_conv_rgb", d_loc, d_loc, 3, 1, 1, 1, seed);
        gate_conv_x_ = Conv2d<S>(tape, name + ".gate_conv_x", d_loc, d_loc, 3, 1, 1, 1, seed);
        dconv_rgb_ = Conv2d<S>(tape, name + ".dconv_rgb", d_loc, d_loc, 3, 1, 1,
                               static_cast<int>(d_loc), seed);
        dconv_x_ = Conv2d<S>(tape, name + ".dconv_x", d_loc, d_loc, 3, 1, 1,
                             static_cast<int>(d_loc), seed);
        double ps = out_init / std::sqrt(static_cast<double>(d_loc));
        proj_rx_ = Linear<S>(tape, name + ".proj_rx", d_loc, d, seed, true, ps);
        proj_xr_ = Linear<S>(tape, name + ".proj_xr", d_loc, d, seed, true, ps);
        if (out_init == 0.0) {
            proj_rx_.zero_init();
            proj_xr_.zero_init();
        }
    }

    Tensor<S> forward(const Tensor<S>& e_rgb, const Tensor<S>& e_x) {
        if (e_rgb.shape() != e_x.shape() || e_rgb.rank() != 4 || e_rgb.dim(3) != d_)
            throw DimError("lcgm: inputs must both be [B,H,W," + std::to_string(d_) + "]");
        Tensor<S> m_rgb = to_nchw(lin_rgb_.forward(e_rgb));
        Tensor<S> m_x = to_nchw(lin_x_.forward(e_x));
        Tensor<S> mh_rgb = dconv_rgb_.forward(mul(m_rgb, sigmoid(gate_conv_rgb_.forward(m_rgb))));
        Tensor<S> mh_x = dconv_x_.forward(mul(m_x, sigmoid(gate_conv_x_.forward(m_x))));
        Tensor<S> cross_rx = to_bhwc(mul(mh_rgb, mh_x));
        Tensor<S> cross_xr = to_bhwc(mul(mh_x, mh_rgb));
        return add(e_rgb, add(proj_rx_.forward(cross_rx), proj_xr_.forward(cross_xr)));
    }

    void collect(ParamList<S>& out) const {
        lin_rgb_.collect(out);
        lin_x_.collect(out);
        gate_conv_rgb_.collect(out);
        gate_conv_x_.collect(out);
        dconv_rgb_.collect(out);
        dconv_x_.collect(out);
        proj_rx_.collect(out);
        proj_xr_.collect(out);
    }

    int64_t d_ = 0, d_loc_ = 0;
    Linear<S> lin_rgb_, lin_x_;
    Conv2d<S> gate_conv_rgb_, gate_conv_x_, dconv_rgb_, dconv_x_;
    Linear<S> proj_rx_, proj_xr_;
    std::string name_;
};

// Channel concat + 1x1 projection back to d.
template <typename S>
class ConcatFusion {
public:
    ConcatFusion() = default;
    ConcatFusion(Tape<S>& tape, const std::string& name, int64_t d, uint64_t seed)
        : d_(d), proj_(tape, name + ".proj", 2 * d, d, seed), name_(name) {}

    Tensor<S> forward(const Tensor<S>& e_rgb, const Tensor<S>& e_x) {
        if (e_rgb.shape() != e_x.shape()) throw DimError("concat fusion: shape mismatch");
        return proj_.forward(concat<S>({e_rgb, e_x}, 3));
    }

    void collect(ParamList<S>& out) const { proj_.collect(out); }

    int64_t d_ = 0;
    Linear<S> proj_;
    std::string name_;
};

// Single-head scaled dot-product: queries from RGB tokens, keys/values from
// the auxiliary tokens, residual back onto RGB.
template <typename S>
class CrossAttentionFusion {
public:
    CrossAttentionFusion() = default;
    CrossAttentionFusion(Tape<S>& tape, const std::string& name, int64_t d, uint64_t seed)
        : d_(d),
          wq_(tape, name + ".wq", d, d, seed, false),
          wk_(tape, name + ".wk", d, d, seed, false),
          wv_(tape, name + ".wv", d, d, seed, false),
          name_(name) {}

    Tensor<S> forward(const Tensor<S>& e_rgb, const Tensor<S>& e_x) {
        if (e_rgb.shape() != e_x.shape() || e_rgb.rank() != 4)
            throw DimError("cross attention: inputs must be [B,H,W,d]");
        int64_t B = e_rgb.dim(0), H = e_rgb.dim(1), W = e_rgb.dim(2);
        int64_t L = H * W;
        Tensor<S> r = reshape(e_rgb, {B, L, d_});
        Tensor<S> x = reshape(e_x, {B, L, d_});
        Tensor<S> q = wq_.forward(r);
        Tensor<S> k = wk_.forward(x);
        Tensor<S> v = wv_.forward(x);
        Tensor<S> logits =
            affine(matmul(q, permute(k, {0, 2, 1})), S(1.0 / std::sqrt(double(d_))), S(0));
        Tensor<S> att = softmax_lastdim(logits);
        Tensor<S> out = add(r, matmul(att, v));
        return reshape(out, e_rgb.shape());
    }

    void collect(ParamList<S>& out) const {
        wq_.collect(out);
        wk_.collect(out);
        wv_.collect(out);
    }

    int64_t d_ = 0;
    Linear<S> wq_, wk_, wv_;
    std::string name_;
};

// One stage's fusion: a global variant plus, optionally, the local branch.
// cross_mamba is the ungated exchange baseline: the rsgmb pipeline with both
// gates frozen at their neutral values (g_u = 1, g_c = 0.5).
template <typename S>
class StageFusion {
public:
    StageFusion() = default;
    StageFusion(Tape<S>& tape, const std::string& name, int64_t d, FusionKind kind, bool with_lcgm,
                int64_t d_loc, const RsgmbOptions& rsgmb_opt, uint64_t seed,
                double lcgm_out_init = 0.1)
        : kind_(kind), with_lcgm_(with_lcgm) {
        switch (kind) {
            case FusionKind::Concat:
                concat_ = ConcatFusion<S>(tape, name + ".concat", d, seed);
                break;
            case FusionKind::Add:
                break;
            case FusionKind::CrossAttention:
                attn_ = CrossAttentionFusion<S>(tape, name + ".xattn", d, seed);
                break;
            case FusionKind::CrossMamba: {
                RsgmbOptions o = rsgmb_opt;
                o.use_g_u = false;
                o.use_g_c = false;
                rsgmb_ = RsgmBlock<S>(tape, name + ".rsgmb", d, o, seed);
                break;
            }
            case FusionKind::Rsgmb:
                rsgmb_ = RsgmBlock<S>(tape, name + ".rsgmb", d, rsgmb_opt, seed);
                break;
        }
        if (with_lcgm) lcgm_ = LcgmBlock<S>(tape, name + ".lcgm", d, d_loc, seed, lcgm_out_init);
    }

    Tensor<S> forward(const Tensor<S>& e_rgb, const Tensor<S>& e_x) {
        Tensor<S> global;
        switch (kind_) {
            case FusionKind::Concat: global = concat_.forward(e_rgb, e_x); break;
            case FusionKind::Add: global = add(e_rgb, e_x); break;
            case FusionKind::CrossAttention: global = attn_.forward(e_rgb, e_x); break;
            case FusionKind::CrossMamba:
            case FusionKind::Rsgmb: global = rsgmb_.forward(e_rgb, e_x); break;
        }
        if (!with_lcgm_) return global;
        return add(global, lcgm_.forward(e_rgb, e_x));
    }

    void collect(ParamList<S>& out) const {
        switch (kind_) {
            case FusionKind::Concat: concat_.collect(out); break;
            case FusionKind::Add: break;
            case FusionKind::CrossAttention: attn_.collect(out); break;
            case FusionKind::CrossMamba:
            case FusionKind::Rsgmb: rsgmb_.collect(out); break;
        }
        if (with_lcgm_) lcgm_.collect(out);
    }

    FusionKind kind_ = FusionKind::Add;
    bool with_lcgm_ = false;
    RsgmBlock<S> rsgmb_;
    LcgmBlock<S> lcgm_;
    ConcatFusion<S> concat_;
    CrossAttentionFusion<S> attn_;
};

}  // namespace rsg
