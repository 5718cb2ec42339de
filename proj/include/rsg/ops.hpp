#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstring>

#include "rsg/tensor.hpp"

// Free-function op library over Tensor<S>. Every op computes its forward
// result eagerly and, when any input requires grad, records an exact backward
// rule on the shared tape. Iteration orders are fixed so that replaying a tape
// yields bit-identical gradients.

namespace rsg {

namespace detail {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

template <typename S>
inline void finite_guard(const Tensor<S>& t, const char* op) {
    if (finite_checks_enabled()) t.check_finite(op);
}

// ---- broadcasting ----------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw DimError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to a broadcast output shape, 0 on broadcast axes.
inline Shape broadcast_strides(const Shape& in, const Shape& out) {
    Shape st(out.size(), 0);
    Shape real = strides_of(in);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : real[i];
    return st;
}

// Visit every output index of `out_shape`; fn(flat_out, off_a, off_b).
template <typename F>
inline void for_broadcast2(const Shape& out_shape, const Shape& sa, const Shape& sb, F&& fn) {
    int64_t n = numel_of(out_shape);
    size_t r = out_shape.size();
    if (r == 0) {
        fn(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
        fn(flat, oa, ob);
        // odometer increment
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            idx[d]++;
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out_shape[d]) break;
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
}

}  // namespace detail

// ---- elementwise binary ----------------------------------------------------

namespace detail {

template <typename S, typename FwdF, typename BwdF>
Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b, FwdF fwd, BwdF bwd) {
    GradCtx<S> ctx;
    ctx.see(a);
    ctx.see(b);
    Tensor<S> out;
    const bool same = same_shape(a.shape(), b.shape());
    if (same) {
        out = Tensor<S>::zeros(a.shape());
        const S* pa = a.data();
        const S* pb = b.data();
        S* po = out.data();
        int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
        Shape os = broadcast_shape(a.shape(), b.shape(), name);
        out = Tensor<S>::zeros(os);
        Shape sa = broadcast_strides(a.shape(), os), sb = broadcast_strides(b.shape(), os);
        const S* pa = a.data();
        const S* pb = b.data();
        S* po = out.data();
        for_broadcast2(os, sa, sb,
                       [&](int64_t f, int64_t oa, int64_t ob) { po[f] = fwd(pa[oa], pb[ob]); });
    }
    finite_guard(out, name);
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a, b}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            S* ga = a.requires_grad() ? const_cast<Tensor<S>&>(a).grad().data() : nullptr;
            S* gb = b.requires_grad() ? const_cast<Tensor<S>&>(b).grad().data() : nullptr;
            const S* pa = a.data();
            const S* pb = b.data();
            if (same) {
                int64_t n = out.numel();
                for (int64_t i = 0; i < n; ++i) bwd(go[i], pa[i], pb[i], ga ? ga + i : nullptr,
                                                   gb ? gb + i : nullptr);
            } else {
                Shape os = out.shape();
                Shape sa = broadcast_strides(a.shape(), os), sb = broadcast_strides(b.shape(), os);
                for_broadcast2(os, sa, sb, [&](int64_t f, int64_t oa, int64_t ob) {
                    bwd(go[f], pa[oa], pb[ob], ga ? ga + oa : nullptr, gb ? gb + ob : nullptr);
                });
            }
        });
    }
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [](S g, S, S, S* ga, S* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; },
        [](S g, S, S, S* ga, S* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [](S g, S x, S y, S* ga, S* gb) {
            if (ga) *ga += g * y;
            if (gb) *gb += g * x;
        });
}

// ---- elementwise unary -----------------------------------------------------

namespace detail {

// fwd: x -> y; dfn(x, y) -> dy/dx
template <typename S, typename FwdF, typename DF>
Tensor<S> unary_op(const char* name, const Tensor<S>& a, FwdF fwd, DF dfn) {
    GradCtx<S> ctx;
    ctx.see(a);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    finite_guard(out, name);
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            std::vector<S>& ga = const_cast<Tensor<S>&>(a).grad();
            const S* pa = a.data();
            const S* py = out.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * dfn(pa[i], py[i]);
        });
    }
    return out;
}

template <typename S>
inline S stable_sigmoid(S x) {
    if (x >= S(0)) {
        S e = std::exp(-x);
        return S(1) / (S(1) + e);
    }
    S e = std::exp(x);
    return e / (S(1) + e);
}

template <typename S>
inline S stable_softplus(S x) {
    // log(1 + e^x) without overflow
    if (x > S(30)) return x;
    if (x < S(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

// (e^z - 1)/z with the analytic limit 1 at z = 0.
template <typename S>
inline S expm1_over(S z) {
    if (std::abs(static_cast<double>(z)) < 1e-4)
        return S(1) + z * (S(0.5) + z * (S(1.0 / 6.0) + z * S(1.0 / 24.0)));
    return std::expm1(z) / z;
}

template <typename S>
inline S expm1_over_d(S z) {
    if (std::abs(static_cast<double>(z)) < 1e-4)
        return S(0.5) + z * (S(1.0 / 3.0) + z * (S(0.125) + z * S(1.0 / 30.0)));
    return (std::exp(z) * (z - S(1)) + S(1)) / (z * z);
}

}  // namespace detail

template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
    return detail::unary_op<S>(
        "abs", a, [](S x) { return std::abs(x); },
        [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    return detail::unary_op<S>("exp", a, [](S x) { return std::exp(x); },
                               [](S, S y) { return y; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return detail::unary_op<S>("sigmoid", a, [](S x) { return detail::stable_sigmoid(x); },
                               [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
    return detail::unary_op<S>("softplus", a, [](S x) { return detail::stable_softplus(x); },
                               [](S x, S) { return detail::stable_sigmoid(x); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    return detail::unary_op<S>("relu", a, [](S x) { return x > S(0) ? x : S(0); },
                               [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// phi(z) = (exp(z) - 1)/z, the ZOH input-operator factor.
template <typename S>
Tensor<S> expm1_over(const Tensor<S>& a) {
    return detail::unary_op<S>("expm1_over", a, [](S x) { return detail::expm1_over(x); },
                               [](S x, S) { return detail::expm1_over_d(x); });
}

// scale*x + shift with compile-time constants (scalars, not tensors).
template <typename S>
Tensor<S> affine(const Tensor<S>& a, S scale, S shift) {
    return detail::unary_op<S>("affine", a, [=](S x) { return scale * x + shift; },
                               [=](S, S) { return scale; });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
    return affine(a, S(-1), S(0));
}

template <typename S>
Tensor<S> one_minus(const Tensor<S>& a) {
    return affine(a, S(-1), S(1));
}

// ---- reductions ------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    detail::GradCtx<S> ctx;
    ctx.see(a);
    S acc = S(0);
    for (S x : a.values()) acc += x;
    Tensor<S> out = Tensor<S>::scalar(acc);
    detail::finite_guard(out, "sum_all");
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a}, out, [=]() mutable {
            S g = out.grad()[0];
            std::vector<S>& ga = const_cast<Tensor<S>&>(a).grad();
            for (auto& v : ga) v += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return affine(sum_all(a), S(1) / S(a.numel()), S(0));
}

// ---- shape ops -------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& shape) {
    if (numel_of(shape) != a.numel())
        throw DimError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    detail::GradCtx<S> ctx;
    ctx.see(a);
    Tensor<S> out = Tensor<S>::from(shape, a.values());
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            std::vector<S>& ga = const_cast<Tensor<S>&>(a).grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes) {
    size_t r = a.rank();
    if (axes.size() != r) throw DimError("permute: axes rank mismatch");
    Shape os(r);
    for (size_t i = 0; i < r; ++i) os[i] = a.dim(axes[i]);
    detail::GradCtx<S> ctx;
    ctx.see(a);
    Tensor<S> out = Tensor<S>::zeros(os);
    Shape in_st = strides_of(a.shape());
    Shape perm_st(r);
    for (size_t i = 0; i < r; ++i) perm_st[i] = in_st[axes[i]];
    const S* pa = a.data();
    S* po = out.data();
    int64_t n = out.numel();
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t f = 0; f < n; ++f) {
        po[f] = pa[src];
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            idx[d]++;
            src += perm_st[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            src -= perm_st[d] * os[d];
        }
    }
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            std::vector<S>& ga = const_cast<Tensor<S>&>(a).grad();
            std::vector<int64_t> idx(r, 0);
            int64_t src = 0;
            for (int64_t f = 0; f < n; ++f) {
                ga[src] += go[f];
                for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
                    idx[d]++;
                    src += perm_st[d];
                    if (idx[d] < os[d]) break;
                    idx[d] = 0;
                    src -= perm_st[d] * os[d];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> flip(const Tensor<S>& a, int axis) {
    size_t r = a.rank();
    if (axis < 0) axis += static_cast<int>(r);
    detail::GradCtx<S> ctx;
    ctx.see(a);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    Shape st = strides_of(a.shape());
    int64_t ax_len = a.dim(axis), ax_st = st[axis];
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    int64_t inner = ax_st;  // elements to the right of axis
    const S* pa = a.data();
    S* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < ax_len; ++k) {
            const S* src = pa + (o * ax_len + k) * inner;
            S* dst = po + (o * ax_len + (ax_len - 1 - k)) * inner;
            std::memcpy(dst, src, sizeof(S) * static_cast<size_t>(inner));
        }
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            std::vector<S>& ga = const_cast<Tensor<S>&>(a).grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t k = 0; k < ax_len; ++k) {
                    const S* src = go.data() + (o * ax_len + (ax_len - 1 - k)) * inner;
                    S* dst = ga.data() + (o * ax_len + k) * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw DimError("concat: no inputs");
    size_t r = parts[0].rank();
    if (axis < 0) axis += static_cast<int>(r);
    Shape os = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw DimError("concat: rank mismatch");
        for (size_t i = 0; i < r; ++i)
            if (static_cast<int>(i) != axis && p.dim(i) != os[i])
                throw DimError("concat: shape mismatch off-axis");
        total += p.dim(axis);
    }
    os[axis] = total;
    detail::GradCtx<S> ctx;
    for (const auto& p : parts) ctx.see(p);
    Tensor<S> out = Tensor<S>::zeros(os);
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= os[i];
    int64_t inner = 1;
    for (size_t i = axis + 1; i < r; ++i) inner *= os[i];
    S* po = out.data();
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t len = p.dim(axis);
        const S* pp = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(po + (o * total + off) * inner, pp + o * len * inner,
                        sizeof(S) * static_cast<size_t>(len * inner));
        off += len;
    }
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record(parts, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            int64_t off = 0;
            for (const auto& p : parts) {
                int64_t len = p.dim(axis);
                if (p.requires_grad()) {
                    std::vector<S>& gp = const_cast<Tensor<S>&>(p).grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const S* src = go.data() + (o * total + off) * inner;
                        S* dst = gp.data() + o * len * inner;
                        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                }
                off += len;
            }
        });
    }
    return out;
}

// ---- matmul / linear -------------------------------------------------------

// a: [*, m, k] x b: [*, k, n] -> [*, m, n]; leading dims broadcast.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw DimError("matmul: inputs must have rank >= 2");
    int64_t m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
    int64_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (ka != kb)
        throw DimError("matmul: inner extents " + std::to_string(ka) + " vs " + std::to_string(kb));
    Shape ba(a.shape().begin(), a.shape().end() - 2), bb(b.shape().begin(), b.shape().end() - 2);
    Shape bo = detail::broadcast_shape(ba, bb, "matmul");
    Shape os = bo;
    os.push_back(m);
    os.push_back(n);

    detail::GradCtx<S> ctx;
    ctx.see(a);
    ctx.see(b);
    Tensor<S> out = Tensor<S>::zeros(os);

    int64_t batches = numel_of(bo);
    Shape sa = detail::broadcast_strides(ba, bo), sb = detail::broadcast_strides(bb, bo);
    // precompute per-batch offsets (in units of matrices)
    std::vector<int64_t> offa(batches), offb(batches);
    {
        size_t r = bo.size();
        std::vector<int64_t> idx(r, 0);
        int64_t oa = 0, ob = 0;
        for (int64_t f = 0; f < batches; ++f) {
            offa[f] = oa;
            offb[f] = ob;
            for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
                idx[d]++;
                oa += sa[d];
                ob += sb[d];
                if (idx[d] < bo[d]) break;
                idx[d] = 0;
                oa -= sa[d] * bo[d];
                ob -= sb[d] * bo[d];
            }
        }
    }
    // batch offsets are counted in matrices; convert to element offsets
    for (int64_t f = 0; f < batches; ++f) {
        offa[f] *= m * ka;
        offb[f] *= ka * n;
    }

    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t f = 0; f < batches; ++f) {
        detail::ECMap<S> A(pa + offa[f], m, ka);
        detail::ECMap<S> B(pb + offb[f], ka, n);
        detail::EMap<S> O(po + f * m * n, m, n);
        O.noalias() = A * B;
    }
    detail::finite_guard(out, "matmul");
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({a, b}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            const S* pa = a.data();
            const S* pb = b.data();
            if (a.requires_grad()) {
                std::vector<S>& ga = const_cast<Tensor<S>&>(a).grad();
                for (int64_t f = 0; f < batches; ++f) {
                    detail::ECMap<S> G(go.data() + f * m * n, m, n);
                    detail::ECMap<S> B(pb + offb[f], ka, n);
                    detail::EMap<S> GA(ga.data() + offa[f], m, ka);
                    GA.noalias() += G * B.transpose();
                }
            }
            if (b.requires_grad()) {
                std::vector<S>& gb = const_cast<Tensor<S>&>(b).grad();
                for (int64_t f = 0; f < batches; ++f) {
                    detail::ECMap<S> G(go.data() + f * m * n, m, n);
                    detail::ECMap<S> A(pa + offa[f], m, ka);
                    detail::EMap<S> GB(gb.data() + offb[f], ka, n);
                    GB.noalias() += A.transpose() * G;
                }
            }
        });
    }
    return out;
}

// x: [*, d_in] -> [*, d_out] with w: [d_out, d_in], optional bias [d_out].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = {}) {
    if (x.rank() < 1) throw DimError("linear: input rank 0");
    int64_t din = x.dim(x.rank() - 1);
    if (w.rank() != 2 || w.dim(1) != din)
        throw DimError("linear: weight " + shape_str(w.shape()) + " vs input last dim " +
                       std::to_string(din));
    int64_t dout = w.dim(0);
    int64_t rows = x.numel() / din;
    Shape os = x.shape();
    os.back() = dout;

    detail::GradCtx<S> ctx;
    ctx.see(x);
    ctx.see(w);
    if (bias.defined()) {
        if (bias.rank() != 1 || bias.dim(0) != dout) throw DimError("linear: bias shape");
        ctx.see(bias);
    }
    Tensor<S> out = Tensor<S>::zeros(os);
    {
        detail::ECMap<S> X(x.data(), rows, din);
        detail::ECMap<S> W(w.data(), dout, din);
        detail::EMap<S> O(out.data(), rows, dout);
        O.noalias() = X * W.transpose();
        if (bias.defined()) {
            Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> B(bias.data(), dout);
            O.rowwise() += B;
        }
    }
    detail::finite_guard(out, "linear");
    ctx.attach(out);
    if (ctx.active()) {
        std::vector<Tensor<S>> ins{x, w};
        if (bias.defined()) ins.push_back(bias);
        ctx.tape->record(ins, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            detail::ECMap<S> G(go.data(), rows, dout);
            if (x.requires_grad()) {
                std::vector<S>& gx = const_cast<Tensor<S>&>(x).grad();
                detail::EMap<S> GX(gx.data(), rows, din);
                detail::ECMap<S> W(w.data(), dout, din);
                GX.noalias() += G * W;
            }
            if (w.requires_grad()) {
                std::vector<S>& gw = const_cast<Tensor<S>&>(w).grad();
                detail::EMap<S> GW(gw.data(), dout, din);
                detail::ECMap<S> X(x.data(), rows, din);
                GW.noalias() += G.transpose() * X;
            }
            if (bias.defined() && bias.requires_grad()) {
                std::vector<S>& gb = const_cast<Tensor<S>&>(bias).grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < dout; ++c) gb[c] += go[r * dout + c];
            }
        });
    }
    return out;
}

// ---- layernorm -------------------------------------------------------------

// Normalises the last axis to zero mean / unit variance, then applies
// gamma/beta. eps guards the zero-variance row.
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                    S eps = S(1e-5)) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) == 0) throw DimError("layernorm: empty last axis");
    int64_t d = x.dim(x.rank() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw DimError("layernorm: gamma/beta must have " + std::to_string(d) + " entries");
    int64_t rows = x.numel() / d;

    detail::GradCtx<S> ctx;
    ctx.see(x);
    ctx.see(gamma);
    ctx.see(beta);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    // saved for backward
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto xhat = std::make_shared<std::vector<S>>(x.values().size());

    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pb = beta.data();
    S* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* row = px + r * d;
        S mean = S(0);
        for (int64_t i = 0; i < d; ++i) mean += row[i];
        mean /= S(d);
        S var = S(0);
        for (int64_t i = 0; i < d; ++i) {
            S c = row[i] - mean;
            var += c * c;
        }
        var /= S(d);
        S inv = S(1) / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (int64_t i = 0; i < d; ++i) {
            S xh = (row[i] - mean) * inv;
            (*xhat)[r * d + i] = xh;
            po[r * d + i] = xh * pg[i] + pb[i];
        }
    }
    detail::finite_guard(out, "layernorm");
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({x, gamma, beta}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            const S* pg = gamma.data();
            S* gx = x.requires_grad() ? const_cast<Tensor<S>&>(x).grad().data() : nullptr;
            S* gg = gamma.requires_grad() ? const_cast<Tensor<S>&>(gamma).grad().data() : nullptr;
            S* gb = beta.requires_grad() ? const_cast<Tensor<S>&>(beta).grad().data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const S* gout = go.data() + r * d;
                const S* xh = xhat->data() + r * d;
                S inv = (*inv_std)[r];
                S sum_dxh = S(0), sum_dxh_xh = S(0);
                for (int64_t i = 0; i < d; ++i) {
                    S dxh = gout[i] * pg[i];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[i];
                }
                if (gx) {
                    for (int64_t i = 0; i < d; ++i) {
                        S dxh = gout[i] * pg[i];
                        gx[r * d + i] +=
                            inv * (dxh - sum_dxh / S(d) - xh[i] * sum_dxh_xh / S(d));
                    }
                }
                if (gg)
                    for (int64_t i = 0; i < d; ++i) gg[i] += gout[i] * xh[i];
                if (gb)
                    for (int64_t i = 0; i < d; ++i) gb[i] += gout[i];
            }
        });
    }
    return out;
}

// ---- softmax (last axis) ---------------------------------------------------

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    int64_t d = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / d;
    detail::GradCtx<S> ctx;
    ctx.see(x);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const S* px = x.data();
    S* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* row = px + r * d;
        S m = row[0];
        for (int64_t i = 1; i < d; ++i) m = std::max(m, row[i]);
        S z = S(0);
        for (int64_t i = 0; i < d; ++i) {
            S e = std::exp(row[i] - m);
            po[r * d + i] = e;
            z += e;
        }
        for (int64_t i = 0; i < d; ++i) po[r * d + i] /= z;
    }
    detail::finite_guard(out, "softmax");
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({x}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            std::vector<S>& gx = const_cast<Tensor<S>&>(x).grad();
            const S* py = out.data();
            for (int64_t r = 0; r < rows; ++r) {
                S dot = S(0);
                for (int64_t i = 0; i < d; ++i) dot += go[r * d + i] * py[r * d + i];
                for (int64_t i = 0; i < d; ++i)
                    gx[r * d + i] += py[r * d + i] * (go[r * d + i] - dot);
            }
        });
    }
    return out;
}

// ---- conv2d ----------------------------------------------------------------

// x: [B,C,H,W], w: [O,C/g,kh,kw], optional bias [O]. Cross-correlation with
// symmetric zero padding; depthwise when groups == C == O. im2col + GEMM.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int groups,
                 int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw DimError("conv2d: x must be [B,C,H,W], w [O,C/g,kh,kw]");
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t O = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (groups < 1 || C % groups != 0 || O % groups != 0)
        throw DimError("conv2d: channels not divisible by groups");
    if (Cg != C / groups) throw DimError("conv2d: weight channel extent mismatch");
    if (stride < 1) throw DimError("conv2d: stride must be >= 1");
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (H + 2 * pad < kh || W + 2 * pad < kw) throw DimError("conv2d: kernel exceeds padded input");

    detail::GradCtx<S> ctx;
    ctx.see(x);
    ctx.see(w);
    if (bias.defined()) {
        if (bias.numel() != O) throw DimError("conv2d: bias shape");
        ctx.see(bias);
    }

    int64_t K = Cg * kh * kw;       // patch length per group
    int64_t P = B * Ho * Wo;        // output positions
    int64_t Og = O / groups;

    // column matrix per group: [P, K], built once, shared with backward
    auto cols = std::make_shared<std::vector<S>>(static_cast<size_t>(groups * P * K));
    const S* px = x.data();
    for (int g = 0; g < groups; ++g) {
        S* col = cols->data() + static_cast<int64_t>(g) * P * K;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    S* dst = col + ((b * Ho + oy) * Wo + ox) * K;
                    int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                    for (int64_t c = 0; c < Cg; ++c) {
                        const S* plane = px + ((b * C + g * Cg + c) * H) * W;
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            int64_t iy = iy0 + ky;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                int64_t ix = ix0 + kx;
                                *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                             ? plane[iy * W + ix]
                                             : S(0);
                            }
                        }
                    }
                }
    }

    Tensor<S> out = Tensor<S>::zeros({B, O, Ho, Wo});
    // GEMM per group into a [P, Og] scratch, then scatter to NCHW
    std::vector<S> scratch(static_cast<size_t>(P * Og));
    S* po = out.data();
    for (int g = 0; g < groups; ++g) {
        detail::ECMap<S> Col(cols->data() + static_cast<int64_t>(g) * P * K, P, K);
        detail::ECMap<S> Wt(w.data() + static_cast<int64_t>(g) * Og * K, Og, K);
        detail::EMap<S> Out2(scratch.data(), P, Og);
        Out2.noalias() = Col * Wt.transpose();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < Og; ++o) {
                S bval = bias.defined() ? bias.data()[g * Og + o] : S(0);
                S* dst = po + ((b * O + g * Og + o) * Ho) * Wo;
                const S* src = scratch.data() + (b * Ho * Wo) * Og + o;
                for (int64_t p = 0; p < Ho * Wo; ++p) dst[p] = src[p * Og] + bval;
            }
    }
    detail::finite_guard(out, "conv2d");
    ctx.attach(out);
    if (ctx.active()) {
        std::vector<Tensor<S>> ins{x, w};
        if (bias.defined()) ins.push_back(bias);
        ctx.tape->record(ins, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            // gather dOut to [P, Og] per group
            std::vector<S> g2(static_cast<size_t>(P * Og));
            std::vector<S> dcol(static_cast<size_t>(P * K));
            for (int g = 0; g < groups; ++g) {
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t o = 0; o < Og; ++o) {
                        const S* src = go.data() + ((b * O + g * Og + o) * Ho) * Wo;
                        S* dst = g2.data() + (b * Ho * Wo) * Og + o;
                        for (int64_t p = 0; p < Ho * Wo; ++p) dst[p * Og] = src[p];
                    }
                detail::ECMap<S> G2(g2.data(), P, Og);
                if (w.requires_grad()) {
                    std::vector<S>& gw = const_cast<Tensor<S>&>(w).grad();
                    detail::EMap<S> GW(gw.data() + static_cast<int64_t>(g) * Og * K, Og, K);
                    detail::ECMap<S> Col(cols->data() + static_cast<int64_t>(g) * P * K, P, K);
                    GW.noalias() += G2.transpose() * Col;
                }
                if (bias.defined() && bias.requires_grad()) {
                    std::vector<S>& gb = const_cast<Tensor<S>&>(bias).grad();
                    for (int64_t o = 0; o < Og; ++o) {
                        S acc = S(0);
                        for (int64_t p = 0; p < P; ++p) acc += g2[p * Og + o];
                        gb[g * Og + o] += acc;
                    }
                }
                if (x.requires_grad()) {
                    detail::EMap<S> DCol(dcol.data(), P, K);
                    detail::ECMap<S> Wt(w.data() + static_cast<int64_t>(g) * Og * K, Og, K);
                    DCol.noalias() = G2 * Wt;
                    // col2im scatter-add
                    std::vector<S>& gx = const_cast<Tensor<S>&>(x).grad();
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t oy = 0; oy < Ho; ++oy)
                            for (int64_t ox = 0; ox < Wo; ++ox) {
                                const S* src = dcol.data() + ((b * Ho + oy) * Wo + ox) * K;
                                int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                                for (int64_t c = 0; c < Cg; ++c) {
                                    S* plane = gx.data() + ((b * C + g * Cg + c) * H) * W;
                                    for (int64_t ky = 0; ky < kh; ++ky) {
                                        int64_t iy = iy0 + ky;
                                        for (int64_t kx = 0; kx < kw; ++kx) {
                                            int64_t ix = ix0 + kx;
                                            S v = *src++;
                                            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                plane[iy * W + ix] += v;
                                        }
                                    }
                                }
                            }
                }
            }
        });
    }
    return out;
}

// ---- bilinear upsampling (NCHW) --------------------------------------------

template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int64_t Ho, int64_t Wo) {
    if (x.rank() != 4) throw DimError("upsample_bilinear: expected [B,C,H,W]");
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (Ho == H && Wo == W) return x;
    detail::GradCtx<S> ctx;
    ctx.see(x);
    Tensor<S> out = Tensor<S>::zeros({B, C, Ho, Wo});

    // half-pixel centers (align_corners = false), clamped at borders
    double sy = static_cast<double>(H) / static_cast<double>(Ho);
    double sx = static_cast<double>(W) / static_cast<double>(Wo);
    struct Tap {
        int64_t lo, hi;
        S w_hi;
    };
    std::vector<Tap> ty(static_cast<size_t>(Ho)), tx(static_cast<size_t>(Wo));
    auto make_tap = [](int64_t o, double scale, int64_t extent) {
        double c = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (c < 0) c = 0;
        if (c > extent - 1) c = static_cast<double>(extent - 1);
        int64_t lo = static_cast<int64_t>(c);
        int64_t hi = std::min(lo + 1, extent - 1);
        return Tap{lo, hi, static_cast<S>(c - static_cast<double>(lo))};
    };
    for (int64_t o = 0; o < Ho; ++o) ty[o] = make_tap(o, sy, H);
    for (int64_t o = 0; o < Wo; ++o) tx[o] = make_tap(o, sx, W);

    const S* px = x.data();
    S* po = out.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* plane = px + bc * H * W;
        S* dst = po + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
            const Tap& a = ty[oy];
            for (int64_t ox = 0; ox < Wo; ++ox) {
                const Tap& b = tx[ox];
                S v00 = plane[a.lo * W + b.lo], v01 = plane[a.lo * W + b.hi];
                S v10 = plane[a.hi * W + b.lo], v11 = plane[a.hi * W + b.hi];
                S top = v00 + (v01 - v00) * b.w_hi;
                S bot = v10 + (v11 - v10) * b.w_hi;
                dst[oy * Wo + ox] = top + (bot - top) * a.w_hi;
            }
        }
    }
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({x}, out, [=]() mutable {
            const std::vector<S>& go = out.grad();
            std::vector<S>& gx = const_cast<Tensor<S>&>(x).grad();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                S* gplane = gx.data() + bc * H * W;
                const S* src = go.data() + bc * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const Tap& a = ty[oy];
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const Tap& b = tx[ox];
                        S g = src[oy * Wo + ox];
                        S wy1 = a.w_hi, wy0 = S(1) - wy1;
                        S wx1 = b.w_hi, wx0 = S(1) - wx1;
                        gplane[a.lo * W + b.lo] += g * wy0 * wx0;
                        gplane[a.lo * W + b.hi] += g * wy0 * wx1;
                        gplane[a.hi * W + b.lo] += g * wy1 * wx0;
                        gplane[a.hi * W + b.hi] += g * wy1 * wx1;
                    }
                }
            }
        });
    }
    return out;
}

// ---- cross entropy ---------------------------------------------------------

// logits: [B,K,H,W]; labels row-major [B,H,W] in [0,K) or ignore_index.
// Mean negative log-softmax over non-ignored pixels; 0 (with zero gradient)
// when everything is ignored.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int32_t>& labels,
                        int32_t ignore_index) {
    if (logits.rank() != 4) throw DimError("cross_entropy: logits must be [B,K,H,W]");
    int64_t B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    if (static_cast<int64_t>(labels.size()) != B * H * W)
        throw DimError("cross_entropy: label count mismatch");
    detail::GradCtx<S> ctx;
    ctx.see(logits);

    int64_t HW = H * W;
    const S* pl = logits.data();
    double acc = 0.0;
    int64_t n_valid = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            int32_t y = labels[b * HW + p];
            if (y == ignore_index) continue;
            if (y < 0 || y >= K) throw ContractError("cross_entropy: label out of range");
            const S* base = pl + b * K * HW + p;
            S m = base[0];
            for (int64_t k = 1; k < K; ++k) m = std::max(m, base[k * HW]);
            double z = 0.0;
            for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(base[k * HW] - m));
            acc += std::log(z) + static_cast<double>(m) - static_cast<double>(base[y * HW]);
            ++n_valid;
        }
    Tensor<S> out = Tensor<S>::scalar(n_valid ? static_cast<S>(acc / n_valid) : S(0));
    detail::finite_guard(out, "cross_entropy");
    ctx.attach(out);
    if (ctx.active()) {
        ctx.tape->record({logits}, out, [=]() mutable {
            if (!n_valid) return;
            S g = out.grad()[0] / static_cast<S>(n_valid);
            std::vector<S>& gx = const_cast<Tensor<S>&>(logits).grad();
            const S* pl = logits.data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t p = 0; p < HW; ++p) {
                    int32_t y = labels[b * HW + p];
                    if (y == ignore_index) continue;
                    const S* base = pl + b * K * HW + p;
                    S* gbase = gx.data() + b * K * HW + p;
                    S m = base[0];
                    for (int64_t k = 1; k < K; ++k) m = std::max(m, base[k * HW]);
                    S z = S(0);
                    for (int64_t k = 0; k < K; ++k) z += std::exp(base[k * HW] - m);
                    for (int64_t k = 0; k < K; ++k) {
                        S soft = std::exp(base[k * HW] - m) / z;
                        gbase[k * HW] += g * (soft - (k == y ? S(1) : S(0)));
                    }
                }
        });
    }
    return out;
}

// Convenience: backward from a scalar loss through its tape.
template <typename S>
void backward(Tensor<S>& loss, bool retain = false) {
    if (!loss.tape()) throw ContractError("backward: loss is not on a tape");
    loss.tape()->backward(loss, retain);
}

}  // namespace rsg
