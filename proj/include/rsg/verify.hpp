#pragma once

#include <chrono>
#include <functional>

#include "rsg/gradcheck.hpp"
#include "rsg/model.hpp"

// Self-check batteries shared by the CLI and the acceptance suite: the
// per-operation finite-difference battery and the blocked-vs-sequential scan
// oracle matrix. Everything runs at 64-bit precision.

namespace rsg {

struct CheckResult {
    std::string name;
    bool pass = false;
    double max_rel_err = 0;
    std::string detail;
};

namespace detail {

// keep |x| away from the relu/abs kinks so central differences are valid
inline Tensor<double> kink_free(const Shape& shape, Rng& rng) {
    Tensor<double> t = Tensor<double>::randn(shape, rng);
    for (auto& v : t.values())
        if (std::abs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
    return t;
}

}  // namespace detail

#ifdef RSG_TEST_HOOKS
// Fault injection for the scan oracle: flips one sign in the blocked path.
inline bool& scan_fault_injected() {
    static bool on = false;
    return on;
}
#endif

// Central finite-difference checks for every registered operation, `seeds`
// random instances each, step 1e-5, tolerance 1e-4 (1e-3 for the end-to-end
// model composite).
inline std::vector<CheckResult> run_gradcheck_battery(int seeds = 10) {
    using T = Tensor<double>;
    std::vector<CheckResult> results;

    struct OpCheck {
        std::string name;
        double tol;
        std::function<GradCheckReport(uint64_t)> run;
    };
    std::vector<OpCheck> checks;
    auto add_check = [&](const std::string& name, double tol,
                         std::function<GradCheckReport(uint64_t)> f) {
        checks.push_back({name, tol, std::move(f)});
    };

    add_check("add_broadcast", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({3, 1, 4}, rng));
        T b = tape.leaf_of(T::randn({2, 4}, rng));
        return gradcheck<double>([&] { return sum_all(mul(add(a, b), add(a, b))); },
                                 {{"a", a}, {"b", b}}, 1e-5, 1.0);
    });
    add_check("sub_mul", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({4, 3}, rng));
        T b = tape.leaf_of(T::randn({4, 1}, rng));
        return gradcheck<double>([&] { return sum_all(mul(sub(a, b), a)); }, {{"a", a}, {"b", b}},
                                 1e-5, 1.0);
    });
    add_check("abs", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(detail::kink_free({5, 5}, rng));
        return gradcheck<double>([&] { return sum_all(rsg::abs(a)); }, {{"a", a}}, 1e-5, 1.0);
    });
    add_check("exp", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({4, 4}, rng));
        return gradcheck<double>([&] { return sum_all(rsg::exp(a)); }, {{"a", a}}, 1e-5, 1.0);
    });
    add_check("sigmoid", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({6}, rng));
        return gradcheck<double>([&] { return sum_all(sigmoid(a)); }, {{"a", a}}, 1e-5, 1.0);
    });
    add_check("softplus", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({6}, rng));
        return gradcheck<double>([&] { return sum_all(mul(softplus(a), softplus(a))); },
                                 {{"a", a}}, 1e-5, 1.0);
    });
    add_check("relu", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(detail::kink_free({8}, rng));
        return gradcheck<double>([&] { return sum_all(mul(relu(a), a)); }, {{"a", a}}, 1e-5, 1.0);
    });
    add_check("expm1_over", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({6}, rng, 0.5));
        a.values()[0] = 1e-6;  // exercise the series branch
        return gradcheck<double>([&] { return sum_all(expm1_over(a)); }, {{"a", a}}, 1e-5, 1.0);
    });
    add_check("matmul_batched", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(T::randn({2, 3, 4}, rng));
        T b = tape.leaf_of(T::randn({2, 4, 2}, rng));
        return gradcheck<double>([&] { return sum_all(mul(matmul(a, b), matmul(a, b))); },
                                 {{"a", a}, {"b", b}}, 1e-5, 1.0);
    });
    add_check("linear_bias", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({5, 4}, rng));
        T w = tape.leaf_of(T::randn({3, 4}, rng));
        T b = tape.leaf_of(T::randn({3}, rng));
        return gradcheck<double>([&] { return sum_all(sigmoid(linear(x, w, b))); },
                                 {{"x", x}, {"w", w}, {"b", b}}, 1e-5, 1.0);
    });
    add_check("layernorm", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({4, 6}, rng));
        T g = tape.leaf_of(T::randn({6}, rng));
        T b = tape.leaf_of(T::randn({6}, rng));
        return gradcheck<double>(
            [&] {
                T y = layernorm(x, g, b);
                return sum_all(mul(y, y));
            },
            {{"x", x}, {"g", g}, {"b", b}}, 1e-5, 1.0);
    });
    add_check("conv2d", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({1, 3, 5, 5}, rng));
        T w = tape.leaf_of(T::randn({4, 3, 3, 3}, rng, 0.4));
        T b = tape.leaf_of(T::randn({4}, rng));
        return gradcheck<double>(
            [&] {
                T y = conv2d(x, w, b, 1, 2, 1);
                return sum_all(mul(y, y));
            },
            {{"x", x}, {"w", w}, {"b", b}}, 1e-5, 1.0);
    });
    add_check("conv2d_depthwise", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({2, 4, 4, 4}, rng));
        T w = tape.leaf_of(T::randn({4, 1, 3, 3}, rng, 0.4));
        return gradcheck<double>(
            [&] {
                T y = conv2d(x, w, T{}, 4, 1, 1);
                return sum_all(mul(y, y));
            },
            {{"x", x}, {"w", w}}, 1e-5, 1.0);
    });
    add_check("softmax", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({3, 5}, rng));
        return gradcheck<double>([&] { return sum_all(mul(softmax_lastdim(x), x)); }, {{"x", x}},
                                 1e-5, 1.0);
    });
    add_check("upsample_bilinear", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({1, 2, 3, 3}, rng));
        return gradcheck<double>(
            [&] {
                T y = upsample_bilinear(x, 6, 7);
                return sum_all(mul(y, y));
            },
            {{"x", x}}, 1e-5, 1.0);
    });
    add_check("shape_ops", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({2, 3, 4}, rng));
        T y = tape.leaf_of(T::randn({2, 3, 4}, rng));
        return gradcheck<double>(
            [&] {
                T c = concat<double>({flip(x, 1), permute(y, {0, 1, 2})}, 2);
                return sum_all(mul(reshape(c, {6, 8}), reshape(c, {6, 8})));
            },
            {{"x", x}, {"y", y}}, 1e-5, 1.0);
    });
    add_check("cross_entropy", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T x = tape.leaf_of(T::randn({1, 4, 3, 3}, rng));
        std::vector<int32_t> labels(9);
        for (int i = 0; i < 9; ++i)
            labels[i] = i == 4 ? kIgnoreIndex : static_cast<int32_t>(rng.uniform_int(0, 3));
        return gradcheck<double>([&] { return cross_entropy(x, labels, kIgnoreIndex); },
                                 {{"x", x}}, 1e-5, 1.0);
    });
    add_check("zoh_discretize", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T a = tape.leaf_of(affine(rsg::exp(T::randn({3, 4}, rng)), -1.0, 0.0));
        T delta = tape.leaf_of(T::rand({1, 5, 3}, rng, 0.01, 0.5));
        T btok = tape.leaf_of(T::randn({1, 5, 4}, rng));
        return gradcheck<double>(
            [&] {
                auto [ab, bb] = zoh_discretize(a, delta, btok);
                return sum_all(add(mul(ab, ab), mul(bb, bb)));
            },
            {{"a", a}, {"delta", delta}, {"btok", btok}}, 1e-5, 1.0);
    });
    add_check("scan_sequential", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        ScanParams<double> sp;
        sp.a_bar = tape.leaf_of(T::rand({2, 5, 3, 4}, rng, 0.1, 0.95));
        sp.b_bar = tape.leaf_of(T::randn({2, 5, 3, 4}, rng));
        sp.c = tape.leaf_of(T::randn({2, 5, 4}, rng));
        sp.d_skip = tape.leaf_of(T::randn({3}, rng));
        sp.delta = T::ones({2, 5, 3});
        T x = tape.leaf_of(T::randn({2, 5, 3}, rng));
        return gradcheck<double>(
            [&] {
                auto out = scan_sequential(sp, x);
                return sum_all(sigmoid(out.y));
            },
            {{"a", sp.a_bar}, {"b", sp.b_bar}, {"c", sp.c}, {"d", sp.d_skip}, {"x", x}}, 1e-5, 1.0);
    });
    add_check("scan_blocked_grad", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        ScanParams<double> sp;
        sp.a_bar = tape.leaf_of(T::rand({1, 9, 2, 3}, rng, 0.1, 0.95));
        sp.b_bar = tape.leaf_of(T::randn({1, 9, 2, 3}, rng));
        sp.c = tape.leaf_of(T::randn({1, 9, 3}, rng));
        sp.d_skip = tape.leaf_of(T::randn({2}, rng));
        sp.delta = T::ones({1, 9, 2});
        T x = tape.leaf_of(T::randn({1, 9, 2}, rng));
        return gradcheck<double>(
            [&] {
                auto out = scan_blocked(sp, x, 4);
                return sum_all(mul(out.y, out.y));
            },
            {{"a", sp.a_bar}, {"b", sp.b_bar}, {"c", sp.c}, {"d", sp.d_skip}, {"x", x}}, 1e-5, 1.0);
    });
    add_check("discretize_scan", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        SsmParams<double> p(tape, "ssm", 4, 3, seed);
        T x = tape.leaf_of(T::randn({1, 4, 4}, rng));
        return gradcheck<double>(
            [&] {
                auto out = scan_sequential(discretize(p, x), x);
                return sum_all(mul(out.y, out.y));
            },
            {{"a_log", p.a_log},
             {"w_b", p.w_b},
             {"w_c", p.w_c},
             {"w_dt", p.w_dt},
             {"dt_bias", p.dt_bias},
             {"d_skip", p.d_skip},
             {"x", x}},
            1e-5, 1.0);
    });
    add_check("lowrank_forward", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        LowRankProjection<double> p(tape, "p", 6, 5, 2, seed);
        T x = tape.leaf_of(T::randn({3, 6}, rng));
        return gradcheck<double>(
            [&] {
                T y = p.forward(x);
                return sum_all(mul(y, y));
            },
            {{"x", x}, {"w_down", p.w_down_}, {"w_up", p.w_up_}, {"alpha", p.alpha_}}, 1e-5, 1.0);
    });
    add_check("uncertainty_gate", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        UncertaintyGate<double> g(tape, "g", 8, seed);
        T f = tape.leaf_of(T::randn({1, 4, 8}, rng));
        ParamList<double> params;
        g.collect(params);
        std::vector<std::pair<std::string, T>> leaves{{"f", f}};
        for (auto& p : params) leaves.push_back({p.name, p.tensor});
        return gradcheck<double>([&] { return sum_all(mul(g.forward(f), g.forward(f))); }, leaves,
                                 1e-5, 1.0);
    });
    add_check("consistency_gate", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        ConsistencyGate<double> g(tape, "g", 6, seed);
        T fr = tape.leaf_of(T::randn({1, 3, 6}, rng));
        T fx = tape.leaf_of(T::randn({1, 3, 6}, rng));
        return gradcheck<double>([&] { return sum_all(g.forward(fr, fx)); },
                                 {{"fr", fr}, {"fx", fx}}, 1e-5, 1.0);
    });
    add_check("compose_effective_c", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        Rng rng(seed);
        T cr = tape.leaf_of(T::randn({1, 3, 4}, rng));
        T cx = tape.leaf_of(T::randn({1, 3, 4}, rng));
        T gur = tape.leaf_of(T::rand({1, 3, 1}, rng, 0.2, 0.8));
        T gux = tape.leaf_of(T::rand({1, 3, 1}, rng, 0.2, 0.8));
        T gc = tape.leaf_of(T::rand({1, 3, 1}, rng, 0.2, 0.8));
        return gradcheck<double>(
            [&] {
                auto [er, ex] = compose_effective_c(gur, gux, gc, cr, cx);
                return sum_all(add(mul(er, er), mul(ex, ex)));
            },
            {{"cr", cr}, {"cx", cx}, {"gur", gur}, {"gux", gux}, {"gc", gc}}, 1e-5, 1.0);
    });
    add_check("rsgmb_forward", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        RsgmbOptions opt;
        opt.n_state = 4;
        opt.rank = 2;
        RsgmBlock<double> blk(tape, "blk", 4, opt, seed);
        Rng rng(seed);
        T e_rgb = tape.leaf_of(T::rand({1, 2, 2, 4}, rng));
        T e_x = tape.leaf_of(T::rand({1, 2, 2, 4}, rng));
        ParamList<double> params;
        blk.collect(params);
        std::vector<std::pair<std::string, T>> leaves{{"e_rgb", e_rgb}, {"e_x", e_x}};
        for (auto& p : params) leaves.push_back({p.name, p.tensor});
        return gradcheck<double>(
            [&] {
                T out = blk.forward(e_rgb, e_x);
                return sum_all(mul(out, out));
            },
            leaves, 1e-5, 1.0, /*max_coords=*/6, seed);
    });
    add_check("lcgm_forward", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        LcgmBlock<double> blk(tape, "blk", 6, 3, seed);
        Rng rng(seed);
        T e_rgb = tape.leaf_of(T::rand({1, 3, 3, 6}, rng));
        T e_x = tape.leaf_of(T::rand({1, 3, 3, 6}, rng));
        ParamList<double> params;
        blk.collect(params);
        std::vector<std::pair<std::string, T>> leaves{{"e_rgb", e_rgb}, {"e_x", e_x}};
        for (auto& p : params) leaves.push_back({p.name, p.tensor});
        return gradcheck<double>(
            [&] {
                T out = blk.forward(e_rgb, e_x);
                return sum_all(mul(out, out));
            },
            leaves, 1e-5, 1.0, /*max_coords=*/6, seed);
    });
    add_check("cross_attention", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        CrossAttentionFusion<double> att(tape, "att", 4, seed);
        Rng rng(seed);
        T e_rgb = tape.leaf_of(T::rand({1, 2, 2, 4}, rng));
        T e_x = tape.leaf_of(T::rand({1, 2, 2, 4}, rng));
        return gradcheck<double>(
            [&] {
                T out = att.forward(e_rgb, e_x);
                return sum_all(mul(out, out));
            },
            {{"e_rgb", e_rgb},
             {"e_x", e_x},
             {"wq", att.wq_.w_},
             {"wk", att.wk_.w_},
             {"wv", att.wv_.w_}},
            1e-5, 1.0);
    });
    add_check("fuse_stage", 1e-4, [](uint64_t seed) {
        Tape<double> tape;
        RsgmbOptions opt;
        opt.n_state = 2;
        StageFusion<double> sf(tape, "sf", 4, FusionKind::Rsgmb, true, 2, opt, seed);
        Rng rng(seed);
        T e_rgb = tape.leaf_of(T::rand({1, 2, 2, 4}, rng));
        T e_x = tape.leaf_of(T::rand({1, 2, 2, 4}, rng));
        ParamList<double> params;
        sf.collect(params);
        std::vector<std::pair<std::string, T>> leaves{{"e_rgb", e_rgb}, {"e_x", e_x}};
        for (auto& p : params) leaves.push_back({p.name, p.tensor});
        return gradcheck<double>(
            [&] {
                T out = sf.forward(e_rgb, e_x);
                return sum_all(mul(out, out));
            },
            leaves, 1e-5, 1.0, /*max_coords=*/4, seed);
    });
    add_check("model_16x16_end_to_end", 1e-3, [](uint64_t seed) {
        Tape<double> tape;
        ModelSpec spec;
        spec.dims = {4, 8};
        spec.n_state = 2;
        spec.rank_div = 4;
        spec.num_classes = 3;
        spec.decoder_width = 8;
        SegModel<double> model(tape, spec, seed);
        Rng rng(seed);
        T rgb = tape.leaf_of(T::rand({1, 3, 16, 16}, rng));
        T aux = tape.leaf_of(T::rand({1, 3, 16, 16}, rng));
        std::vector<int32_t> labels(256);
        for (int i = 0; i < 256; ++i) labels[i] = static_cast<int32_t>(rng.uniform_int(0, 2));
        ParamList<double> params = model.params();
        std::vector<std::pair<std::string, T>> leaves{{"rgb", rgb}, {"aux", aux}};
        for (auto& p : params) leaves.push_back({p.name, p.tensor});
        return gradcheck<double>(
            [&] { return cross_entropy(model.forward(rgb, aux), labels, kIgnoreIndex); }, leaves,
            1e-5, 1.0, /*max_coords=*/2, seed);
    });

    for (auto& chk : checks) {
        CheckResult r;
        r.name = chk.name;
        r.pass = true;
        for (int s = 0; s < seeds; ++s) {
            GradCheckReport rep = chk.run(static_cast<uint64_t>(1000 + s));
            if (rep.max_rel_err > r.max_rel_err) {
                r.max_rel_err = rep.max_rel_err;
                r.detail = "seed " + std::to_string(1000 + s) + " leaf " + rep.worst_leaf + "[" +
                           std::to_string(rep.worst_coord) + "]";
            }
        }
        r.pass = r.max_rel_err <= chk.tol;
        results.push_back(std::move(r));
    }
    return results;
}

// ---- scan oracle matrix ------------------------------------------------------

struct ScanOracleFailure {
    int64_t L, N, D;
    uint64_t seed;
    double deviation;
};

struct ScanOracleResult {
    double max_abs_dev = 0;
    int instances = 0;
    double elapsed_s = 0;
    std::vector<ScanOracleFailure> failures;
    bool pass() const { return failures.empty(); }
};

inline ScanOracleResult run_scan_oracle(int seeds = 50, double tol = 1e-10) {
    using T = Tensor<double>;
    ScanOracleResult res;
    auto t0 = std::chrono::steady_clock::now();
    for (int64_t L : {1, 2, 7, 64, 65, 1024})
        for (int64_t N : {1, 8, 16})
            for (int64_t D : {1, 32})
                for (int s = 0; s < seeds; ++s) {
                    uint64_t seed = mix_seed(0x5CA9, static_cast<uint64_t>(s) * 1000003 +
                                                         static_cast<uint64_t>(L * 31 + N * 7 + D));
                    Rng rng(seed);
                    ScanParams<double> sp;
                    sp.a_bar = T::rand({1, L, D, N}, rng, 0.02, 0.999);
                    sp.b_bar = T::randn({1, L, D, N}, rng);
                    sp.c = T::randn({1, L, N}, rng);
                    sp.d_skip = T::randn({D}, rng);
                    sp.delta = T::ones({1, L, D});
                    T x = T::randn({1, L, D}, rng);
                    auto ref = scan_sequential(sp, x);
                    auto blk = scan_blocked(sp, x, 64);
#ifdef RSG_TEST_HOOKS
                    if (scan_fault_injected() && blk.y.numel() > 0)
                        blk.y.values()[0] = -blk.y.values()[0];
#endif
                    double dev = 0;
                    for (int64_t i = 0; i < ref.y.numel(); ++i)
                        dev = std::max(dev,
                                       std::abs(ref.y.values()[i] - blk.y.values()[i]));
                    res.max_abs_dev = std::max(res.max_abs_dev, dev);
                    if (dev >= tol) res.failures.push_back({L, N, D, seed, dev});
                    ++res.instances;
                }
    res.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace rsg
