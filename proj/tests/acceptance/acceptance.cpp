// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy trend experiments (criterion 6) parallelise across runs via
// RSG_THREADS worker threads; each run itself stays single-threaded and
// deterministic.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "rsg/bench.hpp"
#include "rsg/train.hpp"
#include "rsg/verify.hpp"
#include "rsg/viz.hpp"

using namespace rsg;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& what, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

int worker_threads() {
    const char* env = std::getenv("RSG_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

// ---- criterion 1: gradient correctness --------------------------------------

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    auto results = run_gradcheck_battery(10);
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool all = true;
    double worst = 0;
    std::string worst_name;
    for (const auto& r : results) {
        if (!r.pass) {
            all = false;
            std::printf("    gradcheck FAIL %s max rel err %.3e (%s)\n", r.name.c_str(),
                        r.max_rel_err, r.detail.c_str());
        }
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
    }
    bool in_budget = elapsed < 300.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu ops x 10 seeds, worst %.2e (%s), %.0f s", results.size(),
                  worst, worst_name.c_str(), elapsed);
    report(1, "gradient correctness (per-op <= 1e-4, end-to-end <= 1e-3, < 5 min)",
           all && in_budget, buf);
}

// ---- criterion 2: scan oracle ------------------------------------------------

void criterion_2() {
    ScanOracleResult res = run_scan_oracle(50);
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%d instances, max abs dev %.2e, %.1f s", res.instances,
                  res.max_abs_dev, res.elapsed_s);
    report(2, "scan oracle equivalence (< 1e-10 at 64-bit, < 60 s)",
           res.pass() && res.elapsed_s < 60.0, buf);
}

// ---- criterion 3: gate algebra ------------------------------------------------

void criterion_3() {
    using T = Tensor<double>;
    Rng rng(3);
    T c_rgb = T::randn({1, 6, 4}, rng);
    T c_x = T::randn({1, 6, 4}, rng);
    T one = T::ones({1, 6, 1});
    T zero = T::zeros({1, 6, 1});
    bool ok = true;

    // fallback identities, zero tolerance
    auto [er, ex] = compose_effective_c(one, one, zero, c_rgb, c_x);
    for (int64_t i = 0; i < c_rgb.numel(); ++i) ok = ok && er.values()[i] == c_rgb.values()[i];
    for (double v : ex.values()) ok = ok && v == 0.0;
    auto [er1, ex1] = compose_effective_c(one, one, one, c_rgb, c_x);
    for (int64_t i = 0; i < c_x.numel(); ++i) ok = ok && ex1.values()[i] == c_x.values()[i];
    for (double v : er1.values()) ok = ok && v == 0.0;

    // monotonicity over the 11x11 gate grid
    auto norm_of = [](const T& t) {
        double s = 0;
        for (double v : t.values()) s += v * v;
        return std::sqrt(s);
    };
    for (int iu = 0; iu <= 10 && ok; ++iu) {
        double prev_x = -1, prev_rgb = 1e300;
        for (int ic = 0; ic <= 10; ++ic) {
            T gu = T::full({1, 6, 1}, iu / 10.0);
            T gc = T::full({1, 6, 1}, ic / 10.0);
            auto [a, b] = compose_effective_c(gu, gu, gc, c_rgb, c_x);
            double nx = norm_of(b), nr = norm_of(a);
            ok = ok && nx >= prev_x - 1e-15 && nr <= prev_rgb + 1e-15;
            prev_x = nx;
            prev_rgb = nr;
        }
    }
    for (int ic = 0; ic <= 10 && ok; ++ic) {
        double prev_x = -1;
        for (int iu = 0; iu <= 10; ++iu) {
            T gu = T::full({1, 6, 1}, iu / 10.0);
            T gc = T::full({1, 6, 1}, ic / 10.0);
            auto [a, b] = compose_effective_c(gu, gu, gc, c_rgb, c_x);
            (void)a;
            ok = ok && norm_of(b) >= prev_x - 1e-15;
            prev_x = norm_of(b);
        }
    }
    report(3, "effective-readout gate algebra (exact extremes, 11x11 monotone grid)", ok);
}

// ---- criterion 4: local-branch annihilation -----------------------------------

void criterion_4() {
    Tape<double> tape;
    LcgmBlock<double> blk(tape, "lcgm", 8, 4, 17);
    std::fill(blk.lin_rgb_.b_.values().begin(), blk.lin_rgb_.b_.values().end(), 0.0);
    std::fill(blk.lin_x_.b_.values().begin(), blk.lin_x_.b_.values().end(), 0.0);
    std::fill(blk.gate_conv_x_.b_.values().begin(), blk.gate_conv_x_.b_.values().end(), 0.0);
    std::fill(blk.dconv_x_.b_.values().begin(), blk.dconv_x_.b_.values().end(), 0.0);
    Rng rng(9);
    Tensor<double> e_rgb = Tensor<double>::rand({2, 4, 4, 8}, rng);
    Tensor<double> out = blk.forward(e_rgb, Tensor<double>::zeros({2, 4, 4, 8}));
    bool ok = std::memcmp(out.data(), e_rgb.data(),
                          sizeof(double) * static_cast<size_t>(out.numel())) == 0;
    report(4, "local-branch annihilation (zero aux + zero biases -> bit-identical E_rgb)", ok);
}

// ---- criterion 5: low-rank accounting ------------------------------------------

void criterion_5() {
    bool ok = true;
    Tape<double> tape;
    // parameter-count formula, several shapes
    for (auto [din, dout, r] : std::vector<std::tuple<int64_t, int64_t, int64_t>>{
             {64, 64, 8}, {16, 32, 2}, {128, 16, 4}, {8, 8, 1}}) {
        LowRankProjection<double> p(tape, "p", din, dout, r, 5);
        ParamList<double> params;
        p.collect(params);
        ok = ok && p.param_count() == r * (din + dout) + 1;
        ok = ok && param_count(params) == p.param_count();
    }
    // ablation direction: the low-rank model is strictly smaller
    RunConfig base;
    base.model.dims = {8, 16, 32, 64};
    auto cells = make_ablation_grid("projection", base);
    Tape<float> t2;
    SegModel<float> linear_model(t2, cells[0].cfg.model, 1);
    SegModel<float> lowrank_model(t2, cells[1].cfg.model, 1);
    int64_t pl = param_count(linear_model.params());
    int64_t plr = param_count(lowrank_model.params());
    ok = ok && plr < pl;
    char buf[120];
    std::snprintf(buf, sizeof(buf), "formula exact; low-rank %lld < linear %lld params",
                  static_cast<long long>(plr), static_cast<long long>(pl));
    report(5, "low-rank accounting (r*(d_in+d_out)+1 exact; low-rank < linear)", ok, buf);
}

// ---- criterion 6: reliability trends -------------------------------------------

struct TrendJob {
    std::string tag;
    RunConfig cfg;
    CorruptionMode mode;
    double level;
    uint64_t seed;
    double best_miou = 0;
    std::string out_dir;
};

RunConfig trend_base() {
    RunConfig cfg;
    cfg.model.dims = {8, 16, 32, 64};
    cfg.model.n_state = 8;
    cfg.model.rank_div = 2;
    cfg.model.decoder_width = 64;
    cfg.model.num_classes = 5;
    cfg.data.num_classes = 5;
    cfg.data.image_size = 64;
    cfg.train.epochs = 60;
    cfg.train.batch = 8;
    cfg.train.base_lr = 1e-3;
    cfg.train.warmup = 6;
    return cfg;
}

Dataset trend_data(CorruptionMode mode, double level, uint64_t seed, int n) {
    SceneSpec spec;
    spec.height = 64;
    spec.width = 64;
    spec.num_classes = 5;
    spec.corruption = {mode, level};
    spec.seed = seed;
    return generate_dataset(spec, n);
}

void criterion_6(const std::string& scratch_dir) {
    const std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<TrendJob> jobs;
    auto add_jobs = [&](const std::string& tag, CorruptionMode mode, double level, auto&& edit) {
        for (uint64_t s : seeds) {
            TrendJob j;
            j.tag = tag;
            j.cfg = trend_base();
            edit(j.cfg);
            j.cfg.train.seed = s;
            j.cfg.data.corruption = {mode, level};
            j.mode = mode;
            j.level = level;
            j.seed = s;
            jobs.push_back(std::move(j));
        }
    };

    // (a) clean data: full fusion vs RGB-only
    add_jobs("fusion_clean", CorruptionMode::None, 0.0, [](RunConfig&) {});
    add_jobs("rgbonly_clean", CorruptionMode::None, 0.0,
             [](RunConfig& c) { c.data.zero_aux = true; });
    // (b) pure-noise aux: gated vs ungated exchange
    add_jobs("rsgmb_noise", CorruptionMode::GaussianNoise, 1.0,
             [](RunConfig& c) { c.model.lcgm = false; });
    add_jobs("crossmamba_noise", CorruptionMode::GaussianNoise, 1.0, [](RunConfig& c) {
        c.model.fusion = FusionKind::CrossMamba;
        c.model.lcgm = false;
    });
    // (c) gate grid at region dropout 0.5
    add_jobs("gates_none", CorruptionMode::RegionDropout, 0.5, [](RunConfig& c) {
        c.model.use_g_u = false;
        c.model.use_g_c = false;
    });
    add_jobs("gates_gu", CorruptionMode::RegionDropout, 0.5, [](RunConfig& c) {
        c.model.use_g_u = true;
        c.model.use_g_c = false;
    });
    add_jobs("gates_gc", CorruptionMode::RegionDropout, 0.5, [](RunConfig& c) {
        c.model.use_g_u = false;
        c.model.use_g_c = true;
    });
    add_jobs("gates_both", CorruptionMode::RegionDropout, 0.5, [](RunConfig&) {});

    // datasets shared per (mode, level)
    struct DataPair {
        Dataset train, val;
    };
    std::map<std::pair<int, int>, DataPair> data;
    auto key_of = [](CorruptionMode m, double l) {
        return std::make_pair(static_cast<int>(m), static_cast<int>(l * 1000));
    };
    for (const auto& j : jobs) {
        auto key = key_of(j.mode, j.level);
        if (!data.count(key))
            data[key] = {trend_data(j.mode, j.level, 1000, 200),
                         trend_data(j.mode, j.level, 2000, 50)};
    }

    for (auto& j : jobs)
        j.out_dir = scratch_dir + "/" + j.tag + "_seed" + std::to_string(j.seed);

    double max_run_s = 0;
    std::atomic<size_t> next{0};
    std::mutex time_mu;
    auto worker = [&] {
        while (true) {
            size_t idx = next.fetch_add(1);
            if (idx >= jobs.size()) break;
            TrendJob& j = jobs[idx];
            const DataPair& dp = data.at(key_of(j.mode, j.level));
            auto t0 = std::chrono::steady_clock::now();
            TrainResult r = train_run<float>(j.cfg, dp.train, dp.val, j.out_dir);
            double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            j.best_miou = r.best_val_miou;
            std::lock_guard<std::mutex> lk(time_mu);
            max_run_s = std::max(max_run_s, secs);
            std::printf("    run %-18s seed %llu mIoU %.4f (%.0f s)\n", j.tag.c_str(),
                        static_cast<unsigned long long>(j.seed), j.best_miou, secs);
            std::fflush(stdout);
        }
    };
    int threads = std::min<int>(worker_threads(), static_cast<int>(jobs.size()));
    if (threads <= 1)
        worker();
    else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    auto median_for = [&](const std::string& tag) {
        std::vector<double> v;
        for (const auto& j : jobs)
            if (j.tag == tag) v.push_back(j.best_miou);
        return median_of(v);
    };
    double fusion_clean = median_for("fusion_clean");
    double rgbonly_clean = median_for("rgbonly_clean");
    double rsgmb_noise = median_for("rsgmb_noise");
    double crossmamba_noise = median_for("crossmamba_noise");
    double g_none = median_for("gates_none");
    double g_gu = median_for("gates_gu");
    double g_gc = median_for("gates_gc");
    double g_both = median_for("gates_both");

    char buf[160];
    std::snprintf(buf, sizeof(buf), "fusion %.4f vs rgb-only %.4f (margin %.4f)", fusion_clean,
                  rgbonly_clean, fusion_clean - rgbonly_clean);
    report(6, "(a) clean-data fusion gain >= 0.02", fusion_clean >= rgbonly_clean + 0.02, buf);

    std::snprintf(buf, sizeof(buf), "gated %.4f vs ungated %.4f", rsgmb_noise, crossmamba_noise);
    report(6, "(b) pure-noise aux: gated >= ungated exchange", rsgmb_noise >= crossmamba_noise,
           buf);

    std::snprintf(buf, sizeof(buf), "none %.4f | g_u %.4f g_c %.4f | both %.4f", g_none, g_gu,
                  g_gc, g_both);
    bool order = g_none <= g_gu && g_none <= g_gc && g_gu <= g_both && g_gc <= g_both;
    report(6, "(c) gate grid ordering none <= single <= both at dropout 0.5", order, buf);

    std::snprintf(buf, sizeof(buf), "slowest run %.0f s", max_run_s);
    report(6, "(runs within the 15-minute budget)", max_run_s <= 900.0, buf);

    // supplementary (paper's gate-map reading): trained consistency gates are
    // lower inside corrupted regions than outside, median over the (c) models
    {
        Dataset val = trend_data(CorruptionMode::RegionDropout, 0.5, 2000, 50);
        std::vector<double> inside_minus_outside;
        for (uint64_t s : seeds) {
            RunConfig cfg = trend_base();
            cfg.train.seed = s;
            cfg.data.corruption = {CorruptionMode::RegionDropout, 0.5};
            Tape<float> tape;
            SegModel<float> model(tape, cfg.model, cfg.train.seed);
            ParamList<float> params = model.params();
            apply_checkpoint(
                load_checkpoint(scratch_dir + "/gates_both_seed" + std::to_string(s) +
                                "/checkpoint.rsgc"),
                params);
            double acc = 0;
            int count = 0;
            for (int i = 0; i < 10; ++i) {
                auto maps = capture_gate_maps(model, tape, val.samples[i]);
                const auto& m = maps[0];  // finest stage
                GateMaskStats st = gate_vs_mask<float>(m.g_c, m.height, m.width,
                                                       val.samples[i].mask, 64, 64);
                if (st.n_inside && st.n_outside) {
                    acc += st.mean_inside - st.mean_outside;
                    ++count;
                }
            }
            if (count) inside_minus_outside.push_back(acc / count);
        }
        double med = median_of(inside_minus_outside);
        std::snprintf(buf, sizeof(buf), "median(g_c inside - outside) = %.4f", med);
        report(6, "(gate maps distrust corrupted regions)", med < 0, buf);
    }
}

// ---- criterion 7: determinism ---------------------------------------------------

void criterion_7(const std::string& scratch_dir) {
    RunConfig cfg = trend_base();
    cfg.train.epochs = 6;
    cfg.train.seed = 11;
    Dataset train = trend_data(CorruptionMode::RegionDropout, 0.3, 3000, 24);
    Dataset val = trend_data(CorruptionMode::RegionDropout, 0.3, 4000, 8);
    std::string d1 = scratch_dir + "/det1", d2 = scratch_dir + "/det2";
    TrainResult r1 = train_run<float>(cfg, train, val, d1);
    TrainResult r2 = train_run<float>(cfg, train, val, d2);
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    bool logs = r1.log_lines == r2.log_lines;
    bool ckpt = slurp(d1 + "/checkpoint.rsgc") == slurp(d2 + "/checkpoint.rsgc");
    report(7, "determinism (same config+seed -> bit-identical logs and checkpoints)",
           logs && ckpt);
}

// ---- criterion 8: format robustness ----------------------------------------------

void criterion_8(const std::string& scratch_dir) {
    bool ok = true;
    // dataset round trip
    SceneSpec spec;
    spec.height = 32;
    spec.width = 32;
    spec.num_classes = 4;
    spec.corruption = {CorruptionMode::GaussianNoise, 0.4};
    spec.seed = 21;
    Dataset ds = generate_dataset(spec, 3);
    std::string dpath = scratch_dir + "/fmt.rsgx";
    write_dataset(dpath, ds);
    Dataset back = read_dataset(dpath);
    ok = ok && back.samples.size() == 3;
    for (int i = 0; i < 3 && ok; ++i)
        ok = ok && back.samples[i].rgb == ds.samples[i].rgb &&
             back.samples[i].aux == ds.samples[i].aux &&
             back.samples[i].labels == ds.samples[i].labels &&
             back.samples[i].mask == ds.samples[i].mask;

    // checkpoint round trip
    Tape<float> tape;
    ModelSpec ms;
    ms.dims = {8};
    ms.num_classes = 4;
    ms.decoder_width = 8;
    SegModel<float> model(tape, ms, 3);
    ParamList<float> params = model.params();
    std::string cpath = scratch_dir + "/fmt.rsgc";
    save_checkpoint(cpath, params);
    auto blobs = load_checkpoint(cpath);
    apply_checkpoint(blobs, params);
    save_checkpoint(cpath + "2", params);
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    ok = ok && slurp(cpath) == slurp(cpath + "2");

    // one-byte header corruption -> format error, never UB
    for (const std::string& path : {dpath, cpath}) {
        std::string bytes = slurp(path);
        for (size_t pos : {0u, 5u}) {
            std::string mutated = bytes;
            mutated[pos] = static_cast<char>(mutated[pos] ^ 0x10);
            std::string bad = path + ".bad";
            std::ofstream o(bad, std::ios::binary);
            o.write(mutated.data(), static_cast<std::streamsize>(mutated.size()));
            o.close();
            try {
                if (path == dpath)
                    read_dataset(bad);
                else
                    load_checkpoint(bad);
                ok = false;  // corruption went unnoticed
            } catch (const FormatError&) {
            } catch (...) {
                ok = false;
            }
        }
    }
    report(8, "format robustness (bit-exact round trips; header corruption -> format error)", ok);
}

// ---- criterion 9: linear scaling ---------------------------------------------------

void criterion_9() {
    std::vector<int64_t> lengths{1024, 2048, 4096, 8192};
    auto recs = run_scan_bench<double>(lengths, 16, 32, 64, 1);
    auto time_of = [&](const std::string& impl, int64_t L) {
        for (const auto& r : recs)
            if (r.impl == impl && r.L == L) return r.seconds_per_scan;
        return 0.0;
    };
    bool ok = true;
    std::string detail;
    for (const std::string& impl : {"sequential", "blocked"}) {
        for (int64_t L : {1024, 2048, 4096}) {
            double ratio = time_of(impl, 2 * L) / time_of(impl, L);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%s %lld->%lld: %.2f  ", impl.c_str(),
                          static_cast<long long>(L), static_cast<long long>(2 * L), ratio);
            detail += buf;
            ok = ok && ratio >= 1.6 && ratio <= 2.6;
        }
    }
    report(9, "linear scaling (time ratio for L->2L within [1.6, 2.6])", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = argc > 1 && std::string(argv[1]) == "--skip-trends";
    finite_checks_enabled() = false;  // throughput mode; training still guards its loss
    std::string scratch = (std::filesystem::temp_directory_path() / "rsg_acceptance").string();
    std::filesystem::remove_all(scratch);
    std::filesystem::create_directories(scratch);

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    if (quick)
        std::printf("[SKIP] criterion 6: reliability trends (--skip-trends)\n");
    else
        criterion_6(scratch);
    criterion_7(scratch);
    criterion_8(scratch);
    criterion_9();

    if (g_failures) {
        std::printf("acceptance: %d criterion check(s) FAILED\n", g_failures);
        return 1;
    }
    std::printf("acceptance: all criteria PASS\n");
    return 0;
}
