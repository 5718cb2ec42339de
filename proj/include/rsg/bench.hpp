#pragma once

#include <chrono>

#include "rsg/ssm.hpp"

// Scan throughput measurements. Each measurement repeats the kernel until at
// least `min_time_s` has elapsed and reports the median per-repetition time
// over `rounds` rounds, which keeps the L -> 2L ratios stable on a busy box.

namespace rsg {

struct BenchRecord {
    std::string impl;  // "sequential" | "blocked"
    int64_t L = 0, N = 0, D = 0, chunk = 0;
    int threads = 1;
    double seconds_per_scan = 0;
    double tokens_per_second = 0;
};

template <typename S>
double time_scan(const ScanParams<S>& sp, const Tensor<S>& x, int64_t chunk, int threads,
                 double min_time_s = 0.05, int rounds = 5) {
    auto run_once = [&] {
        if (chunk <= 0)
            return scan_sequential(sp, x);
        else
            return scan_blocked(sp, x, chunk, threads);
    };
    run_once();  // warmup
    run_once();
    run_once();
    std::vector<double> per_rep(rounds);
    for (int r = 0; r < rounds; ++r) {
        int reps = 0;
        auto t0 = std::chrono::steady_clock::now();
        double elapsed = 0;
        do {
            run_once();
            ++reps;
            elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } while (elapsed < min_time_s);
        per_rep[r] = elapsed / reps;
    }
    std::sort(per_rep.begin(), per_rep.end());
    return per_rep[rounds / 2];
}

template <typename S>
std::vector<BenchRecord> run_scan_bench(const std::vector<int64_t>& lengths, int64_t N, int64_t D,
                                        int64_t chunk, int threads) {
    std::vector<BenchRecord> records;
    for (int64_t L : lengths) {
        Rng rng(mix_seed(0xBE7C, static_cast<uint64_t>(L)));
        ScanParams<S> sp;
        sp.a_bar = Tensor<S>::rand({1, L, D, N}, rng, 0.05, 0.98);
        sp.b_bar = Tensor<S>::randn({1, L, D, N}, rng);
        sp.c = Tensor<S>::randn({1, L, N}, rng);
        sp.d_skip = Tensor<S>::randn({D}, rng);
        sp.delta = Tensor<S>::ones({1, L, D});
        Tensor<S> x = Tensor<S>::randn({1, L, D}, rng);

        for (bool blocked : {false, true}) {
            BenchRecord r;
            r.impl = blocked ? "blocked" : "sequential";
            r.L = L;
            r.N = N;
            r.D = D;
            r.chunk = blocked ? chunk : 0;
            r.threads = blocked ? threads : 1;  // the sequential scan is the 1-thread reference
            r.seconds_per_scan = time_scan(sp, x, blocked ? chunk : 0, r.threads);
            r.tokens_per_second = static_cast<double>(L) / r.seconds_per_scan;
            records.push_back(r);
        }
    }
    return records;
}

}  // namespace rsg
