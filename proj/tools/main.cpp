// Command-line front end: data generation, self-checks, training, evaluation,
// ablation grids, scan benchmarks and gate-map visualisation.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "rsg/bench.hpp"
#include "rsg/train.hpp"
#include "rsg/verify.hpp"
#include "rsg/version.hpp"
#include "rsg/viz.hpp"

namespace {

using namespace rsg;
using nlohmann::json;

int worker_threads() {
    const char* env = std::getenv("RSG_THREADS");
    if (!env) return 1;  // deterministic default
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    int64_t seed = -1;
    std::string precision;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
    auto* copt = cmd->add_option("--config", args.config_path, "run configuration (JSON)");
    if (config_required) copt->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--set", args.overrides, "dotted config override, e.g. train.seed=3")
        ->take_all();
    cmd->add_option("--seed", args.seed, "override train.seed");
    cmd->add_option("--precision", args.precision, "override train.precision (f32|f64)")
        ->check(CLI::IsMember({"f32", "f64"}));
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty())
        cfg = load_config(args.config_path, args.overrides);
    else {
        json j = json::object();
        for (const auto& ov : args.overrides) apply_override(j, ov);
        cfg = config_from_json(j);
    }
    if (args.seed >= 0) cfg.train.seed = static_cast<uint64_t>(args.seed);
    if (!args.precision.empty()) cfg.train.precision = precision_from_name(args.precision);
    return cfg;
}

void print_banner(const RunConfig& cfg) {
    std::cout << "rsg " << version_string() << "\n";
    std::cout << "resolved config: " << config_to_json(cfg).dump() << "\n";
}

Dataset load_or_make(const std::string& path, const RunConfig& cfg, int fallback_count,
                     uint64_t fallback_seed) {
    if (!path.empty()) return read_dataset(path);
    SceneSpec spec = scene_spec_from(cfg);
    spec.seed = fallback_seed;
    return generate_dataset(spec, fallback_count);
}

// ---- subcommand bodies -------------------------------------------------------

int cmd_gen_data(const CommonArgs& args, const std::string& out_file, int count) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    SceneSpec spec = scene_spec_from(cfg);
    Dataset ds = generate_dataset(spec, count);
    write_dataset(out_file, ds);
    std::cout << "wrote " << count << " samples (" << spec.height << "x" << spec.width << ", K="
              << spec.num_classes << ", corruption=" << corruption_name(spec.corruption.mode)
              << "@" << spec.corruption.level << ") to " << out_file << "\n";
    return 0;
}

int cmd_gradcheck(const CommonArgs& args, int seeds) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    auto results = run_gradcheck_battery(seeds);
    bool all = true;
    for (const auto& r : results) {
        std::printf("%-28s %s  max rel err %.3e  %s\n", r.name.c_str(),
                    r.pass ? "PASS" : "FAIL", r.max_rel_err, r.pass ? "" : r.detail.c_str());
        all = all && r.pass;
    }
    std::cout << (all ? "gradcheck: all operations pass\n" : "gradcheck: FAILURES above\n");
    return all ? 0 : 2;
}

int cmd_scan_check(const CommonArgs& args, int seeds) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    ScanOracleResult res = run_scan_oracle(seeds);
    std::printf("scan oracle: %d instances, max abs deviation %.3e in %.1f s\n", res.instances,
                res.max_abs_dev, res.elapsed_s);
    for (const auto& f : res.failures)
        std::printf("  FAIL L=%lld N=%lld D=%lld seed=%llu dev=%.3e\n",
                    static_cast<long long>(f.L), static_cast<long long>(f.N),
                    static_cast<long long>(f.D), static_cast<unsigned long long>(f.seed),
                    f.deviation);
    std::cout << (res.pass() ? "scan-check: PASS\n" : "scan-check: FAIL\n");
    return res.pass() ? 0 : 2;
}

template <typename S>
int train_with(const RunConfig& cfg, const std::string& out_dir) {
    Dataset train_ds = read_dataset(cfg.data.path);
    Dataset val_ds = read_dataset(cfg.data.val_path.empty() ? cfg.data.path : cfg.data.val_path);
    TrainResult r = train_run<S>(cfg, train_ds, val_ds, out_dir);
    std::printf("trained %lld parameters, best val mIoU %.4f (epoch %d), final %.4f\n",
                static_cast<long long>(r.param_count), r.best_val_miou, r.best_epoch,
                r.final_val_miou);
    std::cout << "checkpoint + metrics in " << out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    if (cfg.data.path.empty()) throw ConfigError("train: data.path is required");
    return cfg.train.precision == Precision::F64 ? train_with<double>(cfg, args.out_dir)
                                                 : train_with<float>(cfg, args.out_dir);
}

template <typename S>
int eval_with(const RunConfig& cfg, const std::string& checkpoint, const std::string& data_file) {
    Dataset ds = read_dataset(!data_file.empty()
                                  ? data_file
                                  : (cfg.data.val_path.empty() ? cfg.data.path : cfg.data.val_path));
    Tape<S> tape;
    SegModel<S> model(tape, cfg.model, cfg.train.seed);
    ParamList<S> params = model.params();
    apply_checkpoint(load_checkpoint(checkpoint), params);
    Confusion cm = evaluate(model, tape, ds, cfg.data.zero_aux, cfg.train.batch);
    IouResult r = miou_from_confusion(cm);
    for (int c = 0; c < cm.num_classes; ++c)
        if (!std::isnan(r.per_class[c])) std::printf("class %d IoU %.4f\n", c, r.per_class[c]);
    std::printf("mIoU %.4f over %zu samples\n", r.mean, ds.samples.size());
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& data_file) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    return cfg.train.precision == Precision::F64 ? eval_with<double>(cfg, checkpoint, data_file)
                                                 : eval_with<float>(cfg, checkpoint, data_file);
}

template <typename S>
std::vector<AblationRow> ablate_with(const RunConfig& base, const std::string& grid,
                                     const std::vector<uint64_t>& seeds, bool dry,
                                     const std::string& out_dir) {
    std::vector<AblationCell> cells = make_ablation_grid(grid, base);
    std::vector<AblationRow> rows(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
        rows[i].name = cells[i].name;
        rows[i].is_baseline = cells[i].name.find("(baseline)") != std::string::npos;
        Tape<S> probe;
        SegModel<S> model(probe, cells[i].cfg.model, 1);
        rows[i].params = param_count(model.params());
        rows[i].macs = estimate_macs(cells[i].cfg.model, cells[i].cfg.data.image_size);
    }
    if (!dry) {
        Dataset train_ds = load_or_make(base.data.path, base, 200, 1000);
        Dataset val_ds = load_or_make(base.data.val_path, base, 50, 2000);

        struct Job {
            size_t cell;
            uint64_t seed;
        };
        std::vector<Job> jobs;
        for (size_t i = 0; i < cells.size(); ++i)
            for (uint64_t s : seeds) jobs.push_back({i, s});
        std::vector<double> mious(jobs.size(), 0.0);

        int threads = std::min<int>(worker_threads(), static_cast<int>(jobs.size()));
        std::atomic<size_t> next{0};
        auto worker = [&] {
            while (true) {
                size_t j = next.fetch_add(1);
                if (j >= jobs.size()) break;
                RunConfig cfg = cells[jobs[j].cell].cfg;
                cfg.train.seed = jobs[j].seed;
                std::string dir = out_dir.empty()
                                      ? ""
                                      : out_dir + "/" + grid + "/" + cells[jobs[j].cell].name +
                                            "/seed" + std::to_string(jobs[j].seed);
                TrainResult r = train_run<S>(cfg, train_ds, val_ds, dir);
                mious[j] = r.best_val_miou;
            }
        };
        if (threads <= 1)
            worker();
        else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }
        for (size_t j = 0; j < jobs.size(); ++j) rows[jobs[j].cell].mious.push_back(mious[j]);
        double baseline = 0;
        for (auto& r : rows) {
            r.median_miou = median_of(r.mious);
            if (r.is_baseline) baseline = r.median_miou;
        }
        for (auto& r : rows) r.delta = r.median_miou - baseline;
    }
    return rows;
}

int cmd_ablate(const CommonArgs& args, const std::string& grid, const std::string& seed_list,
               bool dry) {
    RunConfig base = resolve_config(args);
    print_banner(base);
    std::vector<uint64_t> seeds;
    {
        std::stringstream ss(seed_list);
        std::string tok;
        while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    }
    std::vector<std::string> grids;
    if (grid == "all")
        grids = {"components", "gates", "projection", "fusion"};
    else
        grids = {grid};

    std::filesystem::create_directories(args.out_dir);
    auto records = binio::open_out(args.out_dir + "/ablation_records.jsonl");
    for (const auto& g : grids) {
        std::vector<AblationRow> rows =
            base.train.precision == Precision::F64
                ? ablate_with<double>(base, g, seeds, dry, args.out_dir)
                : ablate_with<float>(base, g, seeds, dry, args.out_dir);
        std::string table = format_ablation_table(rows);
        std::cout << "== grid: " << g << " ==\n" << table;
        auto ts = binio::open_out(args.out_dir + "/ablation_" + g + ".txt");
        ts << table;
        for (const auto& r : rows) {
            json j;
            j["grid"] = g;
            j["cell"] = r.name;
            j["params"] = r.params;
            j["macs"] = r.macs;
            j["mious"] = r.mious;
            j["median_miou"] = r.median_miou;
            j["baseline"] = r.is_baseline;
            j["delta"] = r.delta;
            records << j.dump() << "\n";
        }
    }
    std::cout << "records in " << args.out_dir << "/ablation_records.jsonl\n";
    return 0;
}

int cmd_bench(const CommonArgs& args, const std::string& lengths_csv, int64_t N, int64_t D,
              int64_t chunk) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    std::vector<int64_t> lengths;
    {
        std::stringstream ss(lengths_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) lengths.push_back(std::stoll(tok));
    }
    int threads = worker_threads();
    std::vector<BenchRecord> recs =
        cfg.train.precision == Precision::F64
            ? run_scan_bench<double>(lengths, N, D, chunk, threads)
            : run_scan_bench<float>(lengths, N, D, chunk, threads);

    std::filesystem::create_directories(args.out_dir);
    auto os = binio::open_out(args.out_dir + "/bench_records.jsonl");
    std::printf("%-12s %8s %4s %4s %6s %8s %14s %16s\n", "impl", "L", "N", "D", "chunk", "threads",
                "s/scan", "tokens/s");
    for (const auto& r : recs) {
        std::printf("%-12s %8lld %4lld %4lld %6lld %8d %14.6f %16.0f\n", r.impl.c_str(),
                    static_cast<long long>(r.L), static_cast<long long>(r.N),
                    static_cast<long long>(r.D), static_cast<long long>(r.chunk), r.threads,
                    r.seconds_per_scan, r.tokens_per_second);
        json j;
        j["impl"] = r.impl;
        j["L"] = r.L;
        j["N"] = r.N;
        j["D"] = r.D;
        j["chunk"] = r.chunk;
        j["threads"] = r.threads;
        j["seconds_per_scan"] = r.seconds_per_scan;
        j["tokens_per_second"] = r.tokens_per_second;
        j["precision"] = precision_name(cfg.train.precision);
        os << j.dump() << "\n";
    }

    // with lane parallelism on, the blocked scan must not fall behind the
    // sequential reference at long sequence lengths
    if (threads > 1) {
        for (size_t i = 0; i + 1 < recs.size(); i += 2) {
            if (recs[i].L < 4096) continue;
            if (recs[i + 1].tokens_per_second < recs[i].tokens_per_second) {
                std::printf("bench: blocked scan slower than sequential at L=%lld\n",
                            static_cast<long long>(recs[i].L));
                return 2;
            }
        }
    }
    return 0;
}

int cmd_gate_viz(const CommonArgs& args, const std::string& checkpoint,
                 const std::string& data_file, int index) {
    RunConfig cfg = resolve_config(args);
    print_banner(cfg);
    Dataset ds = read_dataset(!data_file.empty() ? data_file : cfg.data.val_path);
    if (index < 0 || index >= static_cast<int>(ds.samples.size()))
        throw ContractError("gate-viz: sample index out of range");
    Tape<float> tape;
    SegModel<float> model(tape, cfg.model, cfg.train.seed);
    if (!checkpoint.empty()) {
        ParamList<float> params = model.params();
        apply_checkpoint(load_checkpoint(checkpoint), params);
    }
    std::filesystem::create_directories(args.out_dir);
    auto maps = capture_gate_maps(model, tape, ds.samples[index]);
    if (maps.empty()) throw ConfigError("gate-viz: the configured fusion variant has no gates");
    auto written = write_gate_images(maps, ds.samples[index], args.out_dir);
    for (const auto& p : written) std::cout << "wrote " << p << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reliability-gated state-space fusion workbench"};
    app.require_subcommand(1);

    CommonArgs gen_args, grad_args, scan_args, train_args, eval_args, abl_args, bench_args,
        viz_args;
    std::string gen_out, eval_ckpt, eval_data, abl_grid = "all", abl_seeds = "1,2,3,4,5";
    std::string bench_lengths = "1024,2048,4096,8192";
    std::string viz_ckpt, viz_data;
    int gen_count = 200, grad_seeds = 10, scan_seeds = 50, viz_index = 0;
    int64_t bench_n = 16, bench_d = 32, bench_chunk = 64;
    bool abl_dry = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic RGB-X dataset file");
    add_common(gen, gen_args, false);
    gen->add_option("--out-file", gen_out, "output dataset path")->required();
    gen->add_option("--count", gen_count, "number of samples");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every operation");
    add_common(grad, grad_args, false);
    grad->add_option("--seeds", grad_seeds, "random instances per operation");

    auto* scan = app.add_subcommand("scan-check", "blocked vs sequential scan oracle matrix");
    add_common(scan, scan_args, false);
    scan->add_option("--seeds", scan_seeds, "seeds per grid cell");

    auto* train = app.add_subcommand("train", "train a model from a config");
    add_common(train, train_args, true);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, eval_args, true);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset file (default: config val_path)");

    auto* abl = app.add_subcommand("ablate", "run an ablation grid");
    add_common(abl, abl_args, true);
    abl->add_option("--grid", abl_grid, "components|gates|projection|fusion|all");
    abl->add_option("--seeds", abl_seeds, "comma-separated seed list");
    abl->add_flag("--dry", abl_dry, "emit params/MACs table without training");

    auto* bench = app.add_subcommand("bench", "scan throughput benchmark");
    add_common(bench, bench_args, false);
    bench->add_option("--lengths", bench_lengths, "comma-separated sequence lengths");
    bench->add_option("--N", bench_n, "state size");
    bench->add_option("--D", bench_d, "channels");
    bench->add_option("--chunk", bench_chunk, "blocked scan chunk");

    auto* viz = app.add_subcommand("gate-viz", "emit gate maps as PGM/PPM images");
    add_common(viz, viz_args, true);
    viz->add_option("--checkpoint", viz_ckpt, "checkpoint file (omit for untrained weights)");
    viz->add_option("--data", viz_data, "dataset file (default: config val_path)");
    viz->add_option("--index", viz_index, "sample index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1, --help exits 0
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args, gen_out, gen_count);
        if (grad->parsed()) return cmd_gradcheck(grad_args, grad_seeds);
        if (scan->parsed()) return cmd_scan_check(scan_args, scan_seeds);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_data);
        if (abl->parsed()) return cmd_ablate(abl_args, abl_grid, abl_seeds, abl_dry);
        if (bench->parsed())
            return cmd_bench(bench_args, bench_lengths, bench_n, bench_d, bench_chunk);
        if (viz->parsed()) return cmd_gate_viz(viz_args, viz_ckpt, viz_data, viz_index);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 2;
    } catch (const DimError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
