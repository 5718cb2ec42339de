#pragma once

#include <json.hpp>

#include <filesystem>

#include "rsg/checkpoint.hpp"
#include "rsg/config.hpp"
#include "rsg/data.hpp"
#include "rsg/optim.hpp"

// Training loop, evaluation and the ablation harness. A run is a pure
// function of (config, datasets): shuffling, init and data are all seeded,
// the loop is single-threaded over one tape, and the metric log stores the
// per-epoch confusion matrix so every logged mIoU can be recomputed exactly.

namespace rsg {

template <typename S>
struct Batch {
    Tensor<S> rgb, aux;
    std::vector<int32_t> labels;
};

template <typename S>
Batch<S> make_batch(const Dataset& ds, const std::vector<int>& order, size_t first, size_t count,
                    bool zero_aux, const std::vector<uint8_t>& flip_flags = {}) {
    int64_t H = ds.height, W = ds.width, hw = H * W;
    Batch<S> b;
    b.rgb = Tensor<S>::zeros({static_cast<int64_t>(count), 3, H, W});
    b.aux = Tensor<S>::zeros({static_cast<int64_t>(count), 3, H, W});
    b.labels.resize(count * hw);
    for (size_t i = 0; i < count; ++i) {
        const SceneSample& s = ds.samples[order[first + i]];
        bool flip = !flip_flags.empty() && flip_flags[first + i];
        S* rgb_dst = b.rgb.data() + static_cast<int64_t>(i) * 3 * hw;
        S* aux_dst = b.aux.data() + static_cast<int64_t>(i) * 3 * hw;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    int64_t src = c * hw + y * W + (flip ? W - 1 - x : x);
                    rgb_dst[c * hw + y * W + x] = static_cast<S>(s.rgb[src]);
                    if (!zero_aux) aux_dst[c * hw + y * W + x] = static_cast<S>(s.aux[src]);
                }
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                b.labels[i * hw + y * W + x] =
                    static_cast<int32_t>(s.labels[y * W + (flip ? W - 1 - x : x)]);
    }
    return b;
}

template <typename S>
Confusion evaluate(SegModel<S>& model, Tape<S>& tape, const Dataset& ds, bool zero_aux,
                   int batch_size) {
    Confusion cm(static_cast<int>(ds.num_classes));
    std::vector<int> order(ds.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    typename Tape<S>::NoGrad guard(tape);
    for (size_t first = 0; first < order.size(); first += batch_size) {
        size_t count = std::min<size_t>(batch_size, order.size() - first);
        Batch<S> b = make_batch<S>(ds, order, first, count, zero_aux);
        Tensor<S> logits = model.forward(b.rgb, b.aux);
        std::vector<int32_t> pred = argmax_classes(logits);
        accumulate_confusion(cm, pred, b.labels, kIgnoreIndex);
    }
    return cm;
}

struct EpochRecord {
    int epoch = 0;
    double loss = 0, lr = 0, val_miou = 0;
    Confusion confusion;
};

struct TrainResult {
    double best_val_miou = 0;
    int best_epoch = -1;
    double final_val_miou = 0;
    std::vector<std::string> log_lines;  // one JSON object per line
    std::vector<EpochRecord> epochs;
    int64_t param_count = 0;
};

namespace detail {

inline std::string epoch_json(const EpochRecord& r) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    j["val_miou"] = r.val_miou;
    j["confusion"] = r.confusion.counts;
    return j.dump();
}

}  // namespace detail

// Trains on `train_ds`, evaluates on `val_ds` after every epoch, keeps the
// best-by-val-mIoU parameters. When out_dir is non-empty writes
// checkpoint.rsgc, metrics.jsonl and config.json there.
template <typename S>
TrainResult train_run(const RunConfig& cfg, const Dataset& train_ds, const Dataset& val_ds,
                      const std::string& out_dir = "") {
    if (train_ds.samples.empty()) throw ContractError("train: empty training set");
    Tape<S> tape;
    SegModel<S> model(tape, cfg.model, cfg.train.seed);
    ParamList<S> params = model.params();
    AdamW<S> opt(params, cfg.train.weight_decay);
    Schedule sched{cfg.train.base_lr, cfg.train.warmup, static_cast<double>(cfg.train.epochs), 0.9};

    const size_t n = train_ds.samples.size();
    const size_t bs = static_cast<size_t>(cfg.train.batch);
    const size_t steps = (n + bs - 1) / bs;

    TrainResult res;
    res.param_count = param_count(params);
    std::vector<std::vector<S>> best_params;

    std::vector<int> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.train.seed, 0xE50C + static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());
        std::vector<uint8_t> flips(n, 0);
        if (cfg.train.hflip)
            for (auto& f : flips) f = shuffle_rng.uniform() < 0.5 ? 1 : 0;

        double loss_acc = 0;
        double lr = 0;
        for (size_t s = 0; s < steps; ++s) {
            size_t first = s * bs;
            size_t count = std::min(bs, n - first);
            Batch<S> batch = make_batch<S>(train_ds, order, first, count, cfg.data.zero_aux, flips);
            lr = lr_at(sched, epoch + static_cast<double>(s) / static_cast<double>(steps));
            Tensor<S> logits = model.forward(batch.rgb, batch.aux);
            Tensor<S> loss = cross_entropy(logits, batch.labels, kIgnoreIndex);
            double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                     " step " + std::to_string(s));
            loss_acc += lv * static_cast<double>(count);
            tape.backward(loss);
            opt.step(lr);
            opt.zero_grad();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_acc / static_cast<double>(n);
        rec.lr = lr;
        rec.confusion = evaluate(model, tape, val_ds, cfg.data.zero_aux, cfg.train.batch);
        rec.val_miou = miou_from_confusion(rec.confusion).mean;
        res.log_lines.push_back(detail::epoch_json(rec));
        res.epochs.push_back(rec);

        if (rec.val_miou > res.best_val_miou || res.best_epoch < 0) {
            res.best_val_miou = rec.val_miou;
            res.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p.tensor.values());
        }
        res.final_val_miou = rec.val_miou;
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        // restore the best parameters into a copy for saving
        ParamList<S> snapshot = params;
        for (size_t i = 0; i < snapshot.size(); ++i) snapshot[i].tensor.values() = best_params[i];
        save_checkpoint(out_dir + "/checkpoint.rsgc", snapshot);
        auto os = binio::open_out(out_dir + "/metrics.jsonl");
        for (const auto& line : res.log_lines) os << line << "\n";
        auto cs = binio::open_out(out_dir + "/config.json");
        cs << config_to_json(cfg).dump(2) << "\n";
    }
    return res;
}

// ---- analytic multiply-accumulate estimate ----------------------------------

// Counts conv / linear / matmul / scan multiply-accumulates for one sample at
// the configured image size. Elementwise work and normalisation are excluded.
int64_t estimate_macs(const ModelSpec& spec, int image_size);

// ---- ablation harness --------------------------------------------------------

struct AblationCell {
    std::string name;
    RunConfig cfg;
};

struct AblationRow {
    std::string name;
    int64_t params = 0;
    int64_t macs = 0;
    std::vector<double> mious;  // one per seed
    double median_miou = 0;
    bool is_baseline = false;
    double delta = 0;  // vs baseline median
};

// Grids mirror the ablation axes: components (global/local module on/off),
// gates (g_u x g_c), projection (dense vs low-rank), fusion (five variants).
std::vector<AblationCell> make_ablation_grid(const std::string& grid, const RunConfig& base);

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace rsg
