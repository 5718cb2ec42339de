#pragma once

#include <json.hpp>

#include "rsg/data.hpp"
#include "rsg/model.hpp"

// Run configuration: strict JSON with the fixed schema below. Unknown keys
// are an error; missing keys take the documented defaults. `rank` and `d_loc`
// are divisors relative to each stage's channel count (stage widths differ,
// so absolute values would not compose); rank = 0 selects dense projections.

namespace rsg {

enum class Precision { F32, F64 };

inline const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

inline Precision precision_from_name(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("unknown precision: " + s + " (expected f32 or f64)");
}

struct DataConfig {
    std::string path;
    std::string val_path;
    CorruptionSpec corruption;
    int num_classes = 5;  // key "K"
    int image_size = 64;
    bool zero_aux = false;  // train/eval with the auxiliary input zeroed
};

struct TrainConfig {
    int epochs = 60;
    int batch = 8;
    double base_lr = 3e-4;
    double warmup = 10;  // epochs
    double weight_decay = 0.01;
    uint64_t seed = 1;
    Precision precision = Precision::F32;
    bool hflip = false;
};

struct RunConfig {
    ModelSpec model;
    DataConfig data;
    TrainConfig train;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

// "a.b.c=value" dotted-path override; the value is parsed as JSON when it is
// one, as a bare string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

SceneSpec scene_spec_from(const RunConfig& cfg);

}  // namespace rsg
