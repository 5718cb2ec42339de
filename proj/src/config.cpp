#include "rsg/config.hpp"

#include <fstream>

namespace rsg {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const char* where, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError(std::string("unknown key ") + where + "." + it.key());
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
    }
}

}  // namespace

RunConfig config_from_json(const json& j) {
    reject_unknown(j, "<root>", {"model", "data", "train"});
    RunConfig cfg;

    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, "model", {"dims", "N", "rank", "d_loc", "fusion", "gates", "lcgm"});
        if (m.contains("dims")) {
            cfg.model.dims = m.at("dims").get<std::vector<int64_t>>();
            if (cfg.model.dims.empty() || cfg.model.dims.size() > 4)
                throw ConfigError("model.dims: expected 1 to 4 stages");
            for (int64_t d : cfg.model.dims)
                if (d < 4) throw ConfigError("model.dims: stage width must be >= 4");
        }
        cfg.model.n_state = get_or<int64_t>(m, "N", cfg.model.n_state);
        if (cfg.model.n_state < 1) throw ConfigError("model.N must be >= 1");
        cfg.model.rank_div = get_or<int64_t>(m, "rank", cfg.model.rank_div);
        if (cfg.model.rank_div < 0) throw ConfigError("model.rank must be >= 0");
        cfg.model.d_loc_div = get_or<int64_t>(m, "d_loc", cfg.model.d_loc_div);
        if (cfg.model.d_loc_div < 1) throw ConfigError("model.d_loc must be >= 1");
        if (m.contains("fusion")) cfg.model.fusion = fusion_from_name(m.at("fusion").get<std::string>());
        if (m.contains("gates")) {
            const json& g = m.at("gates");
            reject_unknown(g, "model.gates", {"g_u", "g_c"});
            cfg.model.use_g_u = get_or<bool>(g, "g_u", cfg.model.use_g_u);
            cfg.model.use_g_c = get_or<bool>(g, "g_c", cfg.model.use_g_c);
        }
        cfg.model.lcgm = get_or<bool>(m, "lcgm", cfg.model.lcgm);
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, "data",
                       {"path", "val_path", "corruption", "K", "image_size", "zero_aux"});
        cfg.data.path = get_or<std::string>(d, "path", cfg.data.path);
        cfg.data.val_path = get_or<std::string>(d, "val_path", cfg.data.val_path);
        if (d.contains("corruption")) {
            const json& c = d.at("corruption");
            reject_unknown(c, "data.corruption", {"mode", "level"});
            if (c.contains("mode"))
                cfg.data.corruption.mode = corruption_from_name(c.at("mode").get<std::string>());
            cfg.data.corruption.level = get_or<double>(c, "level", cfg.data.corruption.level);
            if (cfg.data.corruption.level < 0 || cfg.data.corruption.level > 1)
                throw ConfigError("data.corruption.level must be in [0,1]");
        }
        cfg.data.num_classes = get_or<int>(d, "K", cfg.data.num_classes);
        if (cfg.data.num_classes < 2 || cfg.data.num_classes > 255)
            throw ConfigError("data.K must be in [2,255]");
        cfg.data.image_size = get_or<int>(d, "image_size", cfg.data.image_size);
        cfg.data.zero_aux = get_or<bool>(d, "zero_aux", cfg.data.zero_aux);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t, "train",
                       {"epochs", "batch", "base_lr", "warmup", "weight_decay", "seed",
                        "precision", "hflip"});
        cfg.train.epochs = get_or<int>(t, "epochs", cfg.train.epochs);
        cfg.train.batch = get_or<int>(t, "batch", cfg.train.batch);
        if (cfg.train.epochs < 1 || cfg.train.batch < 1)
            throw ConfigError("train.epochs and train.batch must be >= 1");
        cfg.train.base_lr = get_or<double>(t, "base_lr", cfg.train.base_lr);
        cfg.train.warmup = get_or<double>(t, "warmup", cfg.train.warmup);
        cfg.train.weight_decay = get_or<double>(t, "weight_decay", cfg.train.weight_decay);
        cfg.train.seed = get_or<uint64_t>(t, "seed", cfg.train.seed);
        if (t.contains("precision"))
            cfg.train.precision = precision_from_name(t.at("precision").get<std::string>());
        cfg.train.hflip = get_or<bool>(t, "hflip", cfg.train.hflip);
    }

    cfg.model.num_classes = cfg.data.num_classes;
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    json j;
    j["model"] = {{"dims", cfg.model.dims},
                  {"N", cfg.model.n_state},
                  {"rank", cfg.model.rank_div},
                  {"d_loc", cfg.model.d_loc_div},
                  {"fusion", fusion_name(cfg.model.fusion)},
                  {"gates", {{"g_u", cfg.model.use_g_u}, {"g_c", cfg.model.use_g_c}}},
                  {"lcgm", cfg.model.lcgm}};
    j["data"] = {{"path", cfg.data.path},
                 {"val_path", cfg.data.val_path},
                 {"corruption",
                  {{"mode", corruption_name(cfg.data.corruption.mode)},
                   {"level", cfg.data.corruption.level}}},
                 {"K", cfg.data.num_classes},
                 {"image_size", cfg.data.image_size},
                 {"zero_aux", cfg.data.zero_aux}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch", cfg.train.batch},
                  {"base_lr", cfg.train.base_lr},
                  {"warmup", cfg.train.warmup},
                  {"weight_decay", cfg.train.weight_decay},
                  {"seed", cfg.train.seed},
                  {"precision", precision_name(cfg.train.precision)},
                  {"hflip", cfg.train.hflip}};
    return j;
}

void apply_override(json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // bare string
    }

    json* cur = &j;
    size_t pos = 0;
    while (true) {
        size_t dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("override has an empty path segment: " + assignment);
        if (dot == std::string::npos) {
            (*cur)[key] = parsed;
            break;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const auto& ov : overrides) apply_override(j, ov);
    return config_from_json(j);
}

SceneSpec scene_spec_from(const RunConfig& cfg) {
    SceneSpec spec;
    spec.height = cfg.data.image_size;
    spec.width = cfg.data.image_size;
    spec.num_classes = cfg.data.num_classes;
    spec.corruption = cfg.data.corruption;
    spec.seed = cfg.train.seed;
    return spec;
}

}  // namespace rsg
