#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rsg/config.hpp"

using namespace rsg;
using nlohmann::json;

TEST_CASE("defaults round trip through json") {
    RunConfig def;
    json j = config_to_json(def);
    RunConfig back = config_from_json(j);
    CHECK(back.model.dims == def.model.dims);
    CHECK(back.model.fusion == def.model.fusion);
    CHECK(back.train.epochs == 60);
    CHECK(back.train.batch == 8);
    CHECK(back.train.base_lr == 3e-4);
    CHECK(back.train.weight_decay == 0.01);
    CHECK(back.train.precision == Precision::F32);
}

TEST_CASE("unknown keys are rejected at every level") {
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"bogus": 1})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"bogus": 1}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"gates": {"g_q": true}}})")),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"data": {"corruption": {"sigma": 1}}})")),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"lr": 0.1}})")), ConfigError);
}

TEST_CASE("value validation") {
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"fusion": "maxpool"}})")),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"dims": []}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"data": {"corruption": {"level": 1.5}}})")),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"data": {"K": 1}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"precision": "f16"}})")),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"epochs": 0}})")), ConfigError);
}

TEST_CASE("parsed values land in the right places") {
    json j = json::parse(R"({
      "model": {"dims": [8, 16], "N": 4, "rank": 0, "fusion": "cross_mamba",
                "gates": {"g_u": false, "g_c": true}, "lcgm": false},
      "data": {"path": "train.rsgx", "val_path": "val.rsgx",
               "corruption": {"mode": "region_dropout", "level": 0.5},
               "K": 7, "image_size": 96, "zero_aux": true},
      "train": {"epochs": 3, "batch": 2, "base_lr": 0.001, "warmup": 1,
                "weight_decay": 0.1, "seed": 42, "precision": "f64"}
    })");
    RunConfig cfg = config_from_json(j);
    CHECK(cfg.model.dims == std::vector<int64_t>{8, 16});
    CHECK(cfg.model.n_state == 4);
    CHECK(cfg.model.rank_div == 0);
    CHECK(cfg.model.fusion == FusionKind::CrossMamba);
    CHECK_FALSE(cfg.model.use_g_u);
    CHECK(cfg.model.use_g_c);
    CHECK_FALSE(cfg.model.lcgm);
    CHECK(cfg.data.corruption.mode == CorruptionMode::RegionDropout);
    CHECK(cfg.data.corruption.level == 0.5);
    CHECK(cfg.data.num_classes == 7);
    CHECK(cfg.model.num_classes == 7);  // propagated
    CHECK(cfg.data.zero_aux);
    CHECK(cfg.train.seed == 42);
    CHECK(cfg.train.precision == Precision::F64);
}

TEST_CASE("dotted overrides") {
    json j = config_to_json(RunConfig{});
    apply_override(j, "train.seed=9");
    apply_override(j, "model.gates.g_c=false");
    apply_override(j, "data.corruption.mode=gaussian_noise");
    apply_override(j, "data.corruption.level=0.75");
    RunConfig cfg = config_from_json(j);
    CHECK(cfg.train.seed == 9);
    CHECK_FALSE(cfg.model.use_g_c);
    CHECK(cfg.data.corruption.mode == CorruptionMode::GaussianNoise);
    CHECK(cfg.data.corruption.level == 0.75);

    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
    apply_override(j, "model.bogus=1");
    CHECK_THROWS_AS(config_from_json(j), ConfigError);  // still strict after override
}

TEST_CASE("scene spec derives from the data block") {
    RunConfig cfg;
    cfg.data.image_size = 96;
    cfg.data.num_classes = 4;
    cfg.data.corruption = {CorruptionMode::Misalignment, 0.25};
    cfg.train.seed = 77;
    SceneSpec spec = scene_spec_from(cfg);
    CHECK(spec.height == 96);
    CHECK(spec.num_classes == 4);
    CHECK(spec.corruption.mode == CorruptionMode::Misalignment);
    CHECK(spec.seed == 77);
}
