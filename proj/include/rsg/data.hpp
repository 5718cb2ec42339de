#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsg/common.hpp"

// Synthetic RGB-X scenes with a controllable auxiliary-modality corruption and
// the ground-truth corruption mask, plus the binary dataset container.
//
// Scene construction: random rectangles and ellipses over a background, one
// class per shape. RGB draws each class from a fixed palette with heavy pixel
// noise (classes overlap in RGB); the clean auxiliary channel is the exact
// class intensity (c + 0.5)/K, so when it is uncorrupted it is strictly more
// discriminative than RGB. Generation is a pure function of (spec, index);
// the scene stream and the corruption stream are separate, so the same seed
// and index give the same scene at every corruption level.

namespace rsg {

enum class CorruptionMode { None, GaussianNoise, RegionDropout, Misalignment };

inline const char* corruption_name(CorruptionMode m) {
    switch (m) {
        case CorruptionMode::None: return "none";
        case CorruptionMode::GaussianNoise: return "gaussian_noise";
        case CorruptionMode::RegionDropout: return "region_dropout";
        case CorruptionMode::Misalignment: return "misalignment";
    }
    return "?";
}

inline CorruptionMode corruption_from_name(const std::string& s) {
    if (s == "none") return CorruptionMode::None;
    if (s == "gaussian_noise") return CorruptionMode::GaussianNoise;
    if (s == "region_dropout") return CorruptionMode::RegionDropout;
    if (s == "misalignment") return CorruptionMode::Misalignment;
    throw ConfigError("unknown corruption mode: " + s);
}

struct CorruptionSpec {
    CorruptionMode mode = CorruptionMode::None;
    double level = 0.0;  // in [0, 1]
};

struct SceneSpec {
    int height = 64, width = 64;
    int num_classes = 5;
    int shapes_min = 4, shapes_max = 8;
    CorruptionSpec corruption;
    uint64_t seed = 1;
};

struct SceneSample {
    int height = 0, width = 0;
    std::vector<float> rgb;       // [3*H*W], values in [0,1]
    std::vector<float> aux;       // [3*H*W], values in [0,1]
    std::vector<uint8_t> labels;  // [H*W], in [0,K)
    std::vector<uint8_t> mask;    // [H*W], 1 where aux was corrupted
};

// Exact clean auxiliary intensity of a class.
inline float aux_intensity(int cls, int num_classes) {
    return (static_cast<float>(cls) + 0.5f) / static_cast<float>(num_classes);
}

SceneSample generate_scene(const SceneSpec& spec, uint64_t index);

struct Dataset {
    uint32_t height = 0, width = 0, num_classes = 0;
    std::vector<SceneSample> samples;
};

Dataset generate_dataset(const SceneSpec& spec, int n_samples);

// Container: "RSGX" | version u32 | count u32 | H u32 | W u32 | K u32 |
// per sample: rgb f32[3HW] | aux f32[3HW] | labels u8[HW] | mask u8[HW].
// All little-endian, no padding.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

constexpr uint32_t kDatasetVersion = 1;

}  // namespace rsg
