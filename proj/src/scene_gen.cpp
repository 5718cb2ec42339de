#include <algorithm>
#include <cmath>

#include "rsg/data.hpp"
#include "rsg/rng.hpp"

namespace rsg {

namespace {

struct Color {
    float r, g, b;
};

// HSV -> RGB, inputs in [0,1].
Color hsv(float h, float s, float v) {
    float i = std::floor(h * 6.0f);
    float f = h * 6.0f - i;
    float p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

// Fixed palette with deliberate collisions: foreground classes come in pairs
// (1,2), (3,4), ... that share one color. Paired classes cannot be told apart
// from RGB alone; only the auxiliary intensity separates them. This is what
// makes the auxiliary modality strictly more discriminative than RGB when it
// is clean.
Color class_color(int cls, int num_classes) {
    int color_idx = cls == 0 ? 0 : (cls % 2 == 1 ? cls : cls - 1);
    float h = static_cast<float>(color_idx) / static_cast<float>(num_classes);
    float v = 0.45f + 0.25f * static_cast<float>(color_idx % 2);
    return hsv(h, 0.55f, v);
}

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

void paint_shapes(std::vector<uint8_t>& labels, int h, int w, const SceneSpec& spec, Rng& rng) {
    int n_shapes = static_cast<int>(rng.uniform_int(spec.shapes_min, spec.shapes_max));
    for (int s = 0; s < n_shapes; ++s) {
        int cls = static_cast<int>(rng.uniform_int(1, spec.num_classes - 1));
        bool ellipse = rng.uniform() < 0.5;
        double cy = rng.uniform(0.1, 0.9) * h;
        double cx = rng.uniform(0.1, 0.9) * w;
        double ry = rng.uniform(0.08, 0.30) * h;
        double rx = rng.uniform(0.08, 0.30) * w;
        int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(h - 1, static_cast<int>(cy + ry));
        int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(w - 1, static_cast<int>(cx + rx));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (ellipse) {
                    double dy = (y - cy) / ry, dx = (x - cx) / rx;
                    if (dy * dy + dx * dx > 1.0) continue;
                }
                labels[y * w + x] = static_cast<uint8_t>(cls);
            }
    }
}

void corrupt_aux(SceneSample& s, const SceneSpec& spec, const std::vector<uint8_t>& clean_labels,
                 Rng& rng) {
    const int h = s.height, w = s.width;
    const int64_t hw = static_cast<int64_t>(h) * w;
    const double level = spec.corruption.level;
    if (spec.corruption.mode == CorruptionMode::None || level <= 0.0) return;

    switch (spec.corruption.mode) {
        case CorruptionMode::GaussianNoise: {
            // blend with unit-variance noise; every pixel is touched
            for (int64_t i = 0; i < hw; ++i) {
                float n = static_cast<float>(rng.normal(0.5, 1.0));
                float v = clamp01((1.0 - level) * s.aux[i] + level * n);
                s.aux[i] = v;
                s.aux[hw + i] = v;
                s.aux[2 * hw + i] = v;
                s.mask[i] = 1;
            }
            break;
        }
        case CorruptionMode::RegionDropout: {
            // smooth random field thresholded at the exact level-quantile:
            // blob-shaped regions covering round(level*H*W) pixels
            std::vector<double> field(hw, 0.0);
            for (int blob = 0; blob < 6; ++blob) {
                double a = rng.uniform(0.5, 1.5);
                double cy = rng.uniform(0.0, h), cx = rng.uniform(0.0, w);
                double sig = rng.uniform(h / 12.0, h / 4.0);
                double inv = 1.0 / (2.0 * sig * sig);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        field[y * w + x] +=
                            a * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) * inv);
            }
            int64_t m = static_cast<int64_t>(std::llround(level * static_cast<double>(hw)));
            if (m > 0) {
                std::vector<double> sorted(field);
                std::nth_element(sorted.begin(), sorted.begin() + (hw - m), sorted.end());
                double thr = sorted[hw - m];  // drop the m largest field values
                int64_t dropped = 0;
                for (int64_t i = 0; i < hw && dropped < m; ++i)
                    if (field[i] > thr) {
                        s.mask[i] = 1;
                        ++dropped;
                    }
                for (int64_t i = 0; i < hw && dropped < m; ++i)
                    if (!s.mask[i] && field[i] == thr) {
                        s.mask[i] = 1;
                        ++dropped;
                    }
                for (int64_t i = 0; i < hw; ++i)
                    if (s.mask[i]) {
                        s.aux[i] = 0.0f;
                        s.aux[hw + i] = 0.0f;
                        s.aux[2 * hw + i] = 0.0f;
                    }
            }
            break;
        }
        case CorruptionMode::Misalignment: {
            int shift = static_cast<int>(std::lround(level * 8.0));
            if (shift == 0) return;
            std::vector<float> shifted(s.aux.size());
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    int sy = std::max(0, std::min(h - 1, y - shift));
                    int sx = std::max(0, std::min(w - 1, x - shift));
                    for (int c = 0; c < 3; ++c)
                        shifted[c * hw + y * w + x] = s.aux[c * hw + sy * w + sx];
                    s.mask[y * w + x] =
                        clean_labels[sy * w + sx] != clean_labels[y * w + x] ? 1 : 0;
                }
            s.aux = std::move(shifted);
            break;
        }
        case CorruptionMode::None: break;
    }
}

}  // namespace

SceneSample generate_scene(const SceneSpec& spec, uint64_t index) {
    if (spec.num_classes < 2) throw ConfigError("scene: need at least 2 classes");
    if (spec.height % 32 || spec.width % 32)
        throw ConfigError("scene: H and W must be divisible by 32");
    SceneSample s;
    s.height = spec.height;
    s.width = spec.width;
    const int h = spec.height, w = spec.width;
    const int64_t hw = static_cast<int64_t>(h) * w;
    s.rgb.assign(3 * hw, 0.0f);
    s.aux.assign(3 * hw, 0.0f);
    s.labels.assign(hw, 0);
    s.mask.assign(hw, 0);

    // scene stream and corruption stream are independent
    Rng scene_rng(mix_seed(spec.seed, 2 * index));
    Rng corrupt_rng(mix_seed(spec.seed, 2 * index + 1));

    paint_shapes(s.labels, h, w, spec, scene_rng);

    for (int64_t i = 0; i < hw; ++i) {
        int cls = s.labels[i];
        Color c = class_color(cls, spec.num_classes);
        s.rgb[i] = clamp01(c.r + scene_rng.normal(0.0, 0.25));
        s.rgb[hw + i] = clamp01(c.g + scene_rng.normal(0.0, 0.25));
        s.rgb[2 * hw + i] = clamp01(c.b + scene_rng.normal(0.0, 0.25));
        float av = aux_intensity(cls, spec.num_classes);
        s.aux[i] = av;
        s.aux[hw + i] = av;
        s.aux[2 * hw + i] = av;
    }

    corrupt_aux(s, spec, s.labels, corrupt_rng);
    return s;
}

Dataset generate_dataset(const SceneSpec& spec, int n_samples) {
    Dataset ds;
    ds.height = static_cast<uint32_t>(spec.height);
    ds.width = static_cast<uint32_t>(spec.width);
    ds.num_classes = static_cast<uint32_t>(spec.num_classes);
    ds.samples.reserve(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i)
        ds.samples.push_back(generate_scene(spec, static_cast<uint64_t>(i)));
    return ds;
}

}  // namespace rsg
