#pragma once

#include "rsg/image_io.hpp"
#include "rsg/model.hpp"
#include "rsg/train.hpp"

// Gate-map extraction and image emission: per-stage uncertainty/consistency
// maps as grayscale PGM at stage resolution, the ground-truth corruption mask
// for comparison, and a gate-over-RGB color composite.

namespace rsg {

template <typename S>
struct StageGateMaps {
    int64_t height = 0, width = 0;
    std::vector<float> g_u_rgb, g_u_x, g_c;  // row-major [height*width]
};

// Runs the model on one sample with gate capture on.
template <typename S>
std::vector<StageGateMaps<S>> capture_gate_maps(SegModel<S>& model, Tape<S>& tape,
                                                const SceneSample& sample, bool zero_aux = false) {
    Dataset one;
    one.height = static_cast<uint32_t>(sample.height);
    one.width = static_cast<uint32_t>(sample.width);
    one.num_classes = static_cast<uint32_t>(model.spec_.num_classes);
    one.samples.push_back(sample);
    std::vector<int> order{0};
    Batch<S> b = make_batch<S>(one, order, 0, 1, zero_aux);
    model.set_capture_gates(true);
    {
        typename Tape<S>::NoGrad guard(tape);
        model.forward(b.rgb, b.aux);
    }
    model.set_capture_gates(false);

    std::vector<StageGateMaps<S>> out;
    int64_t h = sample.height, w = sample.width;
    for (size_t i = 0; i < model.fusion_.size(); ++i) {
        const auto& f = model.fusion_[i];
        if (f.kind_ != FusionKind::Rsgmb && f.kind_ != FusionKind::CrossMamba) continue;
        StageGateMaps<S> m;
        m.height = h / (4ll << i);
        m.width = w / (4ll << i);
        auto to_map = [&](const Tensor<S>& g) {
            std::vector<float> v(static_cast<size_t>(m.height * m.width));
            if (g.defined())
                for (size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(g.values()[k]);
            return v;
        };
        m.g_u_rgb = to_map(f.rsgmb_.last_gates_.g_u_rgb);
        m.g_u_x = to_map(f.rsgmb_.last_gates_.g_u_x);
        m.g_c = to_map(f.rsgmb_.last_gates_.g_c);
        out.push_back(std::move(m));
    }
    return out;
}

// Mean gate value inside vs outside the ground-truth corruption mask
// (mask downsampled to the gate's resolution by box averaging).
struct GateMaskStats {
    double mean_inside = 0, mean_outside = 0;
    int64_t n_inside = 0, n_outside = 0;
};

template <typename S>
GateMaskStats gate_vs_mask(const std::vector<float>& gate, int64_t gh, int64_t gw,
                           const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
    GateMaskStats st;
    int64_t fy = h / gh, fx = w / gw;
    for (int64_t y = 0; y < gh; ++y)
        for (int64_t x = 0; x < gw; ++x) {
            double cov = 0;
            for (int64_t yy = 0; yy < fy; ++yy)
                for (int64_t xx = 0; xx < fx; ++xx) cov += mask[(y * fy + yy) * w + (x * fx + xx)];
            cov /= static_cast<double>(fy * fx);
            double g = gate[y * gw + x];
            if (cov >= 0.5) {
                st.mean_inside += g;
                ++st.n_inside;
            } else {
                st.mean_outside += g;
                ++st.n_outside;
            }
        }
    if (st.n_inside) st.mean_inside /= static_cast<double>(st.n_inside);
    if (st.n_outside) st.mean_outside /= static_cast<double>(st.n_outside);
    return st;
}

// Writes g_u_rgb/g_u_x/g_c per stage as PGM plus the corruption mask and a
// g_c-over-RGB PPM composite at full resolution.
template <typename S>
std::vector<std::string> write_gate_images(const std::vector<StageGateMaps<S>>& maps,
                                           const SceneSample& sample, const std::string& out_dir) {
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::vector<float>& v, int64_t w, int64_t h) {
        std::string path = out_dir + "/" + name + ".pgm";
        write_pgm(path, static_cast<int>(w), static_cast<int>(h), quantize01(v));
        written.push_back(path);
    };
    for (size_t i = 0; i < maps.size(); ++i) {
        const auto& m = maps[i];
        std::string stage = "stage" + std::to_string(i);
        emit("g_u_rgb_" + stage, m.g_u_rgb, m.width, m.height);
        emit("g_u_x_" + stage, m.g_u_x, m.width, m.height);
        emit("g_c_" + stage, m.g_c, m.width, m.height);
    }
    int64_t h = sample.height, w = sample.width;
    std::vector<float> maskf(sample.mask.begin(), sample.mask.end());
    emit("corruption_mask", maskf, w, h);

    if (!maps.empty()) {
        // overlay: blend the stage-0 consistency gate (nearest-upsampled) onto RGB
        const auto& m = maps[0];
        std::vector<uint8_t> overlay(static_cast<size_t>(3 * h * w));
        int64_t fy = h / m.height, fx = w / m.width;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                float g = m.g_c[(y / fy) * m.width + (x / fx)];
                for (int c = 0; c < 3; ++c) {
                    float rgb = sample.rgb[c * h * w + y * w + x];
                    float tint = c == 0 ? 1.0f - g : g;  // red where g_c is low
                    float v = 0.5f * rgb + 0.5f * tint;
                    overlay[(y * w + x) * 3 + c] =
                        static_cast<uint8_t>(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255));
                }
            }
        std::string path = out_dir + "/g_c_overlay.ppm";
        write_ppm(path, static_cast<int>(w), static_cast<int>(h), overlay);
        written.push_back(path);
    }
    return written;
}

}  // namespace rsg
