#pragma once

#include "rsg/fusion.hpp"
#include "rsg/metrics.hpp"

// Desk-scale dual-modality segmentation network: one weight-shared encoder
// applied to both inputs, per-stage fusion, and a small FPN-style decoder.
// Stage i halves the resolution of stage i-1; the first stage downsamples by
// 4, so inputs must be divisible by 4 * 2^(stages-1).

namespace rsg {

constexpr int32_t kIgnoreIndex = 255;

struct ModelSpec {
    std::vector<int64_t> dims{16, 32, 64, 128};  // channels per stage
    int64_t n_state = 8;
    int64_t rank_div = 8;   // low-rank divisor: r_i = max(1, dims[i]/rank_div); 0 -> dense
    int64_t d_loc_div = 2;  // local branch width divisor: d_loc_i = max(1, dims[i]/d_loc_div)
    FusionKind fusion = FusionKind::Rsgmb;
    bool use_g_u = true;
    bool use_g_c = true;
    bool lcgm = true;
    int64_t num_classes = 5;
    int64_t decoder_width = 64;

    int64_t input_divisor() const { return 4ll << (dims.size() - 1); }
};

template <typename S>
class ToyEncoder {
public:
    ToyEncoder() = default;
    ToyEncoder(Tape<S>& tape, const std::vector<int64_t>& dims, uint64_t seed) {
        int64_t c_in = 3;
        for (size_t i = 0; i < dims.size(); ++i) {
            Stage st;
            int stride = i == 0 ? 4 : 2;
            std::string name = "encoder.stage" + std::to_string(i);
            // non-zero bias init: the channel norm is scale-invariant at zero
            // bias, which would erase pure intensity contrasts (the auxiliary
            // modality is an intensity code)
            st.conv_down = Conv2d<S>(tape, name + ".conv_down", c_in, dims[i], 3, stride, 1, 1,
                                     seed, true, 0.2);
            st.ln1 = LayerNorm<S>(tape, name + ".ln1", dims[i], seed);
            st.conv = Conv2d<S>(tape, name + ".conv", dims[i], dims[i], 3, 1, 1, 1, seed, true, 0.2);
            st.ln2 = LayerNorm<S>(tape, name + ".ln2", dims[i], seed);
            stages_.push_back(std::move(st));
            c_in = dims[i];
        }
    }

    // x: [B,3,H,W] -> per-stage features in BHWC layout.
    std::vector<Tensor<S>> forward(const Tensor<S>& x) const {
        std::vector<Tensor<S>> feats;
        Tensor<S> cur = x;
        for (const auto& st : stages_) {
            Tensor<S> y = st.conv_down.forward(cur);
            y = to_nchw(relu(st.ln1.forward(to_bhwc(y))));
            y = st.conv.forward(y);
            Tensor<S> bhwc = relu(st.ln2.forward(to_bhwc(y)));
            feats.push_back(bhwc);
            cur = to_nchw(bhwc);
        }
        return feats;
    }

    void collect(ParamList<S>& out) const {
        for (const auto& st : stages_) {
            st.conv_down.collect(out);
            st.ln1.collect(out);
            st.conv.collect(out);
            st.ln2.collect(out);
        }
    }

    struct Stage {
        Conv2d<S> conv_down, conv;
        LayerNorm<S> ln1, ln2;
    };
    std::vector<Stage> stages_;
};

template <typename S>
class ToyDecoder {
public:
    ToyDecoder() = default;
    ToyDecoder(Tape<S>& tape, const std::vector<int64_t>& dims, int64_t width, int64_t num_classes,
               uint64_t seed)
        : width_(width) {
        for (size_t i = 0; i < dims.size(); ++i)
            proj_.push_back(
                Linear<S>(tape, "decoder.proj" + std::to_string(i), dims[i], width, seed));
        int64_t cat = width * static_cast<int64_t>(dims.size());
        conv1_ = Conv2d<S>(tape, "decoder.conv1", cat, width, 3, 1, 1, 1, seed);
        ln1_ = LayerNorm<S>(tape, "decoder.ln1", width, seed);
        conv2_ = Conv2d<S>(tape, "decoder.conv2", width, width, 3, 1, 1, 1, seed);
        ln2_ = LayerNorm<S>(tape, "decoder.ln2", width, seed);
        classifier_ = Conv2d<S>(tape, "decoder.classifier", width, num_classes, 1, 1, 0, 1, seed);
    }

    // fused: per-stage BHWC features; returns logits [B,K,H,W].
    Tensor<S> forward(const std::vector<Tensor<S>>& fused, int64_t out_h, int64_t out_w) const {
        int64_t h4 = fused[0].dim(1), w4 = fused[0].dim(2);
        std::vector<Tensor<S>> up;
        for (size_t i = 0; i < fused.size(); ++i)
            up.push_back(upsample_bilinear(to_nchw(proj_[i].forward(fused[i])), h4, w4));
        Tensor<S> x = concat<S>(up, 1);
        x = conv1_.forward(x);
        x = to_nchw(relu(ln1_.forward(to_bhwc(x))));
        x = conv2_.forward(x);
        x = to_nchw(relu(ln2_.forward(to_bhwc(x))));
        return upsample_bilinear(classifier_.forward(x), out_h, out_w);
    }

    void collect(ParamList<S>& out) const {
        for (const auto& p : proj_) p.collect(out);
        conv1_.collect(out);
        ln1_.collect(out);
        conv2_.collect(out);
        ln2_.collect(out);
        classifier_.collect(out);
    }

    int64_t width_ = 64;
    std::vector<Linear<S>> proj_;
    Conv2d<S> conv1_, conv2_, classifier_;
    LayerNorm<S> ln1_, ln2_;
};

template <typename S>
class SegModel {
public:
    SegModel() = default;
    SegModel(Tape<S>& tape, const ModelSpec& spec, uint64_t seed) : spec_(spec) {
        encoder_ = ToyEncoder<S>(tape, spec.dims, seed);
        for (size_t i = 0; i < spec.dims.size(); ++i) {
            RsgmbOptions opt;
            opt.n_state = spec.n_state;
            opt.rank = spec.rank_div > 0 ? std::max<int64_t>(1, spec.dims[i] / spec.rank_div) : 0;
            opt.use_g_u = spec.use_g_u;
            opt.use_g_c = spec.use_g_c;
            int64_t d_loc = std::max<int64_t>(1, spec.dims[i] / spec.d_loc_div);
            fusion_.push_back(StageFusion<S>(tape, "fusion.stage" + std::to_string(i),
                                             spec.dims[i], spec.fusion, spec.lcgm, d_loc, opt,
                                             seed));
        }
        decoder_ = ToyDecoder<S>(tape, spec.dims, spec.decoder_width, spec.num_classes, seed);
    }

    // rgb, aux: [B,3,H,W] -> logits [B,K,H,W]
    Tensor<S> forward(const Tensor<S>& rgb, const Tensor<S>& aux) {
        if (rgb.rank() != 4 || rgb.dim(1) != 3 || rgb.shape() != aux.shape())
            throw DimError("model: inputs must both be [B,3,H,W]");
        int64_t H = rgb.dim(2), W = rgb.dim(3);
        int64_t div = spec_.input_divisor();
        if (H % div || W % div)
            throw DimError("model: H and W must be divisible by " + std::to_string(div));
        std::vector<Tensor<S>> e_rgb = encoder_.forward(rgb);
        std::vector<Tensor<S>> e_aux = encoder_.forward(aux);
        std::vector<Tensor<S>> fused;
        for (size_t i = 0; i < fusion_.size(); ++i)
            fused.push_back(fusion_[i].forward(e_rgb[i], e_aux[i]));
        return decoder_.forward(fused, H, W);
    }

    void collect(ParamList<S>& out) const {
        encoder_.collect(out);  // shared across modalities, counted once
        for (const auto& f : fusion_) f.collect(out);
        decoder_.collect(out);
    }

    ParamList<S> params() const {
        ParamList<S> out;
        collect(out);
        return out;
    }

    void set_capture_gates(bool on) {
        for (auto& f : fusion_)
            if (f.kind_ == FusionKind::Rsgmb || f.kind_ == FusionKind::CrossMamba)
                f.rsgmb_.capture_gates = on;
    }

    ModelSpec spec_;
    ToyEncoder<S> encoder_;
    std::vector<StageFusion<S>> fusion_;
    ToyDecoder<S> decoder_;
};

// argmax over the class axis of [B,K,H,W] logits.
template <typename S>
std::vector<int32_t> argmax_classes(const Tensor<S>& logits) {
    int64_t B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
    std::vector<int32_t> out(static_cast<size_t>(B * HW));
    const S* p = logits.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < HW; ++i) {
            const S* base = p + b * K * HW + i;
            int32_t best = 0;
            S bv = base[0];
            for (int64_t k = 1; k < K; ++k)
                if (base[k * HW] > bv) {
                    bv = base[k * HW];
                    best = static_cast<int32_t>(k);
                }
            out[b * HW + i] = best;
        }
    return out;
}

}  // namespace rsg
