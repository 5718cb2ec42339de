#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rsg/gradcheck.hpp"
#include "rsg/model.hpp"

using namespace rsg;
using T = Tensor<double>;

namespace {

ModelSpec tiny_spec(FusionKind fusion = FusionKind::Rsgmb, bool lcgm = true) {
    ModelSpec s;
    s.dims = {8, 16};
    s.n_state = 4;
    s.rank_div = 4;
    s.fusion = fusion;
    s.lcgm = lcgm;
    s.num_classes = 3;
    s.decoder_width = 16;
    return s;
}

}  // namespace

TEST_CASE("model output shape contract") {
    Tape<double> tape;
    ModelSpec spec;
    spec.dims = {8, 16, 24, 32};
    spec.n_state = 4;
    spec.num_classes = 5;
    spec.decoder_width = 16;
    SegModel<double> model(tape, spec, 1);
    Rng rng(1);
    T rgb = T::rand({2, 3, 64, 64}, rng);
    T aux = T::rand({2, 3, 64, 64}, rng);
    T logits = model.forward(rgb, aux);
    CHECK(logits.shape() == Shape{2, 5, 64, 64});

    CHECK_THROWS_AS(model.forward(T::zeros({2, 3, 48, 48}), T::zeros({2, 3, 48, 48})), DimError);
}

TEST_CASE("shared encoder: aux == rgb under add fusion gives F = 2E at every stage") {
    Tape<double> tape;
    ModelSpec spec = tiny_spec(FusionKind::Add, /*lcgm=*/false);
    SegModel<double> model(tape, spec, 3);
    Rng rng(2);
    T x = T::rand({1, 3, 32, 32}, rng);
    std::vector<T> feats = model.encoder_.forward(x);
    for (size_t i = 0; i < feats.size(); ++i) {
        T fused = model.fusion_[i].forward(feats[i], feats[i]);
        for (int64_t k = 0; k < fused.numel(); ++k)
            CHECK(fused.values()[k] == doctest::Approx(2 * feats[i].values()[k]).epsilon(1e-14));
    }
}

TEST_CASE("weight sharing: encoder parameters counted once") {
    Tape<double> tape;
    ModelSpec spec = tiny_spec();
    SegModel<double> model(tape, spec, 5);
    ParamList<double> all = model.params();
    ParamList<double> enc;
    model.encoder_.collect(enc);
    // every encoder parameter appears exactly once in the model parameter list
    for (const auto& e : enc) {
        int hits = 0;
        for (const auto& p : all)
            if (p.name == e.name) ++hits;
        CHECK(hits == 1);
    }
    // and gradients flow into the shared weights from both modality paths
    Rng rng(3);
    T rgb = tape.leaf_of(T::rand({1, 3, 16, 16}, rng), false);
    T aux = tape.leaf_of(T::rand({1, 3, 16, 16}, rng), false);
    T logits = model.forward(rgb, aux);
    std::vector<int32_t> labels(16 * 16, 1);
    T loss = cross_entropy(logits, labels, kIgnoreIndex);
    backward(loss);
    double gnorm = 0;
    for (double g : model.encoder_.stages_[0].conv_down.w_.grad()) gnorm += g * g;
    CHECK(gnorm > 0);
}

TEST_CASE("cross entropy examples") {
    // uniform logits, K = 5: loss = ln 5
    T logits = T::zeros({1, 5, 2, 2});
    std::vector<int32_t> labels(4, 2);
    T loss = cross_entropy(logits, labels, kIgnoreIndex);
    CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    // strongly peaked correct logits drive the loss to zero
    T sharp = T::zeros({1, 2, 1, 1});
    sharp.at({0, 1, 0, 0}) = 200.0;
    T l2 = cross_entropy(sharp, std::vector<int32_t>{1}, kIgnoreIndex);
    CHECK(l2.item() < 1e-12);

    // hand-computed 2-pixel instance, K = 2
    // pixel 0: logits (0.2, -0.4), label 0; pixel 1: logits (1.0, 0.5), label 1
    T h = T::zeros({1, 2, 1, 2});
    h.at({0, 0, 0, 0}) = 0.2;
    h.at({0, 1, 0, 0}) = -0.4;
    h.at({0, 0, 0, 1}) = 1.0;
    h.at({0, 1, 0, 1}) = 0.5;
    double p0 = std::exp(0.2) / (std::exp(0.2) + std::exp(-0.4));
    double p1 = std::exp(0.5) / (std::exp(1.0) + std::exp(0.5));
    double want = 0.5 * (-std::log(p0) - std::log(p1));
    T l3 = cross_entropy(h, std::vector<int32_t>{0, 1}, kIgnoreIndex);
    CHECK(l3.item() == doctest::Approx(want).epsilon(1e-10));

    // all pixels ignored: zero loss, zero gradient
    Tape<double> tape;
    T lg = tape.leaf_of(T::ones({1, 2, 1, 2}));
    std::vector<int32_t> ign(2, kIgnoreIndex);
    T l4 = cross_entropy(lg, ign, kIgnoreIndex);
    CHECK(l4.item() == 0.0);
    backward(l4);
    for (double g : lg.grad()) CHECK(g == 0.0);
}

TEST_CASE("cross entropy gradcheck") {
    Tape<double> tape;
    Rng rng(7);
    T logits = tape.leaf_of(T::randn({2, 4, 2, 3}, rng));
    std::vector<int32_t> labels;
    for (int i = 0; i < 12; ++i) labels.push_back(i % 5 == 0 ? kIgnoreIndex : i % 4);
    auto rep = gradcheck<double>([&] { return cross_entropy(logits, labels, kIgnoreIndex); },
                                 {{"logits", logits}}, 1e-5, 1e-6);
    CHECK(rep.pass);
}

TEST_CASE("miou examples") {
    // perfect prediction
    std::vector<int32_t> gt{0, 1, 2, 1};
    auto perfect = miou(gt, gt, 3, kIgnoreIndex);
    CHECK(perfect.mean == 1.0);

    // disjoint single-class maps: both present classes score 0
    std::vector<int32_t> a{0, 0, 0, 0}, b{1, 1, 1, 1};
    auto disjoint = miou(a, b, 2, kIgnoreIndex);
    CHECK(disjoint.mean == 0.0);

    // hand confusion: gt=[0,0,1,1], pred=[0,1,1,1] -> IoU = [1/2, 2/3]
    std::vector<int32_t> gt2{0, 0, 1, 1}, pr2{0, 1, 1, 1};
    auto r = miou(pr2, gt2, 2, kIgnoreIndex);
    CHECK(r.per_class[0] == doctest::Approx(0.5));
    CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.mean == doctest::Approx(7.0 / 12.0));

    // absent classes are excluded from the mean
    auto sparse = miou(std::vector<int32_t>{0, 0}, std::vector<int32_t>{0, 0}, 4, kIgnoreIndex);
    CHECK(sparse.mean == 1.0);

    // ignore_index pixels do not count
    std::vector<int32_t> gt3{0, kIgnoreIndex}, pr3{0, 1};
    auto ig = miou(pr3, gt3, 2, kIgnoreIndex);
    CHECK(ig.mean == 1.0);
}

TEST_CASE("translation consistency at stride granularity") {
    // shifting both inputs by the full stride shifts interior logits
    Tape<double> tape;
    ModelSpec spec = tiny_spec(FusionKind::Add, false);
    SegModel<double> model(tape, spec, 11);
    int64_t H = 32, W = 32, shift = 8;  // divisor of this 2-stage model
    Rng rng(13);
    T base_rgb = T::rand({1, 3, H, W + shift}, rng);
    T base_aux = T::rand({1, 3, H, W + shift}, rng);
    auto crop = [&](const T& t, int64_t x0) {
        T out = T::zeros({1, 3, H, W});
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    out.at({0, c, y, x}) = t.at({0, c, y, x + x0});
        return out;
    };
    T l0 = model.forward(crop(base_rgb, 0), crop(base_aux, 0));
    T l1 = model.forward(crop(base_rgb, shift), crop(base_aux, shift));
    // compare interior columns away from the padding boundary
    double max_diff = 0;
    for (int64_t k = 0; k < spec.num_classes; ++k)
        for (int64_t y = 12; y < H - 12; ++y)
            for (int64_t x = 12; x < W - 12 - shift; ++x)
                max_diff = std::max(
                    max_diff, std::abs(l0.at({0, k, y, x + shift}) - l1.at({0, k, y, x})));
    CHECK(max_diff < 1e-9);
}

TEST_CASE("end-to-end gradcheck on a 16x16 two-stage model") {
    Tape<double> tape;
    ModelSpec spec;
    spec.dims = {4, 8};
    spec.n_state = 2;
    spec.rank_div = 4;
    spec.num_classes = 3;
    spec.decoder_width = 8;
    SegModel<double> model(tape, spec, 17);
    Rng rng(19);
    T rgb = tape.leaf_of(T::rand({1, 3, 16, 16}, rng));
    T aux = tape.leaf_of(T::rand({1, 3, 16, 16}, rng));
    std::vector<int32_t> labels(256);
    for (int i = 0; i < 256; ++i) labels[i] = i % 3;
    ParamList<double> params = model.params();
    std::vector<std::pair<std::string, T>> leaves = {{"rgb", rgb}, {"aux", aux}};
    for (auto& p : params) leaves.push_back({p.name, p.tensor});
    auto rep = gradcheck<double>(
        [&] { return cross_entropy(model.forward(rgb, aux), labels, kIgnoreIndex); }, leaves, 1e-5,
        1e-3, /*max_coords=*/3, /*seed=*/23);
    INFO(rep.worst_leaf, "[", rep.worst_coord, "] analytic=", rep.analytic,
         " numeric=", rep.numeric);
    CHECK(rep.pass);
}
