#include <doctest.h>

#include <random>

#include "cpgd/cpfp.hpp"
#include "cpgd/frame_io.hpp"
#include "oracles.hpp"

using namespace cpgd;

namespace {

DenseMotionField random_motion(std::mt19937& gen, std::size_t h, std::size_t w, float range) {
    return {oracle::random_tensor(gen, {2, h, w}, -range, range)};
}

ResidualMap random_residual(std::mt19937& gen, std::size_t h, std::size_t w) {
    return {oracle::random_tensor(gen, {1, h, w}, 0.0f, 1.0f)};
}

std::vector<float> bias_of(const CpfaParams& p, const std::string& layer) {
    const auto b = p.bias(layer).values();
    return {b.begin(), b.end()};
}

// conv, leaky relu, conv in double over concat(V, F~, R)
std::vector<double> branch_oracle(const CpfaParams& p, const std::string& name, const DenseMotionField& v,
                                  const Tensor& fw, const ResidualMap& r) {
    const Tensor in = concat_channels({&v.field, &fw, &r.map});
    auto h = oracle::conv2d(in, p.weight(name + ".0"), bias_of(p, name + ".0"));
    Tensor hf({p.channels(), in.dim(1), in.dim(2)});
    for (std::size_t i = 0; i < h.size(); ++i) hf[i] = float(h[i] > 0 ? h[i] : 0.1 * h[i]);
    return oracle::conv2d(hf, p.weight(name + ".1"), bias_of(p, name + ".1"));
}

}  // namespace

TEST_CASE("parameter layout and file round trip") {
    const CpfaParams p = CpfaParams::init({6, 9, true, false});
    CHECK(p.channels() == 6);
    CHECK(p.weight("offset.1").dim(0) == 2 * kTaps);
    CHECK(p.weight("mask.1").dim(0) == kTaps);
    CHECK(p.weight("offset.0").dim(1) == 6 + 3);
    CHECK(p.weight("fusion").dim(1) == 18);
    CHECK_FALSE(p.set().contains("dcn.bias"));
    for (float v : p.weight("offset.1").values()) CHECK(v == 0.0f);

    const auto path = oracle::scratch("cpfp_params") / "p.cpfp";
    p.save(path);
    const auto bytes = oracle::slurp(path);
    const CpfaParams q = CpfaParams::load(path);
    CHECK(q.set() == p.set());
    q.save(path);
    CHECK(oracle::slurp(path) == bytes);

    CHECK(CpfaParams::init({6, 9}).set() == p.set());
    CHECK_FALSE(CpfaParams::init({6, 10}).set() == p.set());

    ParamSet broken = p.set();
    broken.get("fusion.weight") = Tensor({6, 12, 3, 3});
    CHECK_THROWS_AS(CpfaParams::from_set(broken), ShapeError);
}

TEST_CASE("warp") {
    std::mt19937 gen(40);
    const Tensor f = oracle::random_tensor(gen, {2, 4, 4});
    CHECK(warp_features(f, DenseMotionField::zeros(4, 4)) == f);

    Tensor ramp({1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = float(i);
    DenseMotionField down = DenseMotionField::zeros(4, 4);
    for (float& v : down.field.slice(0)) v = 1.0f;
    const Tensor w = warp_features(ramp, down);
    for (std::size_t x = 0; x < 4; ++x) {
        CHECK(w.at(0, 0, x) == ramp.at(0, 1, x));
        CHECK(w.at(0, 2, x) == ramp.at(0, 3, x));
        CHECK(w.at(0, 3, x) == ramp.at(0, 3, x));
    }

    const Tensor flat({3, 5, 5}, 0.42f);
    const Tensor fw = warp_features(flat, random_motion(gen, 5, 5, 7.0f));
    for (float v : fw.values()) CHECK(v == doctest::Approx(0.42f));
}

TEST_CASE("zero-init branches pass the priors through") {
    std::mt19937 gen(41);
    const CpfaParams p = CpfaParams::init({4, 1, true, false});
    const auto v = random_motion(gen, 6, 7, 3.0f);
    const auto r = random_residual(gen, 6, 7);
    const Tensor fw = oracle::random_tensor(gen, {4, 6, 7});
    const Tensor o = predict_offsets(v, fw, r, p);
    const Tensor m = predict_mask(v, fw, r, p);
    for (std::size_t k = 0; k < kTaps; ++k) {
        CHECK(std::equal(o.slice(2 * k).begin(), o.slice(2 * k).end(), v.field.slice(0).begin()));
        CHECK(std::equal(o.slice(2 * k + 1).begin(), o.slice(2 * k + 1).end(), v.field.slice(1).begin()));
        CHECK(std::equal(m.slice(k).begin(), m.slice(k).end(), r.map.slice(0).begin()));
    }
    const Tensor o0 = predict_offsets(DenseMotionField::zeros(6, 7), fw, r, p);
    for (float x : o0.values()) CHECK(x == 0.0f);

    // saturation: R = 1 and a mask branch emitting 0.5 everywhere
    CpfaParams sat = p;
    for (float& b : sat.set().get("mask.1.bias").values()) b = 0.5f;
    const Tensor ms = predict_mask(v, fw, ResidualMap{Tensor({1, 6, 7}, 1.0f)}, sat);
    for (float x : ms.values()) CHECK(x == 1.0f);
}

TEST_CASE("offset and mask branches match a reference pipeline") {
    std::mt19937 gen(42);
    const CpfaParams p = CpfaParams::init({3, 2, false, false});
    const auto v = random_motion(gen, 5, 6, 2.0f);
    const auto r = random_residual(gen, 5, 6);
    const Tensor fw = oracle::random_tensor(gen, {3, 5, 6});
    const auto ob = branch_oracle(p, "offset", v, fw, r);
    const auto mb = branch_oracle(p, "mask", v, fw, r);
    const Tensor o = predict_offsets(v, fw, r, p);
    const Tensor m = predict_mask(v, fw, r, p);
    const std::size_t n = 30;
    for (std::size_t k = 0; k < kTaps; ++k)
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(o[2 * k * n + i] - (ob[2 * k * n + i] + v.field[i])) < 1e-5);
            CHECK(std::abs(o[(2 * k + 1) * n + i] - (ob[(2 * k + 1) * n + i] + v.field[n + i])) < 1e-5);
            CHECK(std::abs(m[k * n + i] - std::clamp(mb[k * n + i] + r.map[i], 0.0, 1.0)) < 1e-5);
        }
}

TEST_CASE("deformable conv") {
    std::mt19937 gen(43);
    const Tensor f = oracle::random_tensor(gen, {2, 6, 6});
    const Tensor w = oracle::random_tensor(gen, {3, 2, 3, 3});

    SUBCASE("zero offsets and unit mask reduce to conv2d") {
        const Tensor out = deform_conv(f, Tensor({18, 6, 6}), Tensor({9, 6, 6}, 1.0f), w);
        const Tensor ref = conv2d(f, w, {});
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - ref[i]) < 1e-5);
    }
    SUBCASE("zero mask gives zero output") {
        const Tensor out = deform_conv(f, oracle::random_tensor(gen, {18, 6, 6}, -2, 2), Tensor({9, 6, 6}), w);
        for (float v : out.values()) CHECK(v == 0.0f);
    }
    SUBCASE("matches per-tap loop oracle") {
        for (int rep = 0; rep < 3; ++rep) {
            const Tensor off = oracle::random_tensor(gen, {18, 6, 6}, -2.5f, 2.5f);
            const Tensor mask = oracle::random_tensor(gen, {9, 6, 6}, 0.0f, 1.0f);
            const Tensor out = deform_conv(f, off, mask, w);
            for (std::size_t o = 0; o < 3; ++o)
                for (std::size_t y = 0; y < 6; ++y)
                    for (std::size_t x = 0; x < 6; ++x)
                        CHECK(std::abs(out.at(o, y, x) - oracle::deform_at(f, off, mask, w, o, y, x)) < 1e-5);
        }
    }
    SUBCASE("linear in the mask") {
        const Tensor off = oracle::random_tensor(gen, {18, 6, 6}, -1.5f, 1.5f);
        const Tensor mask = oracle::random_tensor(gen, {9, 6, 6}, 0.0f, 0.5f);
        Tensor twice = mask;
        for (float& v : twice.values()) v *= 2.0f;
        const Tensor a = deform_conv(f, off, mask, w);
        const Tensor b = deform_conv(f, off, twice, w);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(b[i] - 2.0f * a[i]) < 1e-5);
    }
    SUBCASE("mask outside [0,1] is rejected") {
        Tensor mask({9, 6, 6}, 0.5f);
        mask[17] = 1.5f;
        CHECK_THROWS_AS(deform_conv(f, Tensor({18, 6, 6}), mask, w), std::invalid_argument);
    }
}

TEST_CASE("offset gradient agrees with finite differences") {
    std::mt19937 gen(44);
    std::uniform_real_distribution<float> frac(0.2f, 0.8f);
    std::uniform_int_distribution<int> whole(-2, 1);
    std::uniform_int_distribution<std::size_t> pix(0, 7), tap(0, 8), och(0, 1);
    const Tensor f = oracle::random_tensor(gen, {3, 8, 8});
    const Tensor w = oracle::random_tensor(gen, {2, 3, 3, 3});
    const Tensor mask = oracle::random_tensor(gen, {9, 8, 8}, 0.3f, 1.0f);
    Tensor off({18, 8, 8});
    for (float& v : off.values()) v = float(whole(gen)) + frac(gen);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t o = och(gen), y = pix(gen), x = pix(gen), k = tap(gen);
        const auto [gy, gx] = deform_conv_offset_grad(f, off, mask, w, o, y, x, k);
        const double h = 1e-2;
        auto fd = [&](std::size_t ch) {
            Tensor p = off, m = off;
            p.at(ch, y, x) += float(h);
            m.at(ch, y, x) -= float(h);
            return (oracle::deform_at(f, p, mask, w, o, y, x) - oracle::deform_at(f, m, mask, w, o, y, x)) / (2 * h);
        };
        const double ny = fd(2 * k), nx = fd(2 * k + 1);
        CHECK(std::abs(gy - ny) <= 1e-2 * std::max({std::abs(ny), std::abs(double(gy)), 1e-3}));
        CHECK(std::abs(gx - nx) <= 1e-2 * std::max({std::abs(nx), std::abs(double(gx)), 1e-3}));
    }
}

TEST_CASE("cascade step") {
    std::mt19937 gen(45);
    const CpfaParams p = CpfaParams::init({4, 3, true, false});
    const Tensor frame = oracle::random_tensor(gen, {3, 6, 6}, 0, 1);
    const Tensor enc = encode_frame(frame, p);

    SUBCASE("identical frames with zero residual align to nothing") {
        const Tensor warped = warp_features(enc, DenseMotionField::zeros(6, 6));
        CHECK(warped == enc);
        const Tensor m = predict_mask(DenseMotionField::zeros(6, 6), warped, ResidualMap::zeros(6, 6), p);
        for (float v : m.values()) CHECK(v == 0.0f);
        const Tensor aligned = deform_conv(enc, predict_offsets(DenseMotionField::zeros(6, 6), warped,
                                                                ResidualMap::zeros(6, 6), p),
                                           m, p.weight("dcn"));
        for (float v : aligned.values()) CHECK(v == 0.0f);
    }
    SUBCASE("step is the composition of its parts") {
        const auto v = random_motion(gen, 6, 6, 2.0f);
        const auto r = random_residual(gen, 6, 6);
        const Tensor prev = encode_frame(oracle::random_tensor(gen, {3, 6, 6}, 0, 1), p);
        const PropagationState s0{oracle::random_tensor(gen, {4, 6, 6}), 4};
        const PropagationState s1 = cpfa_step(enc, s0, prev, v, r, p);
        CHECK(s1.frame_index == 5);
        const Tensor warped = warp_features(prev, v);
        const Tensor aligned = deform_conv(prev, predict_offsets(v, warped, r, p), predict_mask(v, warped, r, p),
                                           p.weight("dcn"));
        Tensor fused = p.conv("fusion", concat_channels({&enc, &aligned, &s0.hidden}));
        leaky_relu_inplace(fused, kLeakySlope);
        CHECK(s1.hidden == fused);
    }
    SUBCASE("first frame boundary") {
        const SequencePriors pri{{DensePriors{DenseMotionField::zeros(6, 6), ResidualMap::zeros(6, 6)}}, {}};
        const auto feats = propagate_sequence({frame}, pri, p, PropagationMode::Forward);
        const PropagationState s = cpfa_step(enc, {Tensor({4, 6, 6}), 0}, enc, pri.forward[0].motion,
                                             pri.forward[0].residual, p);
        CHECK(feats[0] == s.hidden);
    }
}

TEST_CASE("propagation modes") {
    std::mt19937 gen(46);
    CpfaParams p = CpfaParams::init({4, 5, true, false});
    std::vector<Tensor> frames;
    SequencePriors pri;
    for (int t = 0; t < 3; ++t) {
        frames.push_back(oracle::random_tensor(gen, {3, 8, 8}, 0, 1));
        pri.forward.push_back({random_motion(gen, 8, 8, 2), random_residual(gen, 8, 8)});
    }
    const auto fwd = propagate_sequence(frames, pri, p, PropagationMode::Forward);
    CHECK(fwd.size() == 3);
    CHECK_THROWS_AS(propagate_sequence(frames, pri, p, PropagationMode::Bidirectional), std::invalid_argument);

    SequencePriors with_back = pri;
    with_back.backward.emplace();
    for (int t = 0; t < 3; ++t) with_back.backward->push_back({random_motion(gen, 8, 8, 2), random_residual(gen, 8, 8)});
    CHECK(propagate_sequence(frames, with_back, p, PropagationMode::Forward) == fwd);
    CHECK_FALSE(propagate_sequence(frames, with_back, p, PropagationMode::Bidirectional) == fwd);

    // static clip: with the hidden-state slice of the fusion conv at zero the
    // recurrence cannot tell frames apart, so every frame gets the same feature
    Tensor& fw = p.set().get("fusion.weight");
    for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t c = 8; c < 12; ++c)
            for (std::size_t k = 0; k < 9; ++k) fw[(o * 12 + c) * 9 + k] = 0.0f;
    const std::vector<Tensor> still(4, frames[0]);
    SequencePriors zero;
    zero.backward.emplace();
    for (int t = 0; t < 4; ++t) {
        zero.forward.push_back({DenseMotionField::zeros(8, 8), ResidualMap::zeros(8, 8)});
        zero.backward->push_back(zero.forward.back());
    }
    const auto bi = propagate_sequence(still, zero, p, PropagationMode::Bidirectional);
    for (int t = 1; t < 4; ++t) CHECK(bi[t] == bi[0]);
}

TEST_CASE("restoration head") {
    std::mt19937 gen(47);
    CpfaParams p = CpfaParams::init({4, 6, true, true});
    RgbImage img{16, 16, {}};
    for (int i = 0; i < 16 * 16 * 3; ++i) img.rgb.push_back(std::uint8_t(i % 256));
    const std::vector<Tensor> frames{to_tensor(img)};
    const std::vector<Tensor> feats{oracle::random_tensor(gen, {4, 16, 16}, -3, 3)};
    const auto same = restore(frames, feats, p);
    CHECK(same[0] == frames[0]);
    CHECK(from_tensor(same[0]) == img);

    for (float& b : p.set().get("head.1.bias").values()) b = 0.0f;
    p.set().get("head.1.bias")[0] = 0.1f;
    const auto red = restore(frames, feats, p);
    for (std::size_t i = 0; i < 256; ++i) {
        CHECK(red[0][i] == std::min(frames[0][i] + 0.1f, 1.0f));
        CHECK(red[0][256 + i] == frames[0][256 + i]);
    }

    const CpfaParams rnd = CpfaParams::init({4, 7, false, false});
    const auto any = restore(frames, {oracle::random_tensor(gen, {4, 16, 16}, -50, 50)}, rnd);
    for (float v : any[0].values()) CHECK((v >= 0.0f && v <= 1.0f));
}
