// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "cpgd/codec.hpp"
#include "cpgd/cpc.hpp"
#include "cpgd/cpfp.hpp"
#include "cpgd/frame_io.hpp"
#include "cpgd/metrics.hpp"
#include "cpgd/prior_extract.hpp"
#include "oracles.hpp"

using namespace cpgd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// 1
Outcome codec_lossless() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937 gen(1001);
    std::uniform_int_distribution<int> nframes(3, 5), dim(32, 96), pick(0, 1), shift(-6, 6), noise(-3, 3);
    int bad = 0;
    for (int clip = 0; clip < 50; ++clip) {
        const int n = nframes(gen), w = dim(gen), h = dim(gen);
        CodecConfig cfg;
        cfg.block_size = pick(gen) ? 8 : 16;
        cfg.search_radius = pick(gen) ? 4 : 16;
        cfg.quant = 1;
        // moving texture plus noise, so vectors and residuals are both nonzero
        const int m = 40;
        const auto tex = oracle::random_texture(gen, w + 2 * m, h + 2 * m);
        std::vector<FramePlane> frames;
        int oy = m, ox = m;
        for (int t = 0; t < n; ++t) {
            FramePlane f = oracle::crop(tex, w + 2 * m, oy, ox, w, h);
            for (auto& s : f.samples) s = std::uint8_t(std::clamp(int(s) + noise(gen), 0, 255));
            frames.push_back(std::move(f));
            oy += shift(gen);
            ox += shift(gen);
            oy = std::clamp(oy, 0, 2 * m);
            ox = std::clamp(ox, 0, 2 * m);
        }
        const DecodedSequence d = decode_sequence(encode_sequence(frames, cfg));
        bad += d.frames != frames;
    }
    const double s = since(t0);
    return {bad == 0 && s < 30.0, fmt("%.0f/50 clips bit-exact, %.2f s (limit 30 s)", 50 - bad, s)};
}

// 2
Outcome search_optimal() {
    std::mt19937 gen(1002);
    std::uniform_int_distribution<int> radius(1, 8), pick(0, 1);
    int blocks = 0, bad = 0;
    for (int pair = 0; pair < 20; ++pair) {
        CodecConfig cfg;
        cfg.block_size = pick(gen) ? 8 : 16;
        cfg.search_radius = radius(gen);
        const FramePlane ref = oracle::random_plane(gen, 48, 48);
        FramePlane cur = pick(gen) ? oracle::random_plane(gen, 48, 48) : ref;
        if (cur == ref)  // perturbed copy: the minimum is small but not necessarily at zero
            for (auto& s : cur.samples) s = std::uint8_t(std::clamp(int(s) + int(gen() % 61) - 30, 0, 255));
        const MvGrid mv = block_match_full(ref, cur, cfg);
        for (int by = 0; by < mv.blocks_y; ++by)
            for (int bx = 0; bx < mv.blocks_x; ++bx) {
                const auto v = mv.at(by, bx);
                ++blocks;
                bad += oracle::block_sad(ref, cur, cfg.block_size, by, bx, v.dy, v.dx) !=
                       oracle::brute_min_sad(ref, cur, cfg.block_size, cfg.search_radius, by, bx);
            }
    }
    return {bad == 0, fmt("%.0f/%.0f blocks at the brute-force minimum", blocks - bad, blocks)};
}

// 3
Outcome shift_recovery() {
    std::mt19937 gen(1003);
    const int W = 64, H = 64, m = 8, bs = 8, r = 4;
    const auto tex = oracle::random_texture(gen, W + 2 * m, H + 2 * m);
    const FramePlane ref = oracle::crop(tex, W + 2 * m, m, m, W, H);
    CodecConfig cfg;
    cfg.block_size = bs;
    cfg.search_radius = r;
    int checked = 0, bad = 0;
    for (int dy = -4; dy <= 4; ++dy)
        for (int dx = -4; dx <= 4; ++dx) {
            const FramePlane cur = oracle::crop(tex, W + 2 * m, m + dy, m + dx, W, H);
            const BlockSearchResult res = search_blocks(ref, cur, cfg);
            for (int by = 0; by < res.mvs.blocks_y; ++by)
                for (int bx = 0; bx < res.mvs.blocks_x; ++bx) {
                    if (by * bs - r < 0 || bx * bs - r < 0 || (by + 1) * bs - 1 + r >= H || (bx + 1) * bs - 1 + r >= W)
                        continue;
                    ++checked;
                    bad += !(res.mvs.at(by, bx) == MotionVector{dy, dx}) ||
                           res.sad[std::size_t(by) * res.mvs.blocks_x + bx] != 0;
                }
        }
    return {bad == 0 && checked > 0, fmt("81 shifts, %.0f/%.0f interior blocks exact with SAD 0", checked - bad, checked)};
}

// 4
Outcome dcn_reduction() {
    std::mt19937 gen(1004);
    std::uniform_int_distribution<std::size_t> ch(1, 4), side(3, 10);
    double worst = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t C = ch(gen), O = ch(gen), H = side(gen), W = side(gen);
        const Tensor f = oracle::random_tensor(gen, {C, H, W});
        const Tensor w = oracle::random_tensor(gen, {O, C, 3, 3});
        const Tensor out = deform_conv(f, Tensor({18, H, W}), Tensor({9, H, W}, 1.0f), w);
        const Tensor ref = conv2d(f, w, {});
        for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, double(std::abs(out[i] - ref[i])));
    }
    return {worst < 1e-5, fmt("50 cases, max |diff| %.2e (limit 1e-5)", worst)};
}

// 5
Outcome offset_gradient() {
    std::mt19937 gen(1005);
    std::uniform_real_distribution<float> frac(0.2f, 0.8f);
    std::uniform_int_distribution<int> whole(-2, 1);
    std::uniform_int_distribution<std::size_t> pix(0, 8), tap(0, 8), och(0, 2);
    const Tensor f = oracle::random_tensor(gen, {4, 9, 9});
    const Tensor w = oracle::random_tensor(gen, {3, 4, 3, 3});
    const Tensor mask = oracle::random_tensor(gen, {9, 9, 9}, 0.2f, 1.0f);
    Tensor off({18, 9, 9});
    for (float& v : off.values()) v = float(whole(gen)) + frac(gen);
    const double h = 1e-2;  // stays inside one bilinear cell since fractions are in [0.2, 0.8]
    double worst = 0;
    int done = 0;
    while (done < 20) {
        const std::size_t o = och(gen), y = pix(gen), x = pix(gen), k = tap(gen);
        const auto [gy, gx] = deform_conv_offset_grad(f, off, mask, w, o, y, x, k);
        auto fd = [&](std::size_t c) {
            Tensor p = off, m = off;
            p.at(c, y, x) += float(h);
            m.at(c, y, x) -= float(h);
            return (double(deform_conv(f, p, mask, w).at(o, y, x)) - deform_conv(f, m, mask, w).at(o, y, x)) / (2 * h);
        };
        const double ny = fd(2 * k), nx = fd(2 * k + 1);
        // both directions must carry signal for a relative error to mean anything
        if (std::abs(ny) < 1e-2 || std::abs(nx) < 1e-2) continue;
        worst = std::max(worst, std::abs(gy - ny) / std::max(std::abs(ny), std::abs(double(gy))));
        worst = std::max(worst, std::abs(gx - nx) / std::max(std::abs(nx), std::abs(double(gx))));
        ++done;
    }
    return {worst < 1e-2, fmt("20 positions, max relative error %.2e (limit 1e-2)", worst)};
}

// 6
Outcome zero_init_identity() {
    std::mt19937 gen(1006);
    const CpfaParams p = CpfaParams::init({8, 6, true, false});
    const DenseMotionField v{oracle::random_tensor(gen, {2, 12, 10}, -5, 5)};
    const ResidualMap r{oracle::random_tensor(gen, {1, 12, 10}, 0, 1)};
    const Tensor fw = oracle::random_tensor(gen, {8, 12, 10});
    const Tensor o = predict_offsets(v, fw, r, p);
    const Tensor m = predict_mask(v, fw, r, p);
    bool offsets_ok = true, mask_ok = true;
    for (std::size_t k = 0; k < kTaps; ++k)
        for (std::size_t i = 0; i < 120; ++i) {
            offsets_ok &= o[2 * k * 120 + i] == v.field[i] && o[(2 * k + 1) * 120 + i] == v.field[120 + i];
            mask_ok &= m[k * 120 + i] == r.map[i];
        }

    const CpfaParams zh = CpfaParams::init({8, 6, true, true});
    std::vector<RgbImage> imgs;
    std::vector<Tensor> frames;
    SequencePriors pri;
    pri.backward.emplace();
    for (int t = 0; t < 3; ++t) {
        RgbImage img{20, 14, {}};
        for (int i = 0; i < 20 * 14 * 3; ++i) img.rgb.push_back(std::uint8_t(gen() % 256));
        imgs.push_back(img);
        frames.push_back(to_tensor(img));
        pri.forward.push_back({DenseMotionField{oracle::random_tensor(gen, {2, 14, 20}, -3, 3)},
                               ResidualMap{oracle::random_tensor(gen, {1, 14, 20}, 0, 1)}});
        pri.backward->push_back(pri.forward.back());
    }
    bool restore_ok = true;
    for (auto mode : {PropagationMode::Forward, PropagationMode::Bidirectional}) {
        const auto out = restore(frames, propagate_sequence(frames, pri, zh, mode), zh);
        for (int t = 0; t < 3; ++t) restore_ok &= from_tensor(out[t]) == imgs[t];
    }
    return {offsets_ok && mask_ok && restore_ok,
            std::string("O == V ") + (offsets_ok ? "yes" : "no") + ", M == R " + (mask_ok ? "yes" : "no") +
                ", zero-head restore bit-exact " + (restore_ok ? "yes" : "no")};
}

// 7
Outcome attention_contracts() {
    std::mt19937 gen(1007);
    double worst_sum = 0, worst_std = 0;
    for (std::size_t heads : {1, 2, 4}) {
        CpcParams p = CpcParams::init({8, heads, 1, 70 + heads, false});
        const Tensor f = oracle::random_tensor(gen, {16, 8});
        const Tensor a = oracle::random_tensor(gen, {16, 1}, 0, 1);
        for (std::size_t h = 0; h < heads; ++h) {
            const Tensor w = cp_attention_weights(f, a, p, h);
            for (std::size_t i = 0; i < 16; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < 16; ++j) s += w.at(i, j);
                worst_sum = std::max(worst_sum, std::abs(s - 1.0));
            }
        }
        p.zero_layer("query_mod");
        const std::vector<double> x(f.values().begin(), f.values().end());
        const auto q = oracle::linear(x, 16, 8, p.weight("query"), p.bias("query"));
        const auto k = oracle::linear(x, 16, 8, p.weight("key"), p.bias("key"));
        const auto v = oracle::linear(x, 16, 8, p.weight("value"), p.bias("value"));
        const auto ref = oracle::attention(q, k, v, 16, 8, heads);
        const Tensor out = cp_attention(f, a, p);
        for (std::size_t i = 0; i < out.size(); ++i) worst_std = std::max(worst_std, std::abs(out[i] - ref[i]));
    }

    // N = 2, D = 2 with identity query/key, swapped modulation, and a 2x2 value map.
    // Q' rows (1.1, 0.4), (2.6, 2.4); K rows (1, 0), (0.5, 2); V rows (1, 2), (6.5, 9).
    CpcParams p = CpcParams::init({2, 1, 1, 0, false});
    p.set().get("query.weight") = Tensor({2, 2}, {1, 0, 0, 1});
    p.set().get("query.bias") = Tensor({2}, {0.1f, -0.1f});
    p.set().get("query_mod.weight") = Tensor({2, 2}, {0, 1, 1, 0});
    p.set().get("query_mod.bias") = Tensor({2});
    p.set().get("key.weight") = Tensor({2, 2}, {1, 0, 0, 1});
    p.set().get("key.bias") = Tensor({2});
    p.set().get("value.weight") = Tensor({2, 2}, {1, 2, 3, 4});
    p.set().get("value.bias") = Tensor({2});
    const Tensor out = cp_attention(Tensor({2, 2}, {1, 0, 0.5f, 2}), Tensor({2, 1}, {0.5f, 1}), p);
    // row i: w = softmax((q_i . k_j) / sqrt 2), out = w0 V0 + w1 V1
    const long double r2 = std::sqrt(2.0L);
    const long double s00 = 1.1L / r2, s01 = (1.1L * 0.5L + 0.4L * 2) / r2;
    const long double s10 = 2.6L / r2, s11 = (2.6L * 0.5L + 2.4L * 2) / r2;
    const long double w0 = 1 / (1 + std::exp(s01 - s00)), w1 = 1 / (1 + std::exp(s11 - s10));
    const long double hand[4] = {w0 * 1 + (1 - w0) * 6.5L, w0 * 2 + (1 - w0) * 9, w1 * 1 + (1 - w1) * 6.5L,
                                 w1 * 2 + (1 - w1) * 9};
    double worst_hand = 0;
    for (int i = 0; i < 4; ++i) worst_hand = std::max(worst_hand, double(std::abs(out[i] - hand[i])));
    return {worst_sum <= 1e-5 && worst_std <= 1e-6 && worst_hand <= 1e-6,
            fmt("row sums %.1e (1e-5), standard %.1e (1e-6), hand %.1e (1e-6)", worst_sum, worst_std, worst_hand)};
}

// 8
Outcome spaced_schedule() {
    const SamplerSchedule s = build_schedule(1000, 50);
    bool ok = s.steps() == 50 && s.indices.front() == 0 && s.indices.back() == 999;
    for (std::size_t k = 1; k < s.steps(); ++k) ok &= s.indices[k] > s.indices[k - 1];
    double worst = 0;
    for (std::size_t k = 0; k < s.steps(); ++k) {
        long double prod = 1;
        for (int i = 0; i <= s.indices[k]; ++i) prod *= 1 - (1e-4L + (2e-2L - 1e-4L) * i / 999);
        worst = std::max(worst, std::abs(s.step_alpha_bars[k] - double(prod)));
    }
    const SamplerSchedule full = build_schedule(1000, 1000);
    double worst_full = 0;
    for (int i = 0; i < 1000; ++i) {
        ok &= full.indices[i] == i;
        worst_full = std::max(worst_full, std::abs(full.step_betas[i] - full.betas[i]));
        worst_full = std::max(worst_full, std::abs(full.step_alpha_bars[i] - full.alpha_bars[i]));
    }
    return {ok && worst <= 1e-6 && worst_full <= 1e-6,
            fmt("50 increasing indices 0..999, alpha-bar error %.1e, S==T error %.1e (1e-6)", worst, worst_full)};
}

// 9
Outcome residual_normalization() {
    ResidualPlane r(65536, 1, 1);
    for (int v = -32768; v <= 32767; ++v) r.values[std::size_t(v + 32768)] = std::int16_t(v);
    const ResidualMap m = normalize_residual(r);
    bool in_range = true, formula = true;
    for (int v = -32768; v <= 32767; ++v) {
        const float x = m.map[std::size_t(v + 32768)];
        in_range &= x >= 0.0f && x <= 1.0f;
        formula &= x == float(std::min(std::abs(v), 255)) / 255.0f;
    }
    const bool ends = m.map[32768 - 255] == 1.0f && m.map[32768] == 0.0f;
    return {in_range && ends && formula, std::string("65536 values in [0,1]: ") + (in_range ? "yes" : "no") +
                                             ", -255 -> 1 and 0 -> 0: " + (ends ? "yes" : "no")};
}

// 10
Outcome mv_reuse_cost() {
    std::mt19937 gen(1010);
    bool ok = true;
    std::ostringstream os;
    for (auto [bs, r, w, h] : {std::array{16, 16, 64, 64}, {8, 4, 40, 56}, {16, 7, 50, 33}}) {
        CodecConfig cfg;
        cfg.block_size = bs;
        cfg.search_radius = r;
        std::vector<FramePlane> clip;
        for (int t = 0; t < 3; ++t) clip.push_back(oracle::random_plane(gen, w, h));
        const CostReport rep = bench_alignment_cost(clip, cfg);
        const std::uint64_t blocks = 2ull * ((w + bs - 1) / bs) * ((h + bs - 1) / bs);
        const std::uint64_t closed = blocks * (2 * r + 1) * (2 * r + 1) * bs * bs;
        ok &= rep.sad_ops_reused == 0 && rep.sad_ops_search == closed && rep.grids_identical;
        os << rep.sad_ops_search << (rep.sad_ops_search == closed ? "==" : "!=") << closed << ' ';
    }
    return {ok, "reused 0; search " + os.str() + "; grids identical"};
}

// 11
Outcome metric_sanity() {
    std::mt19937 gen(1011);
    const FramePlane a = oracle::random_plane(gen, 64, 48);
    FramePlane b = a;
    for (auto& s : b.samples) s = s == 255 ? 254 : s + 1;
    const double p = psnr(a, b), s = ssim(a, a);
    return {std::abs(p - 48.1308) <= 1e-3 && std::abs(s - 1.0) <= 1e-6, fmt("PSNR %.4f dB, SSIM(a,a) %.8f", p, s)};
}

// 12
Outcome end_to_end_determinism() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root = oracle::scratch("acceptance_e2e");
    oracle::write_shift_clip(root / "clip", 3, 64, 64, 1, 2, 1012);
    auto run_once = [&](const std::string& name) {
        const fs::path d = root / name;
        fs::create_directories(d);
        const std::string cli = "'" CPGD_CLI "'";
        const std::string steps[] = {
            "encode --input ../clip --out stream.cpv",
            "extract --input ../clip --out priors",
            "init-params --kind cpfp --seed 7 --out a.cpfp",
            "init-params --kind cpca --seed 7 --out a.cpca",
            "restore --input ../clip --priors priors --params a.cpfp --mode bidirectional --out stage1",
            "generate --stage1 stage1 --priors priors --params a.cpca --seed 7 --out final",
        };
        for (const auto& s : steps) {
            const std::string cmd = "cd '" + d.string() + "' && " + cli + " " + s + " >/dev/null 2>&1";
            const int st = std::system(cmd.c_str());
            if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) return false;
        }
        return true;
    };
    if (!run_once("a") || !run_once("b")) return {false, "pipeline step failed"};
    std::size_t files = 0, differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        differ += oracle::slurp(e.path()) != oracle::slurp(root / "b" / fs::relative(e.path(), root / "a"));
    }
    const double s = since(t0);
    const bool has_outputs = fs::exists(root / "a" / "final" / "frame_000002.ppm");
    return {differ == 0 && files > 20 && has_outputs && s < 60.0,
            fmt("%.0f files byte-identical across two runs, %.2f s (limit 60 s)", double(files - differ), s)};
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"codec losslessness", codec_lossless},
        {"search optimality", search_optimal},
        {"global-shift recovery", shift_recovery},
        {"deformable conv reduces to conv2d", dcn_reduction},
        {"offset gradient vs finite differences", offset_gradient},
        {"zero-init identity chain", zero_init_identity},
        {"attention contracts", attention_contracts},
        {"spaced schedule", spaced_schedule},
        {"residual normalization", residual_normalization},
        {"zero-cost MV reuse", mv_reuse_cost},
        {"metric sanity", metric_sanity},
        {"end-to-end determinism", end_to_end_determinism},
    };
    int failed = 0, n = 0;
    for (const auto& [name, fn] : criteria) {
        ++n;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.ok;
        std::printf("%s %2d %-40s %s\n", o.ok ? "PASS" : "FAIL", n, name, o.detail.c_str());
    }
    std::printf("%d/%d criteria passed\n", n - failed, n);
    return failed ? 1 : 0;
}
