#include "cpgd/cpfp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cpgd/parallel.hpp"

namespace cpgd {

namespace {

struct LayerSpec {
    const char* name;
    std::size_t out;  // in units: 0 = C, otherwise literal
    std::size_t in;   // 0 = C, 1000 + n = n*C, 2000 + n = C + n
    bool bias;
};

std::size_t resolve(std::size_t code, std::size_t C) {
    if (code == 0) return C;
    if (code >= 2000) return C + (code - 2000);
    if (code >= 1000) return C * (code - 1000);
    return code;
}

constexpr LayerSpec kLayers[] = {
    {"encoder.0", 0, 3, true},       {"encoder.1", 0, 0, true},  {"offset.0", 0, 2003, true},
    {"offset.1", 2 * kTaps, 0, true}, {"mask.0", 0, 2003, true},  {"mask.1", kTaps, 0, true},
    {"dcn", 0, 0, false},            {"fusion", 0, 1003, true},  {"head.0", 0, 0, true},
    {"head.1", 3, 0, true},
};

void require_plane(const Tensor& t, std::size_t channels, std::size_t H, std::size_t W, const char* what) {
    require_rank(t, 3, what);
    if (t.dim(0) != channels || t.dim(1) != H || t.dim(2) != W) {
        throw ShapeError(std::string(what) + ": expected " + shape_string({channels, H, W}) + ", got " +
                         shape_string(t.shape()));
    }
}

Tensor branch_input(const DenseMotionField& motion, const Tensor& f_warp, const ResidualMap& residual) {
    return concat_channels({&motion.field, &f_warp, &residual.map});
}

Tensor branch(const CpfaParams& p, const std::string& prefix, const Tensor& x) {
    Tensor h = p.conv(prefix + ".0", x);
    leaky_relu_inplace(h, kLeakySlope);
    return p.conv(prefix + ".1", h);
}

}  // namespace

CpfaParams CpfaParams::init(const CpfaInit& init) {
    if (init.channels == 0) throw std::invalid_argument("channel width must be positive");
    CpfaParams p;
    p.channels_ = init.channels;
    p.set_ = ParamSet(kMagic, init.seed);
    Rng rng(init.seed);
    const std::size_t C = init.channels;
    for (const auto& l : kLayers) {
        const std::size_t out = resolve(l.out, C), in = resolve(l.in, C);
        p.set_.add(std::string(l.name) + ".weight", seeded_uniform({out, in, 3, 3}, in * 9, rng));
        if (l.bias) p.set_.add(std::string(l.name) + ".bias", Tensor({out}));
    }
    if (init.zero_offset_mask_finals) {
        p.zero_layer("offset.1");
        p.zero_layer("mask.1");
    }
    if (init.zero_head) p.zero_layer("head.1");
    return p;
}

CpfaParams CpfaParams::from_set(ParamSet set) {
    if (set.magic() != kMagic) throw std::invalid_argument("CPFA parameters need magic CPFP, got " + set.magic());
    const Tensor& enc = set.get("encoder.0.weight");
    require_rank(enc, 4, "encoder.0.weight");
    const std::size_t C = enc.dim(0);
    for (const auto& l : kLayers) {
        const std::size_t out = resolve(l.out, C), in = resolve(l.in, C);
        const std::string w = std::string(l.name) + ".weight";
        if (set.get(w).shape() != std::vector<std::size_t>{out, in, 3, 3}) {
            throw ShapeError(w + ": expected " + shape_string({out, in, 3, 3}) + ", got " +
                             shape_string(set.get(w).shape()));
        }
        if (l.bias && set.get(std::string(l.name) + ".bias").shape() != std::vector<std::size_t>{out}) {
            throw ShapeError(std::string(l.name) + ".bias: expected length " + std::to_string(out));
        }
    }
    CpfaParams p;
    p.set_ = std::move(set);
    p.channels_ = C;
    return p;
}

CpfaParams CpfaParams::load(const std::filesystem::path& path) { return from_set(ParamSet::load(path, kMagic)); }

Tensor CpfaParams::conv(const std::string& layer, const Tensor& x) const {
    const std::string b = layer + ".bias";
    return conv2d(x, weight(layer), set_.contains(b) ? set_.get(b).data() : std::span<const float>{});
}

void CpfaParams::zero_layer(const std::string& layer) {
    for (float& v : set_.get(layer + ".weight").values()) v = 0.0f;
    if (set_.contains(layer + ".bias")) {
        for (float& v : set_.get(layer + ".bias").values()) v = 0.0f;
    }
}

Tensor encode_frame(const Tensor& frame, const CpfaParams& params) {
    require_rank(frame, 3, "encode_frame");
    if (frame.dim(0) != 3) throw ShapeError("encode_frame: expected 3 input channels, got " + std::to_string(frame.dim(0)));
    Tensor f = params.conv("encoder.0", frame);
    leaky_relu_inplace(f, kLeakySlope);
    f = params.conv("encoder.1", f);
    leaky_relu_inplace(f, kLeakySlope);
    return f;
}

Tensor warp_features(const Tensor& f_prev, const DenseMotionField& motion) {
    require_rank(f_prev, 3, "warp_features features");
    require_plane(motion.field, 2, f_prev.dim(1), f_prev.dim(2), "warp_features motion");
    Tensor coords = identity_grid(f_prev.dim(1), f_prev.dim(2));
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] += motion.field[i];
    return bilinear_sample(f_prev, coords, BorderMode::Clamp);
}

Tensor predict_offsets(const DenseMotionField& motion, const Tensor& f_warp, const ResidualMap& residual,
                       const CpfaParams& params) {
    Tensor o = branch(params, "offset", branch_input(motion, f_warp, residual));
    const std::size_t n = motion.height() * motion.width();
    for (std::size_t k = 0; k < kTaps; ++k) {
        auto oy = o.slice(2 * k), ox = o.slice(2 * k + 1);
        const auto dy = motion.field.slice(0), dx = motion.field.slice(1);
        for (std::size_t p = 0; p < n; ++p) {
            oy[p] += dy[p];
            ox[p] += dx[p];
        }
    }
    return o;
}

Tensor predict_mask(const DenseMotionField& motion, const Tensor& f_warp, const ResidualMap& residual,
                    const CpfaParams& params) {
    Tensor m = branch(params, "mask", branch_input(motion, f_warp, residual));
    const std::size_t n = motion.height() * motion.width();
    const auto r = residual.map.slice(0);
    for (std::size_t k = 0; k < kTaps; ++k) {
        auto mk = m.slice(k);
        for (std::size_t p = 0; p < n; ++p) mk[p] = std::clamp(r[p] + mk[p], 0.0f, 1.0f);
    }
    return m;
}

namespace {

void check_deform_inputs(const Tensor& f_prev, const Tensor& offsets, const Tensor& mask, const Tensor& weight) {
    require_rank(f_prev, 3, "deform_conv features");
    const std::size_t C = f_prev.dim(0), H = f_prev.dim(1), W = f_prev.dim(2);
    require_plane(offsets, 2 * kTaps, H, W, "deform_conv offsets");
    require_plane(mask, kTaps, H, W, "deform_conv mask");
    require_rank(weight, 4, "deform_conv weight");
    if (weight.dim(1) != C || weight.dim(2) != 3 || weight.dim(3) != 3) {
        throw ShapeError("deform_conv weight: expected Ox" + std::to_string(C) + "x3x3, got " +
                         shape_string(weight.shape()));
    }
}

// Zero-extended bilinear read of one plane.
inline float sample_zero(std::span<const float> plane, long H, long W, float y, float x) {
    const float fy = std::floor(y), fx = std::floor(x);
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const float wy = y - fy, wx = x - fx;
    auto at = [&](long yy, long xx) -> float {
        return (yy < 0 || yy >= H || xx < 0 || xx >= W) ? 0.0f : plane[static_cast<std::size_t>(yy * W + xx)];
    };
    const float v00 = at(y0, x0);
    if (wy == 0.0f && wx == 0.0f) return v00;
    return (1.0f - wy) * ((1.0f - wx) * v00 + wx * at(y0, x0 + 1)) +
           wy * ((1.0f - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
}

}  // namespace

Tensor deform_conv(const Tensor& f_prev, const Tensor& offsets, const Tensor& mask, const Tensor& weight) {
    check_deform_inputs(f_prev, offsets, mask, weight);
    for (float v : mask.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("deform_conv: mask value outside [0, 1]");
    }
    const std::size_t C = f_prev.dim(0), H = f_prev.dim(1), W = f_prev.dim(2), O = weight.dim(0);
    const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
    Tensor out({O, H, W});
    parallel_for(0, H, [&](std::size_t y) {
        std::vector<float> sampled(C);
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t k = 0; k < kTaps; ++k) {
                const float m = mask.at(k, y, x);
                if (m == 0.0f) continue;
                const float sy = static_cast<float>(y) + static_cast<float>(k / 3) - 1.0f + offsets.at(2 * k, y, x);
                const float sx = static_cast<float>(x) + static_cast<float>(k % 3) - 1.0f + offsets.at(2 * k + 1, y, x);
                for (std::size_t c = 0; c < C; ++c) sampled[c] = m * sample_zero(f_prev.slice(c), Hl, Wl, sy, sx);
                for (std::size_t o = 0; o < O; ++o) {
                    float acc = 0.0f;
                    for (std::size_t c = 0; c < C; ++c) acc += weight[(o * C + c) * kTaps + k] * sampled[c];
                    out.at(o, y, x) += acc;
                }
            }
        }
    });
    return out;
}

std::pair<float, float> deform_conv_offset_grad(const Tensor& f_prev, const Tensor& offsets, const Tensor& mask,
                                                const Tensor& weight, std::size_t out_channel, std::size_t y,
                                                std::size_t x, std::size_t tap) {
    check_deform_inputs(f_prev, offsets, mask, weight);
    const std::size_t C = f_prev.dim(0), H = f_prev.dim(1), W = f_prev.dim(2);
    // The output is linear in the sampled planes, so differentiate the
    // weight-combined plane sum_c w[o, c, tap] * F[c] once.
    Tensor combined({1, H, W});
    for (std::size_t c = 0; c < C; ++c) {
        const float w = weight[(out_channel * C + c) * kTaps + tap];
        const auto src = f_prev.slice(c);
        auto dst = combined.slice(0);
        for (std::size_t p = 0; p < H * W; ++p) dst[p] += w * src[p];
    }
    Tensor coord({2, 1, 1});
    coord[0] = static_cast<float>(y) + static_cast<float>(tap / 3) - 1.0f + offsets.at(2 * tap, y, x);
    coord[1] = static_cast<float>(x) + static_cast<float>(tap % 3) - 1.0f + offsets.at(2 * tap + 1, y, x);
    const Tensor g = bilinear_sample_grad(combined, coord);
    const float m = mask.at(tap, y, x);
    return {m * g[0], m * g[1]};
}

PropagationState cpfa_step(const Tensor& f_current, const PropagationState& state, const Tensor& f_prev,
                           const DenseMotionField& motion, const ResidualMap& residual, const CpfaParams& params) {
    const std::size_t C = params.channels();
    require_rank(f_current, 3, "cpfa_step current feature");
    const std::size_t H = f_current.dim(1), W = f_current.dim(2);
    require_plane(f_current, C, H, W, "cpfa_step current feature");
    require_plane(f_prev, C, H, W, "cpfa_step previous feature");
    require_plane(state.hidden, C, H, W, "cpfa_step hidden state");
    require_plane(residual.map, 1, H, W, "cpfa_step residual");

    const Tensor warped = warp_features(f_prev, motion);
    const Tensor offsets = predict_offsets(motion, warped, residual, params);
    const Tensor mask = predict_mask(motion, warped, residual, params);
    const Tensor aligned = deform_conv(f_prev, offsets, mask, params.weight("dcn"));
    Tensor fused = params.conv("fusion", concat_channels({&f_current, &aligned, &state.hidden}));
    leaky_relu_inplace(fused, kLeakySlope);
    return {std::move(fused), state.frame_index + 1};
}

namespace {

void require_priors(const std::vector<DensePriors>* priors, std::size_t T, const char* direction) {
    if (priors == nullptr || priors->size() < T) {
        throw std::invalid_argument(std::string("propagate_sequence: missing ") + direction + " priors (need " +
                                    std::to_string(T) + " frames, have " +
                                    std::to_string(priors ? priors->size() : 0) + ")");
    }
}

}  // namespace

std::vector<Tensor> propagate_sequence(const std::vector<Tensor>& frames, const SequencePriors& priors,
                                       const CpfaParams& params, PropagationMode mode) {
    const std::size_t T = frames.size();
    if (T == 0) return {};
    require_priors(&priors.forward, T, "forward");
    if (mode == PropagationMode::Bidirectional) {
        require_priors(priors.backward ? &*priors.backward : nullptr, T, "backward");
    }

    std::vector<Tensor> encoded;
    encoded.reserve(T);
    for (const auto& f : frames) encoded.push_back(encode_frame(f, params));
    const std::size_t C = params.channels(), H = encoded[0].dim(1), W = encoded[0].dim(2);

    std::vector<Tensor> forward(T);
    PropagationState state{Tensor({C, H, W}), 0};
    for (std::size_t t = 0; t < T; ++t) {
        const Tensor& prev = encoded[t == 0 ? 0 : t - 1];
        const auto& p = priors.forward[t];
        state = cpfa_step(encoded[t], state, prev, p.motion, p.residual, params);
        forward[t] = state.hidden;
    }
    if (mode == PropagationMode::Forward) return forward;

    std::vector<Tensor> backward(T);
    state = PropagationState{Tensor({C, H, W}), 0};
    for (std::size_t i = 0; i < T; ++i) {
        const std::size_t t = T - 1 - i;
        const Tensor& prev = forward[t + 1 < T ? t + 1 : t];
        const auto& p = (*priors.backward)[t];
        state = cpfa_step(forward[t], state, prev, p.motion, p.residual, params);
        backward[t] = state.hidden;
    }
    return backward;
}

std::vector<Tensor> restore(const std::vector<Tensor>& frames, const std::vector<Tensor>& features,
                            const CpfaParams& params) {
    if (frames.size() != features.size()) {
        throw std::invalid_argument("restore: " + std::to_string(frames.size()) + " frames but " +
                                    std::to_string(features.size()) + " feature maps");
    }
    std::vector<Tensor> out;
    out.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        require_plane(frames[t], 3, features[t].dim(1), features[t].dim(2), "restore frame");
        Tensor h = params.conv("head.0", features[t]);
        leaky_relu_inplace(h, kLeakySlope);
        Tensor delta = params.conv("head.1", h);
        Tensor x = frames[t];
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i] + delta[i], 0.0f, 1.0f);
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace cpgd
