#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpgd/params.hpp"
#include "cpgd/prior_extract.hpp"
#include "cpgd/tensor.hpp"

namespace cpgd {

// Deformable kernel taps (3 x 3).
inline constexpr std::size_t kTaps = 9;
inline constexpr float kLeakySlope = 0.1f;

struct CpfaInit {
    std::size_t channels = 16;
    std::uint64_t seed = 0;
    bool zero_offset_mask_finals = true;  // last conv of the offset and mask branches starts at 0
    bool zero_head = false;               // last conv of the restoration head starts at 0
};

// Weights of the alignment cascade and its frame encoder / restoration head.
//
// Layers (weight O x I x 3 x 3 plus bias O unless noted):
//   encoder.0 3->C, encoder.1 C->C
//   offset.0 (2+C+1)->C, offset.1 C->2K      (input order: motion, warped feature, residual)
//   mask.0   (2+C+1)->C, mask.1   C->K
//   dcn.weight C x C x 3 x 3 (no bias)
//   fusion   3C->C                           (input order: current, aligned, hidden)
//   head.0   C->C, head.1 C->3
class CpfaParams {
public:
    static constexpr const char* kMagic = "CPFP";

    // Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    static CpfaParams init(const CpfaInit& init);
    // Validates every layer shape against the channel width found in encoder.0.
    static CpfaParams from_set(ParamSet set);
    static CpfaParams load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const { set_.save(path); }

    std::size_t channels() const noexcept { return channels_; }
    const ParamSet& set() const noexcept { return set_; }
    ParamSet& set() noexcept { return set_; }

    const Tensor& weight(const std::string& layer) const { return set_.get(layer + ".weight"); }
    const Tensor& bias(const std::string& layer) const { return set_.get(layer + ".bias"); }
    // conv2d with this layer's weight and bias.
    Tensor conv(const std::string& layer, const Tensor& x) const;

    // Zeroes weight and bias of `layer`.
    void zero_layer(const std::string& layer);

private:
    ParamSet set_;
    std::size_t channels_ = 0;
};

// Hidden feature F* carried along the cascade.
struct PropagationState {
    Tensor hidden;
    std::size_t frame_index = 0;
};

// Frame (3 x H x W) to feature space (C x H x W).
Tensor encode_frame(const Tensor& frame, const CpfaParams& params);

// F~(y, x) = bilinear read of F_prev at (y + dy, x + dx) with edge-clamped coordinates.
Tensor warp_features(const Tensor& f_prev, const DenseMotionField& motion);

// O = per-tap copy of (dy, dx) + offset branch(concat(V, F~, R)). Returns 2K x H x W,
// channel 2k = y offset of tap k, 2k+1 = x offset.
Tensor predict_offsets(const DenseMotionField& motion, const Tensor& f_warp, const ResidualMap& residual,
                       const CpfaParams& params);

// M = clamp01(per-tap copy of R + mask branch(concat(V, F~, R))). Returns K x H x W.
Tensor predict_mask(const DenseMotionField& motion, const Tensor& f_warp, const ResidualMap& residual,
                    const CpfaParams& params);

// Modulated deformable 3 x 3 convolution with one offset group.
// out(o, y, x) = sum_c sum_k w[o, c, k] * M[k, y, x] * F[c] sampled at
// (y + ky - 1 + O[2k, y, x], x + kx - 1 + O[2k+1, y, x]), zero outside the plane.
// Throws std::invalid_argument if any mask entry is outside [0, 1].
Tensor deform_conv(const Tensor& f_prev, const Tensor& offsets, const Tensor& mask, const Tensor& weight);

// d out(o, y, x) / d (O[2k, y, x], O[2k+1, y, x]); returns {d/dy, d/dx}.
std::pair<float, float> deform_conv_offset_grad(const Tensor& f_prev, const Tensor& offsets, const Tensor& mask,
                                                const Tensor& weight, std::size_t out_channel, std::size_t y,
                                                std::size_t x, std::size_t tap);

// One alignment block: warp, predict offsets and mask, deformable conv,
// then fuse (current feature, aligned feature, previous hidden) with leaky ReLU.
PropagationState cpfa_step(const Tensor& f_current, const PropagationState& state, const Tensor& f_prev,
                           const DenseMotionField& motion, const ResidualMap& residual, const CpfaParams& params);

enum class PropagationMode { Forward, Bidirectional };

struct SequencePriors {
    std::vector<DensePriors> forward;
    std::optional<std::vector<DensePriors>> backward;
};

// Forward cascade over t = 0..T-1; bidirectional mode runs a second cascade
// over t = T-1..0 on the forward outputs with backward priors.
// Throws std::invalid_argument when priors required by `mode` are missing.
std::vector<Tensor> propagate_sequence(const std::vector<Tensor>& frames, const SequencePriors& priors,
                                       const CpfaParams& params, PropagationMode mode);

// X_t = clamp01(frame_t + head(F*_t)).
std::vector<Tensor> restore(const std::vector<Tensor>& frames, const std::vector<Tensor>& features,
                            const CpfaParams& params);

}  // namespace cpgd
