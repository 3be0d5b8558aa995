#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cpgd/codec.hpp"
#include "cpgd/tensor.hpp"

namespace cpgd {

// Per-pixel motion, 2 x H x W (channel 0 = dy, channel 1 = dx), in pixels.
struct DenseMotionField {
    Tensor field;
    std::size_t height() const { return field.dim(1); }
    std::size_t width() const { return field.dim(2); }
    static DenseMotionField zeros(std::size_t height, std::size_t width) { return {Tensor({2, height, width})}; }
};

// Residual magnitude normalized to [0, 1], 1 x H x W.
struct ResidualMap {
    Tensor map;
    std::size_t height() const { return map.dim(1); }
    std::size_t width() const { return map.dim(2); }
    static ResidualMap zeros(std::size_t height, std::size_t width) { return {Tensor({1, height, width})}; }
};

enum class Direction : std::uint8_t { Forward = 0, Backward = 1 };

// Nearest-block replication; partial edge blocks keep their block's vector.
DenseMotionField densify_mv(const MvGrid& mv, int width, int height);

// min(|residual * quant|, 255) / 255 per pixel.
ResidualMap normalize_residual(const ResidualPlane& res);

// Priors for one frame and direction, as stored on disk.
struct FramePriors {
    MvGrid mv;
    ResidualMap residual;
};

std::filesystem::path mvf_path(const std::filesystem::path& dir, std::size_t frame_index, Direction dir_flag);
std::filesystem::path crf_path(const std::filesystem::path& dir, std::size_t frame_index, Direction dir_flag);

std::vector<std::uint8_t> encode_mvf(const MvGrid& mv, Direction d);
std::vector<std::uint8_t> encode_crf(const ResidualMap& res, Direction d);
MvGrid decode_mvf(std::span<const std::uint8_t> bytes, Direction expected, const std::string& name = "mvf");
ResidualMap decode_crf(std::span<const std::uint8_t> bytes, Direction expected, const std::string& name = "crf");

// Writes frame_NNNNNN.{fwd,bwd}.mvf and .crf into `dir`.
void write_sidecars(const std::filesystem::path& dir, std::size_t frame_index, Direction d, const MvGrid& mv,
                    const ResidualMap& res);
// Throws DataError naming the expected path when a file is missing, and
// FormatError for magic, direction, size or dimension mismatches.
FramePriors read_sidecars(const std::filesystem::path& dir, std::size_t frame_index, Direction d);

// Dense network-domain priors derived from a sidecar pair.
struct DensePriors {
    DenseMotionField motion;
    ResidualMap residual;
};
DensePriors to_dense(const FramePriors& p);

// Forward (t-1 -> t) and backward (t+1 -> t) priors for every frame of a clip.
// Boundary frames (forward of frame 0, backward of the last) are zero.
struct PriorSet {
    int width = 0;
    int height = 0;
    CodecConfig config;
    std::vector<FramePriors> forward;
    std::vector<FramePriors> backward;  // empty when only forward priors are available
};

// Priors computed from luma frames by block matching each pair in both directions.
PriorSet compute_priors(std::span<const FramePlane> frames, const CodecConfig& cfg, bool backward = true);

// Forward priors carried by a decoded CPV1 stream.
PriorSet priors_from_stream(const DecodedSequence& dec);

// Writes every sidecar in `set` plus manifest.json. The last frame gets no
// backward pair; its backward priors are zero by convention.
void write_prior_set(const std::filesystem::path& dir, const PriorSet& set);

// Reads luma frames from `frames_dir`, computes both directions and writes
// sidecars and the manifest to `out_dir`.
PriorSet augment_dataset(const std::filesystem::path& frames_dir, const CodecConfig& cfg,
                         const std::filesystem::path& out_dir);

struct Manifest {
    std::size_t frame_count = 0;
    int width = 0;
    int height = 0;
    CodecConfig config;
    bool has_backward = false;
};
Manifest read_manifest(const std::filesystem::path& dir);

}  // namespace cpgd
