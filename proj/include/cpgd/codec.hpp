#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpgd/bytes.hpp"

namespace cpgd {

// One 8-bit luma plane.
struct FramePlane {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> samples;

    FramePlane() = default;
    FramePlane(int w, int h, std::uint8_t fill = 0);
    FramePlane(int w, int h, std::vector<std::uint8_t> data);

    std::uint8_t at(int y, int x) const { return samples[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int y, int x) { return samples[static_cast<std::size_t>(y) * width + x]; }
    // Edge-clamped read.
    std::uint8_t clamped(int y, int x) const;

    bool operator==(const FramePlane&) const = default;
};

struct MotionVector {
    int dy = 0;
    int dx = 0;
    bool operator==(const MotionVector&) const = default;
};

// Per-block integer displacements, row-major over blocks.
// A vector v for the block at p means the block matches the reference at p + v.
struct MvGrid {
    int blocks_x = 0;
    int blocks_y = 0;
    int block_size = 0;
    std::vector<MotionVector> vectors;

    MvGrid() = default;
    MvGrid(int frame_width, int frame_height, int block_size);

    MotionVector& at(int by, int bx) { return vectors[static_cast<std::size_t>(by) * blocks_x + bx]; }
    const MotionVector& at(int by, int bx) const { return vectors[static_cast<std::size_t>(by) * blocks_x + bx]; }
    std::size_t block_count() const { return vectors.size(); }

    bool operator==(const MvGrid&) const = default;
};

// Quantized coding residual. Reconstructed residual is value * quant.
struct ResidualPlane {
    int width = 0;
    int height = 0;
    int quant = 1;
    std::vector<std::int16_t> values;

    ResidualPlane() = default;
    ResidualPlane(int w, int h, int quant);

    int reconstructed(std::size_t i) const { return static_cast<int>(values[i]) * quant; }
    bool operator==(const ResidualPlane&) const = default;
};

struct CodecConfig {
    int block_size = 16;     // 8 or 16
    int search_radius = 16;  // [1, 127]
    int quant = 1;           // >= 1
    bool rle = true;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
    bool operator==(const CodecConfig&) const = default;
};

// Bytes of a CPV1 container.
struct CodedStream {
    std::vector<std::uint8_t> bytes;
};

struct BlockSearchResult {
    MvGrid mvs;
    std::vector<std::uint32_t> sad;  // per block, same order as mvs.vectors
    std::uint64_t candidates = 0;    // candidate displacements evaluated
};

// Exhaustive SAD search over |dy|,|dx| <= cfg.search_radius with edge-clamped
// reference reads. Ties go to the smallest |dy|+|dx|, then dy, then dx.
// `workers` bounds block-level parallelism (0 = worker_count()); results do
// not depend on it.
BlockSearchResult search_blocks(const FramePlane& reference, const FramePlane& current, const CodecConfig& cfg,
                                std::size_t workers = 0);

MvGrid block_match_full(const FramePlane& reference, const FramePlane& current, const CodecConfig& cfg);

FramePlane motion_compensate(const FramePlane& reference, const MvGrid& mv);

// stored = round_half_away_from_zero((current - prediction) / quant)
ResidualPlane compute_residual(const FramePlane& current, const FramePlane& prediction, int quant);

// clamp(prediction + residual * quant, 0, 255)
FramePlane reconstruct(const FramePlane& prediction, const ResidualPlane& residual);

// Zero-run token stream: 0x00 <u8 run> for zeros, 0x01 <u16 count> <count x i16> for literals.
std::vector<std::uint8_t> rle0_encode(std::span<const std::int16_t> values);
std::vector<std::int16_t> rle0_decode(std::span<const std::uint8_t> bytes);

// Everything the encoder produced, including its closed-loop reconstructions.
struct EncodedSequence {
    CodedStream stream;
    std::vector<FramePlane> reconstructed;
    std::vector<MvGrid> mvs;              // entry 0 is the all-zero grid
    std::vector<ResidualPlane> residuals;  // entry 0 is all zeros
};

EncodedSequence encode_sequence_detailed(std::span<const FramePlane> frames, const CodecConfig& cfg);
CodedStream encode_sequence(std::span<const FramePlane> frames, const CodecConfig& cfg);

// Decoded frames plus the coding priors carried by the stream. Frame 0 is
// intra-coded; its MV grid and residual are reported as zeros.
struct DecodedSequence {
    CodecConfig config;
    int width = 0;
    int height = 0;
    std::vector<FramePlane> frames;
    std::vector<MvGrid> mvs;
    std::vector<ResidualPlane> residuals;
};

DecodedSequence decode_sequence(const CodedStream& stream);

inline constexpr std::size_t kCpv1HeaderSize = 16;

}  // namespace cpgd
