#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpgd/codec.hpp"
#include "cpgd/tensor.hpp"

namespace cpgd {

// Unreadable or malformed input data (image files, YUV files, sidecars).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Interleaved 8-bit RGB image.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // 3 * width * height, RGBRGB...

    bool operator==(const RgbImage&) const = default;
};

// round(0.299 R + 0.587 G + 0.114 B)
FramePlane to_luma(const RgbImage& img);

// 3 x H x W tensor with values v / 255.
Tensor to_tensor(const RgbImage& img);
// Inverse of to_tensor after clamping to [0, 1] and rounding to the nearest level.
RgbImage from_tensor(const Tensor& t);

// Reads binary PPM (P6) or PGM (P5, replicated to RGB), maxval 255.
RgbImage read_image(const std::filesystem::path& path);
// Writes binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

// Image files in `dir` named frame_NNNNNN.{ppm,pgm}, sorted by index.
// Throws DataError if the directory is missing or has no frames.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);
std::vector<RgbImage> read_frames(const std::filesystem::path& dir);
std::string frame_name(std::size_t index, const std::string& ext = ".ppm");

// Y planes of a raw planar YUV 4:2:0 file; U and V are skipped.
// max_frames == 0 reads the whole file. Width and height must be even.
std::vector<FramePlane> read_yuv420_luma(const std::filesystem::path& path, int width, int height,
                                         std::size_t max_frames = 0);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cpgd
