#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpgd/codec.hpp"
#include "cpgd/frame_io.hpp"

namespace cpgd {

inline constexpr double kPsnrCapDb = 100.0;

// 10 log10(peak^2 / MSE) over all samples; identical inputs give kPsnrCapDb.
double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, double peak = 255.0);
double psnr(const RgbImage& a, const RgbImage& b);
double psnr(const FramePlane& a, const FramePlane& b);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), K1 = 0.01,
// K2 = 0.03, L = 255.
double ssim(const FramePlane& a, const FramePlane& b);
// SSIM of the luma planes.
double ssim(const RgbImage& a, const RgbImage& b);

struct MetricReport {
    std::vector<double> psnr_db;
    std::vector<double> ssim;
    double mean_psnr_db = 0.0;
    double mean_ssim = 0.0;
};

// Frame-by-frame PSNR (RGB) and SSIM (luma); sequences must match in length and size.
MetricReport evaluate(const std::vector<RgbImage>& a, const std::vector<RgbImage>& b);

struct CostReport {
    std::uint64_t sad_ops_reused = 0;
    std::uint64_t sad_ops_search = 0;
    std::uint64_t blocks = 0;
    double seconds_reused = 0.0;
    double seconds_search = 0.0;
    bool grids_identical = false;
};

// blocks x (2r + 1)^2 x block_size^2
std::uint64_t search_op_count(std::uint64_t blocks, int radius, int block_size);

// Path A decodes the clip's CPV1 stream and reuses its MV grids; path B reruns
// the full search on the same inputs (decoded reference, original current).
CostReport bench_alignment_cost(std::span<const FramePlane> clip, const CodecConfig& cfg);

std::string format_metric_table(const MetricReport& r);
std::string format_cost_table(const CostReport& r);

}  // namespace cpgd
