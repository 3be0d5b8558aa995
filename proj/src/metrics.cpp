#include "cpgd/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "cpgd/parallel.hpp"

namespace cpgd {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
constexpr double kC2 = (0.03 * 255) * (0.03 * 255);

std::vector<double> gaussian_taps() {
    std::vector<double> g(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Separable "valid" filtering: (H-10) x (W-10) output.
std::vector<double> filter_valid(const std::vector<double>& src, int W, int H, const std::vector<double>& g) {
    const int ow = W - kWindow + 1, oh = H - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(H) * ow);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += g[i] * src[static_cast<std::size_t>(y) * W + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, double peak) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("psnr: inputs differ in size (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    }
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        se += d * d;
    }
    if (se == 0.0) return kPsnrCapDb;
    const double mse = se / static_cast<double>(a.size());
    return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

double psnr(const RgbImage& a, const RgbImage& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("psnr: image dimensions differ");
    return psnr(a.rgb, b.rgb);
}

double psnr(const FramePlane& a, const FramePlane& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("psnr: plane dimensions differ");
    return psnr(a.samples, b.samples);
}

double ssim(const FramePlane& a, const FramePlane& b) {
    if (a.width != b.width || a.height != b.height) throw std::invalid_argument("ssim: plane dimensions differ");
    if (a.width < kWindow || a.height < kWindow) {
        throw std::invalid_argument("ssim: planes must be at least 11x11");
    }
    const int W = a.width, H = a.height;
    const std::size_t n = a.samples.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a.samples[i];
        y[i] = b.samples[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto g = gaussian_taps();
    const auto mx = filter_valid(x, W, H, g), my = filter_valid(y, W, H, g);
    const auto sxx = filter_valid(xx, W, H, g), syy = filter_valid(yy, W, H, g), sxy = filter_valid(xy, W, H, g);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + kC1) * (2 * cxy + kC2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    return total / static_cast<double>(mx.size());
}

double ssim(const RgbImage& a, const RgbImage& b) { return ssim(to_luma(a), to_luma(b)); }

MetricReport evaluate(const std::vector<RgbImage>& a, const std::vector<RgbImage>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("evaluate: sequences hold " + std::to_string(a.size()) + " and " +
                                    std::to_string(b.size()) + " frames");
    }
    MetricReport r;
    r.psnr_db.resize(a.size());
    r.ssim.resize(a.size());
    parallel_for(0, a.size(), [&](std::size_t t) {
        r.psnr_db[t] = psnr(a[t], b[t]);
        r.ssim[t] = ssim(a[t], b[t]);
    });
    for (std::size_t t = 0; t < a.size(); ++t) {
        r.mean_psnr_db += r.psnr_db[t];
        r.mean_ssim += r.ssim[t];
    }
    r.mean_psnr_db /= static_cast<double>(a.size());
    r.mean_ssim /= static_cast<double>(a.size());
    return r;
}

std::uint64_t search_op_count(std::uint64_t blocks, int radius, int block_size) {
    const std::uint64_t side = 2 * static_cast<std::uint64_t>(radius) + 1;
    return blocks * side * side * static_cast<std::uint64_t>(block_size) * static_cast<std::uint64_t>(block_size);
}

CostReport bench_alignment_cost(std::span<const FramePlane> clip, const CodecConfig& cfg) {
    if (clip.size() < 2) throw std::invalid_argument("bench_alignment_cost: need at least 2 frames");
    const CodedStream stream = encode_sequence(clip, cfg);

    CostReport r;
    auto start = std::chrono::steady_clock::now();
    const DecodedSequence dec = decode_sequence(stream);
    r.seconds_reused = seconds_since(start);
    // Reuse path: motion comes straight out of the stream, no SAD evaluated.
    r.sad_ops_reused = 0;

    start = std::chrono::steady_clock::now();
    std::vector<MvGrid> searched;
    std::uint64_t candidates = 0;
    for (std::size_t t = 1; t < clip.size(); ++t) {
        BlockSearchResult s = search_blocks(dec.frames[t - 1], clip[t], cfg);
        candidates += s.candidates;
        r.blocks += s.mvs.block_count();
        searched.push_back(std::move(s.mvs));
    }
    r.seconds_search = seconds_since(start);
    r.sad_ops_search = candidates * static_cast<std::uint64_t>(cfg.block_size) * cfg.block_size;

    r.grids_identical = true;
    for (std::size_t t = 1; t < clip.size(); ++t) r.grids_identical &= (searched[t - 1] == dec.mvs[t]);
    return r;
}

std::string format_metric_table(const MetricReport& r) {
    std::ostringstream os;
    char line[96];
    os << "frame      PSNR(dB)    SSIM\n";
    for (std::size_t t = 0; t < r.psnr_db.size(); ++t) {
        std::snprintf(line, sizeof line, "%5zu  %12.4f  %8.6f\n", t, r.psnr_db[t], r.ssim[t]);
        os << line;
    }
    std::snprintf(line, sizeof line, " mean  %12.4f  %8.6f\n", r.mean_psnr_db, r.mean_ssim);
    os << line;
    return os.str();
}

std::string format_cost_table(const CostReport& r) {
    std::ostringstream os;
    char line[128];
    os << "path                 SAD ops        seconds\n";
    std::snprintf(line, sizeof line, "reuse MVs   %16llu  %12.6f\n", static_cast<unsigned long long>(r.sad_ops_reused),
                  r.seconds_reused);
    os << line;
    std::snprintf(line, sizeof line, "full search %16llu  %12.6f\n", static_cast<unsigned long long>(r.sad_ops_search),
                  r.seconds_search);
    os << line;
    os << "blocks searched: " << r.blocks << "   grids identical: " << (r.grids_identical ? "yes" : "no") << '\n';
    return os.str();
}

}  // namespace cpgd
