#include "cpgd/frame_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <regex>

namespace cpgd {

namespace fs = std::filesystem;

FramePlane to_luma(const RgbImage& img) {
    FramePlane y(img.width, img.height);
    for (std::size_t i = 0; i < y.samples.size(); ++i) {
        const int r = img.rgb[3 * i], g = img.rgb[3 * i + 1], b = img.rgb[3 * i + 2];
        // Integer form of round(0.299 R + 0.587 G + 0.114 B); halves round up.
        y.samples[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
    return y;
}

Tensor to_tensor(const RgbImage& img) {
    const std::size_t H = static_cast<std::size_t>(img.height), W = static_cast<std::size_t>(img.width);
    Tensor t({3, H, W});
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < H * W; ++p) t.slice(c)[p] = static_cast<float>(img.rgb[3 * p + c]) / 255.0f;
    }
    return t;
}

RgbImage from_tensor(const Tensor& t) {
    require_rank(t, 3, "from_tensor");
    if (t.dim(0) != 3) throw ShapeError("from_tensor: expected 3 channels, got " + std::to_string(t.dim(0)));
    RgbImage img;
    img.height = static_cast<int>(t.dim(1));
    img.width = static_cast<int>(t.dim(2));
    const std::size_t n = t.dim(1) * t.dim(2);
    img.rgb.resize(3 * n);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < n; ++p) {
            float v = t.slice(c)[p];
            v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
            img.rgb[3 * p + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return img;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path.string());
}

namespace {

// Netpbm header token reader that skips whitespace and '#' comments.
class PnmHeader {
public:
    PnmHeader(const std::vector<std::uint8_t>& data, const fs::path& path) : data_(data), path_(path) {}

    std::string token() {
        skip();
        std::string s;
        while (pos_ < data_.size() && !std::isspace(data_[pos_])) s.push_back(static_cast<char>(data_[pos_++]));
        if (s.empty()) throw DataError(path_.string() + ": truncated image header");
        return s;
    }
    int number() {
        const std::string s = token();
        if (!std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
            s.size() > 9) {
            throw DataError(path_.string() + ": bad header field '" + s + "'");
        }
        return std::stoi(s);
    }
    std::size_t payload_start() {
        // exactly one whitespace byte separates maxval from the raster
        return pos_ + 1;
    }

private:
    void skip() {
        while (pos_ < data_.size()) {
            if (std::isspace(data_[pos_])) {
                ++pos_;
            } else if (data_[pos_] == '#') {
                while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }
    const std::vector<std::uint8_t>& data_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

}  // namespace

RgbImage read_image(const fs::path& path) {
    const auto data = read_file(path);
    PnmHeader hdr(data, path);
    const std::string magic = hdr.token();
    if (magic != "P6" && magic != "P5") {
        throw DataError(path.string() + ": unsupported image format '" + magic + "' (expected binary PPM/PGM)");
    }
    RgbImage img;
    img.width = hdr.number();
    img.height = hdr.number();
    const int maxval = hdr.number();
    if (img.width <= 0 || img.height <= 0) throw DataError(path.string() + ": empty image");
    if (maxval != 255) throw DataError(path.string() + ": only 8-bit images (maxval 255) are supported");
    const std::size_t channels = magic == "P6" ? 3 : 1;
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    const std::size_t start = hdr.payload_start();
    if (start > data.size() || data.size() - start < n * channels) {
        throw DataError(path.string() + ": raster truncated, expected " + std::to_string(n * channels) +
                        " bytes, found " + std::to_string(start > data.size() ? 0 : data.size() - start));
    }
    img.rgb.resize(3 * n);
    if (channels == 3) {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(start), 3 * n, img.rgb.begin());
    } else {
        for (std::size_t i = 0; i < n; ++i) img.rgb[3 * i] = img.rgb[3 * i + 1] = img.rgb[3 * i + 2] = data[start + i];
    }
    return img;
}

void write_ppm(const fs::path& path, const RgbImage& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.rgb.begin(), img.rgb.end());
    write_file(path, bytes);
}

std::string frame_name(std::size_t index, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06zu", index);
    return buf + ext;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("frame directory not found: " + dir.string());
    static const std::regex pattern(R"(frame_(\d{6})\.(ppm|pgm))");
    std::map<long, fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) {
            const long idx = std::stol(m[1].str());
            if (!found.emplace(idx, entry.path()).second) {
                throw DataError("duplicate frame index " + m[1].str() + " in " + dir.string());
            }
        }
    }
    if (found.empty()) throw DataError("no frame_NNNNNN.ppm/.pgm files in " + dir.string());
    std::vector<fs::path> out;
    for (auto& [idx, p] : found) out.push_back(p);
    return out;
}

std::vector<RgbImage> read_frames(const fs::path& dir) {
    std::vector<RgbImage> frames;
    for (const auto& p : list_frames(dir)) {
        frames.push_back(read_image(p));
        if (frames.back().width != frames.front().width || frames.back().height != frames.front().height) {
            throw DataError(p.string() + ": dimensions " + std::to_string(frames.back().width) + "x" +
                            std::to_string(frames.back().height) + " differ from the first frame");
        }
    }
    return frames;
}

std::vector<FramePlane> read_yuv420_luma(const fs::path& path, int width, int height, std::size_t max_frames) {
    if (width <= 0 || height <= 0 || width % 2 || height % 2) {
        throw DataError("YUV420 input needs positive even width and height, got " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::size_t luma = static_cast<std::size_t>(width) * height;
    const std::size_t chroma = 2 * (static_cast<std::size_t>(width / 2) * (height / 2));

    std::vector<FramePlane> frames;
    std::vector<std::uint8_t> y(luma);
    while (max_frames == 0 || frames.size() < max_frames) {
        in.read(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(luma));
        const auto got = static_cast<std::size_t>(in.gcount());
        if (got == 0) break;
        if (got < luma) {
            throw DataError(path.string() + ": frame " + std::to_string(frames.size()) + " Y plane truncated (" +
                            std::to_string(got) + " of " + std::to_string(luma) + " bytes)");
        }
        frames.emplace_back(width, height, y);
        in.ignore(static_cast<std::streamsize>(chroma));
        if (static_cast<std::size_t>(in.gcount()) < chroma) {
            throw DataError(path.string() + ": frame " + std::to_string(frames.size() - 1) +
                            " chroma planes truncated");
        }
    }
    if (frames.empty()) throw DataError(path.string() + ": no complete YUV420 frames");
    return frames;
}

}  // namespace cpgd
