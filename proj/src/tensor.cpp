#include "cpgd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "cpgd/parallel.hpp"

namespace cpgd {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_fail(const std::string& msg) { throw ShapeError(msg); }

void check_bias(std::span<const float> bias, std::size_t expected, const char* op) {
    if (!bias.empty() && bias.size() != expected) {
        std::ostringstream os;
        os << op << ": bias length " << bias.size() << " does not match output axis extent " << expected;
        shape_fail(os.str());
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
        std::ostringstream os;
        os << "tensor of shape " << shape_string(shape_) << " needs " << product(shape_) << " values, got "
           << data_.size();
        shape_fail(os.str());
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        std::ostringstream os;
        os << "axis " << axis << " out of range for shape " << shape_string(shape_);
        shape_fail(os.str());
    }
    return shape_[axis];
}

std::span<float> Tensor::slice(std::size_t index) {
    const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
    return std::span<float>(data_).subspan(index * stride, stride);
}

std::span<const float> Tensor::slice(std::size_t index) const {
    const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
    return std::span<const float>(data_).subspan(index * stride, stride);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        std::ostringstream os;
        os << what << ": expected rank " << rank << ", got shape " << shape_string(t.shape());
        shape_fail(os.str());
    }
}

Tensor conv2d(const Tensor& input, const Tensor& weight, std::span<const float> bias) {
    require_rank(input, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t O = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != C) {
        std::ostringstream os;
        os << "conv2d: weight input-channel axis (axis 1) is " << weight.dim(1) << " but input has " << C
           << " channels";
        shape_fail(os.str());
    }
    if (weight.dim(3) != k) shape_fail("conv2d: kernel width axis (axis 3) differs from kernel height axis (axis 2)");
    if (k % 2 == 0) shape_fail("conv2d: kernel size must be odd, got " + std::to_string(k));
    check_bias(bias, O, "conv2d");

    const long pad = static_cast<long>(k / 2);
    const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
    Tensor out({O, H, W});
    parallel_for(0, O, [&](std::size_t o) {
        const float b = bias.empty() ? 0.0f : bias[o];
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                float acc = b;
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t i = 0; i < k; ++i) {
                        const long sy = static_cast<long>(y) + static_cast<long>(i) - pad;
                        if (sy < 0 || sy >= Hl) continue;
                        for (std::size_t j = 0; j < k; ++j) {
                            const long sx = static_cast<long>(x) + static_cast<long>(j) - pad;
                            if (sx < 0 || sx >= Wl) continue;
                            acc += weight[((o * C + c) * k + i) * k + j] *
                                   input.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                        }
                    }
                }
                out.at(o, y, x) = acc;
            }
        }
    });
    return out;
}

namespace {

void check_coords(const Tensor& src, const Tensor& coords, const char* op) {
    require_rank(src, 3, op);
    require_rank(coords, 3, op);
    if (coords.dim(0) != 2) {
        std::ostringstream os;
        os << op << ": coords channel axis must be 2 (y, x), got " << coords.dim(0);
        shape_fail(os.str());
    }
}

// Four-tap bilinear read of one channel plane with zero extension.
struct Taps {
    long y0, x0;
    float wy, wx;
};

inline float read_zero(std::span<const float> plane, long H, long W, long y, long x) {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0f;
    return plane[static_cast<std::size_t>(y * W + x)];
}

}  // namespace

Tensor bilinear_sample(const Tensor& src, const Tensor& coords, BorderMode border) {
    check_coords(src, coords, "bilinear_sample");
    const std::size_t C = src.dim(0);
    const long H = static_cast<long>(src.dim(1)), W = static_cast<long>(src.dim(2));
    const std::size_t Ho = coords.dim(1), Wo = coords.dim(2);
    Tensor out({C, Ho, Wo});
    const std::size_t n = Ho * Wo;
    const auto cy = coords.slice(0);
    const auto cx = coords.slice(1);

    for (std::size_t p = 0; p < n; ++p) {
        float y = cy[p], x = cx[p];
        if (border == BorderMode::Clamp) {
            y = std::clamp(y, 0.0f, static_cast<float>(H - 1));
            x = std::clamp(x, 0.0f, static_cast<float>(W - 1));
        }
        const float fy = std::floor(y), fx = std::floor(x);
        const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
        const float wy = y - fy, wx = x - fx;
        for (std::size_t c = 0; c < C; ++c) {
            const auto plane = src.slice(c);
            float v00, v01, v10, v11;
            if (border == BorderMode::Clamp) {
                const long y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                v00 = plane[static_cast<std::size_t>(y0 * W + x0)];
                v01 = plane[static_cast<std::size_t>(y0 * W + x1)];
                v10 = plane[static_cast<std::size_t>(y1 * W + x0)];
                v11 = plane[static_cast<std::size_t>(y1 * W + x1)];
            } else {
                v00 = read_zero(plane, H, W, y0, x0);
                v01 = read_zero(plane, H, W, y0, x0 + 1);
                v10 = read_zero(plane, H, W, y0 + 1, x0);
                v11 = read_zero(plane, H, W, y0 + 1, x0 + 1);
            }
            // Integer coordinates give wy == wx == 0, so only v00 survives.
            float v = v00;
            if (wx != 0.0f || wy != 0.0f) {
                v = (1.0f - wy) * ((1.0f - wx) * v00 + wx * v01) + wy * ((1.0f - wx) * v10 + wx * v11);
            }
            out.slice(c)[p] = v;
        }
    }
    return out;
}

Tensor bilinear_sample_grad(const Tensor& src, const Tensor& coords) {
    check_coords(src, coords, "bilinear_sample_grad");
    const std::size_t C = src.dim(0);
    const long H = static_cast<long>(src.dim(1)), W = static_cast<long>(src.dim(2));
    const std::size_t Ho = coords.dim(1), Wo = coords.dim(2);
    Tensor out({2, Ho, Wo});
    const std::size_t n = Ho * Wo;
    for (std::size_t p = 0; p < n; ++p) {
        const float y = coords.slice(0)[p], x = coords.slice(1)[p];
        const float fy = std::floor(y), fx = std::floor(x);
        const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
        const float wy = y - fy, wx = x - fx;
        float gy = 0.0f, gx = 0.0f;
        for (std::size_t c = 0; c < C; ++c) {
            const auto plane = src.slice(c);
            const float v00 = read_zero(plane, H, W, y0, x0);
            const float v01 = read_zero(plane, H, W, y0, x0 + 1);
            const float v10 = read_zero(plane, H, W, y0 + 1, x0);
            const float v11 = read_zero(plane, H, W, y0 + 1, x0 + 1);
            gy += (1.0f - wx) * (v10 - v00) + wx * (v11 - v01);
            gx += (1.0f - wy) * (v01 - v00) + wy * (v11 - v10);
        }
        out.slice(0)[p] = gy;
        out.slice(1)[p] = gx;
    }
    return out;
}

Tensor linear(const Tensor& tokens, const Tensor& weight, std::span<const float> bias) {
    require_rank(tokens, 2, "linear tokens");
    require_rank(weight, 2, "linear weight");
    const std::size_t N = tokens.dim(0), D = tokens.dim(1), E = weight.dim(1);
    if (weight.dim(0) != D) {
        std::ostringstream os;
        os << "linear: inner dimension mismatch, tokens axis 1 is " << D << " but weight axis 0 is "
           << weight.dim(0);
        shape_fail(os.str());
    }
    check_bias(bias, E, "linear");
    Tensor out({N, E});
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t e = 0; e < E; ++e) {
            float acc = bias.empty() ? 0.0f : bias[e];
            for (std::size_t d = 0; d < D; ++d) acc += tokens.at(n, d) * weight.at(d, e);
            out.at(n, e) = acc;
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& m) {
    require_rank(m, 2, "softmax_rows");
    const std::size_t R = m.dim(0), Cn = m.dim(1);
    Tensor out(m.shape());
    for (std::size_t r = 0; r < R; ++r) {
        float mx = -INFINITY;
        for (std::size_t c = 0; c < Cn; ++c) mx = std::max(mx, m.at(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < Cn; ++c) {
            const float e = std::exp(m.at(r, c) - mx);
            out.at(r, c) = e;
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (std::size_t c = 0; c < Cn; ++c) out.at(r, c) *= inv;
    }
    return out;
}

Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
    if (parts.size() == 0) shape_fail("concat_channels: no inputs");
    const Tensor& first = **parts.begin();
    require_rank(first, 3, "concat_channels");
    const std::size_t H = first.dim(1), W = first.dim(2);
    std::size_t C = 0;
    for (const Tensor* t : parts) {
        require_rank(*t, 3, "concat_channels");
        if (t->dim(1) != H || t->dim(2) != W) {
            shape_fail("concat_channels: spatial extent " + shape_string(t->shape()) + " differs from " +
                       shape_string(first.shape()));
        }
        C += t->dim(0);
    }
    std::vector<float> data;
    data.reserve(C * H * W);
    for (const Tensor* t : parts) data.insert(data.end(), t->values().begin(), t->values().end());
    return Tensor({C, H, W}, std::move(data));
}

void leaky_relu_inplace(Tensor& t, float slope) {
    for (float& v : t.values()) v = v >= 0.0f ? v : v * slope;
}

Tensor identity_grid(std::size_t height, std::size_t width) {
    Tensor g({2, height, width});
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            g.at(0, y, x) = static_cast<float>(y);
            g.at(1, y, x) = static_cast<float>(x);
        }
    }
    return g;
}

}  // namespace cpgd
