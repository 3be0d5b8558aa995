#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpgd {

// Raised when tensor extents do not line up. The message names the axis.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Dense row-major f32 array. The last axis is innermost.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    static Tensor zeros(std::initializer_list<std::size_t> shape) { return Tensor(std::vector<std::size_t>(shape)); }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::vector<float>& values() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // 2-D (row, col) and 3-D (channel, y, x) element access, unchecked.
    float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    float& at(std::size_t ch, std::size_t y, std::size_t x) { return data_[(ch * shape_[1] + y) * shape_[2] + x]; }
    float at(std::size_t ch, std::size_t y, std::size_t x) const { return data_[(ch * shape_[1] + y) * shape_[2] + x]; }

    // Contiguous view of one leading-axis slice (e.g. one channel plane).
    std::span<float> slice(std::size_t index);
    std::span<const float> slice(std::size_t index) const;

    Tensor reshaped(std::vector<std::size_t> shape) const;
    bool all_finite() const noexcept;

    bool operator==(const Tensor& other) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Throws ShapeError unless `t` has the given rank.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

enum class BorderMode {
    Zero,   // reads outside the plane contribute 0
    Clamp,  // coordinates are clamped to the plane before interpolation
};

// Stride-1 cross-correlation with zero padding (k-1)/2.
// input C x H x W, weight O x C x k x k, bias length O (or empty for none).
Tensor conv2d(const Tensor& input, const Tensor& weight, std::span<const float> bias);

// Samples every channel of `src` at absolute (y, x) positions given by
// `coords` (2 x H' x W', channel 0 = y). Returns C x H' x W'.
Tensor bilinear_sample(const Tensor& src, const Tensor& coords, BorderMode border = BorderMode::Zero);

// Analytic d(output)/dy and d(output)/dx of bilinear_sample (zero border),
// summed over channels. Returns 2 x H' x W'. Undefined on lattice lines.
Tensor bilinear_sample_grad(const Tensor& src, const Tensor& coords);

// tokens N x D, weight D x E, bias length E (or empty) -> N x E.
Tensor linear(const Tensor& tokens, const Tensor& weight, std::span<const float> bias);

// Row-wise softmax of a 2-D tensor with max subtraction.
Tensor softmax_rows(const Tensor& m);

// Stacks C_i x H x W tensors along the channel axis.
Tensor concat_channels(std::initializer_list<const Tensor*> parts);

void leaky_relu_inplace(Tensor& t, float slope);

// Regular integer lattice: channel 0 = row index, channel 1 = column index.
Tensor identity_grid(std::size_t height, std::size_t width);

}  // namespace cpgd
