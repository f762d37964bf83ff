#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gf {

// Dense float32 array, rank 1..4, row-major. The carrier for images,
// feature maps, weights and feature vectors throughout the library.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, float fill = 0.0f)
        : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(static_cast<size_t>(numel_of(shape_)), fill);
    }

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (static_cast<int64_t>(data_.size()) != numel_of(shape_)) {
            throw std::invalid_argument("Tensor: data length does not match shape");
        }
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& at(int i) { return data_[static_cast<size_t>(i)]; }
    float at(int i) const { return data_[static_cast<size_t>(i)]; }
    float& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    float at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    float& at(int i, int j, int k, int l) {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    float at(int i, int j, int k, int l) const {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    static int64_t numel_of(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    std::string shape_str() const;

private:
    static void validate_shape(const std::vector<int>& shape) {
        if (shape.empty() || shape.size() > 4) {
            throw std::invalid_argument("Tensor: rank must be 1..4");
        }
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: extents must be positive");
        }
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

// Convolution geometry. Output extent per axis is
//   floor((in + 2*padding - dilation*(k-1) - 1) / stride) + 1
// and must be >= 1. Padding is symmetric zeros.
struct ConvSpec {
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};

inline int conv_out_extent(int in, int k, const ConvSpec& spec) {
    return (in + 2 * spec.padding - spec.dilation * (k - 1) - 1) / spec.stride + 1;
}

// Throws if any value is NaN or infinite. Kernels call this on their
// outputs so non-finite values never propagate silently.
void check_finite(const Tensor& t, const char* op);

}  // namespace gf
