#pragma once

#include <cstddef>
#include <string>

#include "vadnet/error.hpp"
#include "vadnet/tensor.hpp"

namespace vadnet {

/// Output extent of a strided, zero-padded window sweep along one axis.
/// Throws invalid-geometry when no window fits.
inline std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                                      std::size_t padding, const char* axis) {
    if (stride == 0) throw Error(ErrorKind::InvalidGeometry, "stride must be >= 1");
    const std::size_t padded = input + 2 * padding;
    if (padded < kernel) {
        throw Error(ErrorKind::InvalidGeometry, std::string("kernel does not fit along ") + axis + ": input " +
                                                    std::to_string(input) + " + 2*padding " +
                                                    std::to_string(padding) + " < kernel " +
                                                    std::to_string(kernel));
    }
    return (padded - kernel) / stride + 1;
}

/// 4-way convolution kernel [M, C, k_h, k_w] with its stride and zero padding.
class ConvKernel {
public:
    ConvKernel() = default;

    ConvKernel(Tensor weights, std::size_t stride = 1, std::size_t padding = 0)
        : weights_(std::move(weights)), stride_(stride), padding_(padding) {
        if (!weights_.defined() || weights_.rank() != 4) {
            throw Error(ErrorKind::InvalidShape,
                        "kernel weights must be [M,C,kh,kw], got " +
                            (weights_.defined() ? shape_string(weights_.shape()) : std::string("none")));
        }
        if (stride_ == 0) throw Error(ErrorKind::InvalidGeometry, "stride must be >= 1");
    }

    const Tensor& weights() const { return weights_; }
    Tensor& weights() { return weights_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return padding_; }

    std::size_t out_channels() const { return weights_.extent(0); }
    std::size_t in_channels() const { return weights_.extent(1); }
    std::size_t kernel_h() const { return weights_.extent(2); }
    std::size_t kernel_w() const { return weights_.extent(3); }

    std::size_t output_h(std::size_t input_h) const {
        return conv_output_extent(input_h, kernel_h(), stride_, padding_, "height");
    }
    std::size_t output_w(std::size_t input_w) const {
        return conv_output_extent(input_w, kernel_w(), stride_, padding_, "width");
    }

private:
    Tensor weights_;
    std::size_t stride_ = 1;
    std::size_t padding_ = 0;
};

}  // namespace vadnet
