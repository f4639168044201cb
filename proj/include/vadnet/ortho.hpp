#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "vadnet/conv_kernel.hpp"
#include "vadnet/error.hpp"
#include "vadnet/ops.hpp"
#include "vadnet/tensor.hpp"

namespace vadnet {

enum class PaddingMode { Zero, Circular };

struct InputGeometry {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
};

/// Largest dense operator we are willing to materialize, per axis.
inline constexpr std::size_t kMaxDenseExtent = 4096;

/// Doubly block-Toeplitz form of a convolution: one row per output entry
/// (m, y, x), one column per input entry (c, i, j), both row-major.
struct DbtMatrix {
    Eigen::MatrixXd matrix;
    InputGeometry geometry;
    std::size_t stride = 1;
    std::size_t padding = 0;
    PaddingMode mode = PaddingMode::Zero;
    std::size_t out_channels = 0;
    std::size_t out_h = 0;
    std::size_t out_w = 0;

    Eigen::Index rows() const { return matrix.rows(); }
    Eigen::Index cols() const { return matrix.cols(); }
};

namespace detail {

inline std::size_t circular_extent(std::size_t input, std::size_t stride) { return (input - 1) / stride + 1; }

inline std::size_t wrap(long index, std::size_t extent) {
    const long e = static_cast<long>(extent);
    return static_cast<std::size_t>(((index % e) + e) % e);
}

}  // namespace detail

/// Output spatial extents of `kernel` over `geometry` under `mode`.
inline std::pair<std::size_t, std::size_t> output_extents(const ConvKernel& kernel, const InputGeometry& geometry,
                                                          PaddingMode mode = PaddingMode::Zero) {
    if (mode == PaddingMode::Circular) {
        if (kernel.kernel_h() > geometry.height || kernel.kernel_w() > geometry.width) {
            throw Error(ErrorKind::InvalidGeometry, "circular mode needs the kernel to fit inside the input");
        }
        return {detail::circular_extent(geometry.height, kernel.stride()),
                detail::circular_extent(geometry.width, kernel.stride())};
    }
    return {kernel.output_h(geometry.height), kernel.output_w(geometry.width)};
}

/// Materializes the convolution as a dense matrix. Zero mode drops taps that
/// fall outside the input; circular mode wraps them around.
inline DbtMatrix build_dbt(const ConvKernel& kernel, const InputGeometry& geometry,
                           PaddingMode mode = PaddingMode::Zero) {
    if (kernel.in_channels() != geometry.channels) {
        throw Error(ErrorKind::InvalidShape, "channel axis: kernel expects " + std::to_string(kernel.in_channels()) +
                                                 " input channels, geometry has " + std::to_string(geometry.channels));
    }
    const auto [out_h, out_w] = output_extents(kernel, geometry, mode);
    const std::size_t rows = kernel.out_channels() * out_h * out_w;
    const std::size_t cols = geometry.channels * geometry.height * geometry.width;
    if (rows > kMaxDenseExtent || cols > kMaxDenseExtent) {
        throw Error(ErrorKind::TooLarge, "DBT matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                                             " exceeds the dense limit " + std::to_string(kMaxDenseExtent));
    }

    DbtMatrix dbt;
    dbt.matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    dbt.geometry = geometry;
    dbt.stride = kernel.stride();
    dbt.padding = kernel.padding();
    dbt.mode = mode;
    dbt.out_channels = kernel.out_channels();
    dbt.out_h = out_h;
    dbt.out_w = out_w;

    const Tensor& w = kernel.weights();
    const long s = static_cast<long>(kernel.stride());
    const long p = static_cast<long>(kernel.padding());
    const long in_h = static_cast<long>(geometry.height);
    const long in_w = static_cast<long>(geometry.width);
    for (std::size_t m = 0; m < kernel.out_channels(); ++m) {
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto row = static_cast<Eigen::Index>((m * out_h + y) * out_w + x);
                for (std::size_t c = 0; c < geometry.channels; ++c) {
                    for (std::size_t u = 0; u < kernel.kernel_h(); ++u) {
                        for (std::size_t v = 0; v < kernel.kernel_w(); ++v) {
                            long iy = static_cast<long>(y) * s + static_cast<long>(u) - p;
                            long ix = static_cast<long>(x) * s + static_cast<long>(v) - p;
                            if (mode == PaddingMode::Circular) {
                                iy = static_cast<long>(detail::wrap(iy, geometry.height));
                                ix = static_cast<long>(detail::wrap(ix, geometry.width));
                            } else if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) {
                                continue;
                            }
                            const auto col =
                                static_cast<Eigen::Index>((static_cast<long>(c) * in_h + iy) * in_w + ix);
                            dbt.matrix(row, col) += w.at({m, c, u, v});
                        }
                    }
                }
            }
        }
    }
    return dbt;
}

/// ||A A^T - I||_F (unsquared).
inline double kernel_orth_loss_row(const Eigen::MatrixXd& a) {
    const Eigen::MatrixXd gram = a * a.transpose();
    return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).norm();
}

/// ||A^T A - I||_F (unsquared).
inline double kernel_orth_loss_col(const Eigen::MatrixXd& a) {
    const Eigen::MatrixXd gram = a.transpose() * a;
    return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).norm();
}

inline double kernel_orth_loss_row(const DbtMatrix& dbt) { return kernel_orth_loss_row(dbt.matrix); }
inline double kernel_orth_loss_col(const DbtMatrix& dbt) { return kernel_orth_loss_col(dbt.matrix); }

/// Shape and centre of the identity target that self_conv is compared to.
/// Shifts per axis are the multiples of the stride with magnitude <= k-1.
struct IdentityTarget {
    std::size_t channels = 1;  // M
    std::size_t shifts_h = 1;  // h_s = 2*floor((k_h-1)/S) + 1
    std::size_t shifts_w = 1;
    std::size_t center_h = 0;
    std::size_t center_w = 0;

    static IdentityTarget for_kernel(const ConvKernel& kernel) {
        IdentityTarget t;
        t.channels = kernel.out_channels();
        const std::size_t qh = (kernel.kernel_h() - 1) / kernel.stride();
        const std::size_t qw = (kernel.kernel_w() - 1) / kernel.stride();
        t.shifts_h = 2 * qh + 1;
        t.shifts_w = 2 * qw + 1;
        t.center_h = qh;
        t.center_w = qw;
        return t;
    }

    Shape shape() const { return {channels, channels, shifts_h, shifts_w}; }

    double at(std::size_t i, std::size_t j, std::size_t a, std::size_t b) const {
        return (i == j && a == center_h && b == center_w) ? 1.0 : 0.0;
    }

    Tensor tensor() const {
        Tensor t = Tensor::zeros(shape());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < channels; ++i) data[t.offset({i, i, center_h, center_w})] = 1.0;
        return t;
    }
};

/// Cross-correlation of the kernel with itself over channel-aligned shifts:
/// Z[i,j,a,b] = sum_{c,u,v} K[i,c,u,v] * K[j,c,u+S(a-a0),v+S(b-b0)].
/// Differentiable w.r.t. the kernel weights.
inline Tensor self_conv(const ConvKernel& kernel) {
    const IdentityTarget target = IdentityTarget::for_kernel(kernel);
    const std::size_t m_ch = kernel.out_channels();
    const std::size_t c_ch = kernel.in_channels();
    const long kh = static_cast<long>(kernel.kernel_h());
    const long kw = static_cast<long>(kernel.kernel_w());
    const long s = static_cast<long>(kernel.stride());
    const std::size_t hs = target.shifts_h;
    const std::size_t ws = target.shifts_w;
    const long a0 = static_cast<long>(target.center_h);
    const long b0 = static_cast<long>(target.center_w);

    auto k_index = [=](std::size_t m, std::size_t c, long u, long v) {
        return ((m * c_ch + c) * static_cast<std::size_t>(kh) + static_cast<std::size_t>(u)) *
                   static_cast<std::size_t>(kw) +
               static_cast<std::size_t>(v);
    };
    // Calls body(z_index, k_i_index, k_j_index) for every overlapping tap pair.
    auto sweep = [=](auto&& body) {
        for (std::size_t i = 0; i < m_ch; ++i)
            for (std::size_t j = 0; j < m_ch; ++j)
                for (std::size_t a = 0; a < hs; ++a)
                    for (std::size_t b = 0; b < ws; ++b) {
                        const long dy = s * (static_cast<long>(a) - a0);
                        const long dx = s * (static_cast<long>(b) - b0);
                        const std::size_t z = ((i * m_ch + j) * hs + a) * ws + b;
                        const long u_lo = std::max(0L, -dy), u_hi = std::min(kh, kh - dy);
                        const long v_lo = std::max(0L, -dx), v_hi = std::min(kw, kw - dx);
                        for (std::size_t c = 0; c < c_ch; ++c)
                            for (long u = u_lo; u < u_hi; ++u)
                                for (long v = v_lo; v < v_hi; ++v)
                                    body(z, k_index(i, c, u, v), k_index(j, c, u + dy, v + dx));
                    }
    };

    const auto w = kernel.weights().data();
    std::vector<double> out(m_ch * m_ch * hs * ws, 0.0);
    sweep([&](std::size_t z, std::size_t ki, std::size_t kj) { out[z] += w[ki] * w[kj]; });

    return Tensor::make_result("self_conv", target.shape(), std::move(out), {kernel.weights()},
                               [sweep](const detail::Node& node) {
                                   auto gk = grad_sink(node, 0);
                                   const auto& k = node.inputs[0]->data;
                                   sweep([&](std::size_t z, std::size_t ki, std::size_t kj) {
                                       const double g = node.grad[z];
                                       gk[ki] += g * k[kj];
                                       gk[kj] += g * k[ki];
                                   });
                               });
}

/// ||self_conv(K) - I_target||_F^2, differentiable w.r.t. the kernel weights.
inline Tensor orth_loss(const ConvKernel& kernel) {
    return frobenius_sq(sub(self_conv(kernel), IdentityTarget::for_kernel(kernel).tensor()));
}

enum class Orientation { Row, Column };

inline std::string_view to_string(Orientation o) { return o == Orientation::Row ? "row" : "column"; }

/// Row when the row Gram (M H' W' square) is no larger than the column Gram.
inline Orientation choose_orientation(const ConvKernel& kernel, const InputGeometry& geometry) {
    const auto [out_h, out_w] = output_extents(kernel, geometry);
    const std::size_t rows = kernel.out_channels() * out_h * out_w;
    const std::size_t cols = geometry.channels * geometry.height * geometry.width;
    return rows <= cols ? Orientation::Row : Orientation::Column;
}

/// Singular values of a dense operator, descending.
inline std::vector<double> spectral_profile(const Eigen::MatrixXd& a) {
    if (static_cast<std::size_t>(a.rows()) > kMaxDenseExtent || static_cast<std::size_t>(a.cols()) > kMaxDenseExtent) {
        throw Error(ErrorKind::TooLarge, "spectral profile limited to " + std::to_string(kMaxDenseExtent) +
                                             " per axis, got " + std::to_string(a.rows()) + "x" +
                                             std::to_string(a.cols()));
    }
    if (a.size() == 0) return {};
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
    const Eigen::VectorXd& sv = svd.singularValues();
    std::vector<double> values(sv.data(), sv.data() + sv.size());
    std::sort(values.begin(), values.end(), std::greater<>());
    return values;
}

inline std::vector<double> spectral_profile(const DbtMatrix& dbt) { return spectral_profile(dbt.matrix); }

/// max sigma / min sigma; infinite when the operator is rank deficient.
inline double spectral_spread(const std::vector<double>& singular_values) {
    if (singular_values.empty()) return 1.0;
    const double lo = singular_values.back();
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return singular_values.front() / lo;
}

}  // namespace vadnet
