#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vadnet/conv_kernel.hpp"
#include "vadnet/error.hpp"
#include "vadnet/tensor.hpp"

namespace vadnet {

namespace detail {

// Output positions [lo, hi) whose tap at kernel offset `tap` lands inside the input.
struct ValidRange {
    std::size_t lo;
    std::size_t hi;
};

inline ValidRange valid_outputs(std::size_t tap, std::size_t stride, std::size_t padding, std::size_t input,
                                std::size_t output) {
    const long t = static_cast<long>(tap);
    const long p = static_cast<long>(padding);
    const long s = static_cast<long>(stride);
    const long lo = t >= p ? 0 : (p - t + s - 1) / s;
    const long top = static_cast<long>(input) - 1 + p - t;
    if (top < 0) return {0, 0};
    const long hi = std::min<long>(static_cast<long>(output), top / s + 1);
    if (lo >= hi) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline void require_same_size(const Tensor& a, const Tensor& b, const char* what) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::InvalidShape, std::string(what) + ": sizes differ " + shape_string(a.shape()) +
                                                 " vs " + shape_string(b.shape()));
    }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. Input is [C,H,W] or [N,C,H,W];
/// the output keeps the same rank.
inline Tensor conv2d(const Tensor& input, const Tensor& weights, std::size_t stride, std::size_t padding) {
    if (input.rank() != 3 && input.rank() != 4) {
        throw Error(ErrorKind::InvalidShape, "conv2d input must be [C,H,W] or [N,C,H,W], got " +
                                                 shape_string(input.shape()));
    }
    if (weights.rank() != 4) {
        throw Error(ErrorKind::InvalidShape, "conv2d kernel must be [M,C,kh,kw], got " + shape_string(weights.shape()));
    }
    const bool batched = input.rank() == 4;
    const std::size_t off = batched ? 1 : 0;
    const std::size_t batch = batched ? input.extent(0) : 1;
    const std::size_t channels = input.extent(off);
    const std::size_t in_h = input.extent(off + 1);
    const std::size_t in_w = input.extent(off + 2);
    const std::size_t out_c = weights.extent(0);
    const std::size_t kh = weights.extent(2);
    const std::size_t kw = weights.extent(3);
    if (weights.extent(1) != channels) {
        throw Error(ErrorKind::InvalidShape, "conv2d channel axis: kernel expects " + std::to_string(weights.extent(1)) +
                                                 " input channels, input has " + std::to_string(channels));
    }
    const std::size_t out_h = conv_output_extent(in_h, kh, stride, padding, "height");
    const std::size_t out_w = conv_output_extent(in_w, kw, stride, padding, "width");

    const std::size_t in_plane = in_h * in_w;
    const std::size_t out_plane = out_h * out_w;

    // Visits every (output, input, weight) triple that contributes.
    auto sweep = [=](auto&& body) {
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t m = 0; m < out_c; ++m) {
                const std::size_t out_base = (n * out_c + m) * out_plane;
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t in_base = (n * channels + c) * in_plane;
                    for (std::size_t u = 0; u < kh; ++u) {
                        const auto rows = detail::valid_outputs(u, stride, padding, in_h, out_h);
                        for (std::size_t v = 0; v < kw; ++v) {
                            const auto cols = detail::valid_outputs(v, stride, padding, in_w, out_w);
                            if (cols.lo >= cols.hi) continue;
                            const std::size_t w_index = ((m * channels + c) * kh + u) * kw + v;
                            for (std::size_t y = rows.lo; y < rows.hi; ++y) {
                                const std::size_t iy = y * stride + u - padding;
                                const std::size_t out_first = out_base + y * out_w + cols.lo;
                                const std::size_t in_first = in_base + iy * in_w + cols.lo * stride + v - padding;
                                body(out_first, in_first, w_index, cols.hi - cols.lo);
                            }
                        }
                    }
                }
            }
        }
    };

    std::vector<double> out(batch * out_c * out_plane, 0.0);
    {
        const double* x = input.data().data();
        const double* k = weights.data().data();
        sweep([&](std::size_t out_first, std::size_t in_first, std::size_t w_index, std::size_t count) {
            const double w = k[w_index];
            double* dst = out.data() + out_first;
            const double* src = x + in_first;
            for (std::size_t i = 0; i < count; ++i) dst[i] += w * src[i * stride];
        });
    }

    Shape shape = batched ? Shape{batch, out_c, out_h, out_w} : Shape{out_c, out_h, out_w};
    return Tensor::make_result(
        "conv2d", std::move(shape), std::move(out), {input, weights}, [sweep, stride](const detail::Node& node) {
            const double* g = node.grad.data();
            const double* x = node.inputs[0]->data.data();
            const double* k = node.inputs[1]->data.data();
            auto gx = grad_sink(node, 0);
            auto gk = grad_sink(node, 1);
            sweep([&](std::size_t out_first, std::size_t in_first, std::size_t w_index, std::size_t count) {
                const double* gout = g + out_first;
                if (!gx.empty()) {
                    const double w = k[w_index];
                    double* dst = gx.data() + in_first;
                    for (std::size_t i = 0; i < count; ++i) dst[i * stride] += w * gout[i];
                }
                if (!gk.empty()) {
                    const double* src = x + in_first;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < count; ++i) acc += gout[i] * src[i * stride];
                    gk[w_index] += acc;
                }
            });
        });
}

inline Tensor conv2d(const Tensor& input, const ConvKernel& kernel) {
    return conv2d(input, kernel.weights(), kernel.stride(), kernel.padding());
}

/// Affine map: input [F] -> [O] or [N,F] -> [N,O].
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) {
        throw Error(ErrorKind::InvalidShape, "linear weight must be [O,F], got " + shape_string(weight.shape()));
    }
    if (input.rank() != 1 && input.rank() != 2) {
        throw Error(ErrorKind::InvalidShape, "linear input must be [F] or [N,F], got " + shape_string(input.shape()));
    }
    const std::size_t outs = weight.extent(0);
    const std::size_t feats = weight.extent(1);
    const bool batched = input.rank() == 2;
    const std::size_t batch = batched ? input.extent(0) : 1;
    const std::size_t in_feats = input.extent(batched ? 1 : 0);
    if (in_feats != feats) {
        throw Error(ErrorKind::InvalidShape, "linear feature axis: weight expects " + std::to_string(feats) +
                                                 ", input has " + std::to_string(in_feats));
    }
    if (bias.rank() != 1 || bias.extent(0) != outs) {
        throw Error(ErrorKind::InvalidShape, "linear bias must be [" + std::to_string(outs) + "], got " +
                                                 shape_string(bias.shape()));
    }
    std::vector<double> out(batch * outs);
    const auto x = input.data();
    const auto w = weight.data();
    const auto b = bias.data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < outs; ++o) {
            double acc = b[o];
            for (std::size_t f = 0; f < feats; ++f) acc += w[o * feats + f] * x[n * feats + f];
            out[n * outs + o] = acc;
        }
    }
    Shape shape = batched ? Shape{batch, outs} : Shape{outs};
    return Tensor::make_result("linear", std::move(shape), std::move(out), {input, weight, bias},
                               [batch, outs, feats](const detail::Node& node) {
                                   const auto& g = node.grad;
                                   const auto& x = node.inputs[0]->data;
                                   const auto& w = node.inputs[1]->data;
                                   auto gx = grad_sink(node, 0);
                                   auto gw = grad_sink(node, 1);
                                   auto gb = grad_sink(node, 2);
                                   for (std::size_t n = 0; n < batch; ++n) {
                                       for (std::size_t o = 0; o < outs; ++o) {
                                           const double go = g[n * outs + o];
                                           if (!gb.empty()) gb[o] += go;
                                           for (std::size_t f = 0; f < feats; ++f) {
                                               if (!gx.empty()) gx[n * feats + f] += go * w[o * feats + f];
                                               if (!gw.empty()) gw[o * feats + f] += go * x[n * feats + f];
                                           }
                                       }
                                   }
                               });
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
inline Tensor relu(const Tensor& input) {
    std::vector<double> out(input.data().begin(), input.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return Tensor::make_result("relu", input.shape(), std::move(out), {input}, [](const detail::Node& node) {
        auto gx = grad_sink(node, 0);
        const auto& x = node.inputs[0]->data;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (x[i] > 0.0) gx[i] += node.grad[i];
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_size(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](const detail::Node& node) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto g = grad_sink(node, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_size(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [](const detail::Node& node) {
        auto ga = grad_sink(node, 0);
        auto gb = grad_sink(node, 1);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= node.grad[i];
    });
}

inline Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a[i];
    return Tensor::make_result("scale", a.shape(), std::move(out), {a}, [factor](const detail::Node& node) {
        auto g = grad_sink(node, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * node.grad[i];
    });
}

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    return Tensor::make_result("sum", {1}, {total}, {a}, [](const detail::Node& node) {
        auto g = grad_sink(node, 0);
        for (double& v : g) v += node.grad[0];
    });
}

/// Same values under a new shape of equal size.
inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw Error(ErrorKind::InvalidShape, "reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return Tensor::make_result("reshape", std::move(shape), std::move(out), {a}, [](const detail::Node& node) {
        auto g = grad_sink(node, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    });
}

/// [N, ...] -> [N, prod(...)]
inline Tensor flatten_batch(const Tensor& a) {
    if (a.rank() < 2) throw Error(ErrorKind::InvalidShape, "flatten_batch needs a batch axis");
    return reshape(a, {a.extent(0), a.size() / a.extent(0)});
}

/// Mean squared error over all entries.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    detail::require_same_size(pred, target, "mse_loss");
    const std::size_t n = pred.size();
    if (n == 0) throw Error(ErrorKind::EmptyInput, "mse_loss on empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return Tensor::make_result("mse_loss", {1}, {acc / static_cast<double>(n)}, {pred, target},
                               [n](const detail::Node& node) {
                                   const auto& p = node.inputs[0]->data;
                                   const auto& t = node.inputs[1]->data;
                                   auto gp = grad_sink(node, 0);
                                   auto gt = grad_sink(node, 1);
                                   const double k = 2.0 * node.grad[0] / static_cast<double>(n);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const double d = k * (p[i] - t[i]);
                                       if (!gp.empty()) gp[i] += d;
                                       if (!gt.empty()) gt[i] -= d;
                                   }
                               });
}

/// Sum of squared entries.
inline Tensor frobenius_sq(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v * v;
    return Tensor::make_result("frobenius_sq", {1}, {acc}, {t}, [](const detail::Node& node) {
        auto g = grad_sink(node, 0);
        const auto& x = node.inputs[0]->data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * x[i] * node.grad[0];
    });
}

/// [N,C,H,W] -> [N,C]
inline Tensor global_avg_pool(const Tensor& input) {
    if (input.rank() != 4) {
        throw Error(ErrorKind::InvalidShape, "global_avg_pool needs [N,C,H,W], got " + shape_string(input.shape()));
    }
    const std::size_t planes = input.extent(0) * input.extent(1);
    const std::size_t area = input.extent(2) * input.extent(3);
    std::vector<double> out(planes, 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < area; ++i) acc += input[p * area + i];
        out[p] = acc / static_cast<double>(area);
    }
    return Tensor::make_result("global_avg_pool", {input.extent(0), input.extent(1)}, std::move(out), {input},
                               [planes, area](const detail::Node& node) {
                                   auto g = grad_sink(node, 0);
                                   for (std::size_t p = 0; p < planes; ++p) {
                                       const double share = node.grad[p] / static_cast<double>(area);
                                       for (std::size_t i = 0; i < area; ++i) g[p * area + i] += share;
                                   }
                               });
}

/// Parameter-free residual shortcut: spatial subsampling by `stride` and
/// zero-filled extra channels. [N,C,H,W] -> [N,out_channels,ceil(H/S),ceil(W/S)].
inline Tensor shortcut(const Tensor& input, std::size_t out_channels, std::size_t stride) {
    if (input.rank() != 4) {
        throw Error(ErrorKind::InvalidShape, "shortcut needs [N,C,H,W], got " + shape_string(input.shape()));
    }
    const std::size_t batch = input.extent(0);
    const std::size_t channels = input.extent(1);
    const std::size_t in_h = input.extent(2);
    const std::size_t in_w = input.extent(3);
    if (out_channels < channels) {
        throw Error(ErrorKind::InvalidShape, "shortcut cannot drop channels");
    }
    if (stride == 0) throw Error(ErrorKind::InvalidGeometry, "stride must be >= 1");
    const std::size_t out_h = (in_h - 1) / stride + 1;
    const std::size_t out_w = (in_w - 1) / stride + 1;
    auto source = [=](std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return ((n * channels + c) * in_h + y * stride) * in_w + x * stride;
    };
    std::vector<double> out(batch * out_channels * out_h * out_w, 0.0);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t x = 0; x < out_w; ++x)
                    out[((n * out_channels + c) * out_h + y) * out_w + x] = input[source(n, c, y, x)];
    return Tensor::make_result("shortcut", {batch, out_channels, out_h, out_w}, std::move(out), {input},
                               [=](const detail::Node& node) {
                                   auto g = grad_sink(node, 0);
                                   for (std::size_t n = 0; n < batch; ++n)
                                       for (std::size_t c = 0; c < channels; ++c)
                                           for (std::size_t y = 0; y < out_h; ++y)
                                               for (std::size_t x = 0; x < out_w; ++x)
                                                   g[source(n, c, y, x)] +=
                                                       node.grad[((n * out_channels + c) * out_h + y) * out_w + x];
                               });
}

/// Running statistics owned by a batch-norm layer.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization of [N,C,H,W]. Training mode normalizes with
/// batch statistics and updates `state`; eval mode uses the running values.
inline Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                         bool training) {
    if (input.rank() != 4) {
        throw Error(ErrorKind::InvalidShape, "batch_norm needs [N,C,H,W], got " + shape_string(input.shape()));
    }
    const std::size_t batch = input.extent(0);
    const std::size_t channels = input.extent(1);
    const std::size_t area = input.extent(2) * input.extent(3);
    if (gamma.size() != channels || beta.size() != channels || state.running_mean.size() != channels) {
        throw Error(ErrorKind::InvalidShape, "batch_norm channel axis mismatch");
    }
    const double count = static_cast<double>(batch * area);
    std::vector<double> mean(channels), inv_std(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        if (training) {
            double acc = 0.0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < area; ++i) acc += input[(n * channels + c) * area + i];
            const double mu = acc / count;
            double var = 0.0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < area; ++i) {
                    const double d = input[(n * channels + c) * area + i] - mu;
                    var += d * d;
                }
            var /= count;
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + state.eps);
            const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            mean[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }
    std::vector<double> out(input.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < area; ++i) {
                const std::size_t j = (n * channels + c) * area + i;
                out[j] = gamma[c] * (input[j] - mean[c]) * inv_std[c] + beta[c];
            }
    return Tensor::make_result(
        "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
        [=](const detail::Node& node) {
            const auto& x = node.inputs[0]->data;
            const auto& gm = node.inputs[1]->data;
            auto gx = grad_sink(node, 0);
            auto gg = grad_sink(node, 1);
            auto gb = grad_sink(node, 2);
            for (std::size_t c = 0; c < channels; ++c) {
                double sum_g = 0.0;
                double sum_gx = 0.0;
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t j = (n * channels + c) * area + i;
                        const double xhat = (x[j] - mean[c]) * inv_std[c];
                        sum_g += node.grad[j];
                        sum_gx += node.grad[j] * xhat;
                    }
                if (!gb.empty()) gb[c] += sum_g;
                if (!gg.empty()) gg[c] += sum_gx;
                if (gx.empty()) continue;
                const double k = gm[c] * inv_std[c];
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t j = (n * channels + c) * area + i;
                        if (training) {
                            const double xhat = (x[j] - mean[c]) * inv_std[c];
                            gx[j] += k * (node.grad[j] - sum_g / count - xhat * sum_gx / count);
                        } else {
                            gx[j] += k * node.grad[j];
                        }
                    }
            }
        });
}

}  // namespace vadnet
