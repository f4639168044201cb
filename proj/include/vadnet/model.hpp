#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vadnet/conv_kernel.hpp"
#include "vadnet/dataset.hpp"
#include "vadnet/error.hpp"
#include "vadnet/ops.hpp"
#include "vadnet/ortho.hpp"
#include "vadnet/tensor.hpp"
#include "vadnet/vad.hpp"

namespace vadnet {

enum class Preset { Mini, ResNet18 };

constexpr std::string_view preset_name(Preset p) { return p == Preset::Mini ? "mini" : "resnet18"; }

inline std::optional<Preset> parse_preset(std::string_view text) {
    if (text == "mini") return Preset::Mini;
    if (text == "resnet18") return Preset::ResNet18;
    return std::nullopt;
}

/// Architecture of one dimension network. Both presets take a 1x48x48 image
/// and emit one scalar.
///
/// mini (width w, default 4), 4 conv + 1 fully connected, no normalization:
///   conv0  1 -> w,  3x3, stride 2, pad 1   (48 -> 24), relu
///   conv1  w -> w,  3x3, stride 1, pad 1,  relu
///   conv2  w -> w,  3x3, stride 1, pad 1,  + skip from conv0 output, relu
///   conv3  w -> 2w, 3x3, stride 2, pad 1   (24 -> 12), relu
///   fc     2w*12*12 -> 1
///   parameters: 9w + 9w^2 + 9w^2 + 18w^2 + 288w + 1 = 36w^2 + 297w + 1 (1765 at w = 4)
///
/// resnet18 (width b, default 64), 17 conv + 1 fully connected: a 3x3 stem
/// conv followed by four stages of two basic blocks with b, 2b, 4b, 8b
/// channels (stride 2 entering stages 2-4), batch norm after every conv,
/// parameter-free strided zero-channel shortcuts, global average pooling
/// and the final linear layer.
struct NetworkConfig {
    Preset preset = Preset::Mini;
    std::size_t width = 0;  // 0 selects the preset default
    // Conv layer indices that contribute to the orthogonality loss;
    // std::nullopt means every conv layer.
    std::optional<std::set<std::size_t>> ortho_layers;
    std::uint64_t seed = 42;

    std::size_t resolved_width() const {
        if (width != 0) return width;
        return preset == Preset::Mini ? 4 : 64;
    }
};

struct NormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
};

/// One independent regression network (V, A or D).
class DimensionModel {
public:
    Dimension dimension = Dimension::Valence;
    NetworkConfig config;
    std::vector<ConvKernel> convs;
    std::vector<NormLayer> norms;  // resnet18 only, one per conv
    Tensor fc_weight;
    Tensor fc_bias;
    std::size_t iteration = 0;

    /// images: [N,1,48,48] or [1,48,48]; returns [N].
    Tensor forward(const Tensor& images, bool training) {
        Tensor x = images;
        if (x.rank() == 3) x = reshape(x, {1, x.extent(0), x.extent(1), x.extent(2)});
        if (x.rank() != 4 || x.extent(1) != 1 || x.extent(2) != kImageSide || x.extent(3) != kImageSide) {
            throw Error(ErrorKind::InvalidShape, "model input must be [N,1,48,48] or [1,48,48], got " +
                                                     shape_string(images.shape()));
        }
        const std::size_t batch = x.extent(0);
        const Tensor out = config.preset == Preset::Mini ? forward_mini(x) : forward_resnet(x, training);
        return reshape(out, {batch});
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> params;
        for (const ConvKernel& k : convs) params.push_back(k.weights());
        for (const NormLayer& n : norms) {
            params.push_back(n.gamma);
            params.push_back(n.beta);
        }
        params.push_back(fc_weight);
        params.push_back(fc_bias);
        return params;
    }

    /// Stable names for checkpointing, parallel to parameters().
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> named;
        for (std::size_t i = 0; i < convs.size(); ++i) named.emplace_back("conv" + std::to_string(i) + ".weight", convs[i].weights());
        for (std::size_t i = 0; i < norms.size(); ++i) {
            named.emplace_back("norm" + std::to_string(i) + ".gamma", norms[i].gamma);
            named.emplace_back("norm" + std::to_string(i) + ".beta", norms[i].beta);
        }
        named.emplace_back("fc.weight", fc_weight);
        named.emplace_back("fc.bias", fc_bias);
        return named;
    }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (const Tensor& p : parameters()) total += p.size();
        return total;
    }

    std::size_t conv_layer_count() const { return convs.size(); }
    std::size_t linear_layer_count() const { return 1; }

    std::vector<std::size_t> regularized_layers() const {
        std::vector<std::size_t> layers;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            if (!config.ortho_layers || config.ortho_layers->contains(i)) layers.push_back(i);
        }
        return layers;
    }

private:
    Tensor forward_mini(const Tensor& x) {
        const Tensor h0 = relu(conv2d(x, convs[0]));
        const Tensor h1 = relu(conv2d(h0, convs[1]));
        const Tensor h2 = relu(add(conv2d(h1, convs[2]), h0));
        const Tensor h3 = relu(conv2d(h2, convs[3]));
        return linear(flatten_batch(h3), fc_weight, fc_bias);
    }

    Tensor conv_norm(const Tensor& x, std::size_t layer, bool training) {
        return batch_norm(conv2d(x, convs[layer]), norms[layer].gamma, norms[layer].beta, norms[layer].state, training);
    }

    Tensor forward_resnet(const Tensor& x, bool training) {
        Tensor h = relu(conv_norm(x, 0, training));
        std::size_t layer = 1;
        while (layer < convs.size()) {
            const ConvKernel& first = convs[layer];
            const std::size_t out_c = first.out_channels();
            const std::size_t stride = first.stride();
            const Tensor inner = relu(conv_norm(h, layer, training));
            const Tensor body = conv_norm(inner, layer + 1, training);
            const Tensor skip = (stride != 1 || h.extent(1) != out_c) ? shortcut(h, out_c, stride) : h;
            h = relu(add(body, skip));
            layer += 2;
        }
        return linear(global_avg_pool(h), fc_weight, fc_bias);
    }
};

namespace detail {

inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

struct ConvSpec {
    std::size_t in, out, stride;
};

inline std::vector<ConvSpec> conv_specs(Preset preset, std::size_t width) {
    if (preset == Preset::Mini) {
        return {{1, width, 2}, {width, width, 1}, {width, width, 1}, {width, 2 * width, 2}};
    }
    std::vector<ConvSpec> specs{{1, width, 1}};
    std::size_t channels = width;
    for (std::size_t stage = 0; stage < 4; ++stage) {
        const std::size_t out = width << stage;
        for (std::size_t block = 0; block < 2; ++block) {
            const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
            specs.push_back({channels, out, stride});
            specs.push_back({out, out, 1});
            channels = out;
        }
    }
    return specs;
}

}  // namespace detail

/// Fan-in scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// drawn from a generator seeded by (seed, dimension).
inline DimensionModel build_model(const NetworkConfig& cfg, Dimension dim) {
    const std::size_t width = cfg.resolved_width();
    if (width == 0) throw Error(ErrorKind::Validation, "network width must be >= 1");
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(dim)};
    std::mt19937_64 rng(seq);

    DimensionModel model;
    model.dimension = dim;
    model.config = cfg;
    const auto specs = detail::conv_specs(cfg.preset, width);
    for (const auto& spec : specs) {
        Tensor w = detail::uniform_fan_in({spec.out, spec.in, 3, 3}, spec.in * 9, rng);
        model.convs.emplace_back(std::move(w), spec.stride, 1);
        if (cfg.preset == Preset::ResNet18) {
            model.norms.push_back({Tensor::filled({spec.out}, 1.0, true), Tensor::zeros({spec.out}, true),
                                   BatchNormState(spec.out)});
        }
    }
    if (cfg.ortho_layers) {
        for (std::size_t layer : *cfg.ortho_layers) {
            if (layer >= specs.size()) {
                throw Error(ErrorKind::Validation, "ortho layer " + std::to_string(layer) + " out of range (" +
                                                       std::to_string(specs.size()) + " conv layers)");
            }
        }
    }
    const std::size_t features = cfg.preset == Preset::Mini ? 2 * width * 12 * 12 : 8 * width;
    model.fc_weight = detail::uniform_fan_in({1, features}, features, rng);
    model.fc_bias = detail::uniform_fan_in({1}, features, rng);
    return model;
}

/// Sum of orth_loss over the model's regularized conv layers.
inline Tensor orthogonality_loss(const DimensionModel& model) {
    Tensor total;
    for (std::size_t layer : model.regularized_layers()) {
        const Tensor term = orth_loss(model.convs[layer]);
        total = total.defined() ? add(total, term) : term;
    }
    return total.defined() ? total : Tensor::scalar(0.0);
}

/// A mini-batch: images [N,1,48,48] and targets [N] for one dimension.
struct Batch {
    Tensor images;
    Tensor targets;
};

inline Batch make_batch(const LabeledSet& set, std::span<const std::size_t> rows, Dimension dim) {
    if (rows.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
    std::vector<double> pixels;
    pixels.reserve(rows.size() * kImagePixels);
    std::vector<double> targets;
    targets.reserve(rows.size());
    for (std::size_t r : rows) {
        if (r >= set.size()) throw Error(ErrorKind::InvalidShape, "batch row " + std::to_string(r) + " out of range");
        const auto image = set.image(r);
        pixels.insert(pixels.end(), image.begin(), image.end());
        targets.push_back(set.targets[r][dim]);
    }
    const std::size_t n = rows.size();
    return {Tensor::from({n, 1, kImageSide, kImageSide}, std::move(pixels)), Tensor::from({n}, std::move(targets))};
}

struct LossBreakdown {
    Tensor total;  // differentiable L_task + lambda * L_orth
    double task = 0.0;
    double orth = 0.0;
};

/// L = L_task + lambda * L_orth, with L_task the batch MSE.
inline LossBreakdown total_loss(DimensionModel& model, const Batch& batch, double lambda, bool training = true) {
    if (!(lambda >= 0.0)) throw Error(ErrorKind::Validation, "lambda must be >= 0");
    const Tensor pred = model.forward(batch.images, training);
    const Tensor task = mse_loss(pred, batch.targets);
    const Tensor orth = orthogonality_loss(model);
    LossBreakdown out;
    out.task = task.item();
    out.orth = orth.item();
    out.total = lambda == 0.0 ? task : add(task, scale(orth, lambda));
    return out;
}

inline double clamp_to_scale(double value) { return std::clamp(value, kScaleMin, kScaleMax); }

/// Raw network output for one image [1,48,48] (inference mode).
inline double predict(DimensionModel& model, const Tensor& image) {
    if (image.rank() != 3 || image.extent(0) != 1 || image.extent(1) != kImageSide || image.extent(2) != kImageSide) {
        throw Error(ErrorKind::InvalidShape, "predict expects [1,48,48], got " + shape_string(image.shape()));
    }
    return model.forward(image.detach(), false).item();
}

inline double predict(DimensionModel& model, std::span<const double> pixels) {
    if (pixels.size() != kImagePixels) {
        throw Error(ErrorKind::InvalidShape, "predict expects 2304 pixels, got " + std::to_string(pixels.size()));
    }
    return predict(model, Tensor::from({1, kImageSide, kImageSide}, {pixels.begin(), pixels.end()}));
}

}  // namespace vadnet
