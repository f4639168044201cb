#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vadnet/dataset.hpp"
#include "vadnet/error.hpp"
#include "vadnet/model.hpp"
#include "vadnet/tensor.hpp"

namespace vadnet {

struct TrainConfig {
    std::size_t batch_size = 64;
    double lr0 = 0.01;
    double lr_decay_factor = 10.0;
    std::size_t lr_decay_every = 10000;
    std::size_t epochs = 120;
    double lambda = 0.1;
    std::uint64_t seed = 42;
    // Stops early after this many SGD steps (desk-scale runs).
    std::optional<std::size_t> max_iterations;

    void validate() const {
        if (batch_size == 0) throw Error(ErrorKind::Validation, "batch size must be >= 1");
        if (!(lr0 > 0.0)) throw Error(ErrorKind::Validation, "learning rate must be > 0");
        if (!(lr_decay_factor > 0.0)) throw Error(ErrorKind::Validation, "decay factor must be > 0");
        if (lr_decay_every == 0) throw Error(ErrorKind::Validation, "decay interval must be >= 1");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorKind::Validation, "lambda must be >= 0");
    }
};

/// Step schedule: lr0 / factor^floor(iteration / every).
inline double lr_at(std::size_t iteration, const TrainConfig& cfg) {
    const auto decays = static_cast<double>(iteration / cfg.lr_decay_every);
    return cfg.lr0 / std::pow(cfg.lr_decay_factor, decays);
}

struct TraceEntry {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    double task = 0.0;
    double orth = 0.0;
    double lr = 0.0;
};

/// Raised when the loss stops being finite; keeps the last good entry.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& message, std::optional<TraceEntry> last)
        : Error(ErrorKind::TrainingDiverged, message), last_finite(last) {}
    std::optional<TraceEntry> last_finite;
};

using ProgressSink = std::function<void(const TraceEntry&)>;

/// Plain SGD update p -= lr * dL/dp on every parameter.
inline void sgd_step(const std::vector<Tensor>& params, double lr) {
    for (Tensor p : params) {
        if (!p.has_grad()) continue;
        auto values = p.mutable_data();
        const auto grad = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
    }
}

/// Row order for one epoch: a permutation of [0, n) seeded by (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// One forward/backward/update on `batch`; returns the trace entry for it.
inline TraceEntry train_step(DimensionModel& model, const Batch& batch, const TrainConfig& cfg) {
    const double lr = lr_at(model.iteration, cfg);
    const LossBreakdown loss = total_loss(model, batch, cfg.lambda, true);
    TraceEntry entry{model.iteration, 0, loss.task, loss.orth, lr};
    if (!std::isfinite(loss.total.item())) return entry;
    backward(loss.total);
    sgd_step(model.parameters(), lr);
    ++model.iteration;
    return entry;
}

struct TrainResult {
    std::vector<TraceEntry> trace;
};

/// Mini-batch SGD over `data` for cfg.epochs epochs (or cfg.max_iterations
/// steps). The last batch of an epoch may be smaller than cfg.batch_size.
inline TrainResult train(DimensionModel& model, const LabeledSet& data, const TrainConfig& cfg,
                         const ProgressSink& progress = {}) {
    cfg.validate();
    if (data.empty()) throw Error(ErrorKind::EmptyInput, "training set is empty");
    TrainResult result;
    std::optional<TraceEntry> last_finite;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), cfg.seed, epoch);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (cfg.max_iterations && steps >= *cfg.max_iterations) return result;
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const Batch batch = make_batch(data, std::span(order).subspan(start, end - start), model.dimension);
            TraceEntry entry = train_step(model, batch, cfg);
            entry.epoch = epoch;
            if (!std::isfinite(entry.task) || !std::isfinite(entry.orth)) {
                throw TrainingDiverged("non-finite loss at iteration " + std::to_string(entry.iteration) +
                                           " (" + std::string(dimension_name(model.dimension)) + ")",
                                       last_finite);
            }
            last_finite = entry;
            result.trace.push_back(entry);
            if (progress) progress(entry);
            ++steps;
        }
    }
    return result;
}

}  // namespace vadnet
