#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vadnet/error.hpp"
#include "vadnet/tensor.hpp"

namespace vadnet {

struct GradCheckResult {
    double max_error = 0.0;     // max |analytic - numeric| / max(1, |numeric|)
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `loss_fn` w.r.t. every entry of
/// `params` against central differences with step `step`. The params must
/// be requires_grad leaves that `loss_fn` reads; they are restored exactly.
inline GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                         double step) {
    if (!(step > 0.0)) throw Error(ErrorKind::Validation, "finite-difference step must be > 0");
    backward(loss_fn());
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) {
        analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                           : std::vector<double>(p.size(), 0.0));
    }

    GradCheckResult result;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto values = params[t].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + step;
            const double plus = loss_fn().item();
            values[i] = original - step;
            const double minus = loss_fn().item();
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
            if (err > result.max_error) {
                result.max_error = err;
                result.worst_tensor = t;
                result.worst_index = i;
            }
            ++result.coordinates;
        }
    }
    return result;
}

/// Single-tensor form: `f` maps the tensor to a scalar loss.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor t, double step) {
    return finite_diff_check([&] { return f(t); }, {t}, step).max_error;
}

}  // namespace vadnet
