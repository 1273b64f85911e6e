#pragma once

// Central-difference verification of reverse-mode gradients.

#include "headforge/tensor.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace headforge {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    bool passed = false;
};

using LossFn = std::function<Tensor<double>(Graph<double>&)>;

// `loss_fn` builds the loss on the supplied graph from `params` (which it
// captures by handle). Relative error is |a - n| / max(|a|, |n|, floor): the
// floor keeps exactly-zero gradients from dividing by zero.
inline GradCheckReport finite_difference_check(
    std::vector<std::pair<std::string, Tensor<double>>> params, const LossFn& loss_fn,
    double step = 1e-5, double tolerance = 1e-4, double floor = 1e-6) {
    for (auto& [_, p] : params) {
        p.set_requires_grad(true);
        p.clear_grad();
        p.ensure_grad();
    }
    Graph<double> g(true);
    auto loss = loss_fn(g);
    if (!std::isfinite(loss.item())) throw std::domain_error("non-finite loss in gradient check");
    g.backward(loss);

    auto eval = [&]() {
        Graph<double> fg(false);
        const double v = loss_fn(fg).item();
        if (!std::isfinite(v)) throw std::domain_error("non-finite loss in gradient check");
        return v;
    };

    GradCheckReport rep;
    for (auto& [name, p] : params) {
        auto data = p.data();
        auto grad = std::as_const(p).grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + step;
            const double up = eval();
            data[i] = orig - step;
            const double down = eval();
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = grad[i];
            const double abs_err = std::abs(analytic - numeric);
            const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), floor});
            rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
            if (rel > rep.max_rel_error || rep.checked == 0) {
                rep.max_rel_error = std::max(rep.max_rel_error, rel);
                rep.worst_param = name;
                rep.worst_index = i;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
            ++rep.checked;
        }
    }
    rep.passed = rep.max_rel_error < tolerance;
    return rep;
}

}  // namespace headforge
