// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checker. Run in 64-bit; finite differences are
// not trustworthy in single precision.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dseg/tensor.hpp"

namespace dseg {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = true;
    std::string worst_location;
};

struct GradCheckInput {
    std::string name;
    Tensor<double>* tensor = nullptr;
};

/// Compares the analytic gradients already stored in each input's .grad
/// against (f(x+eps) - f(x-eps)) / (2 eps), one scalar at a time. `scalar_fn`
/// must recompute the objective from the inputs' current values.
/// rel err denominator: max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const std::vector<GradCheckInput>& inputs,
                                  const std::function<double()>& scalar_fn,
                                  double eps, double tol) {
    GradCheckReport rep;
    for (const auto& in : inputs) {
        Tensor<double>& t = *in.tensor;
        if (!t.has_grad())
            throw ShapeError("grad_check: input '" + in.name + "' has no grad buffer");
        for (size_t i = 0; i < t.data.size(); ++i) {
            const double saved = t.data[i];
            t.data[i] = saved + eps;
            const double f_plus = scalar_fn();
            t.data[i] = saved - eps;
            const double f_minus = scalar_fn();
            t.data[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double analytic = t.grad[i];
            if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
                rep.pass = false;
                rep.max_rel_err = std::numeric_limits<double>::infinity();
                rep.worst_location = in.name + "[" + std::to_string(i) + "] (non-finite)";
                return rep;
            }
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(analytic - numeric) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_location = in.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

} // namespace dseg
