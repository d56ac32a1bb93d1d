// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Named finite-difference checks for every differentiable op and the fully
// composed training loss. Central differences are only meaningful away from
// the piecewise boundaries (relu zeros, bilinear cell edges, gate thresholds,
// hard-pixel selection swaps), so instance generators either construct inputs
// with a safety margin or redraw until the margin holds.

#pragma once

#include <functional>
#include <vector>

#include "dseg/gradcheck.hpp"
#include "dseg/loss.hpp"
#include "dseg/model.hpp"
#include "dseg/ops.hpp"
#include "dseg/rng.hpp"
#include "dseg/warp.hpp"

namespace dseg {

struct SuiteOptions {
    std::uint64_t seed = 1;
    int instances = 100;
    double eps = 1e-5;
    double tol = 1e-4;
    bool inject_warp_bug = false; // negative control: corrupt the warp flow grads
};

struct SuiteCheckResult {
    std::string name;
    bool pass = true;
    double max_rel_err = 0.0;
    int instances = 0;
    std::string worst_location;
};

namespace gc {

inline TensorD rand_uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
    TensorD t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

/// Magnitude bounded away from zero; keeps relu-style kinks at a distance.
inline TensorD rand_signed_margin(std::vector<int> shape, Rng& rng, double margin, double hi) {
    TensorD t(std::move(shape));
    for (auto& v : t.data) {
        const double mag = rng.uniform(margin, hi);
        v = rng.below(2) ? mag : -mag;
    }
    return t;
}

inline double weighted_sum(const TensorD& out, const TensorD& weights) {
    double s = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * weights.data[i];
    return s;
}

inline double min_abs(const TensorD& t) {
    double m = std::numeric_limits<double>::infinity();
    for (double v : t.data) m = std::min(m, std::fabs(v));
    return m;
}

/// A sampling coordinate is safe when it is not within `margin` of any
/// bilinear cell edge inside the image, nor of the border crossing itself.
inline bool coord_safe(double c, int extent, double margin) {
    if (c < 0.0) return -c >= margin;
    if (c > extent - 1) return c - (extent - 1) >= margin;
    const double frac = c - std::floor(c);
    return std::min(frac, 1.0 - frac) >= margin;
}

inline bool flow_coords_safe(const TensorD& flow, double margin) {
    const int H = flow.h(), W = flow.w();
    for (int n = 0; n < flow.n(); ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!coord_safe(x + flow.at(n, 0, y, x), W, margin)) return false;
                if (!coord_safe(y + flow.at(n, 1, y, x), H, margin)) return false;
            }
    return true;
}

/// Per-pixel flow whose target coordinates sit mid-cell or clearly outside.
inline TensorD make_safe_flow(int n, int h, int w, Rng& rng) {
    TensorD flow({n, 2, h, w});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int kx = rng.below(w + 4) - 2; // cells from just outside to just outside
                const int ky = rng.below(h + 4) - 2;
                flow.at(b, 0, y, x) = kx + rng.uniform(0.15, 0.85) - x;
                flow.at(b, 1, y, x) = ky + rng.uniform(0.15, 0.85) - y;
            }
    return flow;
}

inline LabelMap rand_labels(int n, int h, int w, int classes, Rng& rng, double ignore_prob) {
    LabelMap lm(n, h, w);
    for (auto& v : lm.v)
        v = rng.uniform() < ignore_prob ? kIgnoreIndex
                                        : static_cast<std::uint8_t>(rng.below(classes));
    // keep at least one valid pixel per image
    for (int b = 0; b < n; ++b) {
        bool any = false;
        for (int y = 0; y < h && !any; ++y)
            for (int x = 0; x < w; ++x)
                if (lm.at(b, y, x) != kIgnoreIndex) {
                    any = true;
                    break;
                }
        if (!any) lm.at(b, 0, 0) = static_cast<std::uint8_t>(rng.below(classes));
    }
    return lm;
}

/// Boundary-gate and selection-swap margins for the hard-pixel CE.
inline bool ohem_margins_safe(const TensorD& s_final, const LabelMap& labels,
                              const TensorD& b_logit, const LossConfig& cfg,
                              double sigma_margin, double gap_margin) {
    const int N = s_final.n(), C = s_final.c(), H = s_final.h(), W = s_final.w();
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<double> p(static_cast<size_t>(C));
    for (int n = 0; n < N; ++n) {
        std::vector<double> cand;
        std::int64_t n_valid = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (labels.at(n, y, x) == kIgnoreIndex) continue;
                ++n_valid;
                const double sig = sigmoid_scalar(b_logit.at(n, 0, y, x));
                if (std::fabs(sig - cfg.t_b) < sigma_margin) return false;
                if (sig > cfg.t_b) {
                    const size_t i = static_cast<size_t>(y) * W + x;
                    detail::pixel_softmax(&s_final.at(n, 0, 0, 0) + i, C, plane, p.data());
                    cand.push_back(p[labels.at(n, y, x)]);
                }
            }
        if (cand.empty() || n_valid == 0) continue;
        std::int64_t k = std::llround(cfg.k_ratio * static_cast<double>(n_valid));
        if (k < 1) k = 1;
        if (k < static_cast<std::int64_t>(cand.size())) {
            std::sort(cand.begin(), cand.end());
            if (cand[static_cast<size_t>(k)] - cand[static_cast<size_t>(k - 1)] < gap_margin)
                return false;
        }
    }
    return true;
}

} // namespace gc

using SuiteCheckFn = std::function<GradCheckReport(Rng&, const SuiteOptions&)>;

struct SuiteCheck {
    std::string name;
    SuiteCheckFn run_one;
};

std::vector<SuiteCheck> gradcheck_suite_checks();

/// Runs every check `opts.instances` times with derived seeds.
std::vector<SuiteCheckResult> run_gradcheck_suite(const SuiteOptions& opts);

} // namespace dseg
