// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoupled supervision: boundary-relaxed cross entropy for the body branch,
// balanced BCE plus boundary-gated hard-example cross entropy for the edge
// branch, and the weighted total that drives training.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dseg/label_map.hpp"
#include "dseg/ops.hpp"
#include "dseg/tensor.hpp"

namespace dseg {

struct LossConfig {
    // Eq-level weights: body / edge-pair / final, then bce vs hard-pixel CE
    // inside the edge pair.
    double lambda_body = 1.0;
    double lambda_edge = 1.0;
    double lambda_final = 1.0;
    double lambda_bce = 25.0;
    double lambda_edge_ce = 1.0;

    double k_ratio = 0.10;  // hard-pixel budget as a fraction of valid pixels
    double t_b = 0.8;       // boundary-prior gate on sigmoid(b)
    int relax_radius = 2;   // body supervision excludes pixels this close to a class boundary
    int edge_radius = 2;    // thickness of the binary edge ground truth

    // Normalize the hard-pixel CE by the actual number of selected pixels
    // (default) or strictly by K even when fewer candidates qualify.
    bool ohem_strict_k = false;

    enum class BodyMode { exclude_band, relax_sum };
    BodyMode body_mode = BodyMode::exclude_band;

    enum class PixelWeight { uniform, inverse_class_freq };
    PixelWeight wi_mode = PixelWeight::uniform;

    void validate() const {
        if (!(k_ratio > 0.0 && k_ratio <= 1.0))
            throw std::invalid_argument("loss config: k_ratio must be in (0,1]");
        if (!(t_b > 0.0 && t_b < 1.0))
            throw std::invalid_argument("loss config: t_b must be in (0,1)");
        if (relax_radius < 1 || edge_radius < 1)
            throw std::invalid_argument("loss config: radii must be >= 1");
    }
};

struct LossBreakdown {
    double l_body = 0.0;
    double l_bce = 0.0;
    double l_edge_ce = 0.0;
    double l_final = 0.0;
    double total = 0.0;
    int selected_count = 0;        // hard pixels used by the edge CE
    bool body_empty_selection = false;
};

// ---------------------------------------------------------------------------
// shared per-pixel kernels
// ---------------------------------------------------------------------------

namespace detail {

/// Softmax of one pixel's channel strip. All cross-entropy code in this
/// project funnels through here so posteriors are computed identically
/// everywhere (max-shifted exp, ascending-channel sums, final division).
template <class T>
inline void pixel_softmax(const T* z, int C, size_t stride, T* p) {
    T m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c * stride]);
    T denom = T(0);
    for (int c = 0; c < C; ++c) {
        const T e = std::exp(z[c * stride] - m);
        p[c] = e;
        denom += e;
    }
    for (int c = 0; c < C; ++c) p[c] = p[c] / denom;
}

template <class T>
inline double pixel_ce_from_posterior(T p_target) {
    return -std::log(std::max(static_cast<double>(p_target), kLogFloor));
}

} // namespace detail

// ---------------------------------------------------------------------------
// edge ground truth
// ---------------------------------------------------------------------------

/// A pixel is boundary iff it is non-ignore and some pixel within Chebyshev
/// distance <= radius carries a different non-ignore label.
inline EdgeMask edge_gt_from_labels(const LabelMap& labels, int radius) {
    if (radius < 1) throw std::invalid_argument("edge_gt_from_labels: radius must be >= 1");
    EdgeMask mask(labels.n, labels.h, labels.w);
    for (int n = 0; n < labels.n; ++n)
        for (int y = 0; y < labels.h; ++y)
            for (int x = 0; x < labels.w; ++x) {
                const std::uint8_t me = labels.at(n, y, x);
                if (me == kIgnoreIndex) continue;
                bool boundary = false;
                const int y_lo = std::max(0, y - radius), y_hi = std::min(labels.h - 1, y + radius);
                const int x_lo = std::max(0, x - radius), x_hi = std::min(labels.w - 1, x + radius);
                for (int yy = y_lo; yy <= y_hi && !boundary; ++yy)
                    for (int xx = x_lo; xx <= x_hi; ++xx) {
                        const std::uint8_t other = labels.at(n, yy, xx);
                        if (other != kIgnoreIndex && other != me) {
                            boundary = true;
                            break;
                        }
                    }
                mask.at(n, y, x) = boundary ? 1 : 0;
            }
    return mask;
}

// ---------------------------------------------------------------------------
// body branch: boundary-relaxed cross entropy
// ---------------------------------------------------------------------------

struct BodyLossResult {
    double value = 0.0;
    int count = 0;      // pixels that contributed
    bool empty = false; // soft signal: nothing to supervise
};

namespace detail {

template <class T>
void check_logits_vs_labels(const Tensor<T>& logits, const LabelMap& labels, const char* op) {
    if (logits.rank() != 4)
        throw ShapeError(std::string(op) + ": logits must be 4-d");
    if (logits.n() != labels.n || logits.h() != labels.h || logits.w() != labels.w)
        throw ShapeError(std::string(op) + ": logits " + shape_to_string(logits.shape) +
                         " do not align with labels (" + std::to_string(labels.n) + "," +
                         std::to_string(labels.h) + "," + std::to_string(labels.w) + ")");
}

/// Classes present in the Chebyshev window around (y,x); used by the
/// sum-of-posteriors relaxation mode.
inline void window_classes(const LabelMap& labels, int n, int y, int x, int radius,
                           std::vector<std::uint8_t>& out) {
    out.clear();
    const int y_lo = std::max(0, y - radius), y_hi = std::min(labels.h - 1, y + radius);
    const int x_lo = std::max(0, x - radius), x_hi = std::min(labels.w - 1, x + radius);
    for (int yy = y_lo; yy <= y_hi; ++yy)
        for (int xx = x_lo; xx <= x_hi; ++xx) {
            const std::uint8_t c = labels.at(n, yy, xx);
            if (c == kIgnoreIndex) continue;
            if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
        }
}

} // namespace detail

/// Mean CE over non-ignore pixels outside the boundary band. The band mask
/// must come from edge_gt_from_labels at the configured relax radius. In
/// relax_sum mode the band pixels instead contribute -log of the summed
/// posterior over the classes present in their neighborhood.
template <class T>
BodyLossResult body_relaxation_ce(const Tensor<T>& s_body, const LabelMap& labels,
                                  const EdgeMask& band, const LossConfig& cfg) {
    detail::check_logits_vs_labels(s_body, labels, "body_relaxation_ce");
    const int N = s_body.n(), C = s_body.c(), H = s_body.h(), W = s_body.w();
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<T> p(static_cast<size_t>(C));
    std::vector<std::uint8_t> window;
    BodyLossResult res;
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
        const T* zp = &s_body.at(n, 0, 0, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::uint8_t t = labels.at(n, y, x);
                if (t == kIgnoreIndex) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                const bool on_band = band.at(n, y, x) != 0;
                if (on_band && cfg.body_mode == LossConfig::BodyMode::exclude_band) continue;
                detail::pixel_softmax(zp + i, C, plane, p.data());
                if (on_band) {
                    detail::window_classes(labels, n, y, x, cfg.relax_radius, window);
                    // window covering every class: the summed posterior is
                    // identically 1, the term an exact constant 0
                    if (static_cast<int>(window.size()) < C) {
                        double s = 0.0;
                        for (std::uint8_t c : window) s += static_cast<double>(p[c]);
                        sum += -std::log(std::max(s, kLogFloor));
                    }
                } else {
                    sum += detail::pixel_ce_from_posterior(p[t]);
                }
                ++res.count;
            }
    }
    if (res.count == 0) {
        res.empty = true;
        res.value = 0.0;
    } else {
        res.value = sum / res.count;
    }
    return res;
}

/// Adds scale * d(body loss)/d(logits) into s_body.grad.
template <class T>
void body_relaxation_ce_backward(Tensor<T>& s_body, const LabelMap& labels,
                                 const EdgeMask& band, const LossConfig& cfg, double scale) {
    if (!s_body.has_grad()) return;
    const int N = s_body.n(), C = s_body.c(), H = s_body.h(), W = s_body.w();
    const size_t plane = static_cast<size_t>(H) * W;
    // first pass: count contributors (the mean's denominator)
    int count = 0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (labels.at(n, y, x) == kIgnoreIndex) continue;
                if (band.at(n, y, x) != 0 && cfg.body_mode == LossConfig::BodyMode::exclude_band)
                    continue;
                ++count;
            }
    if (count == 0) return;
    const double inv = scale / count;
    std::vector<T> p(static_cast<size_t>(C));
    std::vector<std::uint8_t> window;
    for (int n = 0; n < N; ++n) {
        const T* zp = &s_body.at(n, 0, 0, 0);
        T* gp = &s_body.gat(n, 0, 0, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::uint8_t t = labels.at(n, y, x);
                if (t == kIgnoreIndex) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                const bool on_band = band.at(n, y, x) != 0;
                if (on_band && cfg.body_mode == LossConfig::BodyMode::exclude_band) continue;
                detail::pixel_softmax(zp + i, C, plane, p.data());
                if (on_band) {
                    detail::window_classes(labels, n, y, x, cfg.relax_radius, window);
                    if (static_cast<int>(window.size()) == C) continue; // constant 0 term
                    double s = 0.0;
                    for (std::uint8_t c : window) s += static_cast<double>(p[c]);
                    if (s < kLogFloor) continue; // clamped region: zero slope
                    for (int c = 0; c < C; ++c) {
                        const bool in_set =
                            std::find(window.begin(), window.end(), static_cast<std::uint8_t>(c)) != window.end();
                        const double d = static_cast<double>(p[c]) * (1.0 - (in_set ? 1.0 / s : 0.0));
                        gp[c * plane + i] += static_cast<T>(inv * d);
                    }
                } else {
                    if (static_cast<double>(p[t]) < kLogFloor) continue;
                    for (int c = 0; c < C; ++c) {
                        const double d = static_cast<double>(p[c]) - (c == t ? 1.0 : 0.0);
                        gp[c * plane + i] += static_cast<T>(inv * d);
                    }
                }
            }
    }
}

// ---------------------------------------------------------------------------
// edge branch: class-balanced BCE on the boundary map
// ---------------------------------------------------------------------------

/// Weighted BCE on sigmoid(b_logit) against the binary edge ground truth.
/// With both classes present, weights are N/(2*N_pos) and N/(2*N_neg); a class
/// with zero pixels drops out and the other's weight falls back to 1, which
/// reduces the loss to the plain single-class BCE.
template <class T>
double balanced_bce(const Tensor<T>& b_logit, const EdgeMask& edge_gt) {
    if (b_logit.rank() != 4 || b_logit.c() != 1)
        throw ShapeError("balanced_bce: logit must be (N,1,H,W)");
    if (b_logit.n() != edge_gt.n || b_logit.h() != edge_gt.h || b_logit.w() != edge_gt.w)
        throw ShapeError("balanced_bce: logit/mask shape mismatch");
    const std::int64_t n_tot = b_logit.numel();
    if (n_tot == 0) throw std::invalid_argument("balanced_bce: empty input");
    std::int64_t n_pos = 0;
    for (std::uint8_t m : edge_gt.v) n_pos += (m != 0);
    const std::int64_t n_neg = n_tot - n_pos;
    double w_pos = 0.0, w_neg = 0.0;
    if (n_pos > 0 && n_neg > 0) {
        w_pos = static_cast<double>(n_tot) / (2.0 * n_pos);
        w_neg = static_cast<double>(n_tot) / (2.0 * n_neg);
    } else if (n_pos > 0) {
        w_pos = 1.0;
    } else {
        w_neg = 1.0;
    }
    double sum = 0.0;
    for (std::int64_t i = 0; i < n_tot; ++i) {
        const double z = static_cast<double>(b_logit.data[static_cast<size_t>(i)]);
        const double t = edge_gt.v[static_cast<size_t>(i)] ? 1.0 : 0.0;
        // stable: max(z,0) - z*t + log(1 + exp(-|z|))
        const double bce = std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
        sum += (t > 0.5 ? w_pos : w_neg) * bce;
    }
    return sum / static_cast<double>(n_tot);
}

template <class T>
void balanced_bce_backward(Tensor<T>& b_logit, const EdgeMask& edge_gt, double scale) {
    if (!b_logit.has_grad()) return;
    const std::int64_t n_tot = b_logit.numel();
    std::int64_t n_pos = 0;
    for (std::uint8_t m : edge_gt.v) n_pos += (m != 0);
    const std::int64_t n_neg = n_tot - n_pos;
    double w_pos = 0.0, w_neg = 0.0;
    if (n_pos > 0 && n_neg > 0) {
        w_pos = static_cast<double>(n_tot) / (2.0 * n_pos);
        w_neg = static_cast<double>(n_tot) / (2.0 * n_neg);
    } else if (n_pos > 0) {
        w_pos = 1.0;
    } else {
        w_neg = 1.0;
    }
    const double inv = scale / static_cast<double>(n_tot);
    for (std::int64_t i = 0; i < n_tot; ++i) {
        const double z = static_cast<double>(b_logit.data[static_cast<size_t>(i)]);
        const double t = edge_gt.v[static_cast<size_t>(i)] ? 1.0 : 0.0;
        const double w = t > 0.5 ? w_pos : w_neg;
        const double s = 1.0 / (1.0 + std::exp(-z));
        b_logit.grad[static_cast<size_t>(i)] += static_cast<T>(inv * w * (s - t));
    }
}

// ---------------------------------------------------------------------------
// edge branch: boundary-gated hard-pixel cross entropy
// ---------------------------------------------------------------------------

struct OhemResult {
    double value = 0.0;
    int selected = 0;
};

namespace detail {

struct OhemPick {
    double p_target;
    std::int64_t flat; // (n*H + y)*W + x
};

/// Candidates are non-ignore pixels whose boundary prior clears the gate.
/// Within each image, the budget is round(k_ratio * valid) clamped to >= 1
/// and the hardest pixels (lowest target posterior) win; ties break on pixel
/// index so the selection is deterministic.
template <class T>
void ohem_select(const Tensor<T>& s_final, const LabelMap& labels, const Tensor<T>& b_logit,
                 const LossConfig& cfg, std::vector<std::int64_t>& selected_out,
                 std::int64_t& budget_out) {
    const int N = s_final.n(), C = s_final.c(), H = s_final.h(), W = s_final.w();
    const size_t plane = static_cast<size_t>(H) * W;
    selected_out.clear();
    budget_out = 0;
    std::vector<T> p(static_cast<size_t>(C));
    std::vector<OhemPick> cand;
    for (int n = 0; n < N; ++n) {
        cand.clear();
        std::int64_t n_valid = 0;
        const T* zp = &s_final.at(n, 0, 0, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::uint8_t t = labels.at(n, y, x);
                if (t == kIgnoreIndex) continue;
                ++n_valid;
                const T prior = sigmoid_scalar(b_logit.at(n, 0, y, x));
                if (!(static_cast<double>(prior) > cfg.t_b)) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                detail::pixel_softmax(zp + i, C, plane, p.data());
                // rank by the clamped posterior so the order matches the
                // clamped CE exactly (posteriors under the log floor tie)
                cand.push_back({std::max(static_cast<double>(p[t]), kLogFloor),
                                (static_cast<std::int64_t>(n) * H + y) * W + x});
            }
        if (n_valid == 0) continue;
        std::int64_t k = std::llround(cfg.k_ratio * static_cast<double>(n_valid));
        if (k < 1) k = 1;
        budget_out += k;
        const std::int64_t m = std::min<std::int64_t>(k, static_cast<std::int64_t>(cand.size()));
        std::sort(cand.begin(), cand.end(), [](const OhemPick& a, const OhemPick& b) {
            if (a.p_target != b.p_target) return a.p_target < b.p_target;
            return a.flat < b.flat;
        });
        for (std::int64_t j = 0; j < m; ++j) selected_out.push_back(cand[static_cast<size_t>(j)].flat);
    }
    std::sort(selected_out.begin(), selected_out.end());
}

/// Per-pixel weights for the hard-example CE. Uniform by default; the
/// inverse-class-frequency mode reweights by how rare the target class is
/// among the image's valid pixels.
inline double ohem_pixel_weight(const LossConfig& cfg, const std::vector<std::int64_t>& class_count,
                                std::int64_t n_valid, int n_present, std::uint8_t target) {
    if (cfg.wi_mode == LossConfig::PixelWeight::uniform) return 1.0;
    const std::int64_t cnt = class_count[target];
    if (cnt <= 0 || n_present <= 0) return 1.0;
    return static_cast<double>(n_valid) / (static_cast<double>(n_present) * static_cast<double>(cnt));
}

inline void count_classes(const LabelMap& labels, int n, std::vector<std::int64_t>& class_count,
                          std::int64_t& n_valid, int& n_present) {
    std::fill(class_count.begin(), class_count.end(), 0);
    n_valid = 0;
    for (int y = 0; y < labels.h; ++y)
        for (int x = 0; x < labels.w; ++x) {
            const std::uint8_t t = labels.at(n, y, x);
            if (t == kIgnoreIndex) continue;
            ++n_valid;
            ++class_count[t];
        }
    n_present = 0;
    for (std::int64_t c : class_count) n_present += (c > 0);
}

} // namespace detail

/// Hard-example CE over boundary-gated pixels. The gate and the selection are
/// constants of the graph: gradients flow into s_final only, never into the
/// boundary logit, so the model cannot silence the loss by suppressing its
/// own boundary prior.
template <class T>
OhemResult edge_prior_ohem_ce(const Tensor<T>& s_final, const LabelMap& labels,
                              const Tensor<T>& b_logit, const LossConfig& cfg) {
    detail::check_logits_vs_labels(s_final, labels, "edge_prior_ohem_ce");
    if (b_logit.n() != s_final.n() || b_logit.c() != 1 || b_logit.h() != s_final.h() ||
        b_logit.w() != s_final.w())
        throw ShapeError("edge_prior_ohem_ce: boundary logit must be (N,1,H,W)");
    const int C = s_final.c(), H = s_final.h(), W = s_final.w();
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<std::int64_t> selected;
    std::int64_t budget = 0;
    detail::ohem_select(s_final, labels, b_logit, cfg, selected, budget);
    OhemResult res;
    res.selected = static_cast<int>(selected.size());
    if (selected.empty()) return res; // empty candidate set: soft zero
    std::vector<T> p(static_cast<size_t>(C));
    std::vector<std::int64_t> class_count(static_cast<size_t>(C));
    std::int64_t n_valid = 0;
    int n_present = 0;
    int cached_n = -1;
    double sum = 0.0;
    for (std::int64_t flat : selected) {
        const int n = static_cast<int>(flat / (static_cast<std::int64_t>(H) * W));
        const size_t i = static_cast<size_t>(flat % (static_cast<std::int64_t>(H) * W));
        const int y = static_cast<int>(i) / W, x = static_cast<int>(i) % W;
        if (n != cached_n) {
            detail::count_classes(labels, n, class_count, n_valid, n_present);
            cached_n = n;
        }
        const std::uint8_t t = labels.at(n, y, x);
        detail::pixel_softmax(&s_final.at(n, 0, 0, 0) + i, C, plane, p.data());
        const double w = detail::ohem_pixel_weight(cfg, class_count, n_valid, n_present, t);
        sum += w * detail::pixel_ce_from_posterior(p[t]);
    }
    const double denom = cfg.ohem_strict_k ? static_cast<double>(budget)
                                           : static_cast<double>(selected.size());
    res.value = sum / denom;
    return res;
}

template <class T>
void edge_prior_ohem_ce_backward(Tensor<T>& s_final, const LabelMap& labels,
                                 const Tensor<T>& b_logit, const LossConfig& cfg, double scale) {
    if (!s_final.has_grad()) return;
    const int C = s_final.c(), H = s_final.h(), W = s_final.w();
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<std::int64_t> selected;
    std::int64_t budget = 0;
    detail::ohem_select(s_final, labels, b_logit, cfg, selected, budget);
    if (selected.empty()) return;
    const double denom = cfg.ohem_strict_k ? static_cast<double>(budget)
                                           : static_cast<double>(selected.size());
    const double inv = scale / denom;
    std::vector<T> p(static_cast<size_t>(C));
    std::vector<std::int64_t> class_count(static_cast<size_t>(C));
    std::int64_t n_valid = 0;
    int n_present = 0;
    int cached_n = -1;
    for (std::int64_t flat : selected) {
        const int n = static_cast<int>(flat / (static_cast<std::int64_t>(H) * W));
        const size_t i = static_cast<size_t>(flat % (static_cast<std::int64_t>(H) * W));
        const int y = static_cast<int>(i) / W, x = static_cast<int>(i) % W;
        if (n != cached_n) {
            detail::count_classes(labels, n, class_count, n_valid, n_present);
            cached_n = n;
        }
        const std::uint8_t t = labels.at(n, y, x);
        const T* zp = &s_final.at(n, 0, 0, 0) + i;
        T* gp = &s_final.gat(n, 0, 0, 0) + i;
        detail::pixel_softmax(zp, C, plane, p.data());
        if (static_cast<double>(p[t]) < kLogFloor) continue;
        const double w = detail::ohem_pixel_weight(cfg, class_count, n_valid, n_present, t);
        for (int c = 0; c < C; ++c) {
            const double d = static_cast<double>(p[c]) - (c == t ? 1.0 : 0.0);
            gp[c * plane] += static_cast<T>(inv * w * d);
        }
    }
}

// ---------------------------------------------------------------------------
// plain segmentation CE and the total
// ---------------------------------------------------------------------------

template <class T>
double mean_ce(const Tensor<T>& logits, const LabelMap& labels) {
    detail::check_logits_vs_labels(logits, labels, "mean_ce");
    const int N = logits.n(), C = logits.c(), H = logits.h(), W = logits.w();
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<T> p(static_cast<size_t>(C));
    double sum = 0.0;
    std::int64_t count = 0;
    for (int n = 0; n < N; ++n) {
        const T* zp = &logits.at(n, 0, 0, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::uint8_t t = labels.at(n, y, x);
                if (t == kIgnoreIndex) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                detail::pixel_softmax(zp + i, C, plane, p.data());
                sum += detail::pixel_ce_from_posterior(p[t]);
                ++count;
            }
    }
    return count > 0 ? sum / count : 0.0;
}

template <class T>
void mean_ce_backward(Tensor<T>& logits, const LabelMap& labels, double scale) {
    if (!logits.has_grad()) return;
    const int N = logits.n(), C = logits.c(), H = logits.h(), W = logits.w();
    const size_t plane = static_cast<size_t>(H) * W;
    std::int64_t count = 0;
    for (std::uint8_t t : labels.v) count += (t != kIgnoreIndex);
    if (count == 0) return;
    const double inv = scale / count;
    std::vector<T> p(static_cast<size_t>(C));
    for (int n = 0; n < N; ++n) {
        const T* zp = &logits.at(n, 0, 0, 0);
        T* gp = &logits.gat(n, 0, 0, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::uint8_t t = labels.at(n, y, x);
                if (t == kIgnoreIndex) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                detail::pixel_softmax(zp + i, C, plane, p.data());
                if (static_cast<double>(p[t]) < kLogFloor) continue;
                for (int c = 0; c < C; ++c) {
                    const double d = static_cast<double>(p[c]) - (c == t ? 1.0 : 0.0);
                    gp[c * plane + i] += static_cast<T>(inv * d);
                }
            }
    }
}

/// total = lb * body + le * (lbce * bce + lce * hard-pixel CE) + lf * final.
template <class T>
LossBreakdown total_loss(const Tensor<T>& s_body, const Tensor<T>& s_final,
                         const Tensor<T>& b_logit, const LabelMap& labels,
                         const LossConfig& cfg) {
    cfg.validate();
    const EdgeMask band = edge_gt_from_labels(labels, cfg.relax_radius);
    const EdgeMask edge_gt = edge_gt_from_labels(labels, cfg.edge_radius);
    LossBreakdown bd;
    const BodyLossResult body = body_relaxation_ce(s_body, labels, band, cfg);
    bd.l_body = body.value;
    bd.body_empty_selection = body.empty;
    bd.l_bce = balanced_bce(b_logit, edge_gt);
    const OhemResult ohem = edge_prior_ohem_ce(s_final, labels, b_logit, cfg);
    bd.l_edge_ce = ohem.value;
    bd.selected_count = ohem.selected;
    bd.l_final = mean_ce(s_final, labels);
    bd.total = cfg.lambda_body * bd.l_body +
               cfg.lambda_edge * (cfg.lambda_bce * bd.l_bce + cfg.lambda_edge_ce * bd.l_edge_ce) +
               cfg.lambda_final * bd.l_final;
    return bd;
}

/// Forward plus gradient accumulation into the three logit tensors.
template <class T>
LossBreakdown total_loss_backward(Tensor<T>& s_body, Tensor<T>& s_final, Tensor<T>& b_logit,
                                  const LabelMap& labels, const LossConfig& cfg) {
    LossBreakdown bd = total_loss(s_body, s_final, b_logit, labels, cfg);
    const EdgeMask band = edge_gt_from_labels(labels, cfg.relax_radius);
    const EdgeMask edge_gt = edge_gt_from_labels(labels, cfg.edge_radius);
    body_relaxation_ce_backward(s_body, labels, band, cfg, cfg.lambda_body);
    balanced_bce_backward(b_logit, edge_gt, cfg.lambda_edge * cfg.lambda_bce);
    edge_prior_ohem_ce_backward(s_final, labels, b_logit, cfg,
                                cfg.lambda_edge * cfg.lambda_edge_ce);
    mean_ce_backward(s_final, labels, cfg.lambda_final);
    return bd;
}

} // namespace dseg
