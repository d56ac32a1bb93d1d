// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-side brute-force oracles, kept independent of the library's selection
// and matching logic. Per-pixel posterior arithmetic intentionally follows
// the same textbook recipe (max-shifted exp, ascending sum, divide) so that
// value comparisons can be exact instead of tolerance-based.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dseg/label_map.hpp"
#include "dseg/loss.hpp"
#include "dseg/tensor.hpp"

namespace oracles {

struct OhemOracleResult {
    double value = 0.0;
    std::vector<std::int64_t> selected; // ascending flat indices (n*H + y)*W + x
};

/// Sort-all-then-filter reference for the boundary-gated hard-pixel CE:
/// compute every candidate's CE, order by loss descending, keep the top K per
/// image, normalize by the kept count (or by K in strict mode).
template <class T>
OhemOracleResult ohem_oracle(const dseg::Tensor<T>& s_final, const dseg::LabelMap& labels,
                             const dseg::Tensor<T>& b_logit, const dseg::LossConfig& cfg) {
    const int N = s_final.n(), C = s_final.c(), H = s_final.h(), W = s_final.w();
    const size_t plane = static_cast<size_t>(H) * W;
    OhemOracleResult res;
    double sum = 0.0;
    std::int64_t kept_total = 0, budget_total = 0;
    std::vector<T> p(static_cast<size_t>(C));
    for (int n = 0; n < N; ++n) {
        struct Cand {
            double loss;
            std::int64_t flat;
        };
        std::vector<Cand> cand;
        std::int64_t n_valid = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::uint8_t t = labels.at(n, y, x);
                if (t == dseg::kIgnoreIndex) continue;
                ++n_valid;
                const double z = static_cast<double>(b_logit.at(n, 0, y, x));
                const double sig = 1.0 / (1.0 + std::exp(-z));
                if (!(sig > cfg.t_b)) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                const T* zp = &s_final.at(n, 0, 0, 0) + i;
                T m = zp[0];
                for (int c = 1; c < C; ++c) m = std::max(m, zp[c * plane]);
                T denom = T(0);
                for (int c = 0; c < C; ++c) {
                    const T e = std::exp(zp[c * plane] - m);
                    p[c] = e;
                    denom += e;
                }
                for (int c = 0; c < C; ++c) p[c] = p[c] / denom;
                const double loss =
                    -std::log(std::max(static_cast<double>(p[t]), dseg::kLogFloor));
                cand.push_back({loss, (static_cast<std::int64_t>(n) * H + y) * W + x});
            }
        if (n_valid == 0) continue;
        std::int64_t k = std::llround(cfg.k_ratio * static_cast<double>(n_valid));
        if (k < 1) k = 1;
        budget_total += k;
        std::sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) {
            if (a.loss != b.loss) return a.loss > b.loss; // hardest first
            return a.flat < b.flat;
        });
        const std::int64_t keep = std::min<std::int64_t>(k, static_cast<std::int64_t>(cand.size()));
        for (std::int64_t j = 0; j < keep; ++j) res.selected.push_back(cand[static_cast<size_t>(j)].flat);
        kept_total += keep;
    }
    std::sort(res.selected.begin(), res.selected.end());
    if (kept_total == 0) return res;
    // accumulate in ascending pixel order, same as the reported contract
    for (std::int64_t flat : res.selected) {
        const int n = static_cast<int>(flat / (static_cast<std::int64_t>(H) * W));
        const size_t i = static_cast<size_t>(flat % (static_cast<std::int64_t>(H) * W));
        const std::uint8_t t = labels.v[(static_cast<size_t>(n) * H * W) + i];
        const T* zp = &s_final.at(n, 0, 0, 0) + i;
        T m = zp[0];
        for (int c = 1; c < C; ++c) m = std::max(m, zp[c * plane]);
        T denom = T(0);
        std::vector<T> pp(static_cast<size_t>(C));
        for (int c = 0; c < C; ++c) {
            const T e = std::exp(zp[c * plane] - m);
            pp[static_cast<size_t>(c)] = e;
            denom += e;
        }
        const T pt = pp[t] / denom;
        sum += -std::log(std::max(static_cast<double>(pt), dseg::kLogFloor));
    }
    res.value = sum / static_cast<double>(cfg.ohem_strict_k ? budget_total : kept_total);
    return res;
}

} // namespace oracles
