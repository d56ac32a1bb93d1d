// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dseg/loss.hpp"
#include "dseg/rng.hpp"
#include "oracles.hpp"

using namespace dseg;

namespace {

LabelMap half_half_4x4() {
    // left half class 0, right half class 1
    LabelMap lm(1, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) lm.at(0, y, x) = x < 2 ? 0 : 1;
    return lm;
}

/// Logits whose softmax hits the requested 2-class posterior.
TensorD logits_for_posterior(const std::vector<double>& p_target,
                             const std::vector<std::uint8_t>& target, int h, int w) {
    TensorD s({1, 2, h, w});
    for (int i = 0; i < h * w; ++i) {
        const double pt = p_target[static_cast<size_t>(i)];
        const int t = target[static_cast<size_t>(i)];
        s.data[static_cast<size_t>(t) * h * w + i] = std::log(pt);
        s.data[static_cast<size_t>(1 - t) * h * w + i] = std::log(1.0 - pt);
    }
    return s;
}

} // namespace

TEST_CASE("edge_gt: uniform map has no boundaries") {
    LabelMap lm(1, 6, 6, 2);
    const EdgeMask m = edge_gt_from_labels(lm, 1);
    for (std::uint8_t v : m.v) CHECK(v == 0);
}

TEST_CASE("edge_gt: half/half map marks the two center columns") {
    const EdgeMask m = edge_gt_from_labels(half_half_4x4(), 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(m.at(0, y, x) == ((x == 1 || x == 2) ? 1 : 0));
}

TEST_CASE("edge_gt: checkerboard is all boundary") {
    LabelMap lm(1, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) lm.at(0, y, x) = static_cast<std::uint8_t>((x + y) % 2);
    const EdgeMask m = edge_gt_from_labels(lm, 1);
    for (std::uint8_t v : m.v) CHECK(v == 1);
}

TEST_CASE("edge_gt: ignore pixels are never boundary and never induce one") {
    LabelMap lm(1, 3, 3, 0);
    lm.at(0, 1, 1) = kIgnoreIndex;
    const EdgeMask m = edge_gt_from_labels(lm, 1);
    for (std::uint8_t v : m.v) CHECK(v == 0);
}

TEST_CASE("edge_gt is invariant under bijective relabeling") {
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed(7001, seed));
        LabelMap lm(1, 8, 8);
        for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(4));
        std::vector<std::uint8_t> perm{0, 1, 2, 3};
        for (int i = 3; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        LabelMap relabeled = lm;
        for (auto& v : relabeled.v) v = perm[v];
        const EdgeMask a = edge_gt_from_labels(lm, 1 + seed % 2);
        const EdgeMask b = edge_gt_from_labels(relabeled, 1 + seed % 2);
        CHECK(a.v == b.v);
    }
}

TEST_CASE("body relaxation: near-one-hot logits give near-zero loss") {
    LabelMap lm = half_half_4x4();
    TensorD s({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) s.at(0, lm.at(0, y, x), y, x) = 20.0;
    LossConfig cfg;
    cfg.relax_radius = 1;
    const EdgeMask band = edge_gt_from_labels(lm, 1);
    const BodyLossResult r = body_relaxation_ce(s, lm, band, cfg);
    CHECK(r.value < 1e-6);
    CHECK(r.count == 8);
}

TEST_CASE("body relaxation: uniform logits give ln K") {
    LabelMap lm = half_half_4x4();
    TensorD s = TensorD::zeros({1, 4, 4, 4});
    LossConfig cfg;
    cfg.relax_radius = 1;
    const EdgeMask band = edge_gt_from_labels(lm, 1);
    const BodyLossResult r = body_relaxation_ce(s, lm, band, cfg);
    CHECK(r.value == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("body relaxation averages exactly over the non-band pixels") {
    LabelMap lm = half_half_4x4();
    Rng rng(55);
    TensorD s({1, 2, 4, 4});
    for (auto& v : s.data) v = rng.uniform(-2.0, 2.0);
    LossConfig cfg;
    cfg.relax_radius = 1;
    const EdgeMask band = edge_gt_from_labels(lm, 1);
    const BodyLossResult r = body_relaxation_ce(s, lm, band, cfg);
    // brute force over the 8 outer-column pixels
    double expect = 0.0;
    int count = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            if (x == 1 || x == 2) continue;
            const int t = lm.at(0, y, x);
            const double z0 = s.at(0, 0, y, x), z1 = s.at(0, 1, y, x);
            const double m = std::max(z0, z1);
            const double p = std::exp((t == 0 ? z0 : z1) - m) /
                             (std::exp(z0 - m) + std::exp(z1 - m));
            expect += -std::log(p);
            ++count;
        }
    expect /= count;
    CHECK(r.count == 8);
    CHECK(r.value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("body relaxation: empty selection is a soft signal") {
    LabelMap lm(1, 2, 2, kIgnoreIndex);
    TensorD s = TensorD::zeros({1, 2, 2, 2});
    LossConfig cfg;
    const EdgeMask band = edge_gt_from_labels(lm, 1);
    const BodyLossResult r = body_relaxation_ce(s, lm, band, cfg);
    CHECK(r.empty);
    CHECK(r.value == 0.0);
}

TEST_CASE("body relaxation with an empty band equals plain mean CE") {
    Rng rng(77);
    LabelMap lm(1, 5, 5);
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(3));
    TensorD s({1, 3, 5, 5});
    for (auto& v : s.data) v = rng.uniform(-2.0, 2.0);
    LossConfig cfg;
    const EdgeMask empty_band(1, 5, 5);
    const BodyLossResult r = body_relaxation_ce(s, lm, empty_band, cfg);
    CHECK(r.value == doctest::Approx(mean_ce(s, lm)).epsilon(1e-12));
}

TEST_CASE("balanced bce: saturated correct logits give near-zero loss") {
    LabelMap lm = half_half_4x4();
    const EdgeMask gt = edge_gt_from_labels(lm, 1);
    TensorD b({1, 1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) b.at(0, 0, y, x) = gt.at(0, y, x) ? 20.0 : -20.0;
    CHECK(balanced_bce(b, gt) < 1e-6);
}

TEST_CASE("balanced bce: zero logits give ln 2 under any imbalance") {
    // 4x4 with 3 positives
    EdgeMask gt(1, 4, 4);
    gt.v[1] = gt.v[6] = gt.v[11] = 1;
    const TensorD b = TensorD::zeros({1, 1, 4, 4});
    CHECK(balanced_bce(b, gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // brute force of the stated weighting
    const double n_tot = 16.0, n_pos = 3.0, n_neg = 13.0;
    const double w_pos = n_tot / (2.0 * n_pos), w_neg = n_tot / (2.0 * n_neg);
    const double expect = (n_pos * w_pos * std::log(2.0) + n_neg * w_neg * std::log(2.0)) / n_tot;
    CHECK(balanced_bce(b, gt) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("balanced bce: all-negative ground truth reduces to plain negative BCE") {
    EdgeMask gt(1, 3, 3);
    Rng rng(21);
    TensorD b({1, 1, 3, 3});
    for (auto& v : b.data) v = rng.uniform(-2.0, 2.0);
    double expect = 0.0;
    for (double z : b.data) expect += std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z)));
    expect /= 9.0;
    CHECK(balanced_bce(b, gt) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ohem: gate below threshold everywhere selects nothing") {
    LabelMap lm(1, 4, 4, 1);
    TensorD s = TensorD::zeros({1, 3, 4, 4});
    TensorD b = TensorD::full({1, 1, 4, 4}, -5.0);
    LossConfig cfg;
    const OhemResult r = edge_prior_ohem_ce(s, lm, b, cfg);
    CHECK(r.selected == 0);
    CHECK(r.value == 0.0);
}

TEST_CASE("ohem: selects the K hardest candidates") {
    // 3x3 image, 8 candidates with posteriors 0.9 .. 0.2, one pixel gated out
    std::vector<double> p{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.99};
    std::vector<std::uint8_t> target(9, 0);
    const TensorD s = logits_for_posterior(p, target, 3, 3);
    LabelMap lm(1, 3, 3, 0);
    TensorD b = TensorD::full({1, 1, 3, 3}, 5.0);
    b.at(0, 0, 2, 2) = -5.0; // the 0.99 pixel never qualifies
    LossConfig cfg;
    cfg.k_ratio = 0.34; // 9 valid pixels -> K = 3
    const OhemResult r = edge_prior_ohem_ce(s, lm, b, cfg);
    CHECK(r.selected == 3);
    const double expect = -(std::log(0.2) + std::log(0.3) + std::log(0.4)) / 3.0;
    CHECK(r.value == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("ohem: K at least the candidate count means plain mean CE over candidates") {
    std::vector<double> p{0.9, 0.8, 0.7, 0.6};
    std::vector<std::uint8_t> target(4, 1);
    const TensorD s = logits_for_posterior(p, target, 2, 2);
    LabelMap lm(1, 2, 2, 1);
    const TensorD b = TensorD::full({1, 1, 2, 2}, 5.0);
    LossConfig cfg;
    cfg.k_ratio = 1.0; // K = 4 = all
    const OhemResult r = edge_prior_ohem_ce(s, lm, b, cfg);
    CHECK(r.selected == 4);
    double expect = 0.0;
    for (double v : p) expect += -std::log(v);
    expect /= 4.0;
    CHECK(r.value == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("ohem equals the sort-then-filter oracle exactly") {
    int spanned_lt = 0, spanned_eq = 0, spanned_gt = 0;
    for (int seed = 0; seed < 300; ++seed) {
        Rng rng(derive_seed(60000, seed));
        const int k_cls = 2 + rng.below(4);
        TensorD s({1, k_cls, 16, 16});
        for (auto& v : s.data) v = rng.uniform(-3.0, 3.0);
        TensorD b({1, 1, 16, 16});
        // bias the gate so candidate counts land below, at, and above K
        const double gate_bias = rng.uniform(-2.0, 3.0);
        for (auto& v : b.data) v = gate_bias + rng.uniform(-2.0, 2.0);
        LabelMap lm(1, 16, 16);
        for (auto& v : lm.v)
            v = rng.uniform() < 0.05 ? kIgnoreIndex
                                     : static_cast<std::uint8_t>(rng.below(k_cls));
        LossConfig cfg;
        cfg.k_ratio = 0.10;
        cfg.ohem_strict_k = seed % 5 == 0;
        const OhemResult impl = edge_prior_ohem_ce(s, lm, b, cfg);
        const oracles::OhemOracleResult oracle = oracles::ohem_oracle(s, lm, b, cfg);
        CHECK(impl.value == oracle.value); // exact, including float rounding
        CHECK(static_cast<size_t>(impl.selected) == oracle.selected.size());
        // count regimes to make sure the test spans them
        std::int64_t n_valid = 0, n_cand = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                if (lm.at(0, y, x) == kIgnoreIndex) continue;
                ++n_valid;
                if (1.0 / (1.0 + std::exp(-b.at(0, 0, y, x))) > cfg.t_b) ++n_cand;
            }
        std::int64_t k = std::llround(0.10 * static_cast<double>(n_valid));
        if (k < 1) k = 1;
        if (n_cand < k) ++spanned_lt;
        else if (n_cand == k) ++spanned_eq;
        else ++spanned_gt;
    }
    CHECK(spanned_lt > 0);
    CHECK(spanned_gt > 0);
    CHECK(spanned_eq >= 0); // exact equality of counts is rare but allowed
}

TEST_CASE("ohem ignores perturbations of non-selected logits") {
    Rng rng(81);
    TensorD s({1, 3, 8, 8});
    for (auto& v : s.data) v = rng.uniform(-2.0, 2.0);
    TensorD b({1, 1, 8, 8});
    for (auto& v : b.data) v = rng.uniform(0.5, 3.0);
    LabelMap lm(1, 8, 8);
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(3));
    LossConfig cfg;
    const oracles::OhemOracleResult base = oracles::ohem_oracle(s, lm, b, cfg);
    const OhemResult before = edge_prior_ohem_ce(s, lm, b, cfg);
    // raise the correct-class logit of every non-selected pixel: they only
    // get easier, so the selected set and the loss must not move
    TensorD s2 = s;
    const size_t plane = 64;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const std::int64_t flat = y * 8 + x;
            if (std::binary_search(base.selected.begin(), base.selected.end(), flat)) continue;
            const std::uint8_t t = lm.at(0, y, x);
            s2.data[static_cast<size_t>(t) * plane + flat] += 1.0;
        }
    const OhemResult after = edge_prior_ohem_ce(s2, lm, b, cfg);
    CHECK(after.value == before.value);
    CHECK(after.selected == before.selected);
}

TEST_CASE("ohem candidate count is monotone in the gate threshold") {
    Rng rng(91);
    TensorD s({1, 3, 8, 8});
    for (auto& v : s.data) v = rng.uniform(-2.0, 2.0);
    TensorD b({1, 1, 8, 8});
    for (auto& v : b.data) v = rng.uniform(-3.0, 3.0);
    LabelMap lm(1, 8, 8);
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(3));
    LossConfig cfg;
    cfg.k_ratio = 1.0; // selected == candidates
    int prev = std::numeric_limits<int>::max();
    for (double t_b : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        cfg.t_b = t_b;
        const OhemResult r = edge_prior_ohem_ce(s, lm, b, cfg);
        CHECK(r.selected <= prev);
        prev = r.selected;
    }
}

TEST_CASE("ohem sends no gradient to the boundary logit") {
    Rng rng(101);
    TensorD s({1, 3, 6, 6});
    for (auto& v : s.data) v = rng.uniform(-2.0, 2.0);
    TensorD b({1, 1, 6, 6});
    for (auto& v : b.data) v = rng.uniform(-2.0, 3.0);
    LabelMap lm(1, 6, 6);
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(3));
    LossConfig cfg;
    s.require_grad();
    b.require_grad();
    edge_prior_ohem_ce_backward(s, lm, b, cfg, 1.0);
    double s_grad_norm = 0.0;
    for (double g : s.grad) s_grad_norm += std::fabs(g);
    CHECK(s_grad_norm > 0.0);
    for (double g : b.grad) CHECK(g == 0.0);
}

TEST_CASE("total loss: zeroed body and edge weights reduce to the final CE") {
    Rng rng(111);
    TensorD s_body({1, 3, 4, 4}), s_final({1, 3, 4, 4}), b({1, 1, 4, 4});
    for (auto& v : s_body.data) v = rng.uniform(-2.0, 2.0);
    for (auto& v : s_final.data) v = rng.uniform(-2.0, 2.0);
    for (auto& v : b.data) v = rng.uniform(-2.0, 2.0);
    LabelMap lm(1, 4, 4);
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(3));
    LossConfig cfg;
    cfg.lambda_body = 0.0;
    cfg.lambda_edge = 0.0;
    const LossBreakdown bd = total_loss(s_body, s_final, b, lm, cfg);
    CHECK(bd.total == doctest::Approx(bd.l_final).epsilon(1e-12));
    CHECK(bd.l_final == doctest::Approx(mean_ce(s_final, lm)).epsilon(1e-12));
}

TEST_CASE("total loss breakdown identity reconstructs") {
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(7777, seed));
        TensorD s_body({1, 4, 6, 6}), s_final({1, 4, 6, 6}), b({1, 1, 6, 6});
        for (auto& v : s_body.data) v = rng.uniform(-2.0, 2.0);
        for (auto& v : s_final.data) v = rng.uniform(-2.0, 2.0);
        for (auto& v : b.data) v = rng.uniform(-2.0, 2.0);
        LabelMap lm(1, 6, 6);
        for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(4));
        LossConfig cfg;
        cfg.lambda_body = rng.uniform(0.0, 2.0);
        cfg.lambda_edge = rng.uniform(0.0, 2.0);
        cfg.lambda_final = rng.uniform(0.0, 2.0);
        const LossBreakdown bd = total_loss(s_body, s_final, b, lm, cfg);
        const double reconstructed =
            cfg.lambda_body * bd.l_body +
            cfg.lambda_edge * (cfg.lambda_bce * bd.l_bce + cfg.lambda_edge_ce * bd.l_edge_ce) +
            cfg.lambda_final * bd.l_final;
        CHECK(std::fabs(bd.total - reconstructed) < 1e-6);
    }
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.k_ratio = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = LossConfig{};
    cfg.t_b = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = LossConfig{};
    cfg.relax_radius = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("labels nearest resize picks cell centers and keeps ignore") {
    LabelMap lm(1, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) lm.at(0, y, x) = static_cast<std::uint8_t>(x < 2 ? 0 : 1);
    lm.at(0, 3, 3) = kIgnoreIndex;
    const LabelMap lr = nearest_resize(lm, 2, 2);
    CHECK(lr.at(0, 0, 0) == 0);
    CHECK(lr.at(0, 0, 1) == 1);
    CHECK(lr.at(0, 1, 0) == 0);
    CHECK(lr.at(0, 1, 1) == kIgnoreIndex); // cell center (1.5,1.5) scales to source (3,3)
}
