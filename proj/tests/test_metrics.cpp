// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dseg/metrics.hpp"
#include "dseg/rng.hpp"

using namespace dseg;

namespace {

LabelMap random_map(int h, int w, int classes, Rng& rng) {
    LabelMap lm(1, h, w);
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.below(classes));
    return lm;
}

LabelMap blobby_map(int h, int w, int classes, Rng& rng) {
    // a few rectangles over background, more realistic boundaries than noise
    LabelMap lm(1, h, w, 0);
    const int n = 1 + rng.below(4);
    for (int i = 0; i < n; ++i) {
        const std::uint8_t cls = static_cast<std::uint8_t>(rng.below(classes));
        const int x0 = rng.below(w), y0 = rng.below(h);
        const int x1 = std::min(w - 1, x0 + 1 + rng.below(w / 2));
        const int y1 = std::min(h - 1, y0 + 1 + rng.below(h / 2));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) lm.at(0, y, x) = cls;
    }
    return lm;
}

} // namespace

TEST_CASE("miou: perfect prediction scores 1") {
    Rng rng(3);
    const LabelMap gt = random_map(8, 8, 3, rng);
    ConfusionMatrix cm(3);
    cm.accumulate(gt, gt);
    const MiouResult r = miou(cm);
    CHECK(r.mean == doctest::Approx(1.0));
    for (double v : r.per_class)
        if (!std::isnan(v)) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("miou: hand-counted 2x2 case") {
    LabelMap gt(1, 2, 2), pred(1, 2, 2);
    gt.v = {0, 0, 1, 1};
    pred.v = {0, 1, 1, 1};
    ConfusionMatrix cm(2);
    cm.accumulate(gt, pred);
    const MiouResult r = miou(cm);
    CHECK(r.per_class[0] == doctest::Approx(0.5));
    CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.mean == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("miou: disjoint prediction scores 0, absent class is excluded") {
    LabelMap gt(1, 2, 2, 0), pred(1, 2, 2, 1);
    ConfusionMatrix cm(3);
    cm.accumulate(gt, pred);
    const MiouResult r = miou(cm);
    CHECK(r.per_class[0] == doctest::Approx(0.0));
    CHECK(r.per_class[1] == doctest::Approx(0.0));
    CHECK(std::isnan(r.per_class[2]));
}

TEST_CASE("miou: empty matrix is an error, ignore pixels never count") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(miou(cm), std::invalid_argument);
    LabelMap gt(1, 2, 2, kIgnoreIndex), pred(1, 2, 2, 0);
    cm.accumulate(gt, pred);
    CHECK(cm.total() == 0);
}

TEST_CASE("miou invariant under identical class permutation") {
    Rng rng(17);
    for (int seed = 0; seed < 20; ++seed) {
        const LabelMap gt = random_map(8, 8, 4, rng);
        const LabelMap pred = random_map(8, 8, 4, rng);
        std::vector<std::uint8_t> perm{0, 1, 2, 3};
        for (int i = 3; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.below(i + 1))]);
        LabelMap gt_p = gt, pred_p = pred;
        for (auto& v : gt_p.v) v = perm[v];
        for (auto& v : pred_p.v) v = perm[v];
        ConfusionMatrix cm_a(4), cm_b(4);
        cm_a.accumulate(gt, pred);
        cm_b.accumulate(gt_p, pred_p);
        CHECK(miou(cm_a).mean == doctest::Approx(miou(cm_b).mean).epsilon(1e-12));
    }
}

TEST_CASE("boundary extraction: 4-connectivity with border pixels counted") {
    LabelMap lm(1, 4, 4, 0);
    for (int y = 1; y <= 2; ++y)
        for (int x = 1; x <= 2; ++x) lm.at(0, y, x) = 1;
    const auto b1 = class_boundary(lm, 1, 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const bool in_square = y >= 1 && y <= 2 && x >= 1 && x <= 2;
            CHECK(b1[static_cast<size_t>(y) * 4 + x] == (in_square ? 1 : 0));
        }
    // background touches the image border, so its rim is boundary
    const auto b0 = class_boundary(lm, 0, 0);
    CHECK(b0[0] == 1);
}

TEST_CASE("boundary fscore: identical maps score 1 for every present class") {
    Rng rng(23);
    const LabelMap gt = blobby_map(16, 16, 3, rng);
    for (int c = 0; c < 3; ++c)
        for (double slack : {0.0, 1.0, 3.0}) {
            const BoundaryScore s = boundary_fscore(gt, gt, c, slack);
            if (!s.defined) continue;
            CHECK(s.precision == doctest::Approx(1.0));
            CHECK(s.recall == doctest::Approx(1.0));
            CHECK(s.f == doctest::Approx(1.0));
        }
}

TEST_CASE("boundary fscore: 2px shifted square needs slack >= 2") {
    LabelMap gt(1, 16, 16, 0), pred(1, 16, 16, 0);
    for (int y = 4; y < 10; ++y)
        for (int x = 4; x < 10; ++x) gt.at(0, y, x) = 1;
    for (int y = 4; y < 10; ++y)
        for (int x = 6; x < 12; ++x) pred.at(0, y, x) = 1;
    const BoundaryScore at3 = boundary_fscore(pred, gt, 1, 3.0);
    CHECK(at3.f == doctest::Approx(1.0));
    const BoundaryScore at1 = boundary_fscore(pred, gt, 1, 1.0);
    CHECK(at1.f < 1.0);
}

TEST_CASE("boundary fscore: empty prediction against non-empty GT") {
    LabelMap gt(1, 8, 8, 0), pred(1, 8, 8, 0);
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) gt.at(0, y, x) = 1;
    const BoundaryScore s = boundary_fscore(pred, gt, 1, 2.0);
    CHECK(s.defined);
    CHECK(s.precision == 0.0);
    CHECK(s.recall == 0.0);
    CHECK(s.f == 0.0);
}

TEST_CASE("boundary fscore: class absent from both maps is skipped") {
    LabelMap gt(1, 8, 8, 0), pred(1, 8, 8, 0);
    const BoundaryScore s = boundary_fscore(pred, gt, 3, 2.0);
    CHECK_FALSE(s.defined);
}

TEST_CASE("fast boundary counts match the pairwise oracle exactly") {
    for (int seed = 0; seed < 60; ++seed) {
        Rng rng(derive_seed(31000, seed));
        const LabelMap gt = blobby_map(32, 32, 3, rng);
        const LabelMap pred = blobby_map(32, 32, 3, rng);
        for (int c = 0; c < 3; ++c)
            for (int slack : {1, 2, 3, 5}) {
                const BoundaryCounts fast = boundary_match_counts(pred, gt, c, slack);
                const BoundaryCounts slow = boundary_match_counts_bruteforce(pred, gt, c, slack);
                CHECK(fast.pred_boundary == slow.pred_boundary);
                CHECK(fast.gt_boundary == slow.gt_boundary);
                CHECK(fast.pred_matched == slow.pred_matched);
                CHECK(fast.gt_matched == slow.gt_matched);
            }
    }
}

TEST_CASE("boundary fscore symmetry: swapping maps swaps P and R") {
    Rng rng(41);
    const LabelMap a = blobby_map(16, 16, 3, rng);
    const LabelMap b = blobby_map(16, 16, 3, rng);
    for (int c = 0; c < 3; ++c) {
        const BoundaryScore ab = boundary_fscore(a, b, c, 2.0);
        const BoundaryScore ba = boundary_fscore(b, a, c, 2.0);
        CHECK(ab.defined == ba.defined);
        if (!ab.defined) continue;
        CHECK(ab.precision == doctest::Approx(ba.recall).epsilon(1e-12));
        CHECK(ab.recall == doctest::Approx(ba.precision).epsilon(1e-12));
        CHECK(ab.f == doctest::Approx(ba.f).epsilon(1e-12));
    }
}

TEST_CASE("boundary F is non-decreasing in slack") {
    Rng rng(43);
    for (int seed = 0; seed < 20; ++seed) {
        const LabelMap gt = blobby_map(24, 24, 3, rng);
        const LabelMap pred = blobby_map(24, 24, 3, rng);
        for (int c = 0; c < 3; ++c) {
            double prev = -1.0;
            for (int slack : {0, 1, 2, 3, 5, 8}) {
                const BoundaryScore s = boundary_fscore(pred, gt, c, slack);
                if (!s.defined) continue;
                CHECK(s.f >= prev - 1e-12);
                prev = s.f;
            }
        }
    }
}

TEST_CASE("chebyshev slack option matches its own brute force") {
    Rng rng(47);
    const LabelMap gt = blobby_map(16, 16, 3, rng);
    const LabelMap pred = blobby_map(16, 16, 3, rng);
    for (int c = 0; c < 3; ++c) {
        const BoundaryCounts fast =
            boundary_match_counts(pred, gt, c, 2.0, SlackMetric::chebyshev);
        const BoundaryCounts slow =
            boundary_match_counts_bruteforce(pred, gt, c, 2.0, SlackMetric::chebyshev);
        CHECK(fast.pred_matched == slow.pred_matched);
        CHECK(fast.gt_matched == slow.gt_matched);
    }
}

TEST_CASE("edt squared distances are exact on a random point set") {
    Rng rng(53);
    const int h = 20, w = 17;
    std::vector<std::uint8_t> sites(static_cast<size_t>(h) * w, 0);
    for (int i = 0; i < 12; ++i) sites[static_cast<size_t>(rng.below(h * w))] = 1;
    const std::vector<double> d2 = edt_sq(sites, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double best = 1e20;
            for (int sy = 0; sy < h; ++sy)
                for (int sx = 0; sx < w; ++sx)
                    if (sites[static_cast<size_t>(sy) * w + sx]) {
                        const double d = double(y - sy) * (y - sy) + double(x - sx) * (x - sx);
                        best = std::min(best, d);
                    }
            CHECK(d2[static_cast<size_t>(y) * w + x] == best);
        }
}

TEST_CASE("report json/csv round trip") {
    EvalReport rep;
    rep.slacks = {1, 3};
    rep.mean_iou = 0.75;
    rep.mean_f = {0.5, 0.875};
    for (int c = 0; c < 3; ++c) {
        ClassReport pc;
        pc.class_id = c;
        pc.iou_defined = c != 2;
        pc.iou = 0.25 * (c + 1);
        pc.f = {0.125 * (c + 1), 0.25 * (c + 1)};
        pc.f_defined = {true, c != 2};
        rep.per_class.push_back(pc);
    }
    const std::string dir = std::filesystem::temp_directory_path().string();
    const std::string jpath = dir + "/dseg_report_test.json";
    const std::string cpath = dir + "/dseg_report_test.csv";
    write_report_json(jpath, rep);
    write_report_csv(cpath, rep);
    const EvalReport back = read_report_json(jpath);
    CHECK(back.slacks == rep.slacks);
    CHECK(back.mean_iou == doctest::Approx(rep.mean_iou));
    CHECK(back.mean_f[1] == doctest::Approx(rep.mean_f[1]));
    REQUIRE(back.per_class.size() == rep.per_class.size());
    for (size_t i = 0; i < rep.per_class.size(); ++i) {
        CHECK(back.per_class[i].class_id == rep.per_class[i].class_id);
        CHECK(back.per_class[i].iou_defined == rep.per_class[i].iou_defined);
        if (rep.per_class[i].iou_defined)
            CHECK(back.per_class[i].iou == doctest::Approx(rep.per_class[i].iou));
        CHECK(back.per_class[i].f_defined == rep.per_class[i].f_defined);
    }
    std::remove(jpath.c_str());
    std::remove(cpath.c_str());
}
