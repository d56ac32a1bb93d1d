// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include "dseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace dseg {

void ConfusionMatrix::accumulate(const LabelMap& gt, const LabelMap& pred) {
    if (gt.n != pred.n || gt.h != pred.h || gt.w != pred.w)
        throw ShapeError("confusion matrix: gt/pred shape mismatch");
    for (size_t i = 0; i < gt.v.size(); ++i) {
        const std::uint8_t g = gt.v[i];
        if (g == kIgnoreIndex) continue;
        const std::uint8_t p = pred.v[i];
        if (g >= num_classes || p >= num_classes)
            throw ShapeError("confusion matrix: class id out of range");
        ++at(g, p);
    }
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (std::int64_t c : counts) t += c;
    return t;
}

MiouResult miou(const ConfusionMatrix& cm) {
    if (cm.total() == 0)
        throw std::invalid_argument("miou: empty confusion matrix");
    MiouResult res;
    res.per_class.assign(static_cast<size_t>(cm.num_classes),
                         std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int defined = 0;
    for (int c = 0; c < cm.num_classes; ++c) {
        const std::int64_t tp = cm.at(c, c);
        std::int64_t fp = 0, fn = 0;
        for (int o = 0; o < cm.num_classes; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const std::int64_t uni = tp + fp + fn;
        if (uni == 0) continue; // class absent everywhere: excluded from the mean
        const double iou = static_cast<double>(tp) / static_cast<double>(uni);
        res.per_class[static_cast<size_t>(c)] = iou;
        sum += iou;
        ++defined;
    }
    res.mean = defined > 0 ? sum / defined : 0.0;
    return res;
}

std::vector<std::uint8_t> class_boundary(const LabelMap& m, int class_id, int batch_index) {
    const int H = m.h, W = m.w;
    std::vector<std::uint8_t> out(static_cast<size_t>(H) * W, 0);
    auto inside = [&](int y, int x) {
        return m.at(batch_index, y, x) == class_id;
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!inside(y, x)) continue;
            const bool border = y == 0 || y == H - 1 || x == 0 || x == W - 1;
            const bool exposed = border || !inside(y - 1, x) || !inside(y + 1, x) ||
                                 !inside(y, x - 1) || !inside(y, x + 1);
            if (exposed) out[static_cast<size_t>(y) * W + x] = 1;
        }
    return out;
}

std::vector<double> edt_sq(const std::vector<std::uint8_t>& sites, int h, int w) {
    const double kInf = 1e20;
    std::vector<double> g(static_cast<size_t>(h) * w, kInf);
    // pass 1: per column, exact 1-d squared distances along y (down then up)
    for (int x = 0; x < w; ++x) {
        double run = kInf;
        for (int y = 0; y < h; ++y) {
            if (sites[static_cast<size_t>(y) * w + x]) run = 0.0;
            else if (run < kInf) run += 1.0;
            g[static_cast<size_t>(y) * w + x] = run < kInf ? run * run : kInf;
        }
        run = kInf;
        for (int y = h - 1; y >= 0; --y) {
            if (sites[static_cast<size_t>(y) * w + x]) run = 0.0;
            else if (run < kInf) run += 1.0;
            if (run < kInf) {
                double& cell = g[static_cast<size_t>(y) * w + x];
                cell = std::min(cell, run * run);
            }
        }
    }
    // pass 2: per row, lower envelope of parabolas (exact squared Euclidean)
    std::vector<double> out(g.size(), kInf);
    std::vector<int> v(static_cast<size_t>(w));
    std::vector<double> z(static_cast<size_t>(w) + 1);
    std::vector<double> f(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[static_cast<size_t>(x)] = g[static_cast<size_t>(y) * w + x];
        int k = 0;
        v[0] = 0;
        z[0] = -kInf;
        z[1] = kInf;
        for (int q = 1; q < w; ++q) {
            if (f[static_cast<size_t>(q)] >= kInf) continue;
            double s;
            while (true) {
                const int p = v[static_cast<size_t>(k)];
                if (f[static_cast<size_t>(p)] >= kInf) {
                    // degenerate: drop parabolas that never contribute
                    if (k == 0) {
                        v[0] = q;
                        z[0] = -kInf;
                        z[1] = kInf;
                        s = -kInf;
                        break;
                    }
                    --k;
                    continue;
                }
                s = ((f[static_cast<size_t>(q)] + q * static_cast<double>(q)) -
                     (f[static_cast<size_t>(p)] + p * static_cast<double>(p))) /
                    (2.0 * q - 2.0 * p);
                if (s <= z[static_cast<size_t>(k)]) {
                    if (k == 0) {
                        v[0] = q;
                        z[0] = -kInf;
                        z[1] = kInf;
                        break;
                    }
                    --k;
                } else {
                    ++k;
                    v[static_cast<size_t>(k)] = q;
                    z[static_cast<size_t>(k)] = s;
                    z[static_cast<size_t>(k) + 1] = kInf;
                    break;
                }
            }
        }
        // first valid parabola
        if (f[static_cast<size_t>(v[0])] >= kInf) {
            for (int x = 0; x < w; ++x) out[static_cast<size_t>(y) * w + x] = kInf;
            continue;
        }
        k = 0;
        for (int x = 0; x < w; ++x) {
            while (z[static_cast<size_t>(k) + 1] < static_cast<double>(x)) ++k;
            const int p = v[static_cast<size_t>(k)];
            const double dx = static_cast<double>(x - p);
            out[static_cast<size_t>(y) * w + x] = dx * dx + f[static_cast<size_t>(p)];
        }
    }
    return out;
}

namespace {

std::int64_t count_within(const std::vector<std::uint8_t>& from,
                          const std::vector<std::uint8_t>& to_sites, int h, int w,
                          double slack, SlackMetric metric) {
    std::int64_t matched = 0;
    if (metric == SlackMetric::euclidean) {
        const std::vector<double> d2 = edt_sq(to_sites, h, w);
        const double lim = slack * slack;
        for (size_t i = 0; i < from.size(); ++i)
            if (from[i] && d2[i] <= lim) ++matched;
    } else {
        // Chebyshev: any site within the (2r+1)^2 window
        const int r = static_cast<int>(std::floor(slack));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!from[static_cast<size_t>(y) * w + x]) continue;
                bool hit = false;
                for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r) && !hit; ++yy)
                    for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
                        if (to_sites[static_cast<size_t>(yy) * w + xx]) {
                            hit = true;
                            break;
                        }
                if (hit) ++matched;
            }
    }
    return matched;
}

std::int64_t count_within_bruteforce(const std::vector<std::uint8_t>& from,
                                     const std::vector<std::uint8_t>& to_sites, int h, int w,
                                     double slack, SlackMetric metric) {
    std::vector<std::pair<int, int>> sites;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (to_sites[static_cast<size_t>(y) * w + x]) sites.emplace_back(y, x);
    std::int64_t matched = 0;
    const double lim = slack * slack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!from[static_cast<size_t>(y) * w + x]) continue;
            bool hit = false;
            for (const auto& [sy, sx] : sites) {
                if (metric == SlackMetric::euclidean) {
                    const double dy = y - sy, dx = x - sx;
                    if (dy * dy + dx * dx <= lim) {
                        hit = true;
                        break;
                    }
                } else {
                    if (std::max(std::abs(y - sy), std::abs(x - sx)) <= slack) {
                        hit = true;
                        break;
                    }
                }
            }
            if (hit) ++matched;
        }
    return matched;
}

std::int64_t popcount(const std::vector<std::uint8_t>& v) {
    std::int64_t n = 0;
    for (std::uint8_t b : v) n += (b != 0);
    return n;
}

} // namespace

BoundaryCounts boundary_match_counts(const LabelMap& pred, const LabelMap& gt, int class_id,
                                     double slack_px, SlackMetric metric, int batch_index) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw ShapeError("boundary_fscore: shape mismatch");
    if (slack_px < 0.0) throw std::invalid_argument("boundary_fscore: slack must be >= 0");
    const auto pb = class_boundary(pred, class_id, batch_index);
    const auto gb = class_boundary(gt, class_id, batch_index);
    BoundaryCounts c;
    c.pred_boundary = popcount(pb);
    c.gt_boundary = popcount(gb);
    if (c.pred_boundary > 0 && c.gt_boundary > 0) {
        c.pred_matched = count_within(pb, gb, pred.h, pred.w, slack_px, metric);
        c.gt_matched = count_within(gb, pb, pred.h, pred.w, slack_px, metric);
    }
    return c;
}

BoundaryCounts boundary_match_counts_bruteforce(const LabelMap& pred, const LabelMap& gt,
                                                int class_id, double slack_px, SlackMetric metric,
                                                int batch_index) {
    const auto pb = class_boundary(pred, class_id, batch_index);
    const auto gb = class_boundary(gt, class_id, batch_index);
    BoundaryCounts c;
    c.pred_boundary = popcount(pb);
    c.gt_boundary = popcount(gb);
    if (c.pred_boundary > 0 && c.gt_boundary > 0) {
        c.pred_matched = count_within_bruteforce(pb, gb, pred.h, pred.w, slack_px, metric);
        c.gt_matched = count_within_bruteforce(gb, pb, pred.h, pred.w, slack_px, metric);
    }
    return c;
}

BoundaryScore boundary_score_from_counts(const BoundaryCounts& c) {
    BoundaryScore s;
    if (c.pred_boundary == 0 && c.gt_boundary == 0) return s; // class absent: undefined
    s.defined = true;
    s.precision = c.pred_boundary > 0
                      ? static_cast<double>(c.pred_matched) / static_cast<double>(c.pred_boundary)
                      : 0.0;
    s.recall = c.gt_boundary > 0
                   ? static_cast<double>(c.gt_matched) / static_cast<double>(c.gt_boundary)
                   : 0.0;
    s.f = (s.precision + s.recall) > 0.0
              ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
              : 0.0;
    return s;
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

void write_report_json(const std::string& path, const EvalReport& report) {
    nlohmann::json j;
    j["slacks"] = report.slacks;
    j["mean_iou"] = report.mean_iou;
    nlohmann::json mean_f = nlohmann::json::object();
    for (size_t i = 0; i < report.slacks.size(); ++i)
        mean_f[std::to_string(report.slacks[i])] = report.mean_f[i];
    j["mean_f"] = mean_f;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& pc : report.per_class) {
        nlohmann::json e;
        if (pc.iou_defined) e["iou"] = pc.iou;
        nlohmann::json f = nlohmann::json::object();
        for (size_t i = 0; i < report.slacks.size(); ++i)
            if (pc.f_defined[i]) f[std::to_string(report.slacks[i])] = pc.f[i];
        e["f"] = f;
        per_class[std::to_string(pc.class_id)] = e;
    }
    j["per_class"] = per_class;
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << j.dump(2) << "\n";
}

EvalReport read_report_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for read: " + path);
    nlohmann::json j;
    is >> j;
    EvalReport r;
    r.slacks = j.at("slacks").get<std::vector<int>>();
    r.mean_iou = j.at("mean_iou").get<double>();
    r.mean_f.resize(r.slacks.size(), 0.0);
    for (size_t i = 0; i < r.slacks.size(); ++i)
        r.mean_f[i] = j.at("mean_f").at(std::to_string(r.slacks[i])).get<double>();
    for (const auto& [key, e] : j.at("per_class").items()) {
        ClassReport pc;
        pc.class_id = std::stoi(key);
        pc.iou_defined = e.contains("iou");
        if (pc.iou_defined) pc.iou = e.at("iou").get<double>();
        pc.f.resize(r.slacks.size(), 0.0);
        pc.f_defined.resize(r.slacks.size(), false);
        for (size_t i = 0; i < r.slacks.size(); ++i) {
            const std::string k = std::to_string(r.slacks[i]);
            if (e.at("f").contains(k)) {
                pc.f_defined[i] = true;
                pc.f[i] = e.at("f").at(k).get<double>();
            }
        }
        r.per_class.push_back(std::move(pc));
    }
    std::sort(r.per_class.begin(), r.per_class.end(),
              [](const ClassReport& a, const ClassReport& b) { return a.class_id < b.class_id; });
    return r;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "class,iou";
    for (int s : report.slacks) os << ",f@" << s;
    os << "\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    for (const auto& pc : report.per_class) {
        os << pc.class_id << "," << (pc.iou_defined ? fmt(pc.iou) : "");
        for (size_t i = 0; i < report.slacks.size(); ++i)
            os << "," << (pc.f_defined[i] ? fmt(pc.f[i]) : "");
        os << "\n";
    }
    os << "mean," << fmt(report.mean_iou);
    for (double f : report.mean_f) os << "," << fmt(f);
    os << "\n";
}

} // namespace dseg
