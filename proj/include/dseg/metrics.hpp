// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: confusion-matrix mIoU and boundary precision/recall/F under a
// pixel-distance slack, with an O(N^2) pairwise oracle for cross-checking the
// distance-transform fast path.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dseg/label_map.hpp"

namespace dseg {

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::int64_t> counts; // num_classes^2, row = GT class, col = predicted

    explicit ConfusionMatrix(int k = 0)
        : num_classes(k), counts(static_cast<size_t>(k) * k, 0) {}

    std::int64_t& at(int gt, int pred) {
        return counts[static_cast<size_t>(gt) * num_classes + pred];
    }
    std::int64_t at(int gt, int pred) const {
        return counts[static_cast<size_t>(gt) * num_classes + pred];
    }

    /// Ignore pixels contribute nothing.
    void accumulate(const LabelMap& gt, const LabelMap& pred);

    std::int64_t total() const;
};

struct MiouResult {
    std::vector<double> per_class; // NaN where the union is empty
    double mean = 0.0;             // over defined classes only
};

MiouResult miou(const ConfusionMatrix& cm);

enum class SlackMetric { euclidean, chebyshev };

/// Raw match counts; aggregating these across a dataset and then forming
/// P/R/F gives the dataset-level score.
struct BoundaryCounts {
    std::int64_t pred_boundary = 0;
    std::int64_t gt_boundary = 0;
    std::int64_t pred_matched = 0; // predicted boundary pixels within slack of GT boundary
    std::int64_t gt_matched = 0;   // GT boundary pixels within slack of predicted boundary
};

struct BoundaryScore {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
    bool defined = false; // false when the class is absent from both maps
};

/// 4-connected boundary of the class mask; mask pixels on the image border
/// count as boundary.
std::vector<std::uint8_t> class_boundary(const LabelMap& m, int class_id, int batch_index);

/// Exact squared Euclidean distance transform (two-pass parabola envelope).
/// sites[i] != 0 marks a source pixel; returns squared distances.
std::vector<double> edt_sq(const std::vector<std::uint8_t>& sites, int h, int w);

BoundaryCounts boundary_match_counts(const LabelMap& pred, const LabelMap& gt, int class_id,
                                     double slack_px, SlackMetric metric = SlackMetric::euclidean,
                                     int batch_index = 0);

/// Same contract as boundary_match_counts but via exhaustive pairwise
/// distances; quadratic, for verification only.
BoundaryCounts boundary_match_counts_bruteforce(const LabelMap& pred, const LabelMap& gt,
                                                int class_id, double slack_px,
                                                SlackMetric metric = SlackMetric::euclidean,
                                                int batch_index = 0);

BoundaryScore boundary_score_from_counts(const BoundaryCounts& c);

inline BoundaryScore boundary_fscore(const LabelMap& pred, const LabelMap& gt, int class_id,
                                     double slack_px, SlackMetric metric = SlackMetric::euclidean,
                                     int batch_index = 0) {
    return boundary_score_from_counts(
        boundary_match_counts(pred, gt, class_id, slack_px, metric, batch_index));
}

// ---------------------------------------------------------------------------
// dataset-level report
// ---------------------------------------------------------------------------

struct ClassReport {
    int class_id = 0;
    double iou = 0.0;
    bool iou_defined = false;
    std::vector<double> f;      // one entry per slack
    std::vector<bool> f_defined;
};

struct EvalReport {
    std::vector<int> slacks;
    double mean_iou = 0.0;
    std::vector<double> mean_f; // one entry per slack, over defined classes
    std::vector<ClassReport> per_class;
};

void write_report_json(const std::string& path, const EvalReport& report);
EvalReport read_report_json(const std::string& path);
void write_report_csv(const std::string& path, const EvalReport& report);

} // namespace dseg
