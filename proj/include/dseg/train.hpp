// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// SGD training with momentum and the poly learning-rate schedule, whole-image
// evaluation, and checkpoint I/O. Everything here is deterministic given the
// config: two runs with the same seed write byte-identical logs.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dseg/loss.hpp"
#include "dseg/metrics.hpp"
#include "dseg/model.hpp"
#include "dseg/synth.hpp"

namespace dseg {

struct TrainConfig {
    int epochs = 24;
    int batch_size = 8;
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double poly_power = 0.9;
    std::uint64_t seed = 1;
    RunMode mode = RunMode::decoupled;
    ModelDims dims;
    LossConfig loss;
    int threads = 0;             // 0 = min(batch size, hardware)
    double grad_clip_norm = 10.0; // global L2 clip; 0 disables

    // Decoupled training warm-starts from a plain backbone + final head: the
    // first warmup_epochs train exactly the baseline path (own poly
    // schedule), then the full framework trains for the remaining epochs.
    // -1 picks epochs/2. Baseline mode trains the plain path throughout.
    int warmup_epochs = -1;

    // Backbone learning-rate multiplier during the framework phase. The
    // boundary BCE carries a 25x weight; letting it keep reshaping a small
    // warm backbone crowds out the segmentation features, so the framework
    // phase trains the decoupled modules on top of the frozen base.
    double backbone_lr_scale = 0.0;

    // Offset-predicting convs see coordinate gradients scaled by the feature
    // magnitudes, which dwarfs every other layer's gradient; they get the
    // customary reduced rate.
    double flow_lr_scale = 0.1;

    // Compute losses on logits bilinearly upsampled to label resolution
    // (exact labels) instead of against nearest-downsampled labels.
    bool loss_at_full_res = false;

    int resolved_warmup() const {
        if (mode == RunMode::baseline) return 0;
        return warmup_epochs < 0 ? epochs / 2 : warmup_epochs;
    }

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train config: epochs and batch size must be positive");
        if (base_lr <= 0.0 || poly_power <= 0.0) throw std::invalid_argument("train config: lr and poly power must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train config: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("train config: negative weight decay");
        if (resolved_warmup() >= epochs)
            throw std::invalid_argument("train config: warmup epochs must leave room for the main phase");
        dims.validate();
        loss.validate();
    }
};

/// lr multiplier (1 - iter/total)^power applied to the base rate each step.
inline double poly_lr(double base_lr, std::int64_t iter, std::int64_t total_iters, double power) {
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total_iters);
    return base_lr * std::pow(frac, power);
}

struct EpochLog {
    int epoch = 0;
    double lr = 0.0; // rate used by the epoch's last step
    LossBreakdown mean;
    double val_miou = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::string checkpoint_dir;
    std::string log_path;
};

TrainConfig train_config_from_json(const std::string& path);
void train_config_to_json(const TrainConfig& cfg, const std::string& path);

/// Runs the full loop, writes train_log.csv, config.json and checkpoint/
/// under out_dir. Non-finite losses abort with a diagnostic dump.
TrainResult train_model(const TrainConfig& cfg, const std::string& dataset_dir,
                        const std::string& out_dir);

/// Whole-image evaluation: logits are bilinearly upsampled to label
/// resolution, argmaxed, then scored. Boundary counts accumulate over the
/// dataset before P/R/F are formed.
EvalReport evaluate_model(Model<float>& model, const LoadedDataset& data,
                          const std::vector<int>& slacks,
                          SlackMetric metric = SlackMetric::euclidean);

void save_checkpoint(Model<float>& model, const TrainConfig& cfg, const std::string& dir);
Model<float> load_checkpoint(const std::string& dir, TrainConfig* cfg_out = nullptr);

/// Forward one (3,H,W) image and argmax the upsampled final logits.
LabelMap predict_labels(Model<float>& model, const TensorF& image);

} // namespace dseg
