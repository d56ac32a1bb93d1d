// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural scenes: flat-colored shapes over a background, exact pixel
// labels, then boundary blur and texture noise on the image only. The hard
// pixels end up concentrated along shape boundaries, which is exactly where
// the decoupled supervision is supposed to help.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dseg/label_map.hpp"
#include "dseg/tensor.hpp"

namespace dseg {

struct SceneSpec {
    std::uint64_t seed = 0;
    int height = 64, width = 64;   // multiples of 4
    int num_classes = 5;           // background + shape classes
    int min_shapes = 2, max_shapes = 6;
    double noise_sigma = 0.10;     // Gaussian texture noise, per channel
    int blur_radius = 1;           // box blur half-width applied to the image
    double thin_bar_prob = 0.30;   // chance a shape is a 1-3 px bar
    double big_shape_prob = 0.0;   // chance a shape spans most of the canvas
    double color_scale = 1.0;      // shrink class colors toward mid-gray

    void validate() const {
        if (height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0)
            throw std::invalid_argument("scene spec: canvas dims must be multiples of 4 and >= 8");
        if (num_classes < 2 || num_classes > 32)
            throw std::invalid_argument("scene spec: class count out of range");
        if (min_shapes < 0 || max_shapes < min_shapes)
            throw std::invalid_argument("scene spec: bad shape count range");
        if (noise_sigma < 0.0) throw std::invalid_argument("scene spec: negative noise");
        if (blur_radius < 0) throw std::invalid_argument("scene spec: negative blur radius");
        if (thin_bar_prob < 0.0 || thin_bar_prob > 1.0)
            throw std::invalid_argument("scene spec: bar probability out of range");
        if (big_shape_prob < 0.0 || big_shape_prob > 1.0)
            throw std::invalid_argument("scene spec: big-shape probability out of range");
        if (color_scale <= 0.0 || color_scale > 1.0)
            throw std::invalid_argument("scene spec: color scale out of range");
    }
};

struct Scene {
    TensorF image;   // (3,H,W), values in [0,1]
    LabelMap labels; // (1,H,W), exact
};

/// Base color of a class, stable across the project (also used to colorize
/// predictions).
void class_color(int class_id, float rgb[3]);

Scene generate_scene(const SceneSpec& spec);

struct DatasetSample {
    std::string id;
    std::string image_path; // relative to the dataset dir
    std::string label_path;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    SceneSpec spec;
    std::vector<DatasetSample> train;
    std::vector<DatasetSample> val;
};

/// Writes images/*.dsk1 + labels/*.pgm + manifest.json. Scene i draws from
/// its own stream derived from (spec.seed, i); val indices continue after the
/// train ones so the two splits never share a stream.
DatasetManifest generate_dataset(int n_train, int n_val, const SceneSpec& spec,
                                 const std::string& out_dir);

DatasetManifest read_manifest(const std::string& dataset_dir);

/// In-memory split, eagerly loaded.
struct LoadedDataset {
    std::vector<TensorF> images;  // (3,H,W) each
    std::vector<LabelMap> labels; // (1,H,W) each
};

LoadedDataset load_split(const std::string& dataset_dir, const std::vector<DatasetSample>& split);

} // namespace dseg
