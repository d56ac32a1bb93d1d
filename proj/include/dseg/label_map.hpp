// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Integer class rasters and binary edge masks. 255 is the reserved ignore
// index, excluded from every loss and metric.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dseg/image_io.hpp"
#include "dseg/tensor.hpp"

namespace dseg {

inline constexpr std::uint8_t kIgnoreIndex = 255;

/// (N,H,W) class raster; values in [0, num_classes) or kIgnoreIndex.
struct LabelMap {
    int n = 0, h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelMap() = default;
    LabelMap(int n_, int h_, int w_, std::uint8_t fill = 0)
        : n(n_), h(h_), w(w_), v(static_cast<size_t>(n_) * h_ * w_, fill) {}

    std::uint8_t& at(int in, int iy, int ix) {
        return v[(static_cast<size_t>(in) * h + iy) * w + ix];
    }
    std::uint8_t at(int in, int iy, int ix) const {
        return v[(static_cast<size_t>(in) * h + iy) * w + ix];
    }

    void validate(int num_classes) const {
        if (v.size() != static_cast<size_t>(n) * h * w)
            throw ShapeError("label map buffer does not match dims");
        for (std::uint8_t cls : v)
            if (cls != kIgnoreIndex && cls >= num_classes)
                throw ShapeError("label map value " + std::to_string(cls) +
                                 " outside [0," + std::to_string(num_classes) + ") and not ignore");
    }
};

/// (N,1,H,W) binary raster stored flat; values are 0 or 1.
struct EdgeMask {
    int n = 0, h = 0, w = 0;
    std::vector<std::uint8_t> v;

    EdgeMask() = default;
    EdgeMask(int n_, int h_, int w_) : n(n_), h(h_), w(w_), v(static_cast<size_t>(n_) * h_ * w_, 0) {}

    std::uint8_t& at(int in, int iy, int ix) {
        return v[(static_cast<size_t>(in) * h + iy) * w + ix];
    }
    std::uint8_t at(int in, int iy, int ix) const {
        return v[(static_cast<size_t>(in) * h + iy) * w + ix];
    }
};

/// Nearest-neighbor resize of a label map (center-of-cell convention).
/// No interpolation ever touches class ids.
inline LabelMap nearest_resize(const LabelMap& in, int oh, int ow) {
    LabelMap out(in.n, oh, ow);
    const double sy = static_cast<double>(in.h) / oh;
    const double sx = static_cast<double>(in.w) / ow;
    for (int n = 0; n < in.n; ++n)
        for (int y = 0; y < oh; ++y) {
            int iy = static_cast<int>((y + 0.5) * sy);
            if (iy > in.h - 1) iy = in.h - 1;
            for (int x = 0; x < ow; ++x) {
                int ix = static_cast<int>((x + 0.5) * sx);
                if (ix > in.w - 1) ix = in.w - 1;
                out.at(n, y, x) = in.at(n, iy, ix);
            }
        }
    return out;
}

/// One batch entry to PGM, raw class ids as pixel values (255 = ignore).
inline void write_label_pgm(const std::string& path, const LabelMap& labels, int batch_index = 0) {
    GrayImage img;
    img.h = labels.h;
    img.w = labels.w;
    img.px.assign(labels.v.begin() + static_cast<size_t>(batch_index) * labels.h * labels.w,
                  labels.v.begin() + static_cast<size_t>(batch_index + 1) * labels.h * labels.w);
    write_pgm(path, img);
}

inline LabelMap read_label_pgm(const std::string& path) {
    GrayImage img = read_pgm(path);
    LabelMap lm(1, img.h, img.w);
    lm.v = std::move(img.px);
    return lm;
}

/// Edge masks serialize as {0,255} PGM so they are viewable directly.
inline void write_edge_pgm(const std::string& path, const EdgeMask& mask, int batch_index = 0) {
    GrayImage img;
    img.h = mask.h;
    img.w = mask.w;
    img.px.resize(static_cast<size_t>(mask.h) * mask.w);
    const size_t base = static_cast<size_t>(batch_index) * mask.h * mask.w;
    for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = mask.v[base + i] ? 255 : 0;
    write_pgm(path, img);
}

inline EdgeMask read_edge_pgm(const std::string& path) {
    GrayImage img = read_pgm(path);
    EdgeMask m(1, img.h, img.w);
    for (size_t i = 0; i < img.px.size(); ++i) m.v[i] = img.px[i] >= 128 ? 1 : 0;
    return m;
}

} // namespace dseg
