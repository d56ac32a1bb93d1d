// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit raster containers and binary PGM (P5) / PPM (P6) I/O, plus the
// color-wheel rendering of flow fields.

#pragma once

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dseg/tensor.hpp"

namespace dseg {

struct GrayImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px; // h*w

    std::uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
};

struct RgbImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px; // h*w*3, interleaved

    std::uint8_t* at(int y, int x) { return &px[(static_cast<size_t>(y) * w + x) * 3]; }
    const std::uint8_t* at(int y, int x) const { return &px[(static_cast<size_t>(y) * w + x) * 3]; }
};

void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);
void write_ppm(const std::string& path, const RgbImage& img);
RgbImage read_ppm(const std::string& path);

/// HSV (h in degrees) to RGB bytes.
void hsv_to_rgb(double hue_deg, double sat, double val, std::uint8_t out[3]);

/// Renders one batch entry of an (N,2,H,W) flow field with the conventional
/// optical-flow color wheel: hue = direction, saturation = magnitude scaled by
/// the per-image maximum, full value. Zero flow comes out white.
template <class T>
RgbImage flow_to_raster(const Tensor<T>& flow, int batch_index = 0) {
    if (flow.rank() != 4 || flow.c() != 2)
        throw ShapeError("flow_to_raster: expected an (N,2,H,W) flow field");
    const int H = flow.h(), W = flow.w();
    RgbImage img;
    img.h = H;
    img.w = W;
    img.px.assign(static_cast<size_t>(H) * W * 3, 255);
    double max_mag = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double dx = flow.at(batch_index, 0, y, x);
            const double dy = flow.at(batch_index, 1, y, x);
            max_mag = std::max(max_mag, std::sqrt(dx * dx + dy * dy));
        }
    if (max_mag <= 0.0) return img; // uniform neutral raster
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double dx = flow.at(batch_index, 0, y, x);
            const double dy = flow.at(batch_index, 1, y, x);
            const double mag = std::sqrt(dx * dx + dy * dy);
            double hue = std::atan2(dy, dx) * 180.0 / 3.14159265358979323846;
            if (hue < 0.0) hue += 360.0;
            hsv_to_rgb(hue, mag / max_mag, 1.0, img.at(y, x));
        }
    return img;
}

} // namespace dseg
