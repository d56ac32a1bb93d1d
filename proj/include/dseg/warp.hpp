// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Backward warping of a feature map by a per-pixel flow field with bilinear
// sampling, differentiable in both the feature values and the flow.

#pragma once

#include <algorithm>
#include <cmath>

#include "dseg/tensor.hpp"

namespace dseg {

// A flow field is an (N,2,H,W) tensor: channel 0 carries the x-offset,
// channel 1 the y-offset, both in pixels at the feature map's own resolution.

template <class T>
void check_flow_shape(const Tensor<T>& feature, const Tensor<T>& flow) {
    if (feature.rank() != 4 || flow.rank() != 4)
        throw ShapeError("bilinear_warp: feature and flow must be 4-d");
    if (flow.c() != 2)
        throw ShapeError("bilinear_warp: flow must have 2 channels, got " +
                         std::to_string(flow.c()));
    if (flow.n() != feature.n() || flow.h() != feature.h() || flow.w() != feature.w())
        throw ShapeError("bilinear_warp: flow " + shape_to_string(flow.shape) +
                         " does not match feature " + shape_to_string(feature.shape));
}

/// out[n,c,y,x] = bilinear sample of feature[n,c] at (x + dx, y + dy).
/// Source points outside the image are clamped to the border, which keeps the
/// op defined (and the output free of injected zeros) everywhere.
template <class T>
Tensor<T> bilinear_warp(const Tensor<T>& feature, const Tensor<T>& flow) {
    check_flow_shape(feature, flow);
    const int N = feature.n(), C = feature.c(), H = feature.h(), W = feature.w();
    Tensor<T> out(feature.shape);
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const T sx = static_cast<T>(x) + flow.at(n, 0, y, x);
                const T sy = static_cast<T>(y) + flow.at(n, 1, y, x);
                const T cx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
                const T cy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
                const int x0 = static_cast<int>(std::floor(cx));
                const int y0 = static_cast<int>(std::floor(cy));
                const T fx = cx - static_cast<T>(x0);
                const T fy = cy - static_cast<T>(y0);
                const int x1 = std::min(x0 + 1, W - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                for (int c = 0; c < C; ++c) {
                    const T v00 = feature.at(n, c, y0, x0), v01 = feature.at(n, c, y0, x1);
                    const T v10 = feature.at(n, c, y1, x0), v11 = feature.at(n, c, y1, x1);
                    const T top = v00 + fx * (v01 - v00);
                    const T bot = v10 + fx * (v11 - v10);
                    out.at(n, c, y, x) = top + fy * (bot - top);
                }
            }
        }
    }
    return out;
}

/// Accumulates grads into feature.grad (scatter of the bilinear weights) and
/// flow.grad (derivative of the sample w.r.t. the source coordinate). The
/// coordinate gradient is gated to zero where the source point was clamped;
/// exactly on the border the interior one-sided derivative is used.
template <class T>
void bilinear_warp_backward(Tensor<T>& feature, Tensor<T>& flow, const Tensor<T>& gout) {
    check_flow_shape(feature, flow);
    if (!gout.same_shape(feature))
        throw ShapeError("bilinear_warp_backward: upstream grad shape mismatch");
    const int N = feature.n(), C = feature.c(), H = feature.h(), W = feature.w();
    const bool gf = feature.has_grad();
    const bool gd = flow.has_grad();
    if (!gf && !gd) return;
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const T sx = static_cast<T>(x) + flow.at(n, 0, y, x);
                const T sy = static_cast<T>(y) + flow.at(n, 1, y, x);
                const T cx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
                const T cy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
                const int x0 = static_cast<int>(std::floor(cx));
                const int y0 = static_cast<int>(std::floor(cy));
                const T fx = cx - static_cast<T>(x0);
                const T fy = cy - static_cast<T>(y0);
                const int x1 = std::min(x0 + 1, W - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                const bool in_x = sx >= T(0) && sx <= static_cast<T>(W - 1);
                const bool in_y = sy >= T(0) && sy <= static_cast<T>(H - 1);
                T dsx = T(0), dsy = T(0);
                for (int c = 0; c < C; ++c) {
                    const T g = gout.at(n, c, y, x);
                    const T v00 = feature.at(n, c, y0, x0), v01 = feature.at(n, c, y0, x1);
                    const T v10 = feature.at(n, c, y1, x0), v11 = feature.at(n, c, y1, x1);
                    if (gf) {
                        feature.gat(n, c, y0, x0) += g * (T(1) - fy) * (T(1) - fx);
                        feature.gat(n, c, y0, x1) += g * (T(1) - fy) * fx;
                        feature.gat(n, c, y1, x0) += g * fy * (T(1) - fx);
                        feature.gat(n, c, y1, x1) += g * fy * fx;
                    }
                    if (gd) {
                        dsx += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                        dsy += g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                    }
                }
                if (gd) {
                    if (in_x) flow.gat(n, 0, y, x) += dsx;
                    if (in_y) flow.gat(n, 1, y, x) += dsy;
                }
            }
        }
    }
}

} // namespace dseg
