// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable CPU operators: conv2d (dense and depthwise), bilinear resize,
// channel concat, and elementwise math. Each op has an explicit backward that
// accumulates into the .grad buffers of its arguments when those are present.

#pragma once

#include <algorithm>
#include <cmath>

#include "dseg/tensor.hpp"

namespace dseg {

struct ConvSpec {
    int stride = 1;
    int padding = 0;
    bool depthwise = false;
};

namespace detail {

template <class T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     const ConvSpec& spec) {
    if (spec.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (spec.padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: input and weight must be 4-d");
    if (spec.depthwise) {
        if (w.dim(1) != 1 || w.dim(0) != x.dim(1))
            throw ShapeError("conv2d depthwise: weight must be (C,1,k,k) with C = input channels, got weight " +
                             shape_to_string(w.shape) + " for input " + shape_to_string(x.shape));
    } else {
        if (w.dim(1) != x.dim(1))
            throw ShapeError("conv2d: weight in-channels " + std::to_string(w.dim(1)) +
                             " != input channels " + std::to_string(x.dim(1)));
    }
    if (b.rank() != 1 || b.dim(0) != w.dim(0))
        throw ShapeError("conv2d: bias must be (C_out)");
    int kh = w.dim(2), kw = w.dim(3);
    if (x.h() + 2 * spec.padding < kh || x.w() + 2 * spec.padding < kw)
        throw ShapeError("conv2d: kernel larger than padded input");
}

/// First and last output index whose receptive tap (out*stride - pad + k_off)
/// stays inside [0, in_extent).
inline void conv_valid_out_range(int out_extent, int in_extent, int pad, int k_off, int stride,
                                 int& lo, int& hi) {
    int num = pad - k_off;
    lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    num = in_extent - 1 + pad - k_off;
    hi = num < 0 ? -1 : num / stride;
    if (hi > out_extent - 1) hi = out_extent - 1;
}

} // namespace detail

inline int conv_out_extent(int in, int pad, int k, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Cross-correlation. Weight layout (C_out, C_in, kh, kw); depthwise mode uses
/// (C, 1, kh, kw) with one filter per input channel.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const ConvSpec& spec) {
    detail::check_conv_args(x, w, b, spec);
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = conv_out_extent(H, spec.padding, kh, spec.stride);
    const int OW = conv_out_extent(W, spec.padding, kw, spec.stride);
    Tensor<T> out({N, Cout, OH, OW});

    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            T* op = &out.at(n, co, 0, 0);
            const T bias = b.data[static_cast<size_t>(co)];
            for (int i = 0; i < OH * OW; ++i) op[i] = bias;
            const int ci_begin = spec.depthwise ? co : 0;
            const int ci_end = spec.depthwise ? co + 1 : C;
            for (int ci = ci_begin; ci < ci_end; ++ci) {
                const T* wp = &w.at(co, spec.depthwise ? 0 : ci, 0, 0);
                const T* ip = &x.at(n, ci, 0, 0);
                for (int ky = 0; ky < kh; ++ky) {
                    int oy_lo, oy_hi;
                    detail::conv_valid_out_range(OH, H, spec.padding, ky, spec.stride, oy_lo, oy_hi);
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wp[ky * kw + kx];
                        if (wv == T(0)) continue;
                        int ox_lo, ox_hi;
                        detail::conv_valid_out_range(OW, W, spec.padding, kx, spec.stride, ox_lo, ox_hi);
                        const int shift = -spec.padding + kx;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * spec.stride - spec.padding + ky;
                            const T* irow = ip + static_cast<size_t>(iy) * W;
                            T* orow = op + static_cast<size_t>(oy) * OW;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                orow[ox] += wv * irow[ox * spec.stride + shift];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
void conv2d_backward(Tensor<T>& x, Tensor<T>& w, Tensor<T>& b, const ConvSpec& spec,
                     const Tensor<T>& gout) {
    detail::check_conv_args(x, w, b, spec);
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = conv_out_extent(H, spec.padding, kh, spec.stride);
    const int OW = conv_out_extent(W, spec.padding, kw, spec.stride);
    if (gout.shape != std::vector<int>{N, Cout, OH, OW})
        throw ShapeError("conv2d_backward: upstream grad shape " + shape_to_string(gout.shape) +
                         " does not match output " + shape_to_string({N, Cout, OH, OW}));

    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            const T* gp = &gout.at(n, co, 0, 0);
            if (b.has_grad()) {
                T acc = T(0);
                for (int i = 0; i < OH * OW; ++i) acc += gp[i];
                b.grad[static_cast<size_t>(co)] += acc;
            }
            const int ci_begin = spec.depthwise ? co : 0;
            const int ci_end = spec.depthwise ? co + 1 : C;
            for (int ci = ci_begin; ci < ci_end; ++ci) {
                const int wci = spec.depthwise ? 0 : ci;
                const T* ip = &x.at(n, ci, 0, 0);
                for (int ky = 0; ky < kh; ++ky) {
                    int oy_lo, oy_hi;
                    detail::conv_valid_out_range(OH, H, spec.padding, ky, spec.stride, oy_lo, oy_hi);
                    for (int kx = 0; kx < kw; ++kx) {
                        int ox_lo, ox_hi;
                        detail::conv_valid_out_range(OW, W, spec.padding, kx, spec.stride, ox_lo, ox_hi);
                        T wgrad_acc = T(0);
                        const T wv = w.at(co, wci, ky, kx);
                        T* gip = x.has_grad() ? &x.gat(n, ci, 0, 0) : nullptr;
                        const int shift = -spec.padding + kx;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * spec.stride - spec.padding + ky;
                            const T* irow = ip + static_cast<size_t>(iy) * W;
                            const T* grow = gp + static_cast<size_t>(oy) * OW;
                            T* girow = gip ? gip + static_cast<size_t>(iy) * W : nullptr;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                wgrad_acc += grow[ox] * irow[ox * spec.stride + shift];
                                if (girow) girow[ox * spec.stride + shift] += wv * grow[ox];
                            }
                        }
                        if (w.has_grad())
                            w.grad[((static_cast<size_t>(co) * w.dim(1) + wci) * kh + ky) * kw + kx] += wgrad_acc;
                    }
                }
            }
        }
    }
}

namespace detail {

/// Source coordinate for one destination index under the chosen corner policy.
inline double resize_src_coord(int dst, int in_extent, int out_extent, bool align_corners) {
    if (align_corners) {
        if (out_extent == 1) return 0.0;
        return static_cast<double>(dst) * (static_cast<double>(in_extent - 1) / (out_extent - 1));
    }
    double scale = static_cast<double>(in_extent) / out_extent;
    return (static_cast<double>(dst) + 0.5) * scale - 0.5;
}

} // namespace detail

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow, bool align_corners) {
    if (x.rank() != 4) throw ShapeError("bilinear_resize: input must be 4-d");
    if (oh < 1 || ow < 1) throw std::invalid_argument("bilinear_resize: output extent must be >= 1");
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    Tensor<T> out({N, C, oh, ow});
    for (int oy = 0; oy < oh; ++oy) {
        const double sy = detail::resize_src_coord(oy, H, oh, align_corners);
        const double cy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
        const int y0 = static_cast<int>(std::floor(cy));
        const T fy = static_cast<T>(cy - y0);
        const int y1 = std::min(y0 + 1, H - 1);
        for (int ox = 0; ox < ow; ++ox) {
            const double sx = detail::resize_src_coord(ox, W, ow, align_corners);
            const double cx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
            const int x0 = static_cast<int>(std::floor(cx));
            const T fx = static_cast<T>(cx - x0);
            const int x1 = std::min(x0 + 1, W - 1);
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    const T v00 = x.at(n, c, y0, x0), v01 = x.at(n, c, y0, x1);
                    const T v10 = x.at(n, c, y1, x0), v11 = x.at(n, c, y1, x1);
                    const T top = v00 + fx * (v01 - v00);
                    const T bot = v10 + fx * (v11 - v10);
                    out.at(n, c, oy, ox) = top + fy * (bot - top);
                }
            }
        }
    }
    return out;
}

template <class T>
void bilinear_resize_backward(Tensor<T>& x, bool align_corners, const Tensor<T>& gout) {
    if (!x.has_grad()) return;
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int oh = gout.h(), ow = gout.w();
    if (gout.n() != N || gout.c() != C)
        throw ShapeError("bilinear_resize_backward: batch/channel mismatch");
    for (int oy = 0; oy < oh; ++oy) {
        const double sy = detail::resize_src_coord(oy, H, oh, align_corners);
        const double cy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
        const int y0 = static_cast<int>(std::floor(cy));
        const T fy = static_cast<T>(cy - y0);
        const int y1 = std::min(y0 + 1, H - 1);
        for (int ox = 0; ox < ow; ++ox) {
            const double sx = detail::resize_src_coord(ox, W, ow, align_corners);
            const double cx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
            const int x0 = static_cast<int>(std::floor(cx));
            const T fx = static_cast<T>(cx - x0);
            const int x1 = std::min(x0 + 1, W - 1);
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    const T g = gout.at(n, c, oy, ox);
                    x.gat(n, c, y0, x0) += g * (T(1) - fy) * (T(1) - fx);
                    x.gat(n, c, y0, x1) += g * (T(1) - fy) * fx;
                    x.gat(n, c, y1, x0) += g * fy * (T(1) - fx);
                    x.gat(n, c, y1, x1) += g * fy * fx;
                }
            }
        }
    }
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 4 || b.rank() != 4)
        throw ShapeError("concat_channels: inputs must be 4-d");
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        throw ShapeError("concat_channels: batch/spatial mismatch between " +
                         shape_to_string(a.shape) + " and " + shape_to_string(b.shape));
    const int N = a.n(), Ca = a.c(), Cb = b.c(), H = a.h(), W = a.w();
    Tensor<T> out({N, Ca + Cb, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy_n(&a.at(n, 0, 0, 0), plane * Ca, &out.at(n, 0, 0, 0));
        std::copy_n(&b.at(n, 0, 0, 0), plane * Cb, &out.at(n, Ca, 0, 0));
    }
    return out;
}

template <class T>
void concat_channels_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& gout) {
    const int N = a.n(), Ca = a.c(), Cb = b.c(), H = a.h(), W = a.w();
    if (gout.c() != Ca + Cb || gout.n() != N || gout.h() != H || gout.w() != W)
        throw ShapeError("concat_channels_backward: upstream grad shape mismatch");
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        if (a.has_grad()) {
            const T* g = &gout.at(n, 0, 0, 0);
            T* ga = &a.gat(n, 0, 0, 0);
            for (size_t i = 0; i < plane * Ca; ++i) ga[i] += g[i];
        }
        if (b.has_grad()) {
            const T* g = &gout.at(n, Ca, 0, 0);
            T* gb = &b.gat(n, 0, 0, 0);
            for (size_t i = 0; i < plane * Cb; ++i) gb[i] += g[i];
        }
    }
}

// -- elementwise -------------------------------------------------------------

namespace detail {
template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape) +
                         " vs " + shape_to_string(b.shape));
}
} // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template <class T>
void add_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& gout) {
    if (a.has_grad())
        for (size_t i = 0; i < gout.data.size(); ++i) a.grad[i] += gout.data[i];
    if (b.has_grad())
        for (size_t i = 0; i < gout.data.size(); ++i) b.grad[i] += gout.data[i];
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
    return out;
}

template <class T>
void sub_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& gout) {
    if (a.has_grad())
        for (size_t i = 0; i < gout.data.size(); ++i) a.grad[i] += gout.data[i];
    if (b.has_grad())
        for (size_t i = 0; i < gout.data.size(); ++i) b.grad[i] -= gout.data[i];
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

template <class T>
void mul_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& gout) {
    if (a.has_grad())
        for (size_t i = 0; i < gout.data.size(); ++i) a.grad[i] += gout.data[i] * b.data[i];
    if (b.has_grad())
        for (size_t i = 0; i < gout.data.size(); ++i) b.grad[i] += gout.data[i] * a.data[i];
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return out;
}

template <class T>
void relu_backward(Tensor<T>& x, const Tensor<T>& gout) {
    if (!x.has_grad()) return;
    for (size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] > T(0)) x.grad[i] += gout.data[i];
}

template <class T>
T sigmoid_scalar(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = sigmoid_scalar(x.data[i]);
    return out;
}

/// Needs the forward output `y` (grad = y * (1 - y)).
template <class T>
void sigmoid_backward(Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gout) {
    if (!x.has_grad()) return;
    for (size_t i = 0; i < x.data.size(); ++i)
        x.grad[i] += gout.data[i] * y.data[i] * (T(1) - y.data[i]);
}

inline constexpr double kLogFloor = 1e-12;

/// log with the argument clamped below at `floor` so confident-wrong
/// cross-entropy terms stay finite.
template <class T>
Tensor<T> log_clamped(const Tensor<T>& x, double floor = kLogFloor) {
    Tensor<T> out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = std::log(std::max(x.data[i], static_cast<T>(floor)));
    return out;
}

template <class T>
void log_clamped_backward(Tensor<T>& x, const Tensor<T>& gout, double floor = kLogFloor) {
    if (!x.has_grad()) return;
    for (size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] >= static_cast<T>(floor)) x.grad[i] += gout.data[i] / x.data[i];
}

inline constexpr double kNormEps = 1e-5;

/// Per-image feature standardization with a per-channel affine:
/// y[c,i] = g[c] * (x[c,i] - mean) / sqrt(var + eps) + b[c], where the mean
/// and variance run over the image's whole C*H*W volume. Unlike per-channel
/// normalization this keeps relative channel levels (color information)
/// intact while still fixing the feature scale; statistics never cross
/// images, so results are batch-independent and identical between training and inference.
template <class T>
Tensor<T> feature_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    if (x.rank() != 4) throw ShapeError("feature_norm: input must be 4-d");
    if (gamma.rank() != 1 || gamma.dim(0) != x.c() || beta.rank() != 1 || beta.dim(0) != x.c())
        throw ShapeError("feature_norm: scale/shift must be (C)");
    const int N = x.n(), C = x.c();
    const size_t plane = static_cast<size_t>(x.h()) * x.w();
    const size_t vol = plane * static_cast<size_t>(C);
    Tensor<T> out(x.shape);
    for (int n = 0; n < N; ++n) {
        const T* xp = &x.at(n, 0, 0, 0);
        T* op = &out.at(n, 0, 0, 0);
        T mean = T(0);
        for (size_t i = 0; i < vol; ++i) mean += xp[i];
        mean /= static_cast<T>(vol);
        T var = T(0);
        for (size_t i = 0; i < vol; ++i) {
            const T d = xp[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(vol);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
        for (int c = 0; c < C; ++c) {
            const T g = gamma.data[static_cast<size_t>(c)];
            const T b = beta.data[static_cast<size_t>(c)];
            for (size_t i = 0; i < plane; ++i) {
                const size_t k = static_cast<size_t>(c) * plane + i;
                op[k] = g * ((xp[k] - mean) * inv) + b;
            }
        }
    }
    return out;
}

template <class T>
void feature_norm_backward(Tensor<T>& x, Tensor<T>& gamma, Tensor<T>& beta,
                           const Tensor<T>& gout) {
    const int N = x.n(), C = x.c();
    const size_t plane = static_cast<size_t>(x.h()) * x.w();
    const size_t vol = plane * static_cast<size_t>(C);
    if (!gout.same_shape(x)) throw ShapeError("feature_norm_backward: grad shape mismatch");
    for (int n = 0; n < N; ++n) {
        const T* xp = &x.at(n, 0, 0, 0);
        const T* gp = &gout.at(n, 0, 0, 0);
        T mean = T(0);
        for (size_t i = 0; i < vol; ++i) mean += xp[i];
        mean /= static_cast<T>(vol);
        T var = T(0);
        for (size_t i = 0; i < vol; ++i) {
            const T d = xp[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(vol);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
        // upstream grads through the per-channel affine, then the shared
        // whole-volume standardization
        T sum_gh = T(0), sum_ghx = T(0);
        for (int c = 0; c < C; ++c) {
            const T g = gamma.data[static_cast<size_t>(c)];
            T dg = T(0), db = T(0);
            for (size_t i = 0; i < plane; ++i) {
                const size_t k = static_cast<size_t>(c) * plane + i;
                const T xhat = (xp[k] - mean) * inv;
                dg += gp[k] * xhat;
                db += gp[k];
                sum_gh += g * gp[k];
                sum_ghx += g * gp[k] * xhat;
            }
            if (gamma.has_grad()) gamma.grad[static_cast<size_t>(c)] += dg;
            if (beta.has_grad()) beta.grad[static_cast<size_t>(c)] += db;
        }
        if (x.has_grad()) {
            const T mgh = sum_gh / static_cast<T>(vol);
            const T mghx = sum_ghx / static_cast<T>(vol);
            T* xg = &x.gat(n, 0, 0, 0);
            for (int c = 0; c < C; ++c) {
                const T g = gamma.data[static_cast<size_t>(c)];
                for (size_t i = 0; i < plane; ++i) {
                    const size_t k = static_cast<size_t>(c) * plane + i;
                    const T xhat = (xp[k] - mean) * inv;
                    xg[k] += inv * (g * gp[k] - mgh - xhat * mghx);
                }
            }
        }
    }
}

/// Per-pixel softmax over the channel axis of an (N,C,H,W) tensor.
template <class T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("softmax_channel: input must be 4-d");
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    Tensor<T> out(x.shape);
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        const T* xp = &x.at(n, 0, 0, 0);
        T* op = &out.at(n, 0, 0, 0);
        for (size_t i = 0; i < plane; ++i) {
            T m = xp[i];
            for (int c = 1; c < C; ++c) m = std::max(m, xp[c * plane + i]);
            T denom = T(0);
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(xp[c * plane + i] - m);
                op[c * plane + i] = e;
                denom += e;
            }
            for (int c = 0; c < C; ++c) op[c * plane + i] = op[c * plane + i] / denom;
        }
    }
    return out;
}

/// Needs the forward output `y`.
template <class T>
void softmax_channel_backward(Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gout) {
    if (!x.has_grad()) return;
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        const T* yp = &y.at(n, 0, 0, 0);
        const T* gp = &gout.at(n, 0, 0, 0);
        T* gx = &x.gat(n, 0, 0, 0);
        for (size_t i = 0; i < plane; ++i) {
            T dot = T(0);
            for (int c = 0; c < C; ++c) dot += gp[c * plane + i] * yp[c * plane + i];
            for (int c = 0; c < C; ++c)
                gx[c * plane + i] += yp[c * plane + i] * (gp[c * plane + i] - dot);
        }
    }
}

} // namespace dseg
