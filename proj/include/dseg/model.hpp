// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// The segmentation model: a small strided backbone, the flow-based body
// generation module, the residual edge preservation module, and the three
// 1x1 prediction heads. Forward passes record every intermediate in a trace;
// backward walks the trace in reverse and accumulates parameter gradients.

#pragma once

#include <string>
#include <vector>

#include "dseg/ops.hpp"
#include "dseg/rng.hpp"
#include "dseg/tensor.hpp"
#include "dseg/warp.hpp"

namespace dseg {

enum class RunMode { baseline, decoupled };

inline const char* run_mode_name(RunMode m) {
    return m == RunMode::baseline ? "baseline" : "decoupled";
}

struct ModelDims {
    int classes = 5;
    int feat_channels = 16;      // C: width of the decoupled feature map
    int fine_channels = 8;       // width of the low-level (stride-2) features
    int fine_proj_channels = 4;  // low-level width after the 1x1 projection
    int encoder_depth = 2;       // strided depthwise convs in body generation (1..4)
    bool use_fine = true;        // feed low-level features into edge preservation

    void validate() const {
        if (classes < 2) throw std::invalid_argument("model dims: need >= 2 classes");
        if (feat_channels < 1 || fine_channels < 1 || fine_proj_channels < 1)
            throw std::invalid_argument("model dims: channel counts must be positive");
        if (encoder_depth < 1 || encoder_depth > 4)
            throw std::invalid_argument("model dims: encoder depth must be in [1,4]");
    }
};

template <class T>
struct ConvLayer {
    Tensor<T> w, b;
    ConvSpec spec;

    void init(int c_out, int c_in, int k, const ConvSpec& s, Rng& rng) {
        spec = s;
        const int c_in_per_group = spec.depthwise ? 1 : c_in;
        w = Tensor<T>({c_out, c_in_per_group, k, k});
        b = Tensor<T>({c_out});
        // Kaiming-uniform, fan-in mode
        const double bound = std::sqrt(6.0 / (static_cast<double>(c_in_per_group) * k * k));
        for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, spec); }

    void backward(Tensor<T>& x, const Tensor<T>& gout) {
        conv2d_backward(x, w, b, spec, gout);
    }
};

template <class T>
struct BodyGenParams {
    std::vector<ConvLayer<T>> encoder; // depthwise 3x3, stride 2 each
    ConvLayer<T> flow_conv;            // 3x3, 2C -> 2

    int total_stride() const { return 1 << static_cast<int>(encoder.size()); }
};

template <class T>
struct EdgePreserveParams {
    ConvLayer<T> fine_proj; // 1x1, fine -> fine_proj
    ConvLayer<T> fuse;      // 1x1, C (+ fine_proj) -> C
    bool use_fine = true;
};

template <class T>
struct Heads {
    ConvLayer<T> body, final_pred, edge; // all 1x1
};

// ---------------------------------------------------------------------------
// body generation
// ---------------------------------------------------------------------------

template <class T>
struct BodyGenTrace {
    std::vector<Tensor<T>> enc; // encoder pyramid, enc.back() is the coarsest
    Tensor<T> up;               // coarsest level resized back to full extent
    Tensor<T> cat;              // concat(f, up)
    Tensor<T> flow_raw;         // conv output before range squashing
    Tensor<T> flow;             // (N,2,H,W), offsets in pixels
    Tensor<T> f_body;
};

/// Offsets are squashed to (-range, range) with a tanh. An unbounded flow can
/// ratchet past the border clamp where its gradient dies and never returns;
/// the squash keeps every offset recoverable while leaving small offsets
/// (and the zero-init identity) untouched.
template <class T>
T flow_range_of(const Tensor<T>& f) {
    return static_cast<T>(std::min(f.h(), f.w())) / T(2);
}

/// Compress f to a coarse map, predict a flow field from (f || upsampled
/// coarse), then warp f along that flow.
template <class T>
void body_generate(const Tensor<T>& f, const BodyGenParams<T>& params, BodyGenTrace<T>& tr,
                   bool with_grad) {
    const int stride = params.total_stride();
    if (f.h() % stride != 0 || f.w() % stride != 0)
        throw ShapeError("body_generate: spatial dims " + shape_to_string(f.shape) +
                         " not divisible by encoder stride " + std::to_string(stride));
    tr.enc.clear();
    const Tensor<T>* cur = &f;
    for (const auto& layer : params.encoder) {
        tr.enc.push_back(layer.forward(*cur));
        cur = &tr.enc.back();
    }
    tr.up = bilinear_resize(*cur, f.h(), f.w(), /*align_corners=*/false);
    tr.cat = concat_channels(f, tr.up);
    tr.flow_raw = params.flow_conv.forward(tr.cat);
    const T range = flow_range_of(f);
    tr.flow = Tensor<T>(tr.flow_raw.shape);
    for (size_t i = 0; i < tr.flow.data.size(); ++i)
        tr.flow.data[i] = range * std::tanh(tr.flow_raw.data[i] / range);
    tr.f_body = bilinear_warp(f, tr.flow);
    if (with_grad) {
        for (auto& e : tr.enc) e.require_grad();
        tr.up.require_grad();
        tr.cat.require_grad();
        tr.flow_raw.require_grad();
        tr.flow.require_grad();
        tr.f_body.require_grad();
    }
}

/// Consumes tr.f_body.grad (plus any grad already accumulated on tr.flow) and
/// accumulates into f.grad and the parameter grads.
template <class T>
void body_generate_backward(Tensor<T>& f, BodyGenParams<T>& params, BodyGenTrace<T>& tr) {
    bilinear_warp_backward(f, tr.flow, Tensor<T>::from(tr.f_body.shape, tr.f_body.grad));
    const T range = flow_range_of(f);
    for (size_t i = 0; i < tr.flow.data.size(); ++i) {
        const T th = tr.flow.data[i] / range; // tanh(raw/range)
        tr.flow_raw.grad[i] += tr.flow.grad[i] * (T(1) - th * th);
    }
    params.flow_conv.backward(tr.cat, Tensor<T>::from(tr.flow_raw.shape, tr.flow_raw.grad));
    {
        Tensor<T> gcat = Tensor<T>::from(tr.cat.shape, tr.cat.grad);
        concat_channels_backward(f, tr.up, gcat);
    }
    Tensor<T>* coarse = tr.enc.empty() ? &f : &tr.enc.back();
    bilinear_resize_backward(*coarse, /*align_corners=*/false,
                             Tensor<T>::from(tr.up.shape, tr.up.grad));
    for (int i = static_cast<int>(params.encoder.size()) - 1; i >= 0; --i) {
        Tensor<T>& in = i == 0 ? f : tr.enc[static_cast<size_t>(i - 1)];
        params.encoder[static_cast<size_t>(i)].backward(
            in, Tensor<T>::from(tr.enc[static_cast<size_t>(i)].shape,
                                tr.enc[static_cast<size_t>(i)].grad));
    }
}

// ---------------------------------------------------------------------------
// edge preservation
// ---------------------------------------------------------------------------

template <class T>
struct EdgePreserveTrace {
    Tensor<T> resid;   // f - f_body
    Tensor<T> fine_pj; // projected low-level features (when enabled)
    Tensor<T> cat;     // fuse input
    Tensor<T> f_edge;
};

/// f_edge = fuse((f - f_body) || proj(f_fine)). The caller must hand in
/// f_fine already resized to f's extent; without fine features only the
/// residual is fused.
template <class T>
void edge_preserve(const Tensor<T>& f, const Tensor<T>& f_body, const Tensor<T>* f_fine,
                   const EdgePreserveParams<T>& params, EdgePreserveTrace<T>& tr,
                   bool with_grad) {
    tr.resid = sub(f, f_body);
    if (params.use_fine) {
        if (f_fine == nullptr)
            throw ShapeError("edge_preserve: fine features required but not provided");
        if (f_fine->h() != f.h() || f_fine->w() != f.w())
            throw ShapeError("edge_preserve: fine features must be resized to the feature extent first");
        tr.fine_pj = params.fine_proj.forward(*f_fine);
        tr.cat = concat_channels(tr.resid, tr.fine_pj);
        tr.f_edge = params.fuse.forward(tr.cat);
    } else {
        tr.f_edge = params.fuse.forward(tr.resid);
    }
    if (with_grad) {
        tr.resid.require_grad();
        if (params.use_fine) {
            tr.fine_pj.require_grad();
            tr.cat.require_grad();
        }
        tr.f_edge.require_grad();
    }
}

template <class T>
void edge_preserve_backward(Tensor<T>& f, Tensor<T>& f_body, Tensor<T>* f_fine,
                            EdgePreserveParams<T>& params, EdgePreserveTrace<T>& tr) {
    Tensor<T> gedge = Tensor<T>::from(tr.f_edge.shape, tr.f_edge.grad);
    if (params.use_fine) {
        params.fuse.backward(tr.cat, gedge);
        {
            Tensor<T> gcat = Tensor<T>::from(tr.cat.shape, tr.cat.grad);
            concat_channels_backward(tr.resid, tr.fine_pj, gcat);
        }
        params.fine_proj.backward(*f_fine, Tensor<T>::from(tr.fine_pj.shape, tr.fine_pj.grad));
    } else {
        params.fuse.backward(tr.resid, gedge);
    }
    sub_backward(f, f_body, Tensor<T>::from(tr.resid.shape, tr.resid.grad));
}

// ---------------------------------------------------------------------------
// full decoupled head
// ---------------------------------------------------------------------------

template <class T>
struct DecoupleTrace {
    BodyGenTrace<T> bg;
    EdgePreserveTrace<T> ep;
    Tensor<T> fine_rs; // low-level features resized to f's extent
    Tensor<T> f_hat;
    Tensor<T> s_body, s_final, b_logit;
};

/// Views over the trace matching the decoupled head's outputs.
template <class T>
struct DecoupleOutput {
    const Tensor<T>* f_body = nullptr;
    const Tensor<T>* f_edge = nullptr;
    const Tensor<T>* f_hat = nullptr;
    const Tensor<T>* flow = nullptr;
    const Tensor<T>* s_body = nullptr;
    const Tensor<T>* s_final = nullptr;
    const Tensor<T>* b_logit = nullptr;
};

/// The merged representation must be the exact sum of its parts. This is
/// checked on every forward pass; a violation (including any NaN) is a
/// numeric error, never silently accepted.
template <class T>
void check_additive_merge(const Tensor<T>& f_hat, const Tensor<T>& f_body,
                          const Tensor<T>& f_edge) {
    for (size_t i = 0; i < f_hat.data.size(); ++i) {
        const T sum = f_body.data[i] + f_edge.data[i];
        if (!(f_hat.data[i] == sum))
            throw NumericError("additive merge violated at flat index " + std::to_string(i));
    }
}

template <class T>
void decouple_forward(const Tensor<T>& f, const Tensor<T>& f_fine, BodyGenParams<T>& bg,
                      EdgePreserveParams<T>& ep, Heads<T>& heads, DecoupleTrace<T>& tr,
                      bool with_grad) {
    body_generate(f, bg, tr.bg, with_grad);
    const Tensor<T>* fine_ptr = nullptr;
    if (ep.use_fine) {
        tr.fine_rs = bilinear_resize(f_fine, f.h(), f.w(), /*align_corners=*/false);
        if (with_grad) tr.fine_rs.require_grad();
        fine_ptr = &tr.fine_rs;
    }
    edge_preserve(f, tr.bg.f_body, fine_ptr, ep, tr.ep, with_grad);
    tr.f_hat = add(tr.bg.f_body, tr.ep.f_edge);
    check_additive_merge(tr.f_hat, tr.bg.f_body, tr.ep.f_edge);
    tr.s_body = heads.body.forward(tr.bg.f_body);
    tr.s_final = heads.final_pred.forward(tr.f_hat);
    tr.b_logit = heads.edge.forward(tr.ep.f_edge);
    if (with_grad) {
        tr.f_hat.require_grad();
        tr.s_body.require_grad();
        tr.s_final.require_grad();
        tr.b_logit.require_grad();
    }
}

/// Consumes the grads of s_body / s_final / b_logit; accumulates into f.grad,
/// f_fine.grad and all head parameters.
template <class T>
void decouple_backward(Tensor<T>& f, Tensor<T>& f_fine, BodyGenParams<T>& bg,
                       EdgePreserveParams<T>& ep, Heads<T>& heads, DecoupleTrace<T>& tr) {
    heads.body.backward(tr.bg.f_body, Tensor<T>::from(tr.s_body.shape, tr.s_body.grad));
    heads.final_pred.backward(tr.f_hat, Tensor<T>::from(tr.s_final.shape, tr.s_final.grad));
    heads.edge.backward(tr.ep.f_edge, Tensor<T>::from(tr.b_logit.shape, tr.b_logit.grad));
    {
        Tensor<T> ghat = Tensor<T>::from(tr.f_hat.shape, tr.f_hat.grad);
        add_backward(tr.bg.f_body, tr.ep.f_edge, ghat);
    }
    Tensor<T>* fine_ptr = ep.use_fine ? &tr.fine_rs : nullptr;
    edge_preserve_backward(f, tr.bg.f_body, fine_ptr, ep, tr.ep);
    if (ep.use_fine)
        bilinear_resize_backward(f_fine, /*align_corners=*/false,
                                 Tensor<T>::from(tr.fine_rs.shape, tr.fine_rs.grad));
    body_generate_backward(f, bg, tr.bg);
}

template <class T>
DecoupleOutput<T> decouple_output(const DecoupleTrace<T>& tr) {
    DecoupleOutput<T> out;
    out.f_body = &tr.bg.f_body;
    out.f_edge = &tr.ep.f_edge;
    out.f_hat = &tr.f_hat;
    out.flow = &tr.bg.flow;
    out.s_body = &tr.s_body;
    out.s_final = &tr.s_final;
    out.b_logit = &tr.b_logit;
    return out;
}

// ---------------------------------------------------------------------------
// toy backbone
// ---------------------------------------------------------------------------

/// Learned per-channel scale and shift for instance normalization.
template <class T>
struct NormLayer {
    Tensor<T> gamma, beta;

    void init(int c) {
        gamma = Tensor<T>::full({c}, T(1));
        beta = Tensor<T>({c});
    }

    Tensor<T> forward(const Tensor<T>& x) const { return feature_norm(x, gamma, beta); }

    void backward(Tensor<T>& x, const Tensor<T>& gout) {
        feature_norm_backward(x, gamma, beta, gout);
    }
};

/// conv -> instance norm -> relu; the norm is what keeps a small toy net
/// trainable at segmentation learning rates, standing in for the batch norm
/// a real host backbone would carry.
template <class T>
struct Backbone {
    ConvLayer<T> stem;           // 3 -> fine, stride 1
    ConvLayer<T> s1a, s1b;       // stride 2 then 1, fine -> fine
    ConvLayer<T> s2a, s2b, s2c;  // stride 2 then 1, 1: fine -> feat
    NormLayer<T> stem_n, s1a_n, s1b_n, s2a_n, s2b_n, s2c_n;
};

template <class T>
struct BackboneStageTrace {
    Tensor<T> z;  // conv output
    Tensor<T> nz; // normalized
    Tensor<T> a;  // activated
};

template <class T>
struct BackboneTrace {
    BackboneStageTrace<T> stem, s1a, s1b, s2a, s2b, s2c;
    Tensor<T>& f_fine() { return s1b.a; }
    Tensor<T>& f() { return s2c.a; }
};

namespace detail {

template <class T>
void backbone_stage_forward(const ConvLayer<T>& conv, const NormLayer<T>& norm,
                            const Tensor<T>& in, BackboneStageTrace<T>& tr, bool with_grad) {
    tr.z = conv.forward(in);
    tr.nz = norm.forward(tr.z);
    tr.a = relu(tr.nz);
    if (with_grad) {
        tr.z.require_grad();
        tr.nz.require_grad();
        tr.a.require_grad();
    }
}

template <class T>
void backbone_stage_backward(ConvLayer<T>& conv, NormLayer<T>& norm, Tensor<T>& in,
                             BackboneStageTrace<T>& tr) {
    relu_backward(tr.nz, Tensor<T>::from(tr.a.shape, tr.a.grad));
    norm.backward(tr.z, Tensor<T>::from(tr.nz.shape, tr.nz.grad));
    conv.backward(in, Tensor<T>::from(tr.z.shape, tr.z.grad));
}

} // namespace detail

/// (N,3,H,W) -> features at H/4 plus a fine tap at H/2.
template <class T>
void backbone_forward(const Backbone<T>& net, const Tensor<T>& image, BackboneTrace<T>& tr,
                      bool with_grad) {
    if (image.rank() != 4 || image.c() != 3)
        throw ShapeError("backbone: expected an (N,3,H,W) image");
    if (image.h() % 4 != 0 || image.w() % 4 != 0)
        throw ShapeError("backbone: spatial dims must be divisible by 4");
    detail::backbone_stage_forward(net.stem, net.stem_n, image, tr.stem, with_grad);
    detail::backbone_stage_forward(net.s1a, net.s1a_n, tr.stem.a, tr.s1a, with_grad);
    detail::backbone_stage_forward(net.s1b, net.s1b_n, tr.s1a.a, tr.s1b, with_grad);
    detail::backbone_stage_forward(net.s2a, net.s2a_n, tr.s1b.a, tr.s2a, with_grad);
    detail::backbone_stage_forward(net.s2b, net.s2b_n, tr.s2a.a, tr.s2b, with_grad);
    detail::backbone_stage_forward(net.s2c, net.s2c_n, tr.s2b.a, tr.s2c, with_grad);
}

/// Consumes grads on f() and f_fine().
template <class T>
void backbone_backward(Backbone<T>& net, Tensor<T>& image, BackboneTrace<T>& tr) {
    detail::backbone_stage_backward(net.s2c, net.s2c_n, tr.s2b.a, tr.s2c);
    detail::backbone_stage_backward(net.s2b, net.s2b_n, tr.s2a.a, tr.s2b);
    detail::backbone_stage_backward(net.s2a, net.s2a_n, tr.s1b.a, tr.s2a);
    detail::backbone_stage_backward(net.s1b, net.s1b_n, tr.s1a.a, tr.s1b);
    detail::backbone_stage_backward(net.s1a, net.s1a_n, tr.stem.a, tr.s1a);
    detail::backbone_stage_backward(net.stem, net.stem_n, image, tr.stem);
}

// ---------------------------------------------------------------------------
// model = backbone + decoupled head (or a bare final head in baseline mode)
// ---------------------------------------------------------------------------

template <class T>
struct Model {
    ModelDims dims;
    RunMode mode = RunMode::decoupled;
    Backbone<T> backbone;
    BodyGenParams<T> bg;
    EdgePreserveParams<T> ep;
    Heads<T> heads;

    void init(const ModelDims& d, RunMode m, std::uint64_t seed) {
        d.validate();
        dims = d;
        mode = m;
        Rng rng(derive_seed(seed, 0x5eedu));
        const ConvSpec s1{1, 1, false}, s2{2, 1, false};
        const ConvSpec dw2{2, 1, true};
        const ConvSpec one{1, 0, false};
        backbone.stem.init(d.fine_channels, 3, 3, s1, rng);
        backbone.s1a.init(d.fine_channels, d.fine_channels, 3, s2, rng);
        backbone.s1b.init(d.fine_channels, d.fine_channels, 3, s1, rng);
        backbone.s2a.init(d.feat_channels, d.fine_channels, 3, s2, rng);
        backbone.s2b.init(d.feat_channels, d.feat_channels, 3, s1, rng);
        backbone.s2c.init(d.feat_channels, d.feat_channels, 3, s1, rng);
        backbone.stem_n.init(d.fine_channels);
        backbone.s1a_n.init(d.fine_channels);
        backbone.s1b_n.init(d.fine_channels);
        backbone.s2a_n.init(d.feat_channels);
        backbone.s2b_n.init(d.feat_channels);
        backbone.s2c_n.init(d.feat_channels);
        if (mode == RunMode::decoupled) {
            bg.encoder.resize(static_cast<size_t>(d.encoder_depth));
            for (auto& layer : bg.encoder) layer.init(d.feat_channels, d.feat_channels, 3, dw2, rng);
            bg.flow_conv.init(2, 2 * d.feat_channels, 3, s1, rng);
            // offset-predicting convs start at zero: warping begins as the
            // identity and the flow only grows where it pays off
            std::fill(bg.flow_conv.w.data.begin(), bg.flow_conv.w.data.end(), T(0));
            ep.use_fine = d.use_fine;
            if (d.use_fine) {
                ep.fine_proj.init(d.fine_proj_channels, d.fine_channels, 1, one, rng);
                ep.fuse.init(d.feat_channels, d.feat_channels + d.fine_proj_channels, 1, one, rng);
            } else {
                ep.fuse.init(d.feat_channels, d.feat_channels, 1, one, rng);
            }
            // the fuse conv writes the new branch into the merged feature;
            // starting it at zero grafts the edge path as a no-op so a
            // warm-started backbone is not disturbed at the phase switch
            std::fill(ep.fuse.w.data.begin(), ep.fuse.w.data.end(), T(0));
            heads.body.init(d.classes, d.feat_channels, 1, one, rng);
            heads.edge.init(1, d.feat_channels, 1, one, rng);
        }
        heads.final_pred.init(d.classes, d.feat_channels, 1, one, rng);
    }

    /// Deterministic enumeration of every (path, tensor) pair. Backbone conv
    /// biases never appear: the instance norm's mean subtraction makes them
    /// exact no-ops, so they stay at zero.
    template <class Fn>
    void visit_params(Fn&& fn) {
        fn("backbone.stem.w", backbone.stem.w);
        fn("backbone.stem.ng", backbone.stem_n.gamma); fn("backbone.stem.nb", backbone.stem_n.beta);
        fn("backbone.s1a.w", backbone.s1a.w);
        fn("backbone.s1a.ng", backbone.s1a_n.gamma); fn("backbone.s1a.nb", backbone.s1a_n.beta);
        fn("backbone.s1b.w", backbone.s1b.w);
        fn("backbone.s1b.ng", backbone.s1b_n.gamma); fn("backbone.s1b.nb", backbone.s1b_n.beta);
        fn("backbone.s2a.w", backbone.s2a.w);
        fn("backbone.s2a.ng", backbone.s2a_n.gamma); fn("backbone.s2a.nb", backbone.s2a_n.beta);
        fn("backbone.s2b.w", backbone.s2b.w);
        fn("backbone.s2b.ng", backbone.s2b_n.gamma); fn("backbone.s2b.nb", backbone.s2b_n.beta);
        fn("backbone.s2c.w", backbone.s2c.w);
        fn("backbone.s2c.ng", backbone.s2c_n.gamma); fn("backbone.s2c.nb", backbone.s2c_n.beta);
        if (mode == RunMode::decoupled) {
            for (size_t i = 0; i < bg.encoder.size(); ++i) {
                const std::string base = "bg.enc" + std::to_string(i);
                fn(base + ".w", bg.encoder[i].w);
                fn(base + ".b", bg.encoder[i].b);
            }
            fn("bg.flow.w", bg.flow_conv.w); fn("bg.flow.b", bg.flow_conv.b);
            if (ep.use_fine) {
                fn("ep.fine_proj.w", ep.fine_proj.w); fn("ep.fine_proj.b", ep.fine_proj.b);
            }
            fn("ep.fuse.w", ep.fuse.w); fn("ep.fuse.b", ep.fuse.b);
            fn("head.body.w", heads.body.w); fn("head.body.b", heads.body.b);
            fn("head.edge.w", heads.edge.w); fn("head.edge.b", heads.edge.b);
        }
        fn("head.final.w", heads.final_pred.w); fn("head.final.b", heads.final_pred.b);
    }

    ParamStore<T> param_store() {
        ParamStore<T> store;
        visit_params([&](const std::string& path, Tensor<T>& t) { store.add(path, t); });
        return store;
    }
};

template <class T>
struct ModelTrace {
    BackboneTrace<T> backbone;
    DecoupleTrace<T> head;           // decoupled mode
    Tensor<T> s_final_baseline;      // baseline mode
};

template <class T>
void model_forward(Model<T>& model, Tensor<T>& image, ModelTrace<T>& tr, bool with_grad) {
    backbone_forward(model.backbone, image, tr.backbone, with_grad);
    if (model.mode == RunMode::decoupled) {
        decouple_forward(tr.backbone.f(), tr.backbone.f_fine(), model.bg, model.ep, model.heads,
                         tr.head, with_grad);
    } else {
        tr.s_final_baseline = model.heads.final_pred.forward(tr.backbone.f());
        if (with_grad) tr.s_final_baseline.require_grad();
    }
}

template <class T>
void model_backward(Model<T>& model, Tensor<T>& image, ModelTrace<T>& tr) {
    if (model.mode == RunMode::decoupled) {
        decouple_backward(tr.backbone.f(), tr.backbone.f_fine(), model.bg, model.ep, model.heads,
                          tr.head);
    } else {
        model.heads.final_pred.backward(
            tr.backbone.f(),
            Tensor<T>::from(tr.s_final_baseline.shape, tr.s_final_baseline.grad));
    }
    backbone_backward(model.backbone, image, tr.backbone);
}

/// Final class logits regardless of mode.
template <class T>
const Tensor<T>& final_logits(const Model<T>& model, const ModelTrace<T>& tr) {
    return model.mode == RunMode::decoupled ? tr.head.s_final : tr.s_final_baseline;
}

// ---------------------------------------------------------------------------
// arithmetic cost accounting
// ---------------------------------------------------------------------------

/// Forward multiply-accumulate counts per image. Convs count
/// out_elems * c_in_per_group * k^2; bilinear resample and warp count 4 MACs
/// per output value; elementwise merge/subtract count 1. Activations and
/// copies are not counted.
struct FlopsReport {
    double backbone = 0.0;
    double body_gen = 0.0;
    double edge_preserve = 0.0;
    double heads = 0.0;
    double ratio_head_to_backbone = 0.0; // (body_gen + edge_preserve) / backbone
};

inline FlopsReport count_flops(const ModelDims& d, int image_h, int image_w) {
    auto conv = [](int oh, int ow, int c_out, int c_in_pg, int k) {
        return static_cast<double>(oh) * ow * c_out * c_in_pg * k * k;
    };
    FlopsReport r;
    const int h2 = image_h / 2, w2 = image_w / 2;
    const int h4 = image_h / 4, w4 = image_w / 4;
    r.backbone += conv(image_h, image_w, d.fine_channels, 3, 3);
    r.backbone += conv(h2, w2, d.fine_channels, d.fine_channels, 3) * 2;
    r.backbone += conv(h4, w4, d.feat_channels, d.fine_channels, 3);
    r.backbone += conv(h4, w4, d.feat_channels, d.feat_channels, 3) * 2;
    // per-stage instance norm, ~5 ops per element
    r.backbone += 5.0 * (static_cast<double>(image_h) * image_w * d.fine_channels +
                         2.0 * h2 * w2 * d.fine_channels + 3.0 * h4 * w4 * d.feat_channels);

    int eh = h4, ew = w4;
    for (int i = 0; i < d.encoder_depth; ++i) {
        eh /= 2; ew /= 2;
        r.body_gen += conv(eh, ew, d.feat_channels, 1, 3);
    }
    r.body_gen += 4.0 * h4 * w4 * d.feat_channels;                       // upsample coarse
    r.body_gen += conv(h4, w4, 2, 2 * d.feat_channels, 3);               // flow prediction
    r.body_gen += 4.0 * h4 * w4 * d.feat_channels;                       // warp

    r.edge_preserve += static_cast<double>(h4) * w4 * d.feat_channels;   // residual
    if (d.use_fine) {
        r.edge_preserve += 4.0 * h4 * w4 * d.fine_channels;              // resize fine tap
        r.edge_preserve += conv(h4, w4, d.fine_proj_channels, d.fine_channels, 1);
        r.edge_preserve += conv(h4, w4, d.feat_channels,
                                d.feat_channels + d.fine_proj_channels, 1);
    } else {
        r.edge_preserve += conv(h4, w4, d.feat_channels, d.feat_channels, 1);
    }
    r.edge_preserve += static_cast<double>(h4) * w4 * d.feat_channels;   // merge

    r.heads += conv(h4, w4, d.classes, d.feat_channels, 1) * 2;
    r.heads += conv(h4, w4, 1, d.feat_channels, 1);
    r.ratio_head_to_backbone = (r.body_gen + r.edge_preserve) / r.backbone;
    return r;
}

} // namespace dseg
