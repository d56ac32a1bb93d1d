// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include "dseg/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstdlib>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;

namespace dseg {

namespace {

nlohmann::json dims_to_json(const ModelDims& d) {
    return nlohmann::json{{"classes", d.classes},
                          {"feat_channels", d.feat_channels},
                          {"fine_channels", d.fine_channels},
                          {"fine_proj_channels", d.fine_proj_channels},
                          {"encoder_depth", d.encoder_depth},
                          {"use_fine", d.use_fine}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
    ModelDims d;
    d.classes = j.at("classes").get<int>();
    d.feat_channels = j.at("feat_channels").get<int>();
    d.fine_channels = j.at("fine_channels").get<int>();
    d.fine_proj_channels = j.at("fine_proj_channels").get<int>();
    d.encoder_depth = j.at("encoder_depth").get<int>();
    d.use_fine = j.at("use_fine").get<bool>();
    return d;
}

nlohmann::json loss_to_json(const LossConfig& c) {
    return nlohmann::json{{"lambda_body", c.lambda_body},
                          {"lambda_edge", c.lambda_edge},
                          {"lambda_final", c.lambda_final},
                          {"lambda_bce", c.lambda_bce},
                          {"lambda_edge_ce", c.lambda_edge_ce},
                          {"k_ratio", c.k_ratio},
                          {"t_b", c.t_b},
                          {"relax_radius", c.relax_radius},
                          {"edge_radius", c.edge_radius},
                          {"ohem_strict_k", c.ohem_strict_k},
                          {"body_mode", c.body_mode == LossConfig::BodyMode::exclude_band
                                            ? "exclude_band"
                                            : "relax_sum"},
                          {"wi_mode", c.wi_mode == LossConfig::PixelWeight::uniform
                                          ? "uniform"
                                          : "inverse_class_freq"}};
}

LossConfig loss_from_json(const nlohmann::json& j) {
    LossConfig c;
    c.lambda_body = j.at("lambda_body").get<double>();
    c.lambda_edge = j.at("lambda_edge").get<double>();
    c.lambda_final = j.at("lambda_final").get<double>();
    c.lambda_bce = j.at("lambda_bce").get<double>();
    c.lambda_edge_ce = j.at("lambda_edge_ce").get<double>();
    c.k_ratio = j.at("k_ratio").get<double>();
    c.t_b = j.at("t_b").get<double>();
    c.relax_radius = j.at("relax_radius").get<int>();
    c.edge_radius = j.at("edge_radius").get<int>();
    c.ohem_strict_k = j.at("ohem_strict_k").get<bool>();
    c.body_mode = j.at("body_mode").get<std::string>() == "relax_sum"
                      ? LossConfig::BodyMode::relax_sum
                      : LossConfig::BodyMode::exclude_band;
    c.wi_mode = j.at("wi_mode").get<std::string>() == "inverse_class_freq"
                    ? LossConfig::PixelWeight::inverse_class_freq
                    : LossConfig::PixelWeight::uniform;
    return c;
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"base_lr", cfg.base_lr},
                          {"momentum", cfg.momentum},
                          {"weight_decay", cfg.weight_decay},
                          {"poly_power", cfg.poly_power},
                          {"seed", cfg.seed},
                          {"mode", run_mode_name(cfg.mode)},
                          {"dims", dims_to_json(cfg.dims)},
                          {"loss", loss_to_json(cfg.loss)},
                          {"threads", cfg.threads},
                          {"grad_clip_norm", cfg.grad_clip_norm},
                          {"warmup_epochs", cfg.warmup_epochs},
                          {"backbone_lr_scale", cfg.backbone_lr_scale},
                          {"flow_lr_scale", cfg.flow_lr_scale},
                          {"loss_at_full_res", cfg.loss_at_full_res}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("base_lr")) cfg.base_lr = j.at("base_lr").get<double>();
    if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("poly_power")) cfg.poly_power = j.at("poly_power").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mode"))
        cfg.mode = j.at("mode").get<std::string>() == "baseline" ? RunMode::baseline
                                                                 : RunMode::decoupled;
    if (j.contains("dims")) cfg.dims = dims_from_json(j.at("dims"));
    if (j.contains("loss")) cfg.loss = loss_from_json(j.at("loss"));
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    if (j.contains("grad_clip_norm")) cfg.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    if (j.contains("warmup_epochs")) cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
    if (j.contains("backbone_lr_scale")) cfg.backbone_lr_scale = j.at("backbone_lr_scale").get<double>();
    if (j.contains("flow_lr_scale")) cfg.flow_lr_scale = j.at("flow_lr_scale").get<double>();
    if (j.contains("loss_at_full_res")) cfg.loss_at_full_res = j.at("loss_at_full_res").get<bool>();
    return cfg;
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Forward + loss backward + model backward for one image; the model instance
/// is private to the caller, so parameter grads end up being per-image.
/// Supervision happens at logit resolution against nearest-downsampled
/// labels: boundary cells are then genuinely noisy, which is the coarse-label
/// regime the relaxation and boundary-prior losses exist for.
/// plain_path trains only backbone + final head on the raw features, which is
/// both the baseline mode and the warmup phase of decoupled training.
/// Lifts logits to label resolution when full-res supervision is on; the
/// backward lowers the loss grads back onto the head outputs.
struct LogitLift {
    TensorF up;
    bool active = false;
    const TensorF* view(const TensorF& logits, int h, int w, bool full_res) {
        active = full_res;
        if (!active) return &logits;
        up = bilinear_resize(logits, h, w, /*align_corners=*/false);
        up.require_grad();
        return &up;
    }
    TensorF& grad_target(TensorF& logits) { return active ? up : logits; }
    void lower(TensorF& logits) {
        if (active)
            bilinear_resize_backward(logits, /*align_corners=*/false,
                                     TensorF::from(up.shape, up.grad));
    }
};

LossBreakdown train_one_image(Model<float>& model, const TensorF& image3,
                              const LabelMap& labels_full, const LabelMap& labels_lr,
                              const LossConfig& loss_cfg, bool plain_path, bool full_res) {
    TensorF img({1, image3.dim(0), image3.dim(1), image3.dim(2)});
    img.data = image3.data;
    const int H = image3.dim(1), W = image3.dim(2);
    const LabelMap& labels = full_res ? labels_full : labels_lr;
    LossBreakdown bd;
    if (plain_path) {
        BackboneTrace<float> btr;
        backbone_forward(model.backbone, img, btr, /*with_grad=*/true);
        TensorF logits = model.heads.final_pred.forward(btr.f());
        logits.require_grad();
        LogitLift lift;
        const TensorF* view = lift.view(logits, H, W, full_res);
        bd.l_final = mean_ce(*view, labels);
        bd.total = loss_cfg.lambda_final * bd.l_final;
        mean_ce_backward(lift.grad_target(logits), labels, loss_cfg.lambda_final);
        lift.lower(logits);
        model.heads.final_pred.backward(btr.f(), TensorF::from(logits.shape, logits.grad));
        backbone_backward(model.backbone, img, btr);
        return bd;
    }
    ModelTrace<float> tr;
    model_forward(model, img, tr, /*with_grad=*/true);
    if (full_res) {
        LogitLift body_l, final_l, edge_l;
        body_l.view(tr.head.s_body, H, W, true);
        final_l.view(tr.head.s_final, H, W, true);
        edge_l.view(tr.head.b_logit, H, W, true);
        bd = total_loss_backward(body_l.up, final_l.up, edge_l.up, labels, loss_cfg);
        body_l.lower(tr.head.s_body);
        final_l.lower(tr.head.s_final);
        edge_l.lower(tr.head.b_logit);
    } else {
        bd = total_loss_backward(tr.head.s_body, tr.head.s_final, tr.head.b_logit, labels,
                                 loss_cfg);
    }
    model_backward(model, img, tr);
    return bd;
}

void fisher_yates(std::vector<int>& v, Rng& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = rng.below(i + 1);
        std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
}

} // namespace

TrainConfig train_config_from_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    is >> j;
    return config_from_json(j);
}

void train_config_to_json(const TrainConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config: " + path);
    os << config_to_json(cfg).dump(2) << "\n";
}

LabelMap predict_labels(Model<float>& model, const TensorF& image) {
    TensorF img({1, image.dim(0), image.dim(1), image.dim(2)});
    img.data = image.data;
    ModelTrace<float> tr;
    model_forward(model, img, tr, /*with_grad=*/false);
    const TensorF& logits = final_logits(model, tr);
    const TensorF up = bilinear_resize(logits, image.dim(1), image.dim(2),
                                       /*align_corners=*/false);
    LabelMap pred(1, up.h(), up.w());
    const int C = up.c();
    const size_t plane = static_cast<size_t>(up.h()) * up.w();
    for (size_t i = 0; i < plane; ++i) {
        int best = 0;
        float best_v = up.data[i];
        for (int c = 1; c < C; ++c) {
            const float v = up.data[c * plane + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        pred.v[i] = static_cast<std::uint8_t>(best);
    }
    return pred;
}

EvalReport evaluate_model(Model<float>& model, const LoadedDataset& data,
                          const std::vector<int>& slacks, SlackMetric metric) {
    const int K = model.dims.classes;
    ConfusionMatrix cm(K);
    std::vector<std::vector<BoundaryCounts>> counts(
        static_cast<size_t>(K), std::vector<BoundaryCounts>(slacks.size()));
    for (size_t i = 0; i < data.images.size(); ++i) {
        const LabelMap pred = predict_labels(model, data.images[i]);
        cm.accumulate(data.labels[i], pred);
        for (int c = 0; c < K; ++c)
            for (size_t s = 0; s < slacks.size(); ++s) {
                const BoundaryCounts bc = boundary_match_counts(
                    pred, data.labels[i], c, static_cast<double>(slacks[s]), metric);
                BoundaryCounts& acc = counts[static_cast<size_t>(c)][s];
                acc.pred_boundary += bc.pred_boundary;
                acc.gt_boundary += bc.gt_boundary;
                acc.pred_matched += bc.pred_matched;
                acc.gt_matched += bc.gt_matched;
            }
    }
    const MiouResult mi = miou(cm);
    EvalReport rep;
    rep.slacks = slacks;
    rep.mean_iou = mi.mean;
    rep.mean_f.assign(slacks.size(), 0.0);
    std::vector<int> f_defined_count(slacks.size(), 0);
    for (int c = 0; c < K; ++c) {
        ClassReport pc;
        pc.class_id = c;
        pc.iou_defined = !std::isnan(mi.per_class[static_cast<size_t>(c)]);
        pc.iou = pc.iou_defined ? mi.per_class[static_cast<size_t>(c)] : 0.0;
        pc.f.assign(slacks.size(), 0.0);
        pc.f_defined.assign(slacks.size(), false);
        for (size_t s = 0; s < slacks.size(); ++s) {
            const BoundaryScore sc = boundary_score_from_counts(counts[static_cast<size_t>(c)][s]);
            pc.f_defined[s] = sc.defined;
            pc.f[s] = sc.f;
            if (sc.defined) {
                rep.mean_f[s] += sc.f;
                ++f_defined_count[s];
            }
        }
        rep.per_class.push_back(std::move(pc));
    }
    for (size_t s = 0; s < slacks.size(); ++s)
        if (f_defined_count[s] > 0) rep.mean_f[s] /= f_defined_count[s];
    return rep;
}

void save_checkpoint(Model<float>& model, const TrainConfig& cfg, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "params");
    nlohmann::json j;
    j["mode"] = run_mode_name(model.mode);
    j["dims"] = dims_to_json(model.dims);
    j["config"] = config_to_json(cfg);
    nlohmann::json params = nlohmann::json::array();
    model.visit_params([&](const std::string& name, TensorF& t) {
        std::string stem = name;
        std::replace(stem.begin(), stem.end(), '.', '_');
        const std::string file = "params/" + stem + ".dsk1";
        write_dsk1((fs::path(dir) / file).string(), t);
        params.push_back(nlohmann::json{{"name", name}, {"file", file}});
    });
    j["params"] = params;
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write checkpoint manifest in " + dir);
    os << j.dump(2) << "\n";
}

Model<float> load_checkpoint(const std::string& dir, TrainConfig* cfg_out) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("no checkpoint manifest in " + dir);
    nlohmann::json j;
    is >> j;
    Model<float> model;
    const RunMode mode =
        j.at("mode").get<std::string>() == "baseline" ? RunMode::baseline : RunMode::decoupled;
    model.init(dims_from_json(j.at("dims")), mode, /*seed=*/0);
    std::map<std::string, std::string> files;
    for (const auto& e : j.at("params"))
        files[e.at("name").get<std::string>()] = e.at("file").get<std::string>();
    model.visit_params([&](const std::string& name, TensorF& t) {
        auto it = files.find(name);
        if (it == files.end()) throw IoError("checkpoint missing parameter " + name);
        TensorF loaded = read_dsk1<float>((fs::path(dir) / it->second).string());
        if (loaded.shape != t.shape)
            throw ShapeError("checkpoint parameter " + name + " has shape " +
                             shape_to_string(loaded.shape) + ", expected " +
                             shape_to_string(t.shape));
        t.data = std::move(loaded.data);
    });
    if (cfg_out != nullptr && j.contains("config")) *cfg_out = config_from_json(j.at("config"));
    return model;
}

TrainResult train_model(const TrainConfig& cfg, const std::string& dataset_dir,
                        const std::string& out_dir) {
    cfg.validate();
    const DatasetManifest manifest = read_manifest(dataset_dir);
    if (manifest.train.empty()) throw std::invalid_argument("train: dataset has no training split");
    const LoadedDataset train_ds = load_split(dataset_dir, manifest.train);
    const LoadedDataset val_ds = load_split(dataset_dir, manifest.val);
    if (manifest.spec.num_classes != cfg.dims.classes)
        throw ShapeError("train: dataset has " + std::to_string(manifest.spec.num_classes) +
                         " classes but the model expects " + std::to_string(cfg.dims.classes));

    // labels at logit resolution (stride 4), fixed for the whole run
    std::vector<LabelMap> labels_lr;
    labels_lr.reserve(train_ds.labels.size());
    for (const auto& lm : train_ds.labels)
        labels_lr.push_back(nearest_resize(lm, lm.h / 4, lm.w / 4));

    Model<float> model;
    model.init(cfg.dims, cfg.mode, cfg.seed);

    // optimizer state, aligned with the parameter enumeration order
    std::vector<TensorF*> params;
    std::vector<bool> in_plain_path; // backbone + final head, the warmup set
    std::vector<bool> is_flow_param;
    model.visit_params([&](const std::string& name, TensorF& t) {
        params.push_back(&t);
        in_plain_path.push_back(name.rfind("backbone.", 0) == 0 ||
                                name.rfind("head.final", 0) == 0);
        is_flow_param.push_back(name.rfind("bg.flow", 0) == 0);
    });
    for (TensorF* p : params) p->require_grad();
    std::vector<std::vector<float>> velocity;
    velocity.reserve(params.size());
    for (TensorF* p : params) velocity.emplace_back(p->data.size(), 0.0f);

    const int n_train = static_cast<int>(train_ds.images.size());
    const std::int64_t steps_per_epoch =
        (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const int warmup = cfg.resolved_warmup();
    // each phase runs its own poly schedule over its own step budget
    const std::int64_t warmup_iters = steps_per_epoch * warmup;
    const std::int64_t main_iters = steps_per_epoch * (cfg.epochs - warmup);
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const int n_workers = std::max(1, std::min<int>(cfg.threads > 0 ? cfg.threads : static_cast<int>(hw),
                                                    cfg.batch_size));

    fs::create_directories(out_dir);
    train_config_to_json(cfg, (fs::path(out_dir) / "config.json").string());
    std::ofstream log_csv(fs::path(out_dir) / "train_log.csv");
    if (!log_csv) throw IoError("cannot write training log in " + out_dir);
    log_csv << "epoch,lr,l_body,l_bce,l_edge_ce,l_final,total,selected,val_miou\n";

    TrainResult result;
    std::vector<int> order(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

    std::int64_t iter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const bool plain_phase = cfg.mode == RunMode::baseline || epoch < warmup;
        if (cfg.mode == RunMode::decoupled && epoch == warmup && warmup > 0) {
            // fresh optimizer state and step counter for the framework phase
            for (auto& v : velocity) std::fill(v.begin(), v.end(), 0.0f);
            iter = 0;
            // body features equal the raw features at the switch (zero flow,
            // zero fuse), so the trained final head is the right warm start
            // for the body head; a random one blasts noise into the backbone
            model.heads.body.w.data = model.heads.final_pred.w.data;
            model.heads.body.b.data = model.heads.final_pred.b.data;
        }
        Rng shuffle_rng(derive_seed(cfg.seed, 0x10000u + static_cast<std::uint64_t>(epoch)));
        fisher_yates(order, shuffle_rng);
        LossBreakdown epoch_sum;
        double last_lr = 0.0;
        for (std::int64_t step = 0; step < steps_per_epoch; ++step, ++iter) {
            const int begin = static_cast<int>(step) * cfg.batch_size;
            const int end = std::min(n_train, begin + cfg.batch_size);
            const int bsz = end - begin;
            // per-image model copies so parameter grads stay separate; the
            // reduction below runs in batch order regardless of thread count
            std::vector<Model<float>> workers(static_cast<size_t>(bsz), model);
            std::vector<LossBreakdown> bds(static_cast<size_t>(bsz));
            auto run_range = [&](int from, int stride) {
                for (int b = from; b < bsz; b += stride) {
                    Model<float>& wm = workers[static_cast<size_t>(b)];
                    wm.visit_params([](const std::string&, TensorF& t) { t.require_grad(); });
                    const int idx = order[static_cast<size_t>(begin + b)];
                    bds[static_cast<size_t>(b)] = train_one_image(
                        wm, train_ds.images[static_cast<size_t>(idx)],
                        train_ds.labels[static_cast<size_t>(idx)],
                        labels_lr[static_cast<size_t>(idx)], cfg.loss, plain_phase,
                        cfg.loss_at_full_res);
                }
            };
            if (n_workers > 1 && bsz > 1) {
                std::vector<std::thread> pool;
                for (int t = 0; t < n_workers; ++t) pool.emplace_back(run_range, t, n_workers);
                for (auto& th : pool) th.join();
            } else {
                run_range(0, 1);
            }

            // ordered grad reduction, scaled to the batch mean
            const float inv_b = 1.0f / static_cast<float>(bsz);
            for (TensorF* p : params) p->zero_grad();
            for (int b = 0; b < bsz; ++b) {
                std::vector<TensorF*> wparams;
                workers[static_cast<size_t>(b)].visit_params(
                    [&](const std::string&, TensorF& t) { wparams.push_back(&t); });
                for (size_t pi = 0; pi < params.size(); ++pi) {
                    float* dst = params[pi]->grad.data();
                    const float* src = wparams[pi]->grad.data();
                    for (size_t k = 0; k < params[pi]->grad.size(); ++k)
                        dst[k] += src[k] * inv_b;
                }
            }

            LossBreakdown batch;
            for (int b = 0; b < bsz; ++b) {
                batch.l_body += bds[static_cast<size_t>(b)].l_body;
                batch.l_bce += bds[static_cast<size_t>(b)].l_bce;
                batch.l_edge_ce += bds[static_cast<size_t>(b)].l_edge_ce;
                batch.l_final += bds[static_cast<size_t>(b)].l_final;
                batch.total += bds[static_cast<size_t>(b)].total;
                batch.selected_count += bds[static_cast<size_t>(b)].selected_count;
            }
            batch.l_body /= bsz;
            batch.l_bce /= bsz;
            batch.l_edge_ce /= bsz;
            batch.l_final /= bsz;
            batch.total /= bsz;

            if (!std::isfinite(batch.total)) {
                nlohmann::json dump;
                dump["epoch"] = epoch;
                dump["step"] = step;
                dump["batch_indices"] = nlohmann::json::array();
                for (int b = 0; b < bsz; ++b)
                    dump["batch_indices"].push_back(order[static_cast<size_t>(begin + b)]);
                dump["l_body"] = batch.l_body;
                dump["l_bce"] = batch.l_bce;
                dump["l_edge_ce"] = batch.l_edge_ce;
                dump["l_final"] = batch.l_final;
                std::ofstream ds(fs::path(out_dir) / "failure_dump.json");
                ds << dump.dump(2) << "\n";
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step) +
                                   "; diagnostics in failure_dump.json");
            }
            // the weighted-total identity must reconstruct at every step
            const double reconstructed =
                cfg.loss.lambda_body * batch.l_body +
                cfg.loss.lambda_edge *
                    (cfg.loss.lambda_bce * batch.l_bce + cfg.loss.lambda_edge_ce * batch.l_edge_ce) +
                cfg.loss.lambda_final * batch.l_final;
            const double mismatch = std::fabs(
                plain_phase ? cfg.loss.lambda_final * batch.l_final - batch.total
                            : reconstructed - batch.total);
            if (mismatch > 1e-6)
                throw NumericError("loss breakdown identity violated: |delta| = " +
                                   std::to_string(mismatch));

            if (cfg.grad_clip_norm > 0.0) {
                double sq = 0.0;
                for (TensorF* p : params)
                    for (float g : p->grad) sq += static_cast<double>(g) * g;
                const double norm = std::sqrt(sq);
                if (norm > cfg.grad_clip_norm) {
                    const float s = static_cast<float>(cfg.grad_clip_norm / norm);
                    for (TensorF* p : params)
                        for (float& g : p->grad) g *= s;
                }
            }

            const bool decoupled_warmup = cfg.mode == RunMode::decoupled && plain_phase;
            const std::int64_t phase_total = decoupled_warmup ? warmup_iters : main_iters;
            double lr = poly_lr(cfg.base_lr, iter, phase_total, cfg.poly_power);
            // ease the freshly grafted modules in: linear ramp over the first
            // framework epoch so the warm base is not trampled
            if (cfg.mode == RunMode::decoupled && !plain_phase && warmup > 0 &&
                iter < steps_per_epoch)
                lr *= static_cast<double>(iter + 1) / static_cast<double>(steps_per_epoch);
            last_lr = lr;
            const bool framework_phase = cfg.mode == RunMode::decoupled && !plain_phase && warmup > 0;
            for (size_t pi = 0; pi < params.size(); ++pi) {
                if (decoupled_warmup && !in_plain_path[pi]) continue;
                double lr_p = lr;
                if (framework_phase && in_plain_path[pi] &&
                    params[pi] != &model.heads.final_pred.w && params[pi] != &model.heads.final_pred.b)
                    lr_p = lr * cfg.backbone_lr_scale;
                if (is_flow_param[pi]) lr_p *= cfg.flow_lr_scale;
                if (lr_p == 0.0) continue;
                TensorF& p = *params[pi];
                std::vector<float>& vel = velocity[pi];
                const float mu = static_cast<float>(cfg.momentum);
                const float wd = static_cast<float>(cfg.weight_decay);
                const float lrf = static_cast<float>(lr_p);
                for (size_t k = 0; k < p.data.size(); ++k) {
                    const float g = p.grad[k] + wd * p.data[k];
                    vel[k] = mu * vel[k] + g;
                    p.data[k] -= lrf * vel[k];
                }
            }

            if (std::getenv("DSEG_DEBUG_STEPS") != nullptr &&
                epoch >= warmup && epoch < warmup + 2 && cfg.mode == RunMode::decoupled) {
                TensorF img({1, 3, train_ds.images[0].dim(1), train_ds.images[0].dim(2)});
                img.data = train_ds.images[0].data;
                ModelTrace<float> dbg_tr;
                model_forward(model, img, dbg_tr, false);
                double fmax = 0, fmean = 0;
                for (float v : dbg_tr.head.bg.flow.data) {
                    fmax = std::max(fmax, std::fabs((double)v));
                    fmean += std::fabs((double)v);
                }
                fmean /= dbg_tr.head.bg.flow.data.size();
                std::fprintf(stderr,
                             "dbg ep%d step%lld lbody=%.4f lohem=%.4f lfinal=%.4f sel=%d "
                             "|flow| mean=%.3f max=%.3f\n",
                             epoch, (long long)step, batch.l_body, batch.l_edge_ce,
                             batch.l_final, batch.selected_count, fmean, fmax);
            }
            epoch_sum.l_body += batch.l_body;
            epoch_sum.l_bce += batch.l_bce;
            epoch_sum.l_edge_ce += batch.l_edge_ce;
            epoch_sum.l_final += batch.l_final;
            epoch_sum.total += batch.total;
            epoch_sum.selected_count += batch.selected_count;
        }

        for (TensorF* p : params) check_finite(*p, "parameters after epoch");

        EpochLog el;
        el.epoch = epoch;
        el.lr = last_lr;
        el.mean.l_body = epoch_sum.l_body / static_cast<double>(steps_per_epoch);
        el.mean.l_bce = epoch_sum.l_bce / static_cast<double>(steps_per_epoch);
        el.mean.l_edge_ce = epoch_sum.l_edge_ce / static_cast<double>(steps_per_epoch);
        el.mean.l_final = epoch_sum.l_final / static_cast<double>(steps_per_epoch);
        el.mean.total = epoch_sum.total / static_cast<double>(steps_per_epoch);
        el.mean.selected_count = epoch_sum.selected_count;
        if (!val_ds.images.empty()) {
            EvalReport rep = evaluate_model(model, val_ds, {});
            el.val_miou = rep.mean_iou;
        }
        log_csv << el.epoch << "," << fmt_g(el.lr) << "," << fmt_g(el.mean.l_body) << ","
                << fmt_g(el.mean.l_bce) << "," << fmt_g(el.mean.l_edge_ce) << ","
                << fmt_g(el.mean.l_final) << "," << fmt_g(el.mean.total) << ","
                << el.mean.selected_count << "," << fmt_g(el.val_miou) << "\n";
        result.log.push_back(el);
    }
    log_csv.close();

    const std::string ckpt = (fs::path(out_dir) / "checkpoint").string();
    save_checkpoint(model, cfg, ckpt);
    result.checkpoint_dir = ckpt;
    result.log_path = (fs::path(out_dir) / "train_log.csv").string();
    return result;
}

} // namespace dseg
