// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: gendata, train, eval, gradcheck, inspect.
// Exit codes: 0 success, 1 validation/usage error, 2 numeric failure.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dseg/gradcheck_suite.hpp"
#include "dseg/image_io.hpp"
#include "dseg/synth.hpp"
#include "dseg/train.hpp"

namespace fs = std::filesystem;
using namespace dseg;

namespace {

std::vector<int> parse_slacks(const std::string& csv) {
    std::vector<int> out;
    std::string cur;
    for (char ch : csv + ",") {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (out.empty()) throw std::invalid_argument("--slack: no values given");
    for (int s : out)
        if (s < 0) throw std::invalid_argument("--slack: negative slack");
    return out;
}

GrayImage normalized_plane(const TensorF& t, int n, int c) {
    GrayImage img;
    img.h = t.h();
    img.w = t.w();
    img.px.resize(static_cast<size_t>(img.h) * img.w);
    float lo = t.at(n, c, 0, 0), hi = lo;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            lo = std::min(lo, t.at(n, c, y, x));
            hi = std::max(hi, t.at(n, c, y, x));
        }
    const float range = hi - lo;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const float v = range > 0.0f ? (t.at(n, c, y, x) - lo) / range : 0.0f;
            img.at(y, x) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return img;
}

RgbImage colorize_labels(const LabelMap& labels, int batch_index) {
    RgbImage img;
    img.h = labels.h;
    img.w = labels.w;
    img.px.resize(static_cast<size_t>(img.h) * img.w * 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            float rgb[3];
            const std::uint8_t cls = labels.at(batch_index, y, x);
            if (cls == kIgnoreIndex) {
                rgb[0] = rgb[1] = rgb[2] = 1.0f;
            } else {
                class_color(cls, rgb);
            }
            for (int c = 0; c < 3; ++c)
                img.at(y, x)[c] = static_cast<std::uint8_t>(std::lround(rgb[c] * 255.0f));
        }
    return img;
}

RgbImage image_to_ppm(const TensorF& image3) {
    RgbImage img;
    img.h = image3.dim(1);
    img.w = image3.dim(2);
    img.px.resize(static_cast<size_t>(img.h) * img.w * 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = image3.data[(static_cast<size_t>(c) * img.h + y) * img.w + x];
                img.at(y, x)[c] =
                    static_cast<std::uint8_t>(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f));
            }
    return img;
}

int cmd_gendata(const std::string& out_dir, int n_train, int n_val, SceneSpec spec) {
    generate_dataset(n_train, n_val, spec, out_dir);
    std::printf("wrote %d train / %d val scenes (%dx%d, %d classes) to %s\n", n_train, n_val,
                spec.height, spec.width, spec.num_classes, out_dir.c_str());
    return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& dataset_dir, const std::string& out_dir) {
    const FlopsReport fl = count_flops(cfg.dims, 64, 64);
    std::printf("mode=%s  bg+ep/backbone flops = %.2f%%\n", run_mode_name(cfg.mode),
                100.0 * fl.ratio_head_to_backbone);
    const TrainResult res = train_model(cfg, dataset_dir, out_dir);
    if (!res.log.empty())
        std::printf("final epoch: total=%.4f val_miou=%.4f\n", res.log.back().mean.total,
                    res.log.back().val_miou);
    std::printf("checkpoint: %s\nlog: %s\n", res.checkpoint_dir.c_str(), res.log_path.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_dir,
             const std::string& out_dir, const std::vector<int>& slacks, bool use_val,
             SlackMetric metric) {
    Model<float> model = load_checkpoint(checkpoint);
    const DatasetManifest manifest = read_manifest(dataset_dir);
    const LoadedDataset data =
        load_split(dataset_dir, use_val ? manifest.val : manifest.train);
    if (data.images.empty()) throw std::invalid_argument("eval: selected split is empty");
    const EvalReport rep = evaluate_model(model, data, slacks, metric);
    fs::create_directories(out_dir);
    write_report_json((fs::path(out_dir) / "report.json").string(), rep);
    write_report_csv((fs::path(out_dir) / "report.csv").string(), rep);
    std::printf("mean_iou %.4f\n", rep.mean_iou);
    for (size_t i = 0; i < slacks.size(); ++i)
        std::printf("mean_f@%dpx %.4f\n", slacks[i], rep.mean_f[i]);
    std::printf("report: %s\n", (fs::path(out_dir) / "report.json").string().c_str());
    return 0;
}

int cmd_gradcheck(const SuiteOptions& opts, const std::string& only) {
    std::vector<SuiteCheckResult> results;
    if (only.empty()) {
        results = run_gradcheck_suite(opts);
    } else {
        for (const auto& check : gradcheck_suite_checks()) {
            if (check.name != only) continue;
            SuiteOptions one = opts;
            std::vector<SuiteCheck> single;
            SuiteCheckResult res;
            res.name = check.name;
            for (int i = 0; i < opts.instances; ++i) {
                Rng rng(derive_seed(opts.seed, 424242ull + static_cast<std::uint64_t>(i)));
                const GradCheckReport rep = check.run_one(rng, one);
                res.instances += 1;
                if (rep.max_rel_err > res.max_rel_err) {
                    res.max_rel_err = rep.max_rel_err;
                    res.worst_location = rep.worst_location;
                }
                if (!rep.pass) res.pass = false;
            }
            results.push_back(res);
        }
        if (results.empty()) throw std::invalid_argument("gradcheck: unknown check " + only);
    }
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-22s %s  max_rel_err=%.3e  (%d instances)%s%s\n", r.name.c_str(),
                    r.pass ? "PASS" : "FAIL", r.max_rel_err, r.instances,
                    r.pass ? "" : "  worst=", r.pass ? "" : r.worst_location.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 2;
}

int cmd_inspect(const std::string& checkpoint, const std::string& dataset_dir, int index,
                std::uint64_t scene_seed, bool use_seed, const std::string& out_dir) {
    TrainConfig cfg;
    Model<float> model = load_checkpoint(checkpoint, &cfg);
    if (model.mode != RunMode::decoupled)
        throw std::invalid_argument("inspect: needs a decoupled-mode checkpoint");
    TensorF image;
    LabelMap gt;
    if (use_seed) {
        SceneSpec spec;
        spec.seed = scene_seed;
        spec.num_classes = model.dims.classes;
        Scene scene = generate_scene(spec);
        image = std::move(scene.image);
        gt = std::move(scene.labels);
    } else {
        const DatasetManifest manifest = read_manifest(dataset_dir);
        if (index < 0 || index >= static_cast<int>(manifest.val.size()))
            throw std::invalid_argument("inspect: --index outside the val split");
        const LoadedDataset one =
            load_split(dataset_dir, {manifest.val[static_cast<size_t>(index)]});
        image = one.images[0];
        gt = one.labels[0];
    }

    TensorF img4({1, image.dim(0), image.dim(1), image.dim(2)});
    img4.data = image.data;
    ModelTrace<float> tr;
    model_forward(model, img4, tr, /*with_grad=*/false);

    fs::create_directories(out_dir);
    const auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
    write_ppm(path("input.ppm"), image_to_ppm(image));
    write_ppm(path("flow.ppm"), flow_to_raster(tr.head.bg.flow));
    const int C = model.dims.feat_channels;
    char name[64];
    for (int c = 0; c < C; ++c) {
        std::snprintf(name, sizeof(name), "body_c%02d.pgm", c);
        write_pgm(path(name), normalized_plane(tr.head.bg.f_body, 0, c));
        std::snprintf(name, sizeof(name), "edge_c%02d.pgm", c);
        write_pgm(path(name), normalized_plane(tr.head.ep.f_edge, 0, c));
    }
    const TensorF bprob = sigmoid(tr.head.b_logit);
    GrayImage prob_img, mask_img;
    prob_img.h = mask_img.h = bprob.h();
    prob_img.w = mask_img.w = bprob.w();
    prob_img.px.resize(static_cast<size_t>(prob_img.h) * prob_img.w);
    mask_img.px.resize(prob_img.px.size());
    for (size_t i = 0; i < prob_img.px.size(); ++i) {
        prob_img.px[i] = static_cast<std::uint8_t>(std::lround(bprob.data[i] * 255.0f));
        mask_img.px[i] = bprob.data[i] > static_cast<float>(cfg.loss.t_b) ? 255 : 0;
    }
    write_pgm(path("bprob.pgm"), prob_img);
    write_pgm(path("bmask.pgm"), mask_img);
    const LabelMap pred = predict_labels(model, image);
    write_ppm(path("pred.ppm"), colorize_labels(pred, 0));
    write_ppm(path("gt.ppm"), colorize_labels(gt, 0));
    std::printf("wrote %d rasters to %s\n", 2 * C + 6, out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoupled body/edge segmentation kit"};
    app.require_subcommand(1);

    // gendata
    auto* gen = app.add_subcommand("gendata", "generate a synthetic dataset");
    std::string gen_out;
    int gen_train = 200, gen_val = 50;
    SceneSpec spec;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--train", gen_train, "training scenes");
    gen->add_option("--val", gen_val, "validation scenes");
    gen->add_option("--seed", spec.seed, "master seed");
    gen->add_option("--height", spec.height, "canvas height");
    gen->add_option("--width", spec.width, "canvas width");
    gen->add_option("--classes", spec.num_classes, "class count incl. background");
    gen->add_option("--noise", spec.noise_sigma, "texture noise sigma");
    gen->add_option("--blur", spec.blur_radius, "boundary blur radius");
    gen->add_option("--min-shapes", spec.min_shapes, "min shapes per scene");
    gen->add_option("--max-shapes", spec.max_shapes, "max shapes per scene");
    gen->add_option("--bar-prob", spec.thin_bar_prob, "thin-bar probability");
    gen->add_option("--big-prob", spec.big_shape_prob, "big-shape probability");
    gen->add_option("--color-scale", spec.color_scale, "class color separation scale");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_dataset, tr_out, tr_config, tr_mode;
    TrainConfig tcfg;
    std::uint64_t tr_seed = tcfg.seed;
    int tr_epochs = tcfg.epochs, tr_batch = tcfg.batch_size, tr_threads = tcfg.threads;
    double tr_lr = tcfg.base_lr;
    tr->add_option("--dataset", tr_dataset, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--config", tr_config, "JSON config (flags override)");
    auto* tr_mode_opt = tr->add_option("--mode", tr_mode, "baseline or decoupled");
    auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "rng seed");
    auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "training epochs");
    auto* tr_batch_opt = tr->add_option("--batch", tr_batch, "batch size");
    auto* tr_lr_opt = tr->add_option("--lr", tr_lr, "base learning rate");
    auto* tr_threads_opt = tr->add_option("--threads", tr_threads, "worker threads (0=auto)");
    int tr_warmup = -1;
    auto* tr_warmup_opt = tr->add_option("--warmup", tr_warmup, "plain-path warmup epochs (-1=auto)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_dataset, ev_out = "eval_out", ev_slack = "1,2,3,5", ev_split = "val";
    bool ev_chebyshev = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
    ev->add_option("--out", ev_out, "report output directory");
    ev->add_option("--slack", ev_slack, "comma-separated boundary slacks in px");
    ev->add_option("--split", ev_split, "val or train");
    ev->add_flag("--chebyshev", ev_chebyshev, "use Chebyshev distance for the slack");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks (64-bit)");
    SuiteOptions gopts;
    std::string gc_only;
    gc->add_option("--seed", gopts.seed, "rng seed");
    gc->add_option("--tol", gopts.tol, "relative tolerance");
    gc->add_option("--eps", gopts.eps, "finite-difference step");
    gc->add_option("--instances", gopts.instances, "instances per check");
    gc->add_option("--check", gc_only, "run a single named check");
    gc->add_flag("--inject-warp-bug", gopts.inject_warp_bug,
                 "negative control: corrupt warp flow grads");

    // inspect
    auto* in = app.add_subcommand("inspect", "dump rasters for one scene");
    std::string in_ckpt, in_dataset, in_out = "inspect_out";
    int in_index = 0;
    std::uint64_t in_seed = 0;
    in->add_option("--checkpoint", in_ckpt, "checkpoint directory")->required();
    in->add_option("--dataset", in_dataset, "dataset directory");
    in->add_option("--index", in_index, "val-split index");
    auto* in_seed_opt = in->add_option("--scene-seed", in_seed, "generate the scene instead");
    in->add_option("--out", in_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gendata(gen_out, gen_train, gen_val, spec);
        if (tr->parsed()) {
            TrainConfig cfg;
            if (!tr_config.empty()) cfg = train_config_from_json(tr_config);
            if (tr_mode_opt->count() > 0) {
                if (tr_mode != "baseline" && tr_mode != "decoupled")
                    throw std::invalid_argument("--mode must be baseline or decoupled");
                cfg.mode = tr_mode == "baseline" ? RunMode::baseline : RunMode::decoupled;
            }
            if (tr_seed_opt->count() > 0) cfg.seed = tr_seed;
            if (tr_epochs_opt->count() > 0) cfg.epochs = tr_epochs;
            if (tr_batch_opt->count() > 0) cfg.batch_size = tr_batch;
            if (tr_lr_opt->count() > 0) cfg.base_lr = tr_lr;
            if (tr_threads_opt->count() > 0) cfg.threads = tr_threads;
            if (tr_warmup_opt->count() > 0) cfg.warmup_epochs = tr_warmup;
            return cmd_train(cfg, tr_dataset, tr_out);
        }
        if (ev->parsed()) {
            if (ev_split != "val" && ev_split != "train")
                throw std::invalid_argument("--split must be val or train");
            return cmd_eval(ev_ckpt, ev_dataset, ev_out, parse_slacks(ev_slack),
                            ev_split == "val",
                            ev_chebyshev ? SlackMetric::chebyshev : SlackMetric::euclidean);
        }
        if (gc->parsed()) return cmd_gradcheck(gopts, gc_only);
        if (in->parsed())
            return cmd_inspect(in_ckpt, in_dataset, in_index, in_seed, in_seed_opt->count() > 0,
                               in_out);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
