// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include "dseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dseg/rng.hpp"

namespace fs = std::filesystem;

namespace dseg {

void class_color(int class_id, float rgb[3]) {
    // background is a mid gray; the first four shape classes get a fixed
    // well-separated palette, further ids walk the hue circle.
    static const float kPalette[5][3] = {
        {0.30f, 0.30f, 0.30f},
        {0.85f, 0.25f, 0.25f},
        {0.25f, 0.80f, 0.30f},
        {0.25f, 0.40f, 0.85f},
        {0.85f, 0.80f, 0.25f},
    };
    if (class_id >= 0 && class_id < 5) {
        rgb[0] = kPalette[class_id][0];
        rgb[1] = kPalette[class_id][1];
        rgb[2] = kPalette[class_id][2];
        return;
    }
    const double hue = std::fmod(0.61803398875 * class_id, 1.0) * 6.0;
    const double x = 1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue)) {
        case 0: r = 1; g = x; break;
        case 1: r = x; g = 1; break;
        case 2: g = 1; b = x; break;
        case 3: g = x; b = 1; break;
        case 4: r = x; b = 1; break;
        default: r = 1; b = x; break;
    }
    rgb[0] = static_cast<float>(0.25 + 0.6 * r);
    rgb[1] = static_cast<float>(0.25 + 0.6 * g);
    rgb[2] = static_cast<float>(0.25 + 0.6 * b);
}

namespace {

void paint_rect(LabelMap& labels, Rng& rng, std::uint8_t cls, bool thin, bool big = false) {
    const int H = labels.h, W = labels.w;
    int bw, bh;
    if (big) {
        bw = W / 2 + rng.below(std::max(1, W / 2));
        bh = H / 2 + rng.below(std::max(1, H / 2));
    } else if (thin) {
        const bool horizontal = rng.below(2) == 0;
        const int thickness = 1 + rng.below(3);
        const int length = W / 3 + rng.below(std::max(1, 2 * W / 3));
        bw = horizontal ? length : thickness;
        bh = horizontal ? thickness : length;
    } else {
        bw = W / 8 + rng.below(std::max(1, 3 * W / 8));
        bh = H / 8 + rng.below(std::max(1, 3 * H / 8));
    }
    // centers may land near the border so shapes can be partially off-canvas
    const int cx = rng.below(W), cy = rng.below(H);
    const int x0 = std::max(0, cx - bw / 2), x1 = std::min(W - 1, cx + (bw - 1) / 2);
    const int y0 = std::max(0, cy - bh / 2), y1 = std::min(H - 1, cy + (bh - 1) / 2);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) labels.at(0, y, x) = cls;
}

void paint_ellipse(LabelMap& labels, Rng& rng, std::uint8_t cls, bool big = false) {
    const int H = labels.h, W = labels.w;
    const double cx = rng.uniform(0, W), cy = rng.uniform(0, H);
    const double a = big ? W / 3.0 + rng.uniform(0, W / 3.0) : W / 10.0 + rng.uniform(0, W / 4.0);
    const double b = big ? H / 3.0 + rng.uniform(0, H / 3.0) : H / 10.0 + rng.uniform(0, H / 4.0);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - a)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + a)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - b)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + b)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x + 0.5 - cx) / a, dy = (y + 0.5 - cy) / b;
            if (dx * dx + dy * dy <= 1.0) labels.at(0, y, x) = cls;
        }
}

void paint_triangle(LabelMap& labels, Rng& rng, std::uint8_t cls) {
    const int H = labels.h, W = labels.w;
    double vx[3], vy[3];
    for (int i = 0; i < 3; ++i) {
        vx[i] = rng.uniform(-0.1 * W, 1.1 * W);
        vy[i] = rng.uniform(-0.1 * H, 1.1 * H);
    }
    auto edge = [](double ax, double ay, double bx, double by, double px, double py) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double e0 = edge(vx[0], vy[0], vx[1], vy[1], px, py);
            const double e1 = edge(vx[1], vy[1], vx[2], vy[2], px, py);
            const double e2 = edge(vx[2], vy[2], vx[0], vy[0], px, py);
            if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0))
                labels.at(0, y, x) = cls;
        }
}

void box_blur(TensorF& img, int radius) {
    if (radius <= 0) return;
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    std::vector<float> tmp(static_cast<size_t>(H) * W);
    for (int c = 0; c < C; ++c) {
        float* plane = &img.data[static_cast<size_t>(c) * H * W];
        // horizontal
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float acc = 0.0f;
                int cnt = 0;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= W) continue;
                    acc += plane[static_cast<size_t>(y) * W + xx];
                    ++cnt;
                }
                tmp[static_cast<size_t>(y) * W + x] = acc / static_cast<float>(cnt);
            }
        // vertical
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float acc = 0.0f;
                int cnt = 0;
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= H) continue;
                    acc += tmp[static_cast<size_t>(yy) * W + x];
                    ++cnt;
                }
                plane[static_cast<size_t>(y) * W + x] = acc / static_cast<float>(cnt);
            }
    }
}

} // namespace

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0));
    const int H = spec.height, W = spec.width;
    Scene scene;
    scene.labels = LabelMap(1, H, W, 0);

    if (spec.max_shapes > 0) {
        // re-roll the whole shape set until at least one non-background class
        // is visible; a scene must always contain two classes
        for (int attempt = 0; attempt < 64; ++attempt) {
            std::fill(scene.labels.v.begin(), scene.labels.v.end(), 0);
            const int n_shapes =
                spec.min_shapes + rng.below(spec.max_shapes - spec.min_shapes + 1);
            for (int i = 0; i < n_shapes; ++i) {
                const std::uint8_t cls =
                    static_cast<std::uint8_t>(1 + rng.below(spec.num_classes - 1));
                if (rng.uniform() < spec.big_shape_prob) {
                    if (rng.below(2) == 0)
                        paint_rect(scene.labels, rng, cls, /*thin=*/false, /*big=*/true);
                    else
                        paint_ellipse(scene.labels, rng, cls, /*big=*/true);
                    continue;
                }
                if (rng.uniform() < spec.thin_bar_prob) {
                    paint_rect(scene.labels, rng, cls, /*thin=*/true);
                    continue;
                }
                switch (rng.below(3)) {
                    case 0: paint_rect(scene.labels, rng, cls, /*thin=*/false); break;
                    case 1: paint_ellipse(scene.labels, rng, cls); break;
                    default: paint_triangle(scene.labels, rng, cls); break;
                }
            }
            bool has_shape = false;
            for (std::uint8_t v : scene.labels.v)
                if (v != 0) {
                    has_shape = true;
                    break;
                }
            if (has_shape) break;
        }
    }

    scene.image = TensorF({3, H, W});
    const float cs = static_cast<float>(spec.color_scale);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float rgb[3];
            class_color(scene.labels.at(0, y, x), rgb);
            for (int c = 0; c < 3; ++c) {
                const float v = 0.5f + cs * (rgb[c] - 0.5f);
                scene.image.data[(static_cast<size_t>(c) * H + y) * W + x] = v;
            }
        }
    box_blur(scene.image, spec.blur_radius);
    for (auto& v : scene.image.data) {
        v += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
        v = std::min(1.0f, std::max(0.0f, v));
    }
    return scene;
}

namespace {

nlohmann::json spec_to_json(const SceneSpec& s) {
    return nlohmann::json{{"seed", s.seed},
                          {"height", s.height},
                          {"width", s.width},
                          {"num_classes", s.num_classes},
                          {"min_shapes", s.min_shapes},
                          {"max_shapes", s.max_shapes},
                          {"noise_sigma", s.noise_sigma},
                          {"blur_radius", s.blur_radius},
                          {"thin_bar_prob", s.thin_bar_prob},
                          {"big_shape_prob", s.big_shape_prob},
                          {"color_scale", s.color_scale}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.min_shapes = j.at("min_shapes").get<int>();
    s.max_shapes = j.at("max_shapes").get<int>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.blur_radius = j.at("blur_radius").get<int>();
    s.thin_bar_prob = j.at("thin_bar_prob").get<double>();
    if (j.contains("big_shape_prob")) s.big_shape_prob = j.at("big_shape_prob").get<double>();
    if (j.contains("color_scale")) s.color_scale = j.at("color_scale").get<double>();
    return s;
}

nlohmann::json sample_to_json(const DatasetSample& s) {
    return nlohmann::json{
        {"id", s.id}, {"image", s.image_path}, {"label", s.label_path}, {"seed", s.seed}};
}

DatasetSample sample_from_json(const nlohmann::json& j) {
    DatasetSample s;
    s.id = j.at("id").get<std::string>();
    s.image_path = j.at("image").get<std::string>();
    s.label_path = j.at("label").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

} // namespace

DatasetManifest generate_dataset(int n_train, int n_val, const SceneSpec& spec,
                                 const std::string& out_dir) {
    spec.validate();
    if (n_train < 0 || n_val < 0)
        throw std::invalid_argument("generate_dataset: negative split size");
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "labels");
    DatasetManifest manifest;
    manifest.spec = spec;
    auto emit = [&](int index, const char* prefix, std::vector<DatasetSample>& split) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04d", prefix, static_cast<int>(split.size()));
        DatasetSample s;
        s.id = name;
        s.image_path = std::string("images/") + name + ".dsk1";
        s.label_path = std::string("labels/") + name + ".pgm";
        s.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(index));
        SceneSpec scene_spec = spec;
        scene_spec.seed = s.seed;
        Scene scene = generate_scene(scene_spec);
        write_dsk1((fs::path(out_dir) / s.image_path).string(), scene.image);
        write_label_pgm((fs::path(out_dir) / s.label_path).string(), scene.labels);
        split.push_back(std::move(s));
    };
    for (int i = 0; i < n_train; ++i) emit(i, "train", manifest.train);
    for (int i = 0; i < n_val; ++i) emit(n_train + i, "val", manifest.val);

    nlohmann::json j;
    j["spec"] = spec_to_json(spec);
    j["train"] = nlohmann::json::array();
    for (const auto& s : manifest.train) j["train"].push_back(sample_to_json(s));
    j["val"] = nlohmann::json::array();
    for (const auto& s : manifest.val) j["val"].push_back(sample_to_json(s));
    std::ofstream os(fs::path(out_dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + out_dir);
    os << j.dump(2) << "\n";
    return manifest;
}

DatasetManifest read_manifest(const std::string& dataset_dir) {
    std::ifstream is(fs::path(dataset_dir) / "manifest.json");
    if (!is) throw IoError("no manifest.json in " + dataset_dir);
    nlohmann::json j;
    is >> j;
    DatasetManifest m;
    m.spec = spec_from_json(j.at("spec"));
    for (const auto& e : j.at("train")) m.train.push_back(sample_from_json(e));
    for (const auto& e : j.at("val")) m.val.push_back(sample_from_json(e));
    return m;
}

LoadedDataset load_split(const std::string& dataset_dir,
                         const std::vector<DatasetSample>& split) {
    LoadedDataset ds;
    ds.images.reserve(split.size());
    ds.labels.reserve(split.size());
    for (const auto& s : split) {
        ds.images.push_back(read_dsk1<float>((fs::path(dataset_dir) / s.image_path).string()));
        ds.labels.push_back(read_label_pgm((fs::path(dataset_dir) / s.label_path).string()));
    }
    return ds;
}

} // namespace dseg
