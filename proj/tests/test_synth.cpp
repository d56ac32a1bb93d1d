// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dseg/loss.hpp"
#include "dseg/synth.hpp"

using namespace dseg;
namespace fs = std::filesystem;

TEST_CASE("scene generation is deterministic in the seed") {
    SceneSpec spec;
    spec.seed = 1234;
    const Scene a = generate_scene(spec);
    const Scene b = generate_scene(spec);
    CHECK(a.image.data == b.image.data);
    CHECK(a.labels.v == b.labels.v);
    spec.seed = 1235;
    const Scene c = generate_scene(spec);
    CHECK(a.labels.v != c.labels.v);
}

TEST_CASE("forcing zero shapes yields a uniform background") {
    SceneSpec spec;
    spec.min_shapes = 0;
    spec.max_shapes = 0;
    const Scene s = generate_scene(spec);
    for (std::uint8_t v : s.labels.v) CHECK(v == 0);
}

TEST_CASE("every generated scene contains at least two classes") {
    for (int seed = 0; seed < 100; ++seed) {
        SceneSpec spec;
        spec.seed = static_cast<std::uint64_t>(seed);
        const Scene s = generate_scene(spec);
        std::set<std::uint8_t> classes(s.labels.v.begin(), s.labels.v.end());
        CHECK(classes.size() >= 2);
        // and its labels always produce a non-empty edge ground truth
        const EdgeMask edges = edge_gt_from_labels(s.labels, 2);
        std::int64_t on = 0;
        for (std::uint8_t v : edges.v) on += v;
        CHECK(on > 0);
    }
}

TEST_CASE("interior colors match the class palette within noise tolerance") {
    for (int seed = 0; seed < 20; ++seed) {
        SceneSpec spec;
        spec.seed = 500 + static_cast<std::uint64_t>(seed);
        const Scene s = generate_scene(spec);
        // interior = farther than blur reach from any other class
        const EdgeMask band = edge_gt_from_labels(s.labels, spec.blur_radius + 1);
        const int H = spec.height, W = spec.width;
        std::vector<double> sum(static_cast<size_t>(spec.num_classes) * 3, 0.0);
        std::vector<int> count(static_cast<size_t>(spec.num_classes), 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (band.at(0, y, x)) continue;
                const std::uint8_t cls = s.labels.at(0, y, x);
                ++count[cls];
                for (int c = 0; c < 3; ++c)
                    sum[static_cast<size_t>(cls) * 3 + c] +=
                        s.image.data[(static_cast<size_t>(c) * H + y) * W + x];
            }
        for (int cls = 0; cls < spec.num_classes; ++cls) {
            if (count[cls] < 16) continue;
            float base[3];
            class_color(cls, base);
            for (int c = 0; c < 3; ++c) {
                const double mean = sum[static_cast<size_t>(cls) * 3 + c] / count[cls];
                // clamping to [0,1] skews extremes slightly; 3 sigma is ample
                CHECK(std::fabs(mean - base[c]) < 3.0 * spec.noise_sigma);
            }
        }
    }
}

TEST_CASE("dataset round trip: manifest, splits, determinism") {
    const fs::path dir = fs::temp_directory_path() / "dseg_synth_test";
    fs::remove_all(dir);
    SceneSpec spec;
    spec.seed = 42;
    const DatasetManifest m = generate_dataset(6, 3, spec, dir.string());
    CHECK(m.train.size() == 6);
    CHECK(m.val.size() == 3);

    const DatasetManifest back = read_manifest(dir.string());
    CHECK(back.train.size() == 6);
    CHECK(back.val.size() == 3);
    CHECK(back.spec.seed == spec.seed);
    CHECK(back.spec.noise_sigma == doctest::Approx(spec.noise_sigma));

    // split seeds are pairwise distinct
    std::set<std::uint64_t> seeds;
    for (const auto& s : back.train) seeds.insert(s.seed);
    for (const auto& s : back.val) seeds.insert(s.seed);
    CHECK(seeds.size() == 9);

    const LoadedDataset train = load_split(dir.string(), back.train);
    CHECK(train.images.size() == 6);
    CHECK(train.images[0].shape == std::vector<int>{3, 64, 64});
    CHECK(train.labels[0].h == 64);

    // regenerating produces byte-identical files
    const fs::path dir2 = fs::temp_directory_path() / "dseg_synth_test2";
    fs::remove_all(dir2);
    generate_dataset(6, 3, spec, dir2.string());
    const LoadedDataset train2 = load_split(dir2.string(), back.train);
    for (size_t i = 0; i < train.images.size(); ++i) {
        CHECK(train.images[i].data == train2.images[i].data);
        CHECK(train.labels[i].v == train2.labels[i].v);
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("scene spec validation") {
    SceneSpec spec;
    spec.height = 63;
    CHECK_THROWS_AS(generate_scene(spec), std::invalid_argument);
    spec = SceneSpec{};
    spec.min_shapes = 4;
    spec.max_shapes = 2;
    CHECK_THROWS_AS(generate_scene(spec), std::invalid_argument);
    spec = SceneSpec{};
    spec.num_classes = 1;
    CHECK_THROWS_AS(generate_scene(spec), std::invalid_argument);
}
