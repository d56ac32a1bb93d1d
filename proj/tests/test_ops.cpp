// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dseg/gradcheck.hpp"
#include "dseg/ops.hpp"
#include "dseg/rng.hpp"

using namespace dseg;

TEST_CASE("conv2d identity kernel is an exact identity map") {
    TensorF x = TensorF::full({1, 1, 3, 3}, 1.0f);
    Rng rng(3);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    TensorF w({1, 1, 3, 3});
    w.data[4] = 1.0f; // center tap
    TensorF b({1});
    const TensorF y = conv2d(x, w, b, ConvSpec{1, 1, false});
    CHECK(y.shape == x.shape);
    CHECK(y.data == x.data); // bit-exact
}

TEST_CASE("conv2d box kernel sums the window") {
    TensorF x = TensorF::full({1, 1, 4, 4}, 1.0f);
    TensorF w = TensorF::full({1, 1, 3, 3}, 1.0f);
    TensorF b({1});
    const TensorF y = conv2d(x, w, b, ConvSpec{1, 0, false});
    CHECK(y.shape == std::vector<int>{1, 1, 2, 2});
    for (float v : y.data) CHECK(v == doctest::Approx(9.0f));
}

TEST_CASE("conv2d shape contract and errors") {
    TensorF x({2, 4, 8, 8});
    TensorF w({4, 1, 3, 3});
    TensorF b({4});
    const TensorF y = conv2d(x, w, b, ConvSpec{2, 1, true});
    CHECK(y.shape == std::vector<int>{2, 4, 4, 4});

    CHECK_THROWS_AS(conv2d(x, w, b, ConvSpec{0, 1, true}), std::invalid_argument);
    TensorF w_bad({4, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w_bad, b, ConvSpec{1, 1, true}), ShapeError);
    TensorF w_mismatch({4, 5, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w_mismatch, b, ConvSpec{1, 1, false}), ShapeError);
}

TEST_CASE("conv2d depthwise random instance passes the finite-difference check") {
    Rng rng(11);
    TensorD x({2, 4, 8, 8});
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    TensorD w({4, 1, 3, 3});
    for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
    TensorD b({4});
    for (auto& v : b.data) v = rng.uniform(-0.5, 0.5);
    const ConvSpec spec{2, 1, true};
    x.require_grad();
    w.require_grad();
    b.require_grad();
    TensorD out = conv2d(x, w, b, spec);
    CHECK(out.shape == std::vector<int>{2, 4, 4, 4});
    TensorD r(out.shape);
    for (auto& v : r.data) v = rng.uniform(-1.0, 1.0);
    conv2d_backward(x, w, b, spec, r);
    auto fwd = [&]() {
        const TensorD y = conv2d(x, w, b, spec);
        double s = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * r.data[i];
        return s;
    };
    const GradCheckReport rep = grad_check({{"x", &x}, {"w", &w}, {"b", &b}}, fwd, 1e-5, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("bilinear_resize identity is bit-exact") {
    Rng rng(5);
    TensorF x({1, 2, 6, 7});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    for (bool ac : {false, true}) {
        const TensorF y = bilinear_resize(x, 6, 7, ac);
        CHECK(y.data == x.data);
    }
}

TEST_CASE("bilinear_resize corner preservation with align_corners") {
    const TensorF x = TensorF::from({1, 1, 2, 2}, {0.0f, 1.0f, 2.0f, 3.0f});
    const TensorF y = bilinear_resize(x, 4, 4, /*align_corners=*/true);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.0f));
    CHECK(y.at(0, 0, 0, 3) == doctest::Approx(1.0f));
    CHECK(y.at(0, 0, 3, 0) == doctest::Approx(2.0f));
    CHECK(y.at(0, 0, 3, 3) == doctest::Approx(3.0f));
}

TEST_CASE("bilinear_resize 2x2 to 3x3 center is the 4-point mean") {
    // source coordinate of the center cell is (0.5, 0.5): the hand formula
    // gives (0+1+2+3)/4
    const TensorF x = TensorF::from({1, 1, 2, 2}, {0.0f, 1.0f, 2.0f, 3.0f});
    const TensorF y = bilinear_resize(x, 3, 3, /*align_corners=*/true);
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(1.5f));
}

TEST_CASE("concat_channels stacks and splits") {
    TensorF a = TensorF::full({1, 2, 4, 4}, 1.0f);
    TensorF b = TensorF::full({1, 3, 4, 4}, 0.0f);
    const TensorF y = concat_channels(a, b);
    CHECK(y.shape == std::vector<int>{1, 5, 4, 4});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 16; ++i) CHECK(y.at(0, c, i / 4, i % 4) == 1.0f);
    for (int c = 2; c < 5; ++c)
        for (int i = 0; i < 16; ++i) CHECK(y.at(0, c, i / 4, i % 4) == 0.0f);

    a.require_grad();
    b.require_grad();
    const TensorF ones = TensorF::full(y.shape, 1.0f);
    concat_channels_backward(a, b, ones);
    for (float g : a.grad) CHECK(g == 1.0f);
    for (float g : b.grad) CHECK(g == 1.0f);

    TensorF mismatched({1, 2, 3, 4});
    CHECK_THROWS_AS(concat_channels(a, mismatched), ShapeError);
}

TEST_CASE("elementwise basics") {
    Rng rng(9);
    TensorF x({1, 1, 3, 3});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const TensorF z = sub(x, x);
    for (float v : z.data) CHECK(v == 0.0f);

    TensorF zero = TensorF::zeros({1, 1, 1, 1});
    CHECK(sigmoid(zero).data[0] == doctest::Approx(0.5));

    TensorF tiny = TensorF::full({1, 1, 1, 1}, 0.0f);
    const TensorF lg = log_clamped(tiny);
    CHECK(lg.data[0] == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("softmax_channel: symmetry, positivity, unit sums") {
    const TensorF x = TensorF::from({1, 3, 1, 1}, {1.0f, 1.0f, 1.0f});
    const TensorF y = softmax_channel(x);
    for (float v : y.data) CHECK(v == doctest::Approx(1.0 / 3.0));

    Rng rng(17);
    TensorF z({2, 5, 4, 4});
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-8.0, 8.0));
    const TensorF p = softmax_channel(z);
    for (float v : p.data) CHECK(v > 0.0f);
    for (int n = 0; n < 2; ++n)
        for (int yy = 0; yy < 4; ++yy)
            for (int xx = 0; xx < 4; ++xx) {
                double s = 0.0;
                for (int c = 0; c < 5; ++c) s += p.at(n, c, yy, xx);
                CHECK(std::fabs(s - 1.0) < 1e-6);
            }
}

TEST_CASE("grad_check on a linear op reports zero error") {
    TensorD x({1, 1, 2, 2});
    x.data = {1.0, 2.0, 3.0, 4.0};
    x.require_grad();
    for (auto& g : x.grad) g = 2.0; // analytic gradient of y = 2x summed
    auto fwd = [&]() {
        double s = 0.0;
        for (double v : x.data) s += 2.0 * v;
        return s;
    };
    const GradCheckReport rep = grad_check({{"x", &x}}, fwd, 1e-5, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("ops are deterministic across repeated evaluation") {
    Rng rng(23);
    TensorF x({1, 3, 6, 6});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    TensorF w({2, 3, 3, 3});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    TensorF b({2});
    const TensorF y1 = conv2d(x, w, b, ConvSpec{1, 1, false});
    const TensorF y2 = conv2d(x, w, b, ConvSpec{1, 1, false});
    CHECK(y1.data == y2.data);
}
