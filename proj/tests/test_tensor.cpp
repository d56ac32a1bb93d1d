// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dseg/rng.hpp"
#include "dseg/tensor.hpp"

using namespace dseg;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
} // namespace

TEST_CASE("tensor invariants") {
    TensorF t({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.rank() == 4);
    CHECK_FALSE(t.has_grad());
    t.require_grad();
    CHECK(t.grad.size() == t.data.size());
    t.check_invariants();
    t.grad.pop_back();
    CHECK_THROWS_AS(t.check_invariants(), ShapeError);
}

TEST_CASE("tensor from rejects bad buffer lengths") {
    CHECK_THROWS_AS(TensorF::from({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
}

TEST_CASE("check_finite flags NaN and Inf") {
    TensorD t({1, 1, 2, 2});
    check_finite(t, "clean");
    t.data[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(check_finite(t, "nan"), NumericError);
    t.data[2] = 0.0;
    t.require_grad();
    t.grad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(check_finite(t, "inf"), NumericError);
}

TEST_CASE("dsk1 round trip preserves bytes (f32)") {
    Rng rng(7);
    TensorF t({2, 3, 5, 4});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-10.0, 10.0));
    const std::string path = temp_path("dseg_test_f32.dsk1");
    write_dsk1(path, t);
    const TensorF back = read_dsk1<float>(path);
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data); // bit-exact
    std::remove(path.c_str());
}

TEST_CASE("dsk1 cross-precision read converts") {
    TensorD t({3});
    t.data = {1.5, -2.25, 1e9};
    const std::string path = temp_path("dseg_test_f64.dsk1");
    write_dsk1(path, t);
    const TensorF as_f32 = read_dsk1<float>(path);
    CHECK(as_f32.data[0] == 1.5f);
    CHECK(as_f32.data[1] == -2.25f);
    const TensorD as_f64 = read_dsk1<double>(path);
    CHECK(as_f64.data == t.data);
    std::remove(path.c_str());
}

TEST_CASE("dsk1 rejects bad magic") {
    const std::string path = temp_path("dseg_test_bad.dsk1");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE1234";
    }
    CHECK_THROWS_AS(read_dsk1<float>(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("param store is ordered and rejects duplicates") {
    TensorF a({2}), b({3});
    ParamStore<float> store;
    store.add("z.weight", a);
    store.add("a.weight", b);
    CHECK_THROWS_AS(store.add("a.weight", b), ShapeError);
    std::vector<std::string> order;
    for (auto& [k, v] : store.entries) order.push_back(k);
    CHECK(order == std::vector<std::string>{"a.weight", "z.weight"});
    store.require_all_grads();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() != c.next_u64());
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}
