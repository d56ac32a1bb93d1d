// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense N-d tensor with an optional gradient buffer, plus the DSK1 file format.

#pragma once

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dseg {

/// Dimension / shape violations. Mapped to exit code 1 by the CLI.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// NaN/Inf or other numeric breakdown. Mapped to exit code 2 by the CLI.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_to_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

/// Row-major dense tensor. 4-d tensors follow the (batch, channel, row, col)
/// convention. `grad` is either empty or exactly the same length as `data`;
/// backward passes accumulate into it only when it is present.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor from(std::vector<int> s, std::vector<T> v) {
        Tensor t;
        t.shape = std::move(s);
        if (static_cast<std::int64_t>(v.size()) != numel_of(t.shape))
            throw ShapeError("tensor init: value count does not match shape " +
                             shape_to_string(t.shape));
        t.data = std::move(v);
        return t;
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative dimension in " + shape_to_string(s));
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    // 4-d accessors
    int n() const { return dim(0); }
    int c() const { return dim(1); }
    int h() const { return dim(2); }
    int w() const { return dim(3); }

    T& at(int in, int ic, int iy, int ix) {
        return data[((static_cast<size_t>(in) * c() + ic) * h() + iy) * w() + ix];
    }
    const T& at(int in, int ic, int iy, int ix) const {
        return data[((static_cast<size_t>(in) * c() + ic) * h() + iy) * w() + ix];
    }
    T& gat(int in, int ic, int iy, int ix) {
        return grad[((static_cast<size_t>(in) * c() + ic) * h() + iy) * w() + ix];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool has_grad() const { return !grad.empty(); }

    /// Allocate (and zero) the gradient buffer.
    void require_grad() { grad.assign(data.size(), T(0)); }

    void zero_grad() {
        if (has_grad()) std::fill(grad.begin(), grad.end(), T(0));
    }

    void check_invariants() const {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw ShapeError("tensor data length does not match shape " +
                             shape_to_string(shape));
        if (!grad.empty() && grad.size() != data.size())
            throw ShapeError("tensor grad length does not match data length");
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// NaN/Inf anywhere in `data` (or `grad`) is a hard error.
template <class T>
void check_finite(const Tensor<T>& t, const std::string& context) {
    for (size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t.data[i])))
            throw NumericError(context + ": non-finite value at flat index " +
                               std::to_string(i));
    }
    for (size_t i = 0; i < t.grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t.grad[i])))
            throw NumericError(context + ": non-finite gradient at flat index " +
                               std::to_string(i));
    }
}

// ---------------------------------------------------------------------------
// DSK1 tensor container: magic "DSK1", u8 dtype (0=f32, 1=f64), u8 rank,
// rank x u32 dims, then the raw row-major payload. All fields little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <class T> struct dsk1_dtype_code;
template <> struct dsk1_dtype_code<float> { static constexpr std::uint8_t value = 0; };
template <> struct dsk1_dtype_code<double> { static constexpr std::uint8_t value = 1; };

} // namespace detail

template <class T>
void write_dsk1(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("DSK1", 4);
    std::uint8_t dtype = detail::dsk1_dtype_code<T>::value;
    std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : t.shape) detail::write_u32_le(os, static_cast<std::uint32_t>(d));
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    // payload is stored little-endian; this code assumes a little-endian host
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!os) throw IoError("short write: " + path);
}

/// Read a DSK1 file into a Tensor<T>, converting from the stored precision.
template <class T>
Tensor<T> read_dsk1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DSK1", 4) != 0)
        throw IoError("bad DSK1 magic in " + path);
    std::uint8_t dtype = 0, rank = 0;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (dtype > 1) throw IoError("unknown DSK1 dtype code in " + path);
    std::vector<int> shape(rank);
    for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(detail::read_u32_le(is));
    std::int64_t n = Tensor<T>::numel_of(shape);
    Tensor<T> t(shape);
    if (dtype == detail::dsk1_dtype_code<T>::value) {
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(n * sizeof(T)));
    } else if (dtype == 0) {
        std::vector<float> buf(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        for (std::int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = static_cast<T>(buf[static_cast<size_t>(i)]);
    } else {
        std::vector<double> buf(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        for (std::int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = static_cast<T>(buf[static_cast<size_t>(i)]);
    }
    if (!is) throw IoError("short read: " + path);
    return t;
}

/// Ordered, non-owning view of named parameters. Iteration order is the
/// lexicographic order of the paths, so every traversal is deterministic.
template <class T>
struct ParamStore {
    std::map<std::string, Tensor<T>*> entries;

    void add(const std::string& path, Tensor<T>& t) {
        auto [it, inserted] = entries.emplace(path, &t);
        (void)it;
        if (!inserted) throw ShapeError("duplicate parameter path: " + path);
    }

    Tensor<T>& at(const std::string& path) {
        auto it = entries.find(path);
        if (it == entries.end()) throw ShapeError("unknown parameter path: " + path);
        return *it->second;
    }

    size_t size() const { return entries.size(); }

    void require_all_grads() {
        for (auto& [path, t] : entries)
            if (!t->has_grad()) t->require_grad();
    }

    void zero_all_grads() {
        for (auto& [path, t] : entries) t->zero_grad();
    }
};

} // namespace dseg
