// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0

#include "dseg/image_io.hpp"

#include <cmath>
#include <fstream>

namespace dseg {

namespace {

// Reads one PNM header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& is) {
    std::string tok;
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (std::isspace(ch)) {
            ch = is.get();
        } else {
            break;
        }
    }
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = is.get();
    }
    return tok;
}

} // namespace

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P5\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.px.data()),
             static_cast<std::streamsize>(img.px.size()));
    if (!os) throw IoError("short write: " + path);
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    if (next_token(is) != "P5") throw IoError("not a binary PGM: " + path);
    GrayImage img;
    img.w = std::stoi(next_token(is));
    img.h = std::stoi(next_token(is));
    const int maxval = std::stoi(next_token(is));
    if (maxval != 255) throw IoError("unsupported PGM maxval in " + path);
    img.px.resize(static_cast<size_t>(img.w) * img.h);
    is.read(reinterpret_cast<char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
    if (!is) throw IoError("short read: " + path);
    return img;
}

void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.px.data()),
             static_cast<std::streamsize>(img.px.size()));
    if (!os) throw IoError("short write: " + path);
}

RgbImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    if (next_token(is) != "P6") throw IoError("not a binary PPM: " + path);
    RgbImage img;
    img.w = std::stoi(next_token(is));
    img.h = std::stoi(next_token(is));
    const int maxval = std::stoi(next_token(is));
    if (maxval != 255) throw IoError("unsupported PPM maxval in " + path);
    img.px.resize(static_cast<size_t>(img.w) * img.h * 3);
    is.read(reinterpret_cast<char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
    if (!is) throw IoError("short read: " + path);
    return img;
}

void hsv_to_rgb(double hue_deg, double sat, double val, std::uint8_t out[3]) {
    const double c = val * sat;
    const double hp = hue_deg / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1)      { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else             { r = c; b = x; }
    const double m = val - c;
    out[0] = static_cast<std::uint8_t>(std::lround(std::min(1.0, r + m) * 255.0));
    out[1] = static_cast<std::uint8_t>(std::lround(std::min(1.0, g + m) * 255.0));
    out[2] = static_cast<std::uint8_t>(std::lround(std::min(1.0, b + m) * 255.0));
}

} // namespace dseg
