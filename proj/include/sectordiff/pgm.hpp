#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "digest.hpp"
#include "errors.hpp"
#include "types.hpp"

namespace sectordiff {

// [-1,1] -> [0,255], round half up: -1 -> 0, 0 -> 128, 1 -> 255.
inline uint8_t to_pgm_byte(double v) {
    const long p = std::lround(127.5 * (v + 1.0));
    return uint8_t(std::min(255l, std::max(0l, p)));
}

inline std::string pgm_bytes(const Tensor3& frame) {
    require(frame.ch == 1, "shape-mismatch", "PGM export needs a single-channel frame");
    std::string out = "P5\n" + std::to_string(frame.w) + " " + std::to_string(frame.h) + "\n255\n";
    out.reserve(out.size() + frame.v.size());
    for (double v : frame.v) out.push_back(char(to_pgm_byte(v)));
    return out;
}

inline void write_pgm(const std::string& path, const Tensor3& frame) {
    const std::string bytes = pgm_bytes(frame);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("io", "cannot open for writing: " + path);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) fail("io", "short write: " + path);
}

inline Tensor3 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        fail("io", "not an 8-bit P5 file: " + path);
    in.get();  // single whitespace after the header
    Tensor3 frame(1, h, w);
    std::vector<unsigned char> raw(size_t(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (size_t(in.gcount()) != raw.size()) fail("io", "truncated pixel data: " + path);
    for (size_t i = 0; i < raw.size(); ++i) frame.v[i] = raw[i] / 127.5 - 1.0;
    return frame;
}

// frame_0001.pgm ... frame_000N.pgm in `dir`. Returns the written paths.
inline std::vector<std::string> write_frames(const std::string& dir, const Clip& clip) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail("io", "cannot create " + dir + ": " + ec.message());
    std::vector<std::string> paths;
    for (int i = 0; i < clip.n(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.pgm", i + 1);
        const std::string path = dir + "/" + name;
        write_pgm(path, clip.frames[size_t(i)]);
        paths.push_back(path);
    }
    return paths;
}

// All frames side by side on one canvas, for eyeballing a clip quickly.
inline Tensor3 contact_sheet(const Clip& clip) {
    require(clip.n() >= 1, "shape-mismatch", "empty clip");
    const Tensor3& f0 = clip.frames[0];
    require(f0.ch == 1, "shape-mismatch", "contact sheet needs single-channel frames");
    Tensor3 sheet(1, f0.h, f0.w * clip.n());
    for (int i = 0; i < clip.n(); ++i) {
        const Tensor3& f = clip.frames[size_t(i)];
        require_same_shape(f, f0, "contact sheet frames");
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w; ++x) sheet.at(0, y, i * f.w + x) = f.at(0, y, x);
    }
    return sheet;
}

// Key: value lines; no timestamps, so identical runs produce identical
// manifests.
inline void write_manifest(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("io", "cannot open for writing: " + path);
    for (const auto& [k, v] : entries) out << k << ": " << v << "\n";
    if (!out) fail("io", "short write: " + path);
}

}  // namespace sectordiff
