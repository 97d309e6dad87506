#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "denoiser.hpp"
#include "digest.hpp"
#include "errors.hpp"

namespace sectordiff {

// Trained-model snapshot: everything needed to resume training (parameters
// plus optimizer moments) or to sample (parameters plus schedule and
// architecture), stamped with the config digest it was produced under.
struct Checkpoint {
    int stage = 2;  // 2 = frame denoiser, 1 = flow-sequence denoiser
    int mode = 0;   // 0 = shared-noise training, 1 = per-frame noise
    uint64_t config_digest = 0;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    NetConfig net;
    std::vector<double> theta;
    bool has_adam = false;
    uint64_t adam_steps = 0;
    std::vector<double> adam_m, adam_v;
};

namespace detail {

constexpr char kCkptMagic[8] = {'S', 'D', 'I', 'F', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

struct ByteSink {
    std::string bytes;
    template <typename T>
    void put(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const char* p = reinterpret_cast<const char*>(&v);
        bytes.append(p, sizeof(T));
    }
    void put_doubles(const std::vector<double>& v) {
        put(uint64_t(v.size()));
        bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
};

struct ByteSource {
    const std::string& bytes;
    size_t pos = 0;
    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        if (pos + sizeof(T) > bytes.size()) fail("checkpoint-corrupt", "truncated file");
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::vector<double> get_doubles() {
        const uint64_t n = get<uint64_t>();
        if (n > (bytes.size() - pos) / sizeof(double))
            fail("checkpoint-corrupt", "array length exceeds file size");
        std::vector<double> v(size_t(n), 0.0);
        std::memcpy(v.data(), bytes.data() + pos, size_t(n) * sizeof(double));
        pos += size_t(n) * sizeof(double);
        return v;
    }
};

}  // namespace detail

inline std::string checkpoint_bytes(const Checkpoint& c) {
    detail::ByteSink s;
    s.bytes.append(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    s.put(detail::kCkptVersion);
    s.put(uint32_t(c.stage));
    s.put(uint32_t(c.mode));
    s.put(c.config_digest);
    s.put(uint32_t(c.T));
    s.put(c.beta_start);
    s.put(c.beta_end);
    s.put(int32_t(c.net.in_channels));
    s.put(int32_t(c.net.out_channels));
    s.put(int32_t(c.net.base_width));
    s.put(int32_t(c.net.mid_depth));
    s.put(int32_t(c.net.emb_dim));
    s.put(int32_t(c.net.classes));
    s.put(int32_t(c.net.time_freqs));
    s.put(c.net.flow_scale);
    s.put_doubles(c.theta);
    s.put(uint8_t(c.has_adam ? 1 : 0));
    if (c.has_adam) {
        s.put(c.adam_steps);
        s.put_doubles(c.adam_m);
        s.put_doubles(c.adam_v);
    }
    const uint64_t digest = fnv1a64(s.bytes.data(), s.bytes.size());
    s.put(digest);
    return std::move(s.bytes);
}

// Write-to-temp-then-rename so a crash can never leave a half-written file
// under the final name.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    const std::string bytes = checkpoint_bytes(c);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("io", "cannot open for writing: " + tmp);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) fail("io", "short write: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail("io", "cannot move " + tmp + " into place: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < sizeof(detail::kCkptMagic) + sizeof(uint64_t) ||
        std::memcmp(bytes.data(), detail::kCkptMagic, sizeof(detail::kCkptMagic)) != 0)
        fail("checkpoint-corrupt", "bad magic in " + path);
    const uint64_t stored =
        fnv1a64(bytes.data(), bytes.size() - sizeof(uint64_t), 0xcbf29ce484222325ull);
    uint64_t trailer;
    std::memcpy(&trailer, bytes.data() + bytes.size() - sizeof(uint64_t), sizeof(uint64_t));
    if (stored != trailer) fail("checkpoint-corrupt", "payload digest mismatch in " + path);

    detail::ByteSource src{bytes, sizeof(detail::kCkptMagic)};
    const auto version = src.get<uint32_t>();
    if (version != detail::kCkptVersion)
        fail("checkpoint-corrupt", "unsupported version " + std::to_string(version));

    Checkpoint c;
    c.stage = int(src.get<uint32_t>());
    c.mode = int(src.get<uint32_t>());
    c.config_digest = src.get<uint64_t>();
    c.T = int(src.get<uint32_t>());
    c.beta_start = src.get<double>();
    c.beta_end = src.get<double>();
    c.net.in_channels = src.get<int32_t>();
    c.net.out_channels = src.get<int32_t>();
    c.net.base_width = src.get<int32_t>();
    c.net.mid_depth = src.get<int32_t>();
    c.net.emb_dim = src.get<int32_t>();
    c.net.classes = src.get<int32_t>();
    c.net.time_freqs = src.get<int32_t>();
    c.net.flow_scale = src.get<double>();
    c.theta = src.get_doubles();
    c.has_adam = src.get<uint8_t>() != 0;
    if (c.has_adam) {
        c.adam_steps = src.get<uint64_t>();
        c.adam_m = src.get_doubles();
        c.adam_v = src.get_doubles();
        if (c.adam_m.size() != c.theta.size() || c.adam_v.size() != c.theta.size())
            fail("checkpoint-corrupt", "optimizer state length mismatch");
    }
    return c;
}

inline uint64_t checkpoint_digest(const Checkpoint& c) {
    const std::string bytes = checkpoint_bytes(c);
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace sectordiff
