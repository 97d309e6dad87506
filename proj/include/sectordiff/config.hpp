#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "digest.hpp"
#include "errors.hpp"

namespace sectordiff {

// Everything an experiment run depends on, addressable as `section.key` in
// the text format. Defaults reproduce the standard toy run.
struct ExperimentConfig {
    struct Schedule {
        int T = 1000;
        double beta_start = 1e-4;
        double beta_end = 0.02;
    } schedule;
    struct Data {
        int H = 16;
        int W = 16;
        int N = 8;
        int K = 3;
        int num_clips = 512;
        uint64_t split_seed = 7;
    } data;
    struct Model {
        int width = 12;
        int depth = 1;
        double p_drop = 0.1;
    } model;
    struct Train {
        int steps = 400;
        int batch_clips = 8;
        double lr = 1e-3;
        int checkpoint_interval = 200;
        uint64_t seed = 1;
    } train;
    struct Sample {
        int num_steps = 20;
        double guidance_scale = 7.5;
        double eta = 0.0;
        uint64_t seed = 1;
    } sample;
};

namespace detail {

enum class FieldKind { int32, uint64, real };

struct FieldDef {
    const char* key;
    FieldKind kind;
    size_t offset;
};

// One table drives parsing, serialization, and the digest, so they can
// never drift apart.
inline const std::vector<FieldDef>& config_fields() {
    using C = ExperimentConfig;
    static const std::vector<FieldDef> defs = {
        {"schedule.T", FieldKind::int32, offsetof(C, schedule.T)},
        {"schedule.beta_start", FieldKind::real, offsetof(C, schedule.beta_start)},
        {"schedule.beta_end", FieldKind::real, offsetof(C, schedule.beta_end)},
        {"data.H", FieldKind::int32, offsetof(C, data.H)},
        {"data.W", FieldKind::int32, offsetof(C, data.W)},
        {"data.N", FieldKind::int32, offsetof(C, data.N)},
        {"data.K", FieldKind::int32, offsetof(C, data.K)},
        {"data.num_clips", FieldKind::int32, offsetof(C, data.num_clips)},
        {"data.split_seed", FieldKind::uint64, offsetof(C, data.split_seed)},
        {"model.width", FieldKind::int32, offsetof(C, model.width)},
        {"model.depth", FieldKind::int32, offsetof(C, model.depth)},
        {"model.p_drop", FieldKind::real, offsetof(C, model.p_drop)},
        {"train.steps", FieldKind::int32, offsetof(C, train.steps)},
        {"train.batch_clips", FieldKind::int32, offsetof(C, train.batch_clips)},
        {"train.lr", FieldKind::real, offsetof(C, train.lr)},
        {"train.checkpoint_interval", FieldKind::int32, offsetof(C, train.checkpoint_interval)},
        {"train.seed", FieldKind::uint64, offsetof(C, train.seed)},
        {"sample.num_steps", FieldKind::int32, offsetof(C, sample.num_steps)},
        {"sample.guidance_scale", FieldKind::real, offsetof(C, sample.guidance_scale)},
        {"sample.eta", FieldKind::real, offsetof(C, sample.eta)},
        {"sample.seed", FieldKind::uint64, offsetof(C, sample.seed)},
    };
    return defs;
}

inline void* field_ptr(ExperimentConfig& c, const FieldDef& d) {
    return reinterpret_cast<char*>(&c) + d.offset;
}
inline const void* field_ptr(const ExperimentConfig& c, const FieldDef& d) {
    return reinterpret_cast<const char*>(&c) + d.offset;
}

inline std::string field_to_string(const ExperimentConfig& c, const FieldDef& d) {
    char buf[40];
    switch (d.kind) {
        case FieldKind::int32:
            std::snprintf(buf, sizeof(buf), "%d", *static_cast<const int*>(field_ptr(c, d)));
            break;
        case FieldKind::uint64:
            std::snprintf(buf, sizeof(buf), "%llu",
                          (unsigned long long)*static_cast<const uint64_t*>(field_ptr(c, d)));
            break;
        case FieldKind::real:
            std::snprintf(buf, sizeof(buf), "%.17g",
                          *static_cast<const double*>(field_ptr(c, d)));
            break;
    }
    return buf;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

}  // namespace detail

// Range checks, each naming the offending field.
inline void validate_config(const ExperimentConfig& c) {
    auto check = [](bool ok, const char* field, const char* what) {
        if (!ok) fail("invalid-range", std::string(field) + ": " + what);
    };
    check(c.schedule.T >= 2, "schedule.T", "need at least two steps");
    check(c.schedule.beta_start > 0.0 && c.schedule.beta_start < 1.0, "schedule.beta_start",
          "must be in (0,1)");
    check(c.schedule.beta_end > c.schedule.beta_start && c.schedule.beta_end < 1.0,
          "schedule.beta_end", "must be in (beta_start,1)");
    check(c.data.H >= 8 && c.data.H % 4 == 0, "data.H", "must be a multiple of 4, at least 8");
    check(c.data.W == c.data.H, "data.W", "frames are square");
    check(c.data.N >= 1 && c.data.N <= 64, "data.N", "must be in [1,64]");
    check(c.data.K >= 2 && c.data.K <= 6, "data.K", "must be in [2,6]");
    check(c.data.num_clips >= 1, "data.num_clips", "must be positive");
    check(c.model.width >= 2 && c.model.width <= 64, "model.width", "must be in [2,64]");
    check(c.model.depth >= 1 && c.model.depth <= 8, "model.depth", "must be in [1,8]");
    check(c.model.p_drop >= 0.0 && c.model.p_drop < 1.0, "model.p_drop", "must be in [0,1)");
    check(c.train.steps >= 1, "train.steps", "must be positive");
    check(c.train.batch_clips >= 1, "train.batch_clips", "must be positive");
    check(c.train.lr > 0.0, "train.lr", "must be positive");
    check(c.train.checkpoint_interval >= 1, "train.checkpoint_interval", "must be positive");
    check(c.sample.num_steps >= 2 && c.sample.num_steps <= c.schedule.T, "sample.num_steps",
          "must be in [2, schedule.T]");
    check(c.sample.guidance_scale >= 0.0, "sample.guidance_scale", "must be non-negative");
    check(c.sample.eta >= 0.0 && c.sample.eta <= 1.0, "sample.eta", "must be in [0,1]");
}

// Line-oriented `section.key = value`; '#' starts a comment; blank lines
// allowed. Unknown keys are an error, not a warning.
inline ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t eol = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        const size_t hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        const size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            fail("parse-error",
                 "line " + std::to_string(line_no) + ": expected `section.key = value`");
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string value(detail::trim(line.substr(eq + 1)));
        if (key.empty() || value.empty())
            fail("parse-error", "line " + std::to_string(line_no) + ": empty key or value");

        const detail::FieldDef* def = nullptr;
        for (const auto& d : detail::config_fields())
            if (key == d.key) {
                def = &d;
                break;
            }
        if (!def) fail("unknown-key", "line " + std::to_string(line_no) + ": " + key);

        try {
            size_t used = 0;
            switch (def->kind) {
                case detail::FieldKind::int32:
                    *static_cast<int*>(detail::field_ptr(cfg, *def)) = std::stoi(value, &used);
                    break;
                case detail::FieldKind::uint64:
                    *static_cast<uint64_t*>(detail::field_ptr(cfg, *def)) =
                        std::stoull(value, &used);
                    break;
                case detail::FieldKind::real:
                    *static_cast<double*>(detail::field_ptr(cfg, *def)) = std::stod(value, &used);
                    break;
            }
            if (used != value.size())
                fail("parse-error",
                     "line " + std::to_string(line_no) + ": trailing characters in value");
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail("parse-error", "line " + std::to_string(line_no) + ": cannot parse value `" +
                                    value + "` for " + key);
        }
    }
    validate_config(cfg);
    return cfg;
}

// Canonical text form: every field, table order, one per line. Parsing it
// back reproduces the config exactly.
inline std::string config_to_text(const ExperimentConfig& c) {
    std::string out;
    for (const auto& d : detail::config_fields()) {
        out += d.key;
        out += " = ";
        out += detail::field_to_string(c, d);
        out += "\n";
    }
    return out;
}

inline uint64_t config_digest(const ExperimentConfig& c) { return fnv1a64(config_to_text(c)); }

}  // namespace sectordiff
