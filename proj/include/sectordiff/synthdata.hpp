#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace sectordiff {

// Parametric path in pixel units. Frame i (0-based) sits at
// start + velocity * i + curvature * i^2.
struct Trajectory {
    double x = 0, y = 0;
    double vx = 0, vy = 0;
    double ax = 0, ay = 0;

    double pos_x(int i) const { return x + vx * i + ax * double(i) * i; }
    double pos_y(int i) const { return y + vy * i + ay * double(i) * i; }
};

struct ToyClipSpec {
    int shape_class = 0;
    Trajectory traj;
    int frame_size = 16;   // H == W
    int n_frames = 8;
    double intensity = 1.0;  // peak value in (0, 1]
    double radius = 2.9;     // shape half-extent in pixels

    bool in_frame() const {
        const double lo = radius, hi = frame_size - 1 - radius;
        for (int i = 0; i < n_frames; ++i) {
            const double px = traj.pos_x(i), py = traj.pos_y(i);
            if (px < lo || px > hi || py < lo || py > hi) return false;
        }
        return true;
    }
};

inline constexpr int kMaxShapeClasses = 6;

inline bool shape_contains(int shape_class, double dx, double dy, double r) {
    switch (shape_class) {
        case 0:  // disc
            return dx * dx + dy * dy <= r * r;
        case 1:  // square
            return std::max(std::fabs(dx), std::fabs(dy)) <= r;
        case 2:  // cross
            return (std::fabs(dx) <= r / 3 && std::fabs(dy) <= r) ||
                   (std::fabs(dy) <= r / 3 && std::fabs(dx) <= r);
        case 3:  // diamond
            return std::fabs(dx) + std::fabs(dy) <= r;
        case 4:  // ring
            return dx * dx + dy * dy <= r * r && dx * dx + dy * dy >= r * r / 4;
        case 5:  // triangle, apex up
            return dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) / 2;
        default:
            fail("invalid-range", "shape class " + std::to_string(shape_class) + " not defined");
    }
}

// Anti-aliased rasterization on a 4x4 subpixel grid. Background is -1,
// full coverage reaches the spec intensity. Pixel centers sit at integer
// coordinates, x = column, y = row.
inline Tensor3 render_frame(const ToyClipSpec& spec, int frame_index) {
    const int hw = spec.frame_size;
    Tensor3 out(1, hw, hw);
    const double cx = spec.traj.pos_x(frame_index);
    const double cy = spec.traj.pos_y(frame_index);
    const double span = spec.intensity + 1.0;
    for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx) {
                    const double px = x + (sx + 0.5) / 4.0 - 0.5;
                    const double py = y + (sy + 0.5) / 4.0 - 0.5;
                    hits += shape_contains(spec.shape_class, px - cx, py - cy, spec.radius);
                }
            out.at(0, y, x) = -1.0 + span * (hits / 16.0);
        }
    }
    return out;
}

inline Clip render_clip(const ToyClipSpec& spec, std::string id = "clip") {
    require(spec.n_frames >= 1, "invalid-range", "clip needs at least one frame");
    require(spec.intensity > 0.0 && spec.intensity <= 1.0, "invalid-range",
            "intensity must be in (0,1]");
    if (!spec.in_frame())
        fail("out-of-frame", "trajectory leaves the frame for clip " + id);
    Clip clip;
    clip.id = std::move(id);
    clip.frames.resize(size_t(spec.n_frames));
    for (int i = 0; i < spec.n_frames; ++i) clip.frames[size_t(i)] = render_frame(spec, i);
    return clip;
}

// Dense backward flow for frame i: every pixel maps to its frame-0 origin
// at p + f, so the field is the broadcast position difference
// pos(0) - pos(i). Frame 0 gets the zero field.
inline Tensor3 analytic_flow(const ToyClipSpec& spec, int frame_index) {
    require(frame_index >= 0 && frame_index < spec.n_frames, "index-out-of-range",
            "flow frame index " + std::to_string(frame_index));
    Tensor3 f(2, spec.frame_size, spec.frame_size);
    const double dx = spec.traj.pos_x(0) - spec.traj.pos_x(frame_index);
    const double dy = spec.traj.pos_y(0) - spec.traj.pos_y(frame_index);
    double* fx = f.plane(0);
    double* fy = f.plane(1);
    const size_t plane = size_t(spec.frame_size) * spec.frame_size;
    for (size_t i = 0; i < plane; ++i) {
        fx[i] = dx;
        fy[i] = dy;
    }
    return f;
}

inline double bilinear_sample(const double* plane, int h, int w, double x, double y) {
    // Border clamp: out-of-bounds samples take the edge value.
    x = std::min(double(w - 1), std::max(0.0, x));
    y = std::min(double(h - 1), std::max(0.0, y));
    const int x0 = std::min(int(x), w - 2 >= 0 ? w - 2 : 0);
    const int y0 = std::min(int(y), h - 2 >= 0 ? h - 2 : 0);
    const double fx = x - x0, fy = y - y0;
    const double a = plane[size_t(y0) * w + x0];
    const double b = plane[size_t(y0) * w + std::min(x0 + 1, w - 1)];
    const double c = plane[size_t(y0 + 1 < h ? y0 + 1 : y0) * w + x0];
    const double d = plane[size_t(y0 + 1 < h ? y0 + 1 : y0) * w + std::min(x0 + 1, w - 1)];
    return a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy + d * fx * fy;
}

// Backward warping: out(p) = frame(p - f(p)), bilinear. With f the backward
// flow of frame i this reconstructs the reference frame.
inline Tensor3 warp(const Tensor3& frame, const Tensor3& flow) {
    require(flow.ch == 2, "shape-mismatch", "flow must have 2 channels");
    require(flow.h == frame.h && flow.w == frame.w, "shape-mismatch",
            "warp: frame " + frame.shape_str() + " vs flow " + flow.shape_str());
    Tensor3 out(frame.ch, frame.h, frame.w);
    const double* fx = flow.plane(0);
    const double* fy = flow.plane(1);
    for (int c = 0; c < frame.ch; ++c) {
        const double* src = frame.plane(c);
        double* dst = out.plane(c);
        for (int y = 0; y < frame.h; ++y)
            for (int x = 0; x < frame.w; ++x) {
                const size_t i = size_t(y) * frame.w + x;
                dst[i] = bilinear_sample(src, frame.h, frame.w, x - fx[i], y - fy[i]);
            }
    }
    return out;
}

struct DataParams {
    int height = 16;
    int width = 16;
    int frames = 8;
    int classes = 3;
    uint64_t split_seed = 7;
    double holdout_fraction = 0.2;
};

struct DatasetItem {
    ToyClipSpec spec;
    Clip clip;
    TemporalCond temporal;
    SemanticCond semantic;
    int bucket = 0;
    bool heldout = false;
};

struct ToyDataset {
    std::vector<DatasetItem> items;
    std::vector<int> train_indices;
    std::vector<int> heldout_indices;

    uint64_t digest() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const DatasetItem& it : items) {
            h = fnv1a64(&it.semantic.class_id, sizeof(int), h);
            h = fnv1a64(&it.bucket, sizeof(int), h);
            h = clip_digest(it.clip) ^ (h * 0x100000001b3ull);
            for (const Tensor3& f : it.temporal.flows) h = tensor_digest(f, h);
        }
        return h;
    }
};

// Motion bucket for the unseen-combination split: 0 for near-static clips,
// else 1 + velocity-direction octant.
inline int trajectory_bucket(const Trajectory& t) {
    const double speed = std::hypot(t.vx, t.vy);
    if (speed < 0.25) return 0;
    const double angle = std::atan2(t.vy, t.vx);  // (-pi, pi]
    int octant = int(std::floor((angle + std::numbers::pi) / (std::numbers::pi / 4.0)));
    octant = std::min(7, std::max(0, octant));
    return 1 + octant;
}

inline ToyClipSpec sample_clip_spec(Rng& rng, const DataParams& p) {
    require(p.height == p.width, "invalid-range", "toy frames are square");
    require(p.classes >= 2 && p.classes <= kMaxShapeClasses, "invalid-range",
            "class count must be in [2, " + std::to_string(kMaxShapeClasses) + "]");
    ToyClipSpec spec;
    spec.frame_size = p.height;
    spec.n_frames = p.frames;
    spec.radius = 0.18 * p.height;
    spec.shape_class = int(rng.uniform_int(uint64_t(p.classes)));
    spec.intensity = rng.uniform(0.25, 1.0);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double lo = spec.radius, hi = p.height - 1 - spec.radius;
        spec.traj.x = rng.uniform(lo, hi);
        spec.traj.y = rng.uniform(lo, hi);
        const double speed = rng.uniform(0.0, 1.3);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        spec.traj.vx = speed * std::cos(angle);
        spec.traj.vy = speed * std::sin(angle);
        spec.traj.ax = spec.traj.ay = 0.0;
        if (rng.uniform() < 0.3) {
            spec.traj.ax = rng.uniform(-0.05, 0.05);
            spec.traj.ay = rng.uniform(-0.05, 0.05);
        }
        if (spec.in_frame()) return spec;
    }
    fail("out-of-frame", "could not sample an in-frame trajectory");
}

// Deterministic in (seed, params). Each item carries ground-truth flows and
// its class label; held-out items are (class, motion-bucket) combinations
// absent from the training split.
inline ToyDataset build_dataset(uint64_t seed, int num_clips, const DataParams& p) {
    require(num_clips >= 1, "empty-dataset", "num_clips must be >= 1");
    ToyDataset ds;
    ds.items.resize(size_t(num_clips));

    Rng spec_rng(seed, "dataset-specs");
    for (int k = 0; k < num_clips; ++k) {
        DatasetItem& it = ds.items[size_t(k)];
        it.spec = sample_clip_spec(spec_rng, p);
        it.semantic.class_id = it.spec.shape_class;
        it.bucket = trajectory_bucket(it.spec.traj);
    }
    parallel_for(num_clips, [&](int k) {
        DatasetItem& it = ds.items[size_t(k)];
        char id[32];
        std::snprintf(id, sizeof(id), "clip_%06d", k);
        it.clip = render_clip(it.spec, id);
        it.temporal.flows.resize(size_t(p.frames));
        for (int i = 0; i < p.frames; ++i) it.temporal.flows[size_t(i)] = analytic_flow(it.spec, i);
        it.temporal.validate();
    });

    for (int k = 0; k < num_clips; ++k) {
        DatasetItem& it = ds.items[size_t(k)];
        const uint64_t combo = uint64_t(it.semantic.class_id) * 64 + uint64_t(it.bucket);
        it.heldout = Rng(p.split_seed, "split", combo).uniform() < p.holdout_fraction;
    }
    // The training split must never be empty.
    bool any_train = false;
    for (const DatasetItem& it : ds.items) any_train |= !it.heldout;
    if (!any_train)
        for (DatasetItem& it : ds.items) it.heldout = false;
    for (int k = 0; k < num_clips; ++k)
        (ds.items[size_t(k)].heldout ? ds.heldout_indices : ds.train_indices).push_back(k);
    return ds;
}

}  // namespace sectordiff
