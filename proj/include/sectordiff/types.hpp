#pragma once

#include <string>
#include <vector>

#include "tensor.hpp"

namespace sectordiff {

// An N-frame sequence of C x H x W frames. Data values live in [-1, 1];
// frame 0 is the designated reference frame. Intermediate diffusion states
// reuse this container and legitimately exceed the data range.
struct Clip {
    std::string id;
    std::vector<Tensor3> frames;

    int n() const { return int(frames.size()); }
};

inline uint64_t clip_digest(const Clip& c) {
    uint64_t h = fnv1a64(c.id);
    for (const Tensor3& f : c.frames) h = tensor_digest(f, h);
    return h;
}

// Discrete class label standing in for a free-form semantic prompt.
// null_flag marks the classifier-free null label; when set, class_id is
// meaningless.
struct SemanticCond {
    int class_id = 0;
    bool null_flag = false;

    static SemanticCond null() { return SemanticCond{0, true}; }
};

// Per-frame backward displacement fields relative to frame 0, stored as
// (dx, dy) in pixels: channel 0 is dx, channel 1 is dy, and flow[i] maps a
// frame-i pixel p to its frame-0 origin p + flow(p). Frame 0 carries the
// zero field. null_flag marks the classifier-free null label for the whole
// condition.
struct TemporalCond {
    std::vector<Tensor3> flows;
    bool null_flag = false;

    int n() const { return int(flows.size()); }

    static TemporalCond null(int n, int h, int w) {
        TemporalCond t;
        t.flows.assign(size_t(n), Tensor3(2, h, w));
        t.null_flag = true;
        return t;
    }

    static TemporalCond zero(int n, int h, int w) {
        TemporalCond t;
        t.flows.assign(size_t(n), Tensor3(2, h, w));
        return t;
    }

    void validate() const {
        require(!flows.empty(), "condition-mismatch", "temporal condition has no frames");
        for (const Tensor3& f : flows) {
            require(f.ch == 2, "shape-mismatch", "flow field must have 2 channels");
            require_same_shape(f, flows[0], "temporal condition frames");
            for (double x : f.v)
                require(std::isfinite(x) && std::fabs(x) <= double(f.h),
                        "invalid-range", "flow displacement exceeds sanity bound");
        }
        for (double x : flows[0].v)
            require(x == 0.0, "condition-mismatch", "reference-frame flow must be the zero field");
    }
};

// Stage-1 subject: the whole per-clip flow stack as one diffusion object.
// Same storage convention as TemporalCond::flows; entry 0 is identically
// zero after projection.
using FlowSequence = std::vector<Tensor3>;

inline TemporalCond temporal_from_sequence(FlowSequence flows) {
    TemporalCond t;
    t.flows = std::move(flows);
    return t;
}

}  // namespace sectordiff
