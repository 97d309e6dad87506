#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "denoiser.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "types.hpp"

namespace sectordiff {

struct SamplerConfig {
    int num_steps = 20;
    double guidance_scale = 7.5;
    double eta = 0.0;  // 0 = deterministic
    std::vector<int> step_indices;  // strictly decreasing, T-1 down to 0
};

// Uniform stride over the schedule: the first entry is T-1, the last is 0,
// and the walk ends with an x0 extraction at step 0 (see sample_clip).
inline SamplerConfig make_sampler_config(const NoiseSchedule& sched, int num_steps,
                                         double guidance_scale, double eta) {
    require(num_steps >= 2 && num_steps <= sched.steps, "invalid-range",
            "sampler steps must be in [2, schedule length]");
    require(guidance_scale >= 0.0, "invalid-range", "guidance scale must be non-negative");
    require(eta >= 0.0 && eta <= 1.0, "invalid-range", "eta must be in [0,1]");
    SamplerConfig cfg;
    cfg.num_steps = num_steps;
    cfg.guidance_scale = guidance_scale;
    cfg.eta = eta;
    cfg.step_indices.resize(size_t(num_steps));
    for (int k = 0; k < num_steps; ++k) {
        const double pos = double(sched.steps - 1) * (num_steps - 1 - k) / (num_steps - 1);
        cfg.step_indices[size_t(k)] = int(std::lround(pos));
    }
    for (int k = 1; k < num_steps; ++k)
        require(cfg.step_indices[size_t(k)] < cfg.step_indices[size_t(k - 1)], "invalid-range",
                "step indices are not strictly decreasing");
    return cfg;
}

inline void validate_sampler_config(const NoiseSchedule& sched, const SamplerConfig& cfg) {
    require(int(cfg.step_indices.size()) == cfg.num_steps && cfg.num_steps >= 2,
            "invalid-range", "sampler config step count mismatch");
    require(cfg.step_indices.front() == sched.steps - 1 && cfg.step_indices.back() == 0,
            "invalid-range", "step indices must run from T-1 down to 0");
    for (int k = 1; k < cfg.num_steps; ++k)
        require(cfg.step_indices[size_t(k)] < cfg.step_indices[size_t(k - 1)], "invalid-range",
                "step indices are not strictly decreasing");
    require(cfg.eta >= 0.0 && cfg.eta <= 1.0 && cfg.guidance_scale >= 0.0, "invalid-range",
            "sampler config out of range");
}

struct SampleStats {
    std::atomic<long> denoiser_evals{0};
};

// Dual-condition classifier-free combination against the joint null pair:
// eps_hat = eps(null,null) + scale * (eps(y,c) - eps(null,null)).
// Exactly two network evaluations, whatever the scale.
inline Tensor3 cfg_epsilon(const DenoiserNet& net, const std::vector<double>& theta,
                           const Tensor3& x_t, int t, const Tensor3& flow, bool flow_null,
                           const SemanticCond& c, double scale, SampleStats* stats = nullptr) {
    require(scale >= 0.0, "invalid-range", "guidance scale must be non-negative");
    Tensor3 uncond = predict_eps(net, theta, x_t, t, flow, true, SemanticCond::null());
    Tensor3 cond = predict_eps(net, theta, x_t, t, flow, flow_null, c);
    if (stats) stats->denoiser_evals += 2;
    Tensor3 out(cond.ch, cond.h, cond.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = uncond.v[i] + scale * (cond.v[i] - uncond.v[i]);
    return out;
}

// The epsilon-parameterized x0 estimate at step t.
inline Tensor3 ddim_x0(const NoiseSchedule& sched, const Tensor3& x_t, const Tensor3& eps_hat,
                       int t) {
    require_step_index(sched, t);
    require_same_shape(x_t, eps_hat, "state vs predicted noise");
    const double ab = sched.alpha_bars[size_t(t)];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor3 x0(x_t.ch, x_t.h, x_t.w);
    for (size_t i = 0; i < x0.v.size(); ++i) x0.v[i] = (x_t.v[i] - b * eps_hat.v[i]) / a;
    return x0;
}

// One eta-parameterized reverse transition t_from -> t_to. At eta = 1 with
// adjacent steps this matches the ancestral posterior; at eta = 0 it is the
// deterministic update and z is unused.
inline Tensor3 ddim_step(const NoiseSchedule& sched, const Tensor3& x_t, const Tensor3& eps_hat,
                         int t_from, int t_to, double eta, const Tensor3* z = nullptr) {
    require_step_index(sched, t_from);
    require_step_index(sched, t_to);
    require(t_to < t_from, "step-order",
            "reverse step must decrease: " + std::to_string(t_from) + " -> " +
                std::to_string(t_to));
    require(eta >= 0.0 && eta <= 1.0, "invalid-range", "eta must be in [0,1]");
    require_same_shape(x_t, eps_hat, "state vs predicted noise");

    const double ab_from = sched.alpha_bars[size_t(t_from)];
    const double ab_to = sched.alpha_bars[size_t(t_to)];
    double sigma = 0.0;
    if (eta > 0.0) {
        require(z != nullptr, "invalid-range", "eta > 0 needs a noise draw");
        require_same_shape(*z, x_t, "step noise vs state");
        sigma = eta * std::sqrt((1.0 - ab_to) / (1.0 - ab_from)) *
                std::sqrt(1.0 - ab_from / ab_to);
    }
    const double a_from = std::sqrt(ab_from), b_from = std::sqrt(1.0 - ab_from);
    const double a_to = std::sqrt(ab_to);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_to - sigma * sigma));

    Tensor3 out(x_t.ch, x_t.h, x_t.w);
    for (size_t i = 0; i < out.v.size(); ++i) {
        const double x0 = (x_t.v[i] - b_from * eps_hat.v[i]) / a_from;
        out.v[i] = a_to * x0 + dir * eps_hat.v[i] + (eta > 0.0 ? sigma * z->v[i] : 0.0);
    }
    return out;
}

// Generates a whole clip as a fan of independent reverse trajectories, every
// one starting from the SAME terminal noise nu_T. Frame i sees its own flow
// condition and the shared semantic label. With eta > 0 the per-step noise
// is drawn from (step_noise_seed, step index) only, so it is shared across
// the frames of the clip, mirroring the shared forward noise. Output frames
// are clamped to [-1, 1] at the very end only.
inline Clip sample_clip(const DenoiserNet& net, const std::vector<double>& theta,
                        const NoiseSchedule& sched, const SamplerConfig& cfg, const Tensor3& nu_T,
                        const TemporalCond& temporal, const SemanticCond& semantic, int n_frames,
                        uint64_t step_noise_seed = 0, SampleStats* stats = nullptr) {
    validate_sampler_config(sched, cfg);
    require(n_frames >= 1, "invalid-range", "need at least one frame");
    require(temporal.n() == n_frames, "condition-mismatch",
            "temporal condition provides " + std::to_string(temporal.n()) + " frames for " +
                std::to_string(n_frames));
    require(nu_T.ch == net.config().out_channels, "shape-mismatch",
            "terminal noise channel count mismatch");

    // precompute the shared per-step noise so frames cannot diverge
    std::vector<Tensor3> step_noise;
    if (cfg.eta > 0.0) {
        step_noise.resize(size_t(cfg.num_steps));
        for (int k = 1; k < cfg.num_steps; ++k) {
            Rng rng(step_noise_seed, "ddim-z", uint64_t(k));
            Tensor3 zt(nu_T.ch, nu_T.h, nu_T.w);
            for (double& v : zt.v) v = rng.normal();
            step_noise[size_t(k)] = std::move(zt);
        }
    }

    Clip out;
    out.frames.resize(size_t(n_frames));
    parallel_for(n_frames, [&](int i) {
        const Tensor3& flow = temporal.flows[size_t(i)];
        Tensor3 x = nu_T;
        for (int k = 0; k + 1 < cfg.num_steps; ++k) {
            const int t_from = cfg.step_indices[size_t(k)];
            const int t_to = cfg.step_indices[size_t(k) + 1];
            Tensor3 eps = cfg_epsilon(net, theta, x, t_from, flow, temporal.null_flag, semantic,
                                      cfg.guidance_scale, stats);
            const Tensor3* z = cfg.eta > 0.0 ? &step_noise[size_t(k) + 1] : nullptr;
            x = ddim_step(sched, x, eps, t_from, t_to, cfg.eta, z);
        }
        // terminal x0 extraction at step 0
        Tensor3 eps = cfg_epsilon(net, theta, x, cfg.step_indices.back(), flow,
                                  temporal.null_flag, semantic, cfg.guidance_scale, stats);
        Tensor3 x0 = ddim_x0(sched, x, eps, cfg.step_indices.back());
        clamp_inplace(x0, -1.0, 1.0);
        out.frames[size_t(i)] = std::move(x0);
    });
    return out;
}

}  // namespace sectordiff
