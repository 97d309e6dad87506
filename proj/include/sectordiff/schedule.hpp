#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace sectordiff {

// Precomputed diffusion schedule: beta_t, alpha_t = 1 - beta_t and the
// running products alpha_bar_t for t in [0, steps). Immutable after
// construction and safe to share across threads.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
};

// The forward process has to end close enough to pure noise that every clip
// effectively converges to its shared endpoint at finite depth.
inline constexpr double kTerminalAlphaBarBound = 1e-3;

inline NoiseSchedule schedule_from_betas(std::vector<double> betas, bool enforce_terminal = true) {
    require(betas.size() >= 2, "invalid-range", "schedule needs at least 2 steps");
    NoiseSchedule s;
    s.steps = int(betas.size());
    s.betas = std::move(betas);
    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    double prod = 1.0;
    for (size_t t = 0; t < s.betas.size(); ++t) {
        const double b = s.betas[t];
        require(b > 0.0 && b < 1.0, "invalid-range",
                "beta[" + std::to_string(t) + "] outside (0,1)");
        s.alphas[t] = 1.0 - b;
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
        if (t > 0)
            require(s.alpha_bars[t] < s.alpha_bars[t - 1], "schedule-degenerate",
                    "alpha_bar not strictly decreasing");
    }
    if (enforce_terminal && s.alpha_bars.back() > kTerminalAlphaBarBound)
        fail("schedule-degenerate",
             "alpha_bar at the last step is " + std::to_string(s.alpha_bars.back()) +
                 ", above the " + std::to_string(kTerminalAlphaBarBound) + " bound");
    return s;
}

// Linear beta ramp from beta_start to beta_end inclusive.
inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end,
                                    bool enforce_terminal = true) {
    require(steps >= 2, "invalid-range", "schedule steps must be >= 2");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "invalid-range",
            "require 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<size_t>(steps), 0.0);
    for (int i = 0; i < steps; ++i)
        betas[size_t(i)] = beta_start + (beta_end - beta_start) * double(i) / double(steps - 1);
    return schedule_from_betas(std::move(betas), enforce_terminal);
}

inline void require_step_index(const NoiseSchedule& s, int t) {
    if (t < 0 || t >= s.steps)
        fail("index-out-of-range",
             "step " + std::to_string(t) + " outside [0, " + std::to_string(s.steps) + ")");
}

struct MeanVar {
    Tensor3 mean;
    double var = 0.0;
};

// Closed-form marginal of the forward process at step t:
// mean = sqrt(alpha_bar_t) * x0, var = 1 - alpha_bar_t per element.
inline MeanVar q_mean_var(const NoiseSchedule& s, const Tensor3& x0, int t) {
    require_step_index(s, t);
    const double ab = s.alpha_bars[size_t(t)];
    const double scale = std::sqrt(ab);
    MeanVar mv;
    mv.mean = x0;
    for (double& x : mv.mean.v) x *= scale;
    mv.var = 1.0 - ab;
    return mv;
}

}  // namespace sectordiff
