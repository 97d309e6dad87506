#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"

namespace sectordiff {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment vectors are part of the training state
// and travel with checkpoints so a resumed run continues the same sequence.
class Adam {
public:
    Adam(size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {
        require(cfg.lr > 0.0, "invalid-range", "learning rate must be positive");
        require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, "invalid-range", "beta1 must be in [0,1)");
        require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "invalid-range", "beta2 must be in [0,1)");
        require(cfg.eps > 0.0, "invalid-range", "adam eps must be positive");
    }

    void step(std::vector<double>& theta, const std::vector<double>& grad) {
        require(theta.size() == m_.size() && grad.size() == m_.size(), "shape-mismatch",
                "optimizer state does not match the parameter vector");
        for (double g : grad)
            require(std::isfinite(g), "non-finite-update", "gradient has a non-finite entry");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t i = 0; i < theta.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            require(std::isfinite(theta[i]), "non-finite-update",
                    "parameter became non-finite after the update");
        }
    }

    const AdamConfig& config() const { return cfg_; }
    int64_t steps_taken() const { return t_; }
    const std::vector<double>& m() const { return m_; }
    const std::vector<double>& v() const { return v_; }

    // Restores state saved in a checkpoint.
    void restore(std::vector<double> m, std::vector<double> v, int64_t t) {
        require(m.size() == m_.size() && v.size() == v_.size(), "shape-mismatch",
                "restored moments do not match the parameter vector");
        require(t >= 0, "invalid-range", "step counter must be non-negative");
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

}  // namespace sectordiff
