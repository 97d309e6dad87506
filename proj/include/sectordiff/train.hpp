#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <vector>

#include "optimizer.hpp"
#include "sector.hpp"

namespace sectordiff {

struct TrainParams {
    int steps = 400;
    int batch_clips = 8;
    double lr = 1e-3;
    double p_drop = 0.1;
    uint64_t seed = 1;
    bool shared_noise = true;
    int checkpoint_interval = 200;
};

struct TrainResult {
    std::vector<double> losses;  // one entry per step
    double final_loss = 0.0;
    double seconds = 0.0;
};

/// Per-step observer: (step index starting at 1, loss, wall seconds so far).
using StepHook = std::function<void(int, double, double)>;
// Called after the optimizer update at every checkpoint interval and at the
// final step.
using CheckpointHook = std::function<void(int)>;

// One denoiser training run. Batches are keyed by (seed, step), so the loop
// is a deterministic function of its arguments regardless of thread count.
inline TrainResult train_denoiser(const DenoiserNet& net, std::vector<double>& theta, Adam& adam,
                                  const ToyDataset& ds, const NoiseSchedule& sched,
                                  const TrainParams& p, const StepHook& on_step = nullptr,
                                  const CheckpointHook& on_checkpoint = nullptr) {
    require(p.steps >= 1, "invalid-range", "need at least one training step");
    require(p.checkpoint_interval >= 1, "invalid-range",
            "checkpoint interval must be at least 1");
    require(theta.size() == net.param_count(), "shape-mismatch",
            "parameter vector does not match the network");

    TrainResult res;
    res.losses.reserve(size_t(p.steps));
    const auto start = std::chrono::steady_clock::now();
    for (int step = 1; step <= p.steps; ++step) {
        const uint64_t batch_seed = derive_seed(p.seed, "train-batch", uint64_t(step));
        SectorBatch batch =
            make_batch(batch_seed, ds, sched, p.batch_clips, p.p_drop, p.shared_noise);
        LossResult loss = sector_loss(net, theta, batch);
        adam.step(theta, loss.grad);
        res.losses.push_back(loss.loss);
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_step) on_step(step, loss.loss, elapsed);
        if (on_checkpoint && (step % p.checkpoint_interval == 0 || step == p.steps))
            on_checkpoint(step);
    }
    res.final_loss = res.losses.back();
    res.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

}  // namespace sectordiff
