#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "denoiser.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synthdata.hpp"
#include "types.hpp"

namespace sectordiff {

// Shared-noise forward perturbation: one noise tensor is broadcast to every
// frame, so pairwise frame differences shrink by exactly sqrt(alpha_bar_t)
// while each frame keeps its standard diffusion marginal.
inline Clip q_sample_shared(const NoiseSchedule& sched, const Clip& clip, int t,
                            const Tensor3& nu) {
    require(!clip.frames.empty(), "shape-mismatch", "clip has no frames");
    require_step_index(sched, t);
    require_same_shape(nu, clip.frames[0], "shared noise vs frame");
    const double a = std::sqrt(sched.alpha_bars[size_t(t)]);
    const double b = std::sqrt(1.0 - sched.alpha_bars[size_t(t)]);
    Clip out;
    out.id = clip.id;
    out.frames.resize(clip.frames.size());
    for (size_t i = 0; i < clip.frames.size(); ++i) {
        const Tensor3& x0 = clip.frames[i];
        require_same_shape(x0, clip.frames[0], "clip frames");
        Tensor3& xt = out.frames[i];
        xt = Tensor3(x0.ch, x0.h, x0.w);
        for (size_t k = 0; k < x0.v.size(); ++k) xt.v[k] = a * x0.v[k] + b * nu.v[k];
    }
    return out;
}

struct BatchItem {
    Clip clip;  // clean frames
    TemporalCond temporal;
    SemanticCond semantic;
    int t = 0;
    bool shared = true;
    Tensor3 nu;                // the one shared noise tensor (shared mode)
    std::vector<Tensor3> eps;  // per-frame independent noise (non-shared mode)
    Clip noised;

    const Tensor3& target(int frame) const {
        return shared ? nu : eps[size_t(frame)];
    }
};

struct SectorBatch {
    std::vector<BatchItem> items;
    int steps = 0;  // schedule length the batch was built against
};

// Draws a training batch: clips uniformly from the training split, one step
// index and one noise draw per clip, conditions passed through label
// dropout. Deterministic in the seed; the non-shared variant draws a fresh
// noise tensor per frame instead (the ablation's baseline forward process).
inline SectorBatch make_batch(uint64_t seed, const ToyDataset& ds, const NoiseSchedule& sched,
                              int batch_clips, double p_drop, bool shared_noise = true) {
    require(!ds.items.empty() && !ds.train_indices.empty(), "empty-dataset",
            "cannot build a batch from an empty training split");
    require(batch_clips >= 1, "invalid-range", "batch needs at least one clip");

    SectorBatch batch;
    batch.steps = sched.steps;
    batch.items.resize(size_t(batch_clips));
    Rng select(seed, "batch-select");
    Rng tdraw(seed, "batch-t");
    Rng drop(seed, "batch-drop");
    for (int k = 0; k < batch_clips; ++k) {
        BatchItem& it = batch.items[size_t(k)];
        const int pick = ds.train_indices[size_t(select.uniform_int(ds.train_indices.size()))];
        const DatasetItem& src = ds.items[size_t(pick)];
        it.clip = src.clip;
        it.t = int(tdraw.uniform_int(uint64_t(sched.steps)));
        auto [y, c] = drop_conditions(drop, src.temporal, src.semantic, p_drop);
        it.temporal = std::move(y);
        it.semantic = c;
        it.shared = shared_noise;

        const Tensor3& f0 = it.clip.frames[0];
        if (shared_noise) {
            Rng noise(seed, "batch-nu", uint64_t(k));
            it.nu = Tensor3(f0.ch, f0.h, f0.w);
            for (double& v : it.nu.v) v = noise.normal();
            it.noised = q_sample_shared(sched, it.clip, it.t, it.nu);
        } else {
            const double a = std::sqrt(sched.alpha_bars[size_t(it.t)]);
            const double b = std::sqrt(1.0 - sched.alpha_bars[size_t(it.t)]);
            it.eps.resize(it.clip.frames.size());
            it.noised.id = it.clip.id;
            it.noised.frames.resize(it.clip.frames.size());
            for (size_t i = 0; i < it.clip.frames.size(); ++i) {
                Rng noise(seed, "batch-eps", uint64_t(k) * 4096 + i);
                Tensor3& e = it.eps[i];
                e = Tensor3(f0.ch, f0.h, f0.w);
                for (double& v : e.v) v = noise.normal();
                const Tensor3& x0 = it.clip.frames[i];
                Tensor3& xt = it.noised.frames[i];
                xt = Tensor3(x0.ch, x0.h, x0.w);
                for (size_t j = 0; j < x0.v.size(); ++j) xt.v[j] = a * x0.v[j] + b * e.v[j];
            }
        }
    }
    return batch;
}

using EpsFn = std::function<Tensor3(const Tensor3& x_t, int t, const Tensor3& flow,
                                    bool flow_null, const SemanticCond& c)>;

// Loss only, for arbitrary predictors (oracles in tests, sanity probes):
// mean over clips, frames and elements of the squared noise-prediction
// residual.
inline double sector_loss_value(const SectorBatch& batch, const EpsFn& predictor) {
    require(!batch.items.empty(), "empty-dataset", "loss over an empty batch");
    long double total = 0.0;
    for (const BatchItem& it : batch.items) {
        const int n = it.clip.n();
        long double clip_acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const Tensor3& flow = it.temporal.flows[size_t(i)];
            Tensor3 pred =
                predictor(it.noised.frames[size_t(i)], it.t, flow, it.temporal.null_flag,
                          it.semantic);
            const Tensor3& tgt = it.target(i);
            require_same_shape(pred, tgt, "prediction vs noise target");
            long double acc = 0.0;
            for (size_t k = 0; k < pred.v.size(); ++k) {
                const double d = tgt.v[k] - pred.v[k];
                acc += (long double)d * d;
            }
            clip_acc += acc / double(pred.v.size());
        }
        total += clip_acc / n;
    }
    const double loss = double(total / batch.items.size());
    require(std::isfinite(loss), "non-finite-loss", "loss diverged");
    return loss;
}

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;
};

// Loss plus the exact analytic parameter gradient. Per-(clip, frame) terms
// are independent, so they may run concurrently; each task writes its own
// buffer and the reduction runs in fixed index order afterwards, keeping the
// result bit-identical for any thread count.
inline LossResult sector_loss(const DenoiserNet& net, const std::vector<double>& theta,
                              const SectorBatch& batch) {
    require(!batch.items.empty(), "empty-dataset", "loss over an empty batch");
    const int b = int(batch.items.size());
    int total_frames = 0;
    std::vector<int> first_task(size_t(b) + 1, 0);
    for (int k = 0; k < b; ++k) {
        total_frames += batch.items[size_t(k)].clip.n();
        first_task[size_t(k) + 1] = total_frames;
    }

    std::vector<double> task_loss(size_t(total_frames), 0.0);
    std::vector<std::vector<double>> task_grad;
    task_grad.resize(size_t(total_frames));
    parallel_for(total_frames, [&](int task) {
        int k = 0;
        while (first_task[size_t(k) + 1] <= task) ++k;
        const int i = task - first_task[size_t(k)];
        const BatchItem& it = batch.items[size_t(k)];
        const int n = it.clip.n();

        NetWorkspace ws;
        Tensor3 pred = predict_eps(net, theta, it.noised.frames[size_t(i)], it.t,
                                   it.temporal.flows[size_t(i)], it.temporal.null_flag,
                                   it.semantic, &ws);
        const Tensor3& tgt = it.target(i);
        require_same_shape(pred, tgt, "prediction vs noise target");

        // d(loss)/d(pred) for loss = mean_clips mean_frames mean_elems r^2
        const double scale = 2.0 / (double(b) * n * double(pred.v.size()));
        Tensor3 cot(pred.ch, pred.h, pred.w);
        long double acc = 0.0;
        for (size_t j = 0; j < pred.v.size(); ++j) {
            const double r = pred.v[j] - tgt.v[j];
            acc += (long double)r * r;
            cot.v[j] = scale * r;
        }
        task_loss[size_t(task)] = double(acc) / (double(b) * n * double(pred.v.size()));

        task_grad[size_t(task)].assign(theta.size(), 0.0);
        net.backward(theta, ws, cot, task_grad[size_t(task)]);
    });

    LossResult out;
    out.grad.assign(theta.size(), 0.0);
    long double loss_acc = 0.0;
    for (int task = 0; task < total_frames; ++task) {
        loss_acc += task_loss[size_t(task)];
        const std::vector<double>& g = task_grad[size_t(task)];
        for (size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += g[j];
    }
    out.loss = double(loss_acc);
    require(std::isfinite(out.loss), "non-finite-loss", "loss diverged");
    for (double g : out.grad)
        require(std::isfinite(g), "non-finite-loss", "gradient diverged");
    return out;
}

}  // namespace sectordiff
