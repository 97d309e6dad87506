#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "errors.hpp"
#include "optimizer.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "schedule.hpp"
#include "train.hpp"
#include "types.hpp"

namespace sectordiff {

// ---------------------------------------------------------------------------
// sequence model: the whole N-frame flow stack is one diffusion subject

// Network shape for the flow-sequence model: 2N subject channels (dx, dy per
// frame) plus one conditioning channel carrying the reference frame. The
// subject is stored divided by flow_scale so its values are O(1) like image
// data.
inline NetConfig flow_net_config(int n_frames, int height, int base_width = 12, int mid_depth = 1,
                                 int emb_dim = 48, int classes = 3, int time_freqs = 16) {
    require(n_frames >= 1 && n_frames <= 64, "invalid-range", "frame count must be in [1,64]");
    require(height >= 8, "invalid-range", "frame size too small");
    NetConfig c;
    c.in_channels = 2 * n_frames + 1;
    c.out_channels = 2 * n_frames;
    c.base_width = base_width;
    c.mid_depth = mid_depth;
    c.emb_dim = emb_dim;
    c.classes = classes;
    c.time_freqs = time_freqs;
    c.flow_scale = height / 2.0;
    return c;
}

// Frame count encoded in a sequence-model architecture; rejects frame-model
// shapes.
inline int flow_model_frames(const NetConfig& c) {
    require(c.out_channels >= 2 && c.out_channels % 2 == 0 &&
                c.in_channels == c.out_channels + 1,
            "geometry-mismatch", "network is not a flow-sequence model");
    return c.out_channels / 2;
}

// Flow stack -> one (2N, H, W) subject tensor, scaled down by flow_scale.
inline Tensor3 pack_flow_sequence(const std::vector<Tensor3>& flows, double flow_scale) {
    require(!flows.empty(), "shape-mismatch", "empty flow sequence");
    require(flow_scale > 0.0, "invalid-range", "flow scale must be positive");
    const Tensor3& f0 = flows[0];
    require(f0.ch == 2, "shape-mismatch", "flow fields must have 2 channels");
    Tensor3 z(2 * int(flows.size()), f0.h, f0.w);
    for (size_t i = 0; i < flows.size(); ++i) {
        require_same_shape(flows[i], f0, "flow stack entries");
        double* dst = z.plane(2 * int(i));
        const std::vector<double>& src = flows[i].v;
        for (size_t j = 0; j < src.size(); ++j) dst[j] = src[j] / flow_scale;
    }
    return z;
}

inline FlowSequence unpack_flow_sequence(const Tensor3& z, double flow_scale) {
    require(z.ch >= 2 && z.ch % 2 == 0, "shape-mismatch",
            "subject tensor needs an even channel count");
    require(flow_scale > 0.0, "invalid-range", "flow scale must be positive");
    FlowSequence flows(size_t(z.ch / 2));
    for (size_t i = 0; i < flows.size(); ++i) {
        Tensor3& f = flows[i];
        f = Tensor3(2, z.h, z.w);
        const double* src = z.plane(2 * int(i));
        for (size_t j = 0; j < f.v.size(); ++j) f.v[j] = src[j] * flow_scale;
    }
    return flows;
}

// Noisy subject plus the clean reference frame as the last input channel.
inline Tensor3 flow_model_input(const Tensor3& z_t, const Tensor3& reference) {
    require(reference.ch == 1 && reference.h == z_t.h && reference.w == z_t.w, "shape-mismatch",
            "reference frame shape " + reference.shape_str() + " does not match the subject");
    Tensor3 input(z_t.ch + 1, z_t.h, z_t.w);
    std::copy(z_t.v.begin(), z_t.v.end(), input.v.begin());
    std::copy(reference.v.begin(), reference.v.end(), input.v.begin() + z_t.v.size());
    return input;
}

// ---------------------------------------------------------------------------
// training

struct FlowBatchItem {
    Tensor3 z0;         // scaled flow stack
    Tensor3 reference;  // clean frame 0 of the source clip
    SemanticCond semantic;
    int t = 0;
    Tensor3 eps;  // noise target over the whole subject tensor
    Tensor3 z_t;  // noised subject
};

struct FlowBatch {
    std::vector<FlowBatchItem> items;
    int steps = 0;
};

// Plain conditional diffusion batch: one step index and one full-tensor
// noise draw per clip. No label dropout and no noise sharing — the sequence
// is a single diffusion object and training is always fully conditioned.
inline FlowBatch make_flow_batch(uint64_t seed, const ToyDataset& ds, const NoiseSchedule& sched,
                                 int batch_clips, double flow_scale) {
    require(!ds.items.empty() && !ds.train_indices.empty(), "empty-dataset",
            "cannot build a batch from an empty training split");
    require(batch_clips >= 1, "invalid-range", "batch needs at least one clip");

    FlowBatch batch;
    batch.steps = sched.steps;
    batch.items.resize(size_t(batch_clips));
    Rng select(seed, "flow-select");
    Rng tdraw(seed, "flow-t");
    for (int k = 0; k < batch_clips; ++k) {
        FlowBatchItem& it = batch.items[size_t(k)];
        const int pick = ds.train_indices[size_t(select.uniform_int(ds.train_indices.size()))];
        const DatasetItem& src = ds.items[size_t(pick)];
        it.z0 = pack_flow_sequence(src.temporal.flows, flow_scale);
        it.reference = src.clip.frames[0];
        it.semantic = src.semantic;
        it.t = int(tdraw.uniform_int(uint64_t(sched.steps)));

        Rng noise(seed, "flow-eps", uint64_t(k));
        it.eps = Tensor3(it.z0.ch, it.z0.h, it.z0.w);
        for (double& v : it.eps.v) v = noise.normal();
        const double a = std::sqrt(sched.alpha_bars[size_t(it.t)]);
        const double b = std::sqrt(1.0 - sched.alpha_bars[size_t(it.t)]);
        it.z_t = Tensor3(it.z0.ch, it.z0.h, it.z0.w);
        for (size_t j = 0; j < it.z0.v.size(); ++j)
            it.z_t.v[j] = a * it.z0.v[j] + b * it.eps.v[j];
    }
    return batch;
}

using FlowEpsFn = std::function<Tensor3(const Tensor3& z_t, int t, const Tensor3& reference,
                                        const SemanticCond& c)>;

// Loss only, for arbitrary predictors (oracles in tests): mean over clips
// and elements of the squared noise-prediction residual.
inline double flow_loss_value(const FlowBatch& batch, const FlowEpsFn& predictor) {
    require(!batch.items.empty(), "empty-dataset", "loss over an empty batch");
    long double total = 0.0;
    for (const FlowBatchItem& it : batch.items) {
        Tensor3 pred = predictor(it.z_t, it.t, it.reference, it.semantic);
        require_same_shape(pred, it.eps, "prediction vs noise target");
        long double acc = 0.0;
        for (size_t j = 0; j < pred.v.size(); ++j) {
            const double r = pred.v[j] - it.eps.v[j];
            acc += (long double)r * r;
        }
        total += acc / double(pred.v.size());
    }
    const double loss = double(total / (long double)batch.items.size());
    require(std::isfinite(loss), "non-finite-loss", "loss diverged");
    return loss;
}

// Loss plus the exact analytic parameter gradient; items run concurrently
// into private buffers, reduced in index order (bit-identical for any
// thread count).
inline LossResult flow_loss(const DenoiserNet& net, const std::vector<double>& phi,
                            const FlowBatch& batch) {
    require(!batch.items.empty(), "empty-dataset", "loss over an empty batch");
    const int b = int(batch.items.size());
    const NetConfig& cfg = net.config();

    std::vector<double> task_loss(size_t(b), 0.0);
    std::vector<std::vector<double>> task_grad;
    task_grad.resize(size_t(b));
    parallel_for(b, [&](int k) {
        const FlowBatchItem& it = batch.items[size_t(k)];
        require(it.z_t.ch == cfg.out_channels, "geometry-mismatch",
                "batch subject has " + std::to_string(it.z_t.ch) + " channels, model expects " +
                    std::to_string(cfg.out_channels));
        const int row = it.semantic.null_flag ? cfg.classes : it.semantic.class_id;

        NetWorkspace ws;
        Tensor3 pred = net.forward(phi, flow_model_input(it.z_t, it.reference), it.t, row,
                                   false, &ws);
        require_same_shape(pred, it.eps, "prediction vs noise target");

        const double scale = 2.0 / (double(b) * double(pred.v.size()));
        Tensor3 cot(pred.ch, pred.h, pred.w);
        long double acc = 0.0;
        for (size_t j = 0; j < pred.v.size(); ++j) {
            const double r = pred.v[j] - it.eps.v[j];
            acc += (long double)r * r;
            cot.v[j] = scale * r;
        }
        task_loss[size_t(k)] = double(acc) / (double(b) * double(pred.v.size()));

        task_grad[size_t(k)].assign(phi.size(), 0.0);
        net.backward(phi, ws, cot, task_grad[size_t(k)]);
    });

    LossResult out;
    out.grad.assign(phi.size(), 0.0);
    long double loss_acc = 0.0;
    for (int k = 0; k < b; ++k) {
        loss_acc += task_loss[size_t(k)];
        for (size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += task_grad[size_t(k)][j];
    }
    out.loss = double(loss_acc);
    require(std::isfinite(out.loss), "non-finite-loss", "loss diverged");
    for (double g : out.grad)
        require(std::isfinite(g), "non-finite-loss", "gradient diverged");
    return out;
}

// Sequence-model training run. TrainParams is shared with the frame model;
// p_drop and shared_noise do not apply here (always fully conditioned, one
// noise tensor per subject) and are ignored.
inline TrainResult train_flow_model(const DenoiserNet& net, std::vector<double>& phi, Adam& adam,
                                    const ToyDataset& ds, const NoiseSchedule& sched,
                                    const TrainParams& p, const StepHook& on_step = nullptr,
                                    const CheckpointHook& on_checkpoint = nullptr) {
    require(p.steps >= 1, "invalid-range", "need at least one training step");
    require(p.checkpoint_interval >= 1, "invalid-range",
            "checkpoint interval must be at least 1");
    require(phi.size() == net.param_count(), "shape-mismatch",
            "parameter vector does not match the network");

    TrainResult res;
    res.losses.reserve(size_t(p.steps));
    const auto start = std::chrono::steady_clock::now();
    for (int step = 1; step <= p.steps; ++step) {
        const uint64_t batch_seed = derive_seed(p.seed, "flow-batch", uint64_t(step));
        FlowBatch batch =
            make_flow_batch(batch_seed, ds, sched, p.batch_clips, net.config().flow_scale);
        LossResult loss = flow_loss(net, phi, batch);
        adam.step(phi, loss.grad);
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

// ---------------------------------------------------------------------------
// sampling

// Unguided DDIM walk over the subject tensor (the model is trained fully
// conditioned, so there is no null direction to steer against), one network
// evaluation per step, deterministic in the seed. After the walk the stack
// is rescaled, clamped to the frame size, and the reference-frame slice is
// projected to the exact zero field. `pre_projection_residual`, when given,
// receives the max |value| of that slice before projection — a measure of
// how well the model learned that frame 1 never moves.
inline FlowSequence generate_flow_sequence(const DenoiserNet& net, const std::vector<double>& phi,
                                           const NoiseSchedule& sched, int num_steps,
                                           const Tensor3& reference, const SemanticCond& c,
                                           uint64_t seed, SampleStats* stats = nullptr,
                                           double* pre_projection_residual = nullptr) {
    const NetConfig& cfg = net.config();
    flow_model_frames(cfg);  // shape sanity
    require(reference.ch == 1, "shape-mismatch", "reference frame must be single-channel");
    for (double v : reference.v)
        require(std::isfinite(v) && v >= -1.0 && v <= 1.0, "invalid-range",
                "reference frame values must lie in [-1,1]");
    if (!c.null_flag)
        require(c.class_id >= 0 && c.class_id < cfg.classes, "condition-mismatch",
                "class id out of range");

    const SamplerConfig walk = make_sampler_config(sched, num_steps, 1.0, 0.0);
    Rng rng(seed, "flow-nu");
    Tensor3 z(cfg.out_channels, reference.h, reference.w);
    for (double& v : z.v) v = rng.normal();

    const int row = c.null_flag ? cfg.classes : c.class_id;
    auto eps_at = [&](const Tensor3& z_t, int t) {
        if (stats) stats->denoiser_evals += 1;
        return net.forward(phi, flow_model_input(z_t, reference), t, row, false);
    };
    for (int k = 0; k + 1 < walk.num_steps; ++k) {
        Tensor3 eps = eps_at(z, walk.step_indices[size_t(k)]);
        z = ddim_step(sched, z, eps, walk.step_indices[size_t(k)],
                      walk.step_indices[size_t(k) + 1], 0.0);
    }
    Tensor3 eps = eps_at(z, walk.step_indices.back());
    Tensor3 z0 = ddim_x0(sched, z, eps, walk.step_indices.back());

    FlowSequence flows = unpack_flow_sequence(z0, cfg.flow_scale);
    if (pre_projection_residual) {
        double m = 0.0;
        for (double v : flows[0].v) m = std::max(m, std::fabs(v));
        *pre_projection_residual = m;
    }
    const double bound = double(reference.h);
    for (Tensor3& f : flows) clamp_inplace(f, -bound, bound);
    std::fill(flows[0].v.begin(), flows[0].v.end(), 0.0);
    return flows;
}

// ---------------------------------------------------------------------------
// debug export: text header + raw doubles

inline void write_flow_sequence(const std::string& path, const FlowSequence& flows) {
    require(!flows.empty(), "shape-mismatch", "empty flow sequence");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("io", "cannot open for writing: " + path);
    out << "FLOWSEQ " << flows.size() << " " << flows[0].h << " " << flows[0].w << "\n";
    for (const Tensor3& f : flows) {
        require_same_shape(f, flows[0], "flow stack entries");
        out.write(reinterpret_cast<const char*>(f.v.data()),
                  std::streamsize(f.v.size() * sizeof(double)));
    }
    if (!out) fail("io", "short write: " + path);
}

inline FlowSequence read_flow_sequence(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open: " + path);
    std::string magic;
    size_t n = 0;
    int h = 0, w = 0;
    in >> magic >> n >> h >> w;
    if (magic != "FLOWSEQ" || n == 0 || h <= 0 || w <= 0)
        fail("io", "not a flow-sequence file: " + path);
    in.get();  // the newline after the header
    FlowSequence flows(n);
    for (Tensor3& f : flows) {
        f = Tensor3(2, h, w);
        in.read(reinterpret_cast<char*>(f.v.data()), std::streamsize(f.v.size() * sizeof(double)));
    }
    if (!in || in.peek() != std::char_traits<char>::eof())
        fail("io", "size does not match the header: " + path);
    return flows;
}

// ---------------------------------------------------------------------------
// three-step inference

struct T2VResult {
    Tensor3 reference;  // step-(1) output frame
    FlowSequence flows;  // step-(2) output
    Clip clip;          // final clip; frames[0] is bitwise-equal to reference
    Tensor3 nu_T;       // the terminal noise steps (1) and (3) both start from
    uint64_t walk_seed = 0;  // per-step noise stream shared by (1) and (3)
};

// Text-to-video from one class label: (1) generate a reference frame from a
// zero-flow condition, (2) generate a flow sequence conditioned on it,
// (3) regenerate the full clip from the SAME terminal noise under the
// generated flows. Steps (1) and (3) share both the terminal noise and the
// per-step noise stream, so the frame-0 trajectory of step (3) retraces
// step (1) exactly — the output's first frame is bitwise-identical to the
// reference even when eta > 0.
inline T2VResult t2v_pipeline(const DenoiserNet& frame_net, const std::vector<double>& theta,
                              const DenoiserNet& flow_net, const std::vector<double>& phi,
                              const NoiseSchedule& sched, const SamplerConfig& cfg,
                              int flow_steps, int height, int width, const SemanticCond& c,
                              uint64_t seed, SampleStats* stats = nullptr) {
    const int n = flow_model_frames(flow_net.config());
    require(frame_net.config().out_channels == 1, "geometry-mismatch",
            "frame model must predict single-channel frames");
    require(frame_net.config().in_channels == 3, "geometry-mismatch",
            "frame model must take frame + flow input");
    require(frame_net.config().flow_scale == flow_net.config().flow_scale, "geometry-mismatch",
            "the two stages disagree on the flow normalization");
    require(height >= 8 && width >= 8, "invalid-range", "frame size too small");

    Rng nu_rng(seed, "t2v-nu");
    Tensor3 nu_T(1, height, width);
    for (double& v : nu_T.v) v = nu_rng.normal();
    const uint64_t walk_seed = derive_seed(seed, "t2v-z");

    T2VResult out;
    out.nu_T = nu_T;
    out.walk_seed = walk_seed;
    Clip ref = sample_clip(frame_net, theta, sched, cfg, nu_T,
                           TemporalCond::zero(1, height, width), c, 1, walk_seed, stats);
    out.reference = ref.frames[0];
    out.flows = generate_flow_sequence(flow_net, phi, sched, flow_steps, out.reference, c,
                                       derive_seed(seed, "t2v-flow"), stats);
    TemporalCond temporal = temporal_from_sequence(out.flows);
    temporal.validate();
    out.clip = sample_clip(frame_net, theta, sched, cfg, nu_T, temporal, c, n, walk_seed, stats);
    return out;
}

}  // namespace sectordiff
