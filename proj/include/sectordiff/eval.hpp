#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "sampler.hpp"
#include "sector.hpp"
#include "synthdata.hpp"
#include "types.hpp"

namespace sectordiff {

// ---------------------------------------------------------------------------
// clip features (stand-in for a learned video embedding)

// Deterministic, fixed length for a given frame count:
//   per frame: mass, centroid x/y, central second moments xx/yy/xy   (6N)
//   between consecutive frames: centroid displacement dx/dy          (2(N-1))
//   global: intensity mean, std, fraction > -0.5, fraction > 0       (4)
// Intensity weights are (v+1)/2 so an exact background pixel weighs zero.
inline std::vector<double> clip_features(const Clip& clip) {
    require(!clip.frames.empty(), "shape-mismatch", "clip has no frames");
    const int n = clip.n();
    std::vector<double> feats;
    feats.reserve(size_t(6 * n + 2 * (n - 1) + 4));

    std::vector<double> cxs, cys;
    long double gsum = 0.0, gsq = 0.0;
    long double above_bg = 0.0, above_mid = 0.0;
    size_t gcount = 0;

    for (const Tensor3& f : clip.frames) {
        require_same_shape(f, clip.frames[0], "clip frames");
        long double mass = 0.0, mx = 0.0, my = 0.0;
        for (int c = 0; c < f.ch; ++c) {
            const double* p = f.plane(c);
            for (int y = 0; y < f.h; ++y)
                for (int x = 0; x < f.w; ++x) {
                    const double w = (p[size_t(y) * f.w + x] + 1.0) / 2.0;
                    mass += w;
                    mx += w * x;
                    my += w * y;
                }
        }
        const size_t pixels = f.v.size();
        const double total = double(mass);
        const double cx = total > 1e-9 ? double(mx) / total : (f.w - 1) / 2.0;
        const double cy = total > 1e-9 ? double(my) / total : (f.h - 1) / 2.0;
        long double sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int c = 0; c < f.ch; ++c) {
            const double* p = f.plane(c);
            for (int y = 0; y < f.h; ++y)
                for (int x = 0; x < f.w; ++x) {
                    const double w = (p[size_t(y) * f.w + x] + 1.0) / 2.0;
                    sxx += w * (x - cx) * (x - cx);
                    syy += w * (y - cy) * (y - cy);
                    sxy += w * (x - cx) * (y - cy);
                }
        }
        feats.push_back(total / double(pixels));
        feats.push_back(cx);
        feats.push_back(cy);
        feats.push_back(total > 1e-9 ? double(sxx) / total : 0.0);
        feats.push_back(total > 1e-9 ? double(syy) / total : 0.0);
        feats.push_back(total > 1e-9 ? double(sxy) / total : 0.0);
        cxs.push_back(cx);
        cys.push_back(cy);

        for (double v : f.v) {
            gsum += v;
            gsq += (long double)v * v;
            above_bg += v > -0.5;
            above_mid += v > 0.0;
        }
        gcount += pixels;
    }
    for (int i = 1; i < n; ++i) {
        feats.push_back(cxs[size_t(i)] - cxs[size_t(i - 1)]);
        feats.push_back(cys[size_t(i)] - cys[size_t(i - 1)]);
    }
    const double gmean = double(gsum) / double(gcount);
    const double gvar = std::max(0.0, double(gsq) / double(gcount) - gmean * gmean);
    feats.push_back(gmean);
    feats.push_back(std::sqrt(gvar));
    feats.push_back(double(above_bg) / double(gcount));
    feats.push_back(double(above_mid) / double(gcount));
    return feats;
}

// ---------------------------------------------------------------------------
// Gaussian Fréchet distance

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with each covariance
// estimated with 1/(n-1) and regularized by 1e-6 I. The trace term is
// computed via the symmetric product sqrt(Sa) Sb sqrt(Sa).
inline double frechet_distance(const std::vector<std::vector<double>>& a,
                               const std::vector<std::vector<double>>& b) {
    require(!a.empty() && !b.empty(), "insufficient-samples", "empty feature set");
    const size_t dim = a[0].size();
    for (const auto& v : a)
        require(v.size() == dim, "shape-mismatch", "inconsistent feature length");
    for (const auto& v : b)
        require(v.size() == dim, "shape-mismatch", "inconsistent feature length");
    require(a.size() >= dim + 1 && b.size() >= dim + 1, "insufficient-samples",
            "need at least " + std::to_string(dim + 1) + " samples per set, got " +
                std::to_string(a.size()) + " and " + std::to_string(b.size()));

    auto stats = [dim](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mu,
                       Eigen::MatrixXd& cov) {
        const auto n = Eigen::Index(s.size());
        Eigen::MatrixXd m(n, Eigen::Index(dim));
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < Eigen::Index(dim); ++j)
                m(i, j) = s[size_t(i)][size_t(j)];
        mu = m.colwise().mean();
        Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
        cov = centered.transpose() * centered / double(n - 1);
        cov += 1e-6 * Eigen::MatrixXd::Identity(Eigen::Index(dim), Eigen::Index(dim));
    };
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    stats(a, mu_a, cov_a);
    stats(b, mu_b, cov_b);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
    Eigen::VectorXd root = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_a =
        es_a.eigenvectors() * root.asDiagonal() * es_a.eigenvectors().transpose();
    Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
    // symmetrize against round-off before the second eigendecomposition
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_i(inner);
    const double tr_sqrt = es_i.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double d2 = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d2);
}

// ---------------------------------------------------------------------------
// flow faithfulness

// Mean over frames of MSE(warp(frame_i, flow_i), frame_0): how well the
// clip's motion agrees with the flows it was conditioned on. The reference
// frame carries a zero flow and contributes zero.
inline double flow_faithfulness(const Clip& clip, const TemporalCond& temporal) {
    require(clip.n() >= 1, "shape-mismatch", "clip has no frames");
    require(temporal.n() == clip.n(), "shape-mismatch",
            "temporal condition frame count mismatch");
    long double acc = 0.0;
    for (int i = 0; i < clip.n(); ++i) {
        Tensor3 rec = warp(clip.frames[size_t(i)], temporal.flows[size_t(i)]);
        require_same_shape(rec, clip.frames[0], "warped frame vs reference");
        long double mse = 0.0;
        for (size_t k = 0; k < rec.v.size(); ++k) {
            const double d = rec.v[k] - clip.frames[0].v[k];
            mse += (long double)d * d;
        }
        acc += mse / double(rec.v.size());
    }
    return double(acc / clip.n());
}

// ---------------------------------------------------------------------------
// stochastic-detail consistency

// How much the background changes across frames. Pixels that stay below the
// -0.5 background threshold in every frame form the mask (whole frame if
// that leaves nothing); the score sums the across-frame variance of the
// masked per-pixel values (averaged over pixels) with the across-frame
// variances of the background mean and contrast. Zero when backgrounds are
// frame-constant; immune to a shift applied equally to all frames.
inline double stochastic_consistency(const Clip& clip) {
    require(clip.n() >= 1, "shape-mismatch", "clip has no frames");
    const int n = clip.n();
    if (n == 1) return 0.0;
    const size_t pixels = clip.frames[0].v.size();
    for (const Tensor3& f : clip.frames)
        require_same_shape(f, clip.frames[0], "clip frames");

    std::vector<bool> mask(pixels, true);
    for (const Tensor3& f : clip.frames)
        for (size_t k = 0; k < pixels; ++k)
            if (f.v[k] >= -0.5) mask[k] = false;
    size_t bg_count = 0;
    for (bool m : mask) bg_count += m;
    if (bg_count == 0) {
        mask.assign(pixels, true);
        bg_count = pixels;
    }

    // per-pixel variance across frames over the mask
    long double detail = 0.0;
    for (size_t k = 0; k < pixels; ++k) {
        if (!mask[k]) continue;
        long double s = 0.0, sq = 0.0;
        for (const Tensor3& f : clip.frames) {
            s += f.v[k];
            sq += (long double)f.v[k] * f.v[k];
        }
        const long double mean = s / n;
        detail += std::max<long double>(0.0, sq / n - mean * mean) * n / (n - 1);
    }
    detail /= double(bg_count);

    // across-frame variance of the background summary statistics
    std::vector<double> means, stds;
    for (const Tensor3& f : clip.frames) {
        long double s = 0.0, sq = 0.0;
        for (size_t k = 0; k < pixels; ++k) {
            if (!mask[k]) continue;
            s += f.v[k];
            sq += (long double)f.v[k] * f.v[k];
        }
        const double mean = double(s / bg_count);
        means.push_back(mean);
        stds.push_back(std::sqrt(std::max(0.0, double(sq / bg_count) - mean * mean)));
    }
    auto sample_var = [n](const std::vector<double>& v) {
        long double s = 0.0, sq = 0.0;
        for (double x : v) {
            s += x;
            sq += (long double)x * x;
        }
        const long double mean = s / n;
        return std::max(0.0, double((sq / n - mean * mean) * n / (n - 1)));
    };
    return double(detail) + sample_var(means) + sample_var(stds);
}

// ---------------------------------------------------------------------------
// model evaluation and the ablation harness

struct MetricReport {
    double toy_fd = 0.0;
    double flow_mse = 0.0;
    double consistency = 0.0;
    int n_clips = 0;
};

// Reference pool for metric evaluation: held-out items when there are any,
// the whole dataset otherwise.
inline std::vector<int> eval_pool(const ToyDataset& ds) {
    return ds.heldout_indices.empty() ? ds.train_indices : ds.heldout_indices;
}

enum class SampleMode { shared, nonshared };

// Generates one clip under either noise regime. Shared: one nu_T for all
// frames. Non-shared: an independent nu_T per frame, each frame sampled as
// its own single-ray clip (same conditions otherwise).
inline Clip generate_clip(const DenoiserNet& net, const std::vector<double>& theta,
                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                          const TemporalCond& temporal, const SemanticCond& semantic,
                          uint64_t seed, uint64_t index, SampleMode mode,
                          SampleStats* stats = nullptr) {
    const int n = temporal.n();
    const int hw_h = temporal.flows[0].h, hw_w = temporal.flows[0].w;
    const int ch = net.config().out_channels;
    if (mode == SampleMode::shared) {
        Rng rng(seed, "nu", index);
        Tensor3 nu(ch, hw_h, hw_w);
        for (double& v : nu.v) v = rng.normal();
        return sample_clip(net, theta, sched, cfg, nu, temporal, semantic, n,
                           derive_seed(seed, "ddim-z-seed", index), stats);
    }
    Clip out;
    out.frames.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, "nu-indep", index * 64 + uint64_t(i));
        Tensor3 nu(ch, hw_h, hw_w);
        for (double& v : nu.v) v = rng.normal();
        TemporalCond solo;
        solo.flows.push_back(temporal.flows[size_t(i)]);
        solo.null_flag = temporal.null_flag;
        Clip one = sample_clip(net, theta, sched, cfg, nu, solo, semantic, 1,
                               derive_seed(seed, "ddim-z-indep", index * 64 + uint64_t(i)),
                               stats);
        out.frames[size_t(i)] = std::move(one.frames[0]);
    }
    return out;
}

// Samples n_clips clips with conditions drawn from the evaluation pool and
// scores them against the pool's real features. Deterministic in (theta,
// seed, mode).
inline MetricReport evaluate_model(const DenoiserNet& net, const std::vector<double>& theta,
                                   const NoiseSchedule& sched, const SamplerConfig& cfg,
                                   const ToyDataset& ds, int n_clips, uint64_t seed,
                                   SampleMode mode = SampleMode::shared) {
    require(n_clips >= 1, "invalid-range", "need at least one clip to evaluate");
    const std::vector<int> pool = eval_pool(ds);
    require(!pool.empty(), "empty-dataset", "no reference clips available");

    std::vector<std::vector<double>> real_feats;
    for (int idx : pool) real_feats.push_back(clip_features(ds.items[size_t(idx)].clip));

    std::vector<int> picks(size_t(n_clips), 0);
    {
        Rng rng(seed, "ablate-pick");
        for (int j = 0; j < n_clips; ++j)
            picks[size_t(j)] = pool[size_t(rng.uniform_int(pool.size()))];
    }
    std::vector<Clip> clips;
    clips.resize(size_t(n_clips));
    parallel_for(n_clips, [&](int j) {
        const DatasetItem& item = ds.items[size_t(picks[size_t(j)])];
        clips[size_t(j)] = generate_clip(net, theta, sched, cfg, item.temporal, item.semantic,
                                         seed, uint64_t(j), mode);
    });

    MetricReport rep;
    rep.n_clips = n_clips;
    std::vector<std::vector<double>> gen_feats;
    long double flow_acc = 0.0, cons_acc = 0.0;
    for (int j = 0; j < n_clips; ++j) {
        const DatasetItem& item = ds.items[size_t(picks[size_t(j)])];
        gen_feats.push_back(clip_features(clips[size_t(j)]));
        flow_acc += flow_faithfulness(clips[size_t(j)], item.temporal);
        cons_acc += stochastic_consistency(clips[size_t(j)]);
    }
    rep.toy_fd = frechet_distance(gen_feats, real_feats);
    rep.flow_mse = double(flow_acc / n_clips);
    rep.consistency = double(cons_acc / n_clips);
    require(std::isfinite(rep.toy_fd) && std::isfinite(rep.flow_mse) &&
                std::isfinite(rep.consistency),
            "non-finite-loss", "metric diverged");
    return rep;
}

struct AblationRow {
    std::string schedule;  // "I", "II", "III"
    MetricReport median;
    std::vector<MetricReport> per_seed;
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationParams {
    int clips_per_schedule = 128;
    std::vector<uint64_t> seeds = {1, 2, 3};
    SamplerConfig sampler;
};

// The three noise regimes of the shared-noise study:
//   I   shared-noise training, one nu_T per clip at sampling
//   II  shared-noise training, independent nu_T per frame at sampling
//   III per-frame-noise training, independent nu_T per frame at sampling
// Conditions and noise streams depend only on (seed, clip index), so II and
// III see identical inputs and collapse to identical rows when handed the
// same parameters.
inline AblationTable run_ablation(const DenoiserNet& net, const std::vector<double>& theta_shared,
                                  const std::vector<double>& theta_nonshared,
                                  const NoiseSchedule& sched, const ToyDataset& ds,
                                  const AblationParams& p) {
    require(theta_shared.size() == net.param_count() &&
                theta_nonshared.size() == net.param_count(),
            "config-mismatch", "both models must share the network architecture");
    require(!p.seeds.empty(), "invalid-range", "ablation needs at least one seed");

    struct Spec {
        const char* label;
        const std::vector<double>* theta;
        SampleMode mode;
    };
    const Spec specs[3] = {
        {"I", &theta_shared, SampleMode::shared},
        {"II", &theta_shared, SampleMode::nonshared},
        {"III", &theta_nonshared, SampleMode::nonshared},
    };

    AblationTable table;
    for (const Spec& spec : specs) {
        AblationRow row;
        row.schedule = spec.label;
        for (uint64_t seed : p.seeds)
            row.per_seed.push_back(evaluate_model(net, *spec.theta, sched, p.sampler, ds,
                                                  p.clips_per_schedule, seed, spec.mode));
        std::vector<double> fd, fl, co;
        for (const MetricReport& r : row.per_seed) {
            fd.push_back(r.toy_fd);
            fl.push_back(r.flow_mse);
            co.push_back(r.consistency);
        }
        row.median.toy_fd = median_of(fd);
        row.median.flow_mse = median_of(fl);
        row.median.consistency = median_of(co);
        row.median.n_clips = p.clips_per_schedule;
        table.rows.push_back(std::move(row));
    }
    return table;
}

// ---------------------------------------------------------------------------
// report rendering

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string ablation_table_text(const AblationTable& t) {
    std::string out = "schedule      toy_fd    flow_mse consistency\n";
    for (const AblationRow& r : t.rows) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-8s %11.5g %11.5g %11.5g\n", r.schedule.c_str(),
                      r.median.toy_fd, r.median.flow_mse, r.median.consistency);
        out += line;
    }
    return out;
}

inline std::string ablation_table_csv(const AblationTable& t) {
    std::string out = "schedule,seed,toy_fd,flow_mse,consistency,n_clips\n";
    for (const AblationRow& r : t.rows) {
        for (size_t s = 0; s < r.per_seed.size(); ++s) {
            const MetricReport& m = r.per_seed[s];
            out += r.schedule + "," + std::to_string(s) + "," + format_double(m.toy_fd) + "," +
                   format_double(m.flow_mse) + "," + format_double(m.consistency) + "," +
                   std::to_string(m.n_clips) + "\n";
        }
        out += r.schedule + ",median," + format_double(r.median.toy_fd) + "," +
               format_double(r.median.flow_mse) + "," + format_double(r.median.consistency) +
               "," + std::to_string(r.median.n_clips) + "\n";
    }
    return out;
}

}  // namespace sectordiff
