// Command-line shell around the library: train / sample / t2v / ablate /
// eval, all deterministic in (config, seed). Exit code 0 on success;
// failures print one line `error: <category>: <detail>` on stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sectordiff/checkpoint.hpp"
#include "sectordiff/config.hpp"
#include "sectordiff/eval.hpp"
#include "sectordiff/pgm.hpp"
#include "sectordiff/train.hpp"
#include "sectordiff/twostage.hpp"

using namespace sectordiff;
namespace fs = std::filesystem;

namespace {

// Guards an output directory against concurrent writers. The lock file is
// removed on scope exit (including error unwinds); after a hard crash it
// must be removed by hand.
class DirLock {
public:
    explicit DirLock(const std::string& dir) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) fail("io", "cannot create " + dir + ": " + ec.message());
        path_ = dir + "/.lock";
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f)
            fail("lock-held", "another command is writing to " + dir + " (stale? remove " +
                                  path_ + ")");
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig{};
    std::ifstream in(path);
    if (!in) fail("io", "cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

DataParams data_params(const ExperimentConfig& c) {
    DataParams p;
    p.height = c.data.H;
    p.width = c.data.W;
    p.frames = c.data.N;
    p.classes = c.data.K;
    p.split_seed = c.data.split_seed;
    return p;
}

NetConfig frame_net_config(const ExperimentConfig& c) {
    NetConfig n;
    n.base_width = c.model.width;
    n.mid_depth = c.model.depth;
    n.classes = c.data.K;
    n.flow_scale = c.data.H / 2.0;
    return n;
}

NetConfig sequence_net_config(const ExperimentConfig& c) {
    NetConfig base;  // emb_dim / time_freqs defaults shared with the frame model
    return flow_net_config(c.data.N, c.data.H, c.model.width, c.model.depth, base.emb_dim,
                           c.data.K, base.time_freqs);
}

TrainParams train_params(const ExperimentConfig& c, uint64_t seed, bool shared) {
    TrainParams p;
    p.steps = c.train.steps;
    p.batch_clips = c.train.batch_clips;
    p.lr = c.train.lr;
    p.p_drop = c.model.p_drop;
    p.seed = seed;
    p.shared_noise = shared;
    p.checkpoint_interval = c.train.checkpoint_interval;
    return p;
}

// Loads a checkpoint and refuses it unless it was produced under the same
// config digest and holds the expected model stage.
Checkpoint load_compatible(const std::string& path, const ExperimentConfig& cfg, int stage) {
    Checkpoint c = load_checkpoint(path);
    if (c.config_digest != config_digest(cfg))
        fail("digest-mismatch", path + " was written under config digest " +
                                    hex64(c.config_digest) + ", the current config digests to " +
                                    hex64(config_digest(cfg)));
    require(c.stage == stage, "config-mismatch",
            path + " holds a stage-" + std::to_string(c.stage) + " model, expected stage " +
                std::to_string(stage));
    return c;
}

SamplerConfig sampler_from(const ExperimentConfig& cfg, const NoiseSchedule& sched) {
    return make_sampler_config(sched, cfg.sample.num_steps, cfg.sample.guidance_scale,
                               cfg.sample.eta);
}

SampleMode parse_mode(const std::string& mode) {
    return mode == "nonshared" ? SampleMode::nonshared : SampleMode::shared;
}

struct TrainedModel {
    Checkpoint ckpt;
    TrainResult result;
};

// One full training run producing a ready-to-save checkpoint. The training
// log gets one `step loss seconds` line per step.
TrainedModel run_training(const ExperimentConfig& cfg, uint64_t seed, bool shared_noise,
                          int stage, const ToyDataset& ds, std::ofstream& log) {
    const NoiseSchedule sched =
        build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);
    const NetConfig net_cfg = stage == 1 ? sequence_net_config(cfg) : frame_net_config(cfg);
    DenoiserNet net(net_cfg);
    std::vector<double> params =
        net.init_params(stage == 1 ? derive_seed(seed, "flow-init") : seed);
    Adam adam(params.size(), AdamConfig{cfg.train.lr, 0.9, 0.999, 1e-8});
    const TrainParams tp = train_params(cfg, seed, shared_noise);

    auto on_step = [&](int step, double loss, double secs) {
        log << step << " " << format_double(loss) << " " << format_double(secs) << "\n";
    };
    TrainResult res = stage == 1 ? train_flow_model(net, params, adam, ds, sched, tp, on_step)
                                 : train_denoiser(net, params, adam, ds, sched, tp, on_step);

    TrainedModel out;
    out.ckpt.stage = stage;
    out.ckpt.mode = shared_noise ? 0 : 1;
    out.ckpt.config_digest = config_digest(cfg);
    out.ckpt.T = cfg.schedule.T;
    out.ckpt.beta_start = cfg.schedule.beta_start;
    out.ckpt.beta_end = cfg.schedule.beta_end;
    out.ckpt.net = net_cfg;
    out.ckpt.theta = std::move(params);
    out.ckpt.has_adam = true;
    out.ckpt.adam_steps = uint64_t(adam.steps_taken());
    out.ckpt.adam_m = adam.m();
    out.ckpt.adam_v = adam.v();
    out.result = std::move(res);
    return out;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& mode, uint64_t seed_flag, bool seed_given, bool with_stage1) {
    const ExperimentConfig cfg = load_config(config_path);
    const uint64_t seed = seed_given ? seed_flag : cfg.train.seed;
    const bool shared = mode != "nonshared";
    DirLock lock(out_dir);

    const ToyDataset ds = build_dataset(cfg.data.split_seed, cfg.data.num_clips,
                                        data_params(cfg));
    std::ofstream log(out_dir + "/train_log.txt", std::ios::trunc);
    if (!log) fail("io", "cannot open training log in " + out_dir);

    TrainedModel frame = run_training(cfg, seed, shared, 2, ds, log);
    const std::string frame_path = out_dir + "/model.ckpt";
    save_checkpoint(frame_path, frame.ckpt);
    std::cout << "checkpoint " << frame_path << " " << hex64(checkpoint_digest(frame.ckpt))
              << "\n";
    std::cout << "final_loss " << format_double(frame.result.final_loss) << "\n";

    std::vector<std::pair<std::string, std::string>> manifest = {
        {"command", "train"},
        {"mode", shared ? "shared" : "nonshared"},
        {"seed", std::to_string(seed)},
        {"config_digest", hex64(config_digest(cfg))},
        {"checkpoint_digest", hex64(checkpoint_digest(frame.ckpt))},
        {"final_loss", format_double(frame.result.final_loss)},
    };
    if (with_stage1) {
        TrainedModel flow = run_training(cfg, seed, shared, 1, ds, log);
        const std::string flow_path = out_dir + "/flow_model.ckpt";
        save_checkpoint(flow_path, flow.ckpt);
        std::cout << "checkpoint " << flow_path << " " << hex64(checkpoint_digest(flow.ckpt))
                  << "\n";
        std::cout << "flow_final_loss " << format_double(flow.result.final_loss) << "\n";
        manifest.emplace_back("flow_checkpoint_digest", hex64(checkpoint_digest(flow.ckpt)));
        manifest.emplace_back("flow_final_loss", format_double(flow.result.final_loss));
    }
    write_manifest(out_dir + "/manifest.txt", manifest);
    return 0;
}

int cmd_sample(const std::string& config_path, const std::string& ckpt_path,
               const std::string& out_dir, const std::string& mode, uint64_t seed_flag,
               bool seed_given, int item) {
    const ExperimentConfig cfg = load_config(config_path);
    const uint64_t seed = seed_given ? seed_flag : cfg.sample.seed;
    const Checkpoint ckpt = load_compatible(ckpt_path, cfg, 2);
    DirLock lock(out_dir);

    DenoiserNet net(ckpt.net);
    require(ckpt.theta.size() == net.param_count(), "checkpoint-corrupt",
            "parameter vector does not match the stored architecture");
    const NoiseSchedule sched = build_schedule(ckpt.T, ckpt.beta_start, ckpt.beta_end);
    const SamplerConfig sampler = sampler_from(cfg, sched);

    const ToyDataset ds = build_dataset(cfg.data.split_seed, cfg.data.num_clips,
                                        data_params(cfg));
    require(item >= 0 && item < int(ds.items.size()), "invalid-range",
            "--item must address a dataset clip in [0, " + std::to_string(ds.items.size()) +
                ")");
    const DatasetItem& src = ds.items[size_t(item)];

    Clip clip = generate_clip(net, ckpt.theta, sched, sampler, src.temporal, src.semantic, seed,
                              uint64_t(item), parse_mode(mode));
    const auto paths = write_frames(out_dir, clip);
    write_pgm(out_dir + "/contact_sheet.pgm", contact_sheet(clip));
    write_manifest(out_dir + "/manifest.txt",
                   {
                       {"command", "sample"},
                       {"mode", mode},
                       {"seed", std::to_string(seed)},
                       {"item", std::to_string(item)},
                       {"class", std::to_string(src.semantic.class_id)},
                       {"config_digest", hex64(config_digest(cfg))},
                       {"checkpoint_digest", hex64(checkpoint_digest(ckpt))},
                       {"frames", std::to_string(paths.size())},
                   });
    std::cout << "wrote " << paths.size() << " frames to " << out_dir << "\n";
    return 0;
}

int cmd_t2v(const std::string& config_path, const std::string& ckpt_path,
            const std::string& flow_ckpt_path, const std::string& out_dir, uint64_t seed_flag,
            bool seed_given, int class_id) {
    const ExperimentConfig cfg = load_config(config_path);
    const uint64_t seed = seed_given ? seed_flag : cfg.sample.seed;
    const Checkpoint ckpt = load_compatible(ckpt_path, cfg, 2);
    const Checkpoint flow_ckpt = load_compatible(flow_ckpt_path, cfg, 1);
    require(class_id >= 0 && class_id < cfg.data.K, "invalid-range",
            "--class must be in [0, " + std::to_string(cfg.data.K) + ")");
    DirLock lock(out_dir);

    DenoiserNet frame_net(ckpt.net);
    DenoiserNet flow_net(flow_ckpt.net);
    require(ckpt.theta.size() == frame_net.param_count() &&
                flow_ckpt.theta.size() == flow_net.param_count(),
            "checkpoint-corrupt", "parameter vector does not match the stored architecture");
    const NoiseSchedule sched = build_schedule(ckpt.T, ckpt.beta_start, ckpt.beta_end);
    const SamplerConfig sampler = sampler_from(cfg, sched);

    T2VResult res = t2v_pipeline(frame_net, ckpt.theta, flow_net, flow_ckpt.theta, sched,
                                 sampler, cfg.sample.num_steps, cfg.data.H, cfg.data.W,
                                 SemanticCond{class_id, false}, seed);
    const auto paths = write_frames(out_dir, res.clip);
    write_pgm(out_dir + "/contact_sheet.pgm", contact_sheet(res.clip));
    write_flow_sequence(out_dir + "/flows.bin", res.flows);
    write_manifest(out_dir + "/manifest.txt",
                   {
                       {"command", "t2v"},
                       {"seed", std::to_string(seed)},
                       {"class", std::to_string(class_id)},
                       {"config_digest", hex64(config_digest(cfg))},
                       {"checkpoint_digest", hex64(checkpoint_digest(ckpt))},
                       {"flow_checkpoint_digest", hex64(checkpoint_digest(flow_ckpt))},
                       {"frames", std::to_string(paths.size())},
                   });
    std::cout << "wrote " << paths.size() << " frames to " << out_dir << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               std::vector<uint64_t> seeds, int clips) {
    const ExperimentConfig cfg = load_config(config_path);
    if (seeds.empty()) seeds = {1, 2, 3};
    DirLock lock(out_dir);

    const ToyDataset ds = build_dataset(cfg.data.split_seed, cfg.data.num_clips,
                                        data_params(cfg));
    const NoiseSchedule sched =
        build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);

    // Both variants start from the same initialization and see the same
    // batch composition; only the noise regime differs. Cached checkpoints
    // with the right digest are reused instead of retrained.
    auto obtain = [&](bool shared) {
        const std::string path =
            out_dir + (shared ? "/model_shared.ckpt" : "/model_nonshared.ckpt");
        if (fs::exists(path)) {
            Checkpoint c = load_compatible(path, cfg, 2);
            require(c.mode == (shared ? 0 : 1), "config-mismatch",
                    path + " was trained under the other noise mode");
            std::cout << "cached " << path << " " << hex64(checkpoint_digest(c)) << "\n";
            return c;
        }
        std::ofstream log(out_dir + (shared ? "/train_log_shared.txt" : "/train_log_nonshared.txt"),
                          std::ios::trunc);
        if (!log) fail("io", "cannot open training log in " + out_dir);
        TrainedModel m = run_training(cfg, cfg.train.seed, shared, 2, ds, log);
        save_checkpoint(path, m.ckpt);
        std::cout << "checkpoint " << path << " " << hex64(checkpoint_digest(m.ckpt)) << "\n";
        return m.ckpt;
    };
    const Checkpoint shared_ckpt = obtain(true);
    const Checkpoint nonshared_ckpt = obtain(false);
    require(shared_ckpt.net.base_width == nonshared_ckpt.net.base_width &&
                shared_ckpt.net.mid_depth == nonshared_ckpt.net.mid_depth,
            "config-mismatch", "cached checkpoints disagree on the architecture");

    DenoiserNet net(shared_ckpt.net);
    AblationParams ap;
    ap.clips_per_schedule = clips;
    ap.seeds = seeds;
    ap.sampler = sampler_from(cfg, sched);
    AblationTable table =
        run_ablation(net, shared_ckpt.theta, nonshared_ckpt.theta, sched, ds, ap);

    const std::string text = ablation_table_text(table);
    std::ofstream t(out_dir + "/ablation_table.txt", std::ios::trunc);
    t << text;
    std::ofstream c(out_dir + "/ablation.csv", std::ios::trunc);
    c << ablation_table_csv(table);
    if (!t || !c) fail("io", "short write in " + out_dir);
    std::string seed_list;
    for (uint64_t s : seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
    write_manifest(out_dir + "/manifest.txt",
                   {
                       {"command", "ablate"},
                       {"seeds", seed_list},
                       {"clips_per_schedule", std::to_string(clips)},
                       {"config_digest", hex64(config_digest(cfg))},
                       {"checkpoint_digest", hex64(checkpoint_digest(shared_ckpt))},
                       {"nonshared_checkpoint_digest",
                        hex64(checkpoint_digest(nonshared_ckpt))},
                   });
    std::cout << text;
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& out_dir, const std::string& mode, uint64_t seed_flag,
             bool seed_given, int clips) {
    const ExperimentConfig cfg = load_config(config_path);
    const uint64_t seed = seed_given ? seed_flag : cfg.sample.seed;
    const Checkpoint ckpt = load_compatible(ckpt_path, cfg, 2);
    DirLock lock(out_dir);

    DenoiserNet net(ckpt.net);
    require(ckpt.theta.size() == net.param_count(), "checkpoint-corrupt",
            "parameter vector does not match the stored architecture");
    const NoiseSchedule sched = build_schedule(ckpt.T, ckpt.beta_start, ckpt.beta_end);
    const ToyDataset ds = build_dataset(cfg.data.split_seed, cfg.data.num_clips,
                                        data_params(cfg));
    MetricReport r = evaluate_model(net, ckpt.theta, sched, sampler_from(cfg, sched), ds, clips,
                                    seed, parse_mode(mode));

    const std::string text = "toy_fd " + format_double(r.toy_fd) + "\nflow_mse " +
                             format_double(r.flow_mse) + "\nconsistency " +
                             format_double(r.consistency) + "\nn_clips " +
                             std::to_string(r.n_clips) + "\n";
    std::ofstream m(out_dir + "/metrics.txt", std::ios::trunc);
    m << text;
    if (!m) fail("io", "short write in " + out_dir);
    write_manifest(out_dir + "/manifest.txt",
                   {
                       {"command", "eval"},
                       {"mode", mode},
                       {"seed", std::to_string(seed)},
                       {"clips", std::to_string(clips)},
                       {"config_digest", hex64(config_digest(cfg))},
                       {"checkpoint_digest", hex64(checkpoint_digest(ckpt))},
                   });
    std::cout << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shared-noise video diffusion toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, flow_ckpt_path;
    std::string mode = "shared";
    uint64_t seed = 0;
    bool stage1 = false;
    int item = 0, class_id = 0, ablate_clips = 128, eval_clips = 64;
    std::vector<uint64_t> seeds;

    const auto mode_check = CLI::IsMember({"shared", "nonshared"});

    CLI::App* train = app.add_subcommand("train", "train a denoiser, write a checkpoint");
    train->add_option("--config", config_path, "config file (defaults apply when omitted)");
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--mode", mode, "noise regime during training")->check(mode_check);
    CLI::Option* train_seed = train->add_option("--seed", seed, "overrides train.seed");
    train->add_flag("--stage1", stage1, "also train the flow-sequence model");

    CLI::App* sample = app.add_subcommand("sample", "sample a clip from a checkpoint");
    sample->add_option("--config", config_path, "config file");
    sample->add_option("--checkpoint", ckpt_path, "stage-2 checkpoint")->required();
    sample->add_option("--out", out_dir, "output directory")->required();
    sample->add_option("--mode", mode, "noise regime during sampling")->check(mode_check);
    CLI::Option* sample_seed = sample->add_option("--seed", seed, "overrides sample.seed");
    sample->add_option("--item", item, "dataset clip providing the conditions");

    CLI::App* t2v = app.add_subcommand("t2v", "text-to-video from a class label");
    t2v->add_option("--config", config_path, "config file");
    t2v->add_option("--checkpoint", ckpt_path, "stage-2 checkpoint")->required();
    t2v->add_option("--flow-checkpoint", flow_ckpt_path, "stage-1 checkpoint")->required();
    t2v->add_option("--out", out_dir, "output directory")->required();
    CLI::Option* t2v_seed = t2v->add_option("--seed", seed, "overrides sample.seed");
    t2v->add_option("--class", class_id, "semantic class label");

    CLI::App* ablate = app.add_subcommand("ablate", "run the noise-schedule comparison");
    ablate->add_option("--config", config_path, "config file");
    ablate->add_option("--out", out_dir, "output directory")->required();
    ablate->add_option("--seeds", seeds, "evaluation seeds (medians reported)")
        ->delimiter(',');
    ablate->add_option("--clips", ablate_clips, "clips per schedule row");

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on the toy metrics");
    eval->add_option("--config", config_path, "config file");
    eval->add_option("--checkpoint", ckpt_path, "stage-2 checkpoint")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--mode", mode, "noise regime during sampling")->check(mode_check);
    CLI::Option* eval_seed = eval->add_option("--seed", seed, "overrides sample.seed");
    eval->add_option("--clips", eval_clips, "clips to generate");

    try {
        app.parse(argc, argv);
        if (train->parsed())
            return cmd_train(config_path, out_dir, mode, seed, !train_seed->empty(), stage1);
        if (sample->parsed())
            return cmd_sample(config_path, ckpt_path, out_dir, mode, seed,
                              !sample_seed->empty(), item);
        if (t2v->parsed())
            return cmd_t2v(config_path, ckpt_path, flow_ckpt_path, out_dir, seed,
                           !t2v_seed->empty(), class_id);
        if (ablate->parsed()) return cmd_ablate(config_path, out_dir, seeds, ablate_clips);
        if (eval->parsed())
            return cmd_eval(config_path, ckpt_path, out_dir, mode, seed, !eval_seed->empty(),
                            eval_clips);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 64;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 2;
    }
}
