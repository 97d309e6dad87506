#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sectordiff/checkpoint.hpp"
#include "sectordiff/pgm.hpp"
#include "sectordiff/train.hpp"

using namespace sectordiff;
namespace fs = std::filesystem;

namespace {

auto category_is(const char* cat) {
    return Catch::Matchers::Predicate<Error>(
        [cat](const Error& e) { return e.category() == cat; });
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sectordiff-io-" + std::to_string(Catch::rngSeed()) + "-" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const char* name) const { return (path / name).string(); }
};

NetConfig tiny_net_config() {
    NetConfig cfg;
    cfg.base_width = 4;
    cfg.emb_dim = 8;
    cfg.classes = 3;
    cfg.time_freqs = 4;
    cfg.flow_scale = 4.0;
    return cfg;
}

}  // namespace

TEST_CASE("value-to-byte mapping hits the documented anchors", "[io]") {
    REQUIRE(to_pgm_byte(-1.0) == 0);
    REQUIRE(to_pgm_byte(0.0) == 128);  // 127.5 rounds half up
    REQUIRE(to_pgm_byte(1.0) == 255);
    REQUIRE(to_pgm_byte(-2.0) == 0);   // clamped
    REQUIRE(to_pgm_byte(2.0) == 255);  // clamped
}

TEST_CASE("pgm files round-trip within one quantization step", "[io]") {
    TempDir tmp;
    Rng rng(61, "pgm");
    Tensor3 frame(1, 12, 20);
    for (double& v : frame.v) v = rng.uniform(-1.0, 1.0);
    const std::string path = tmp.file("frame.pgm");
    write_pgm(path, frame);
    Tensor3 back = read_pgm(path);
    REQUIRE(back.h == 12);
    REQUIRE(back.w == 20);
    for (size_t i = 0; i < frame.v.size(); ++i)
        REQUIRE(std::abs(back.v[i] - frame.v[i]) <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("identical frames produce bitwise-identical pgm files", "[io]") {
    Rng rng(62, "pgm-det");
    Tensor3 frame(1, 8, 8);
    for (double& v : frame.v) v = rng.uniform(-1.0, 1.0);
    REQUIRE(pgm_bytes(frame) == pgm_bytes(frame));
}

TEST_CASE("clip export writes one numbered file per frame", "[io]") {
    TempDir tmp;
    Clip clip;
    Rng rng(63, "clip-export");
    for (int i = 0; i < 5; ++i) {
        Tensor3 f(1, 8, 8);
        for (double& v : f.v) v = rng.uniform(-1.0, 1.0);
        clip.frames.push_back(std::move(f));
    }
    const auto paths = write_frames(tmp.file("out"), clip);
    REQUIRE(paths.size() == 5);
    REQUIRE(fs::path(paths[0]).filename() == "frame_0001.pgm");
    REQUIRE(fs::path(paths[4]).filename() == "frame_0005.pgm");
    for (const auto& p : paths) REQUIRE(fs::exists(p));
    Tensor3 back = read_pgm(paths[2]);
    for (size_t i = 0; i < back.v.size(); ++i)
        REQUIRE(std::abs(back.v[i] - clip.frames[2].v[i]) <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("contact sheet lays frames out left to right", "[io]") {
    Clip clip;
    for (int i = 0; i < 3; ++i) {
        Tensor3 f(1, 4, 6);
        for (double& v : f.v) v = -1.0 + i * 0.5;
        clip.frames.push_back(std::move(f));
    }
    Tensor3 sheet = contact_sheet(clip);
    REQUIRE(sheet.h == 4);
    REQUIRE(sheet.w == 18);
    REQUIRE(sheet.at(0, 2, 1) == -1.0);
    REQUIRE(sheet.at(0, 2, 7) == -0.5);
    REQUIRE(sheet.at(0, 2, 13) == 0.0);
}

TEST_CASE("manifests are deterministic key-value text", "[io]") {
    TempDir tmp;
    const std::vector<std::pair<std::string, std::string>> entries = {
        {"command", "sample"}, {"seed", "17"}, {"config", hex64(0xabcdef)},
    };
    write_manifest(tmp.file("manifest.txt"), entries);
    write_manifest(tmp.file("manifest2.txt"), entries);
    std::ifstream a(tmp.file("manifest.txt")), b(tmp.file("manifest2.txt"));
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    REQUIRE(sa == sb);
    REQUIRE(sa == "command: sample\nseed: 17\nconfig: 0000000000abcdef\n");
}

TEST_CASE("checkpoints round-trip every field bitwise", "[io]") {
    TempDir tmp;
    DenoiserNet net(tiny_net_config());
    Checkpoint c;
    c.stage = 2;
    c.mode = 1;
    c.config_digest = 0x1122334455667788ull;
    c.T = 500;
    c.beta_start = 2e-4;
    c.beta_end = 0.019;
    c.net = net.config();
    c.theta = net.init_params(11);
    c.has_adam = true;
    c.adam_steps = 42;
    c.adam_m.assign(c.theta.size(), 0.125);
    c.adam_v.assign(c.theta.size(), 0.5);

    const std::string path = tmp.file("model.ckpt");
    save_checkpoint(path, c);
    REQUIRE_FALSE(fs::exists(path + ".tmp"));
    Checkpoint r = load_checkpoint(path);
    REQUIRE(r.stage == 2);
    REQUIRE(r.mode == 1);
    REQUIRE(r.config_digest == c.config_digest);
    REQUIRE(r.T == 500);
    REQUIRE(r.beta_start == 2e-4);
    REQUIRE(r.beta_end == 0.019);
    REQUIRE(r.net.base_width == 4);
    REQUIRE(r.net.mid_depth == 1);
    REQUIRE(r.net.flow_scale == 4.0);
    REQUIRE(r.theta == c.theta);
    REQUIRE(r.has_adam);
    REQUIRE(r.adam_steps == 42);
    REQUIRE(r.adam_m == c.adam_m);
    REQUIRE(r.adam_v == c.adam_v);
    REQUIRE(checkpoint_digest(r) == checkpoint_digest(c));
}

TEST_CASE("checkpoints without optimizer state stay lean", "[io]") {
    TempDir tmp;
    Checkpoint c;
    c.theta = {1.0, 2.0, 3.0};
    const std::string path = tmp.file("lean.ckpt");
    save_checkpoint(path, c);
    Checkpoint r = load_checkpoint(path);
    REQUIRE_FALSE(r.has_adam);
    REQUIRE(r.theta == c.theta);
    REQUIRE(r.adam_m.empty());
}

TEST_CASE("corrupted checkpoints are refused", "[io]") {
    TempDir tmp;
    Checkpoint c;
    c.theta = {0.5, -0.5};
    const std::string path = tmp.file("sick.ckpt");
    save_checkpoint(path, c);

    // flip one payload byte
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    std::string flipped = bytes;
    flipped[20] = char(flipped[20] ^ 0x40);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(flipped.data(), std::streamsize(flipped.size()));
    }
    REQUIRE_THROWS_MATCHES(load_checkpoint(path), Error, category_is("checkpoint-corrupt"));

    // truncation
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    }
    REQUIRE_THROWS_MATCHES(load_checkpoint(path), Error, category_is("checkpoint-corrupt"));

    // wrong magic
    std::string wrong = bytes;
    wrong[0] = 'X';
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(wrong.data(), std::streamsize(wrong.size()));
    }
    REQUIRE_THROWS_MATCHES(load_checkpoint(path), Error, category_is("checkpoint-corrupt"));

    REQUIRE_THROWS_MATCHES(load_checkpoint(tmp.file("missing.ckpt")), Error,
                           category_is("io"));
}

TEST_CASE("training runs deterministically and starts at unit loss", "[io]") {
    DataParams p;
    p.height = p.width = 8;
    p.frames = 2;
    p.classes = 2;
    ToyDataset ds = build_dataset(71, 24, p);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    DenoiserNet net(tiny_net_config());

    TrainParams tp;
    tp.steps = 4;
    tp.batch_clips = 4;
    tp.lr = 1e-3;
    tp.seed = 9;
    tp.checkpoint_interval = 2;

    auto run = [&]() {
        std::vector<double> theta = net.init_params(5);
        Adam adam(theta.size(), AdamConfig{tp.lr, 0.9, 0.999, 1e-8});
        std::vector<int> checkpoints;
        TrainResult r = train_denoiser(net, theta, adam, ds, sched, tp, nullptr,
                                       [&](int step) { checkpoints.push_back(step); });
        return std::tuple{r.losses, theta, checkpoints};
    };
    auto [losses1, theta1, ckpts1] = run();
    auto [losses2, theta2, ckpts2] = run();
    REQUIRE(losses1 == losses2);
    REQUIRE(theta1 == theta2);
    REQUIRE(ckpts1 == std::vector<int>{2, 4});

    // an untrained epsilon-predictor against unit noise sits near loss 1
    REQUIRE(losses1[0] == Catch::Approx(1.0).margin(0.2));
    for (double l : losses1) REQUIRE(std::isfinite(l));
}

TEST_CASE("nonshared training consumes per-frame noise streams", "[io]") {
    DataParams p;
    p.height = p.width = 8;
    p.frames = 2;
    p.classes = 2;
    ToyDataset ds = build_dataset(72, 24, p);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    DenoiserNet net(tiny_net_config());

    TrainParams tp;
    tp.steps = 2;
    tp.batch_clips = 4;
    tp.seed = 9;

    std::vector<double> ts = net.init_params(5), tn = net.init_params(5);
    Adam as(ts.size(), AdamConfig{tp.lr, 0.9, 0.999, 1e-8});
    Adam an(tn.size(), AdamConfig{tp.lr, 0.9, 0.999, 1e-8});
    TrainParams tps = tp;
    tps.shared_noise = true;
    TrainParams tpn = tp;
    tpn.shared_noise = false;
    TrainResult rs = train_denoiser(net, ts, as, ds, sched, tps);
    TrainResult rn = train_denoiser(net, tn, an, ds, sched, tpn);
    REQUIRE(rs.losses != rn.losses);
    REQUIRE(ts != tn);
    for (double l : rn.losses) REQUIRE(std::isfinite(l));
}
