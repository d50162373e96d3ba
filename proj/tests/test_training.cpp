#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "voxdiff/training.hpp"

using namespace voxdiff;
namespace fs = std::filesystem;

namespace {

DenoiserConfig tiny_denoiser() {
    DenoiserConfig cfg;
    cfg.base_channels = 4;
    cfg.groupnorm_groups = 4;
    cfg.input_size = Dims{8, 8, 8};
    return cfg;
}

TrainConfig tiny_train(long steps) {
    TrainConfig cfg;
    cfg.total_steps = steps;
    cfg.schedule_T = 20;
    cfg.checkpoint_every = 1000;
    cfg.seed = 77;
    return cfg;
}

std::vector<TrainCase> tiny_dataset(int n) {
    std::vector<TrainCase> cases;
    Rng rng(55);
    for (int i = 0; i < n; ++i) {
        TrainCase c;
        c.image = rng.normal_volume(1, Dims{8, 8, 8});
        for (auto& v : c.image.data()) v = std::clamp(v, -1.0f, 1.0f);
        c.mask = Volume(2, Dims{8, 8, 8}, 0.0f);
        c.mask.at(1, i % 8, 2, 2) = 1.0f;
        c.id = "case" + std::to_string(i);
        cases.push_back(std::move(c));
    }
    return cases;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("loss functions") {
    Volume a(1, Dims{2, 2, 1});
    Volume b(1, Dims{2, 2, 1});
    a.data() = {1.0f, -1.0f, 0.0f, 0.0f};
    b.data() = {0.0f, 0.0f, 0.0f, 0.0f};
    CHECK(l1_loss(a, b) == doctest::Approx(0.5));
    CHECK(l2_loss(a, b) == doctest::Approx(0.5));
    CHECK(l1_loss(a, a) == 0.0);
    CHECK(l2_loss(a, a) == 0.0);
}

TEST_CASE("adam first step moves each weight by the rate") {
    // With bias correction, step 1 gives update = rate * g / (|g| + eps').
    std::vector<float> p{1.0f, 2.0f, -3.0f};
    const std::vector<float> g{0.5f, -0.25f, 4.0f};
    std::vector<float> m(3, 0.0f), v(3, 0.0f);
    adam_update(p, g, m, v, 1, 0.1, 0.9, 0.999, 1e-8);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(2.0 + 0.1).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(-3.0 - 0.1).epsilon(1e-4));
}

TEST_CASE("adam with zero rate leaves parameters untouched") {
    std::vector<float> p{1.0f, 2.0f};
    const std::vector<float> g{5.0f, -5.0f};
    std::vector<float> m(2, 0.0f), v(2, 0.0f);
    adam_update(p, g, m, v, 1, 0.0, 0.9, 0.999, 1e-8);
    CHECK(p[0] == 1.0f);
    CHECK(p[1] == 2.0f);
}

TEST_CASE("learning rate staging picks the last threshold at or below the step") {
    TrainConfig cfg;
    cfg.lr_stages = {{0, 1e-5}, {50000, 1e-6}};
    CHECK(cfg.rate_at(0) == 1e-5);
    CHECK(cfg.rate_at(49999) == 1e-5);
    CHECK(cfg.rate_at(50000) == 1e-6);
    CHECK(cfg.rate_at(50001) == 1e-6);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.total_steps = 0;
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_stages.clear();
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_stages = {{100, 1e-4}};  // no stage covers step 0
    CHECK_THROWS_AS(cfg.check(), ConfigError);
}

TEST_CASE("train_step reduces loss on a single repeated example") {
    TrainState state(tiny_denoiser(), tiny_train(400));
    const auto data = tiny_dataset(1);
    double first_avg = 0.0, last_avg = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double loss = state.train_step(data[0].image, data[0].mask);
        if (i < 50) first_avg += loss / 50.0;
        if (i >= 150) last_avg += loss / 50.0;
    }
    CHECK(last_avg < first_avg);
}

TEST_CASE("checkpoint save/load round trip is byte-exact") {
    const std::string dir = (fs::temp_directory_path() / "voxdiff_ckpt_test").string();
    fs::create_directories(dir);
    TrainState state(tiny_denoiser(), tiny_train(100));
    const auto data = tiny_dataset(2);
    for (int i = 0; i < 5; ++i) state.train_step(data[i % 2].image, data[i % 2].mask);
    const std::string p1 = dir + "/a.ckpt";
    const std::string p2 = dir + "/b.ckpt";
    state.save(p1);
    TrainState loaded = TrainState::load(p1);
    CHECK(loaded.step() == state.step());
    loaded.save(p2);
    CHECK(read_file(p1) == read_file(p2));
    fs::remove_all(dir);
}

TEST_CASE("resumed training reproduces the uninterrupted trajectory") {
    const std::string dir = (fs::temp_directory_path() / "voxdiff_resume_test").string();
    fs::remove_all(dir);
    const auto data = tiny_dataset(4);

    // straight run to 12 steps
    fs::create_directories(dir + "/full");
    TrainState full(tiny_denoiser(), tiny_train(12));
    const std::string full_final = continue_train(full, data, dir + "/full");

    // same config stopped at 7, checkpointed, reloaded, continued to 12
    fs::create_directories(dir + "/split");
    TrainState part(tiny_denoiser(), tiny_train(12));
    continue_train(part, data, dir + "/split", /*total_steps_override=*/7);
    TrainState resumed = TrainState::load(dir + "/split/ckpt_final.ckpt");
    REQUIRE(resumed.step() == 7);
    fs::create_directories(dir + "/split2");
    const std::string resumed_final = continue_train(resumed, data, dir + "/split2");

    CHECK(read_file(full_final) == read_file(resumed_final));
    fs::remove_all(dir);
}

TEST_CASE("loss curve file has one row per step") {
    const std::string dir = (fs::temp_directory_path() / "voxdiff_curve_test").string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto data = tiny_dataset(3);
    train(tiny_denoiser(), tiny_train(9), data, dir);
    std::ifstream curve(dir + "/loss_curve.tsv");
    REQUIRE(curve);
    int rows = 0;
    std::string line;
    long prev_step = 0;
    while (std::getline(curve, line)) {
        if (line.empty()) continue;
        ++rows;
        const long step = std::stol(line.substr(0, line.find('\t')));
        CHECK(step == prev_step + 1);
        prev_step = step;
    }
    CHECK(rows == 9);
    fs::remove_all(dir);
}

TEST_CASE("same seed gives bit-identical training runs") {
    const auto data = tiny_dataset(3);
    TrainState a(tiny_denoiser(), tiny_train(6));
    TrainState b(tiny_denoiser(), tiny_train(6));
    for (int i = 0; i < 6; ++i) {
        const auto& c = data[i % 3];
        CHECK(a.train_step(c.image, c.mask) == b.train_step(c.image, c.mask));
    }
}
