#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "voxdiff/config.hpp"

using namespace voxdiff;
namespace fs = std::filesystem;

TEST_CASE("desk preset is the small-footprint default") {
    const RunConfig cfg = RunConfig::preset("desk");
    CHECK(cfg.model.base_channels == 8);
    CHECK(cfg.model.input_size == Dims{16, 16, 16});
    CHECK(cfg.train.schedule_T == 250);
}

TEST_CASE("paper preset scales the architecture up") {
    const RunConfig cfg = RunConfig::preset("paper");
    CHECK(cfg.model.base_channels == 64);
    CHECK(cfg.model.channel_multipliers == std::vector<int>{1, 2, 4, 8});
    CHECK(cfg.model.input_size == Dims{128, 128, 128});
    CHECK(cfg.train.lr_stages.size() == 2);
    CHECK(cfg.train.rate_at(0) == 1e-5);
    CHECK(cfg.train.rate_at(50000) == 1e-6);
}

TEST_CASE("unknown preset is rejected") {
    CHECK_THROWS_AS(RunConfig::preset("tabletop"), ConfigError);
}

TEST_CASE("config file overrides preset values") {
    const auto dir = fs::temp_directory_path() / "voxdiff_cfg_test";
    fs::create_directories(dir);
    const auto path = (dir / "run.cfg").string();
    {
        std::ofstream os(path);
        os << "# comment\n"
           << "[run]\n"
           << "seed = 99\n"
           << "[train]\n"
           << "total_steps = 123\n"
           << "[model]\n"
           << "base_channels = 4\n";
    }
    const RunConfig cfg = RunConfig::load(path, "desk");
    CHECK(cfg.seed == 99);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.train.total_steps == 123);
    CHECK(cfg.model.base_channels == 4);
    fs::remove_all(dir);
}

TEST_CASE("unknown keys are rejected with a line number") {
    const auto dir = fs::temp_directory_path() / "voxdiff_cfg_bad_test";
    fs::create_directories(dir);
    const auto path = (dir / "bad.cfg").string();
    {
        std::ofstream os(path);
        os << "[train]\n"
           << "learning_velocity = 3\n";
    }
    CHECK_THROWS_WITH_AS(RunConfig::load(path, "desk"), doctest::Contains("2"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("canonical text round trips through load") {
    const auto dir = fs::temp_directory_path() / "voxdiff_cfg_rt_test";
    fs::create_directories(dir);
    const auto path = (dir / "rt.cfg").string();
    RunConfig cfg = RunConfig::preset("desk");
    cfg.seed = 4242;
    cfg.train.seed = 4242;
    cfg.phantom.seed = 4242;
    cfg.seg.seed = 4242;
    cfg.train.total_steps = 777;
    cfg.write(path);
    const RunConfig back = RunConfig::load(path, "desk");
    CHECK(back.canonical_text() == cfg.canonical_text());
    fs::remove_all(dir);
}
