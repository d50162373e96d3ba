#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "voxdiff/data.hpp"
#include "voxdiff/rng.hpp"

using namespace voxdiff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("v3d round trip is bit exact") {
    TempDir tmp("voxdiff_v3d_test");
    Rng rng(1);
    const Volume v = rng.normal_volume(2, Dims{5, 4, 3});
    const std::string path = (tmp.path / "v.v3d").string();
    write_v3d(v, path);
    V3dKind kind;
    const Volume back = read_v3d(path, &kind);
    CHECK(kind == V3dKind::Intensity);
    CHECK(back.channels() == 2);
    CHECK(back.dims() == v.dims());
    CHECK(back.data() == v.data());
}

TEST_CASE("label volume round trip") {
    TempDir tmp("voxdiff_lbl_test");
    LabelVolume labels(Dims{4, 4, 4});
    Rng rng(2);
    for (auto& l : labels.data()) l = rng.uniform_int(0, 2);
    const std::string path = (tmp.path / "l.v3d").string();
    write_labels_v3d(labels, path);
    CHECK(read_labels_v3d(path) == labels);
}

TEST_CASE("v3d rejects bad magic, zero dims and truncation distinctly") {
    TempDir tmp("voxdiff_v3d_err_test");
    const std::string path = (tmp.path / "v.v3d").string();
    const Volume v(1, Dims{4, 4, 4}, 0.5f);
    write_v3d(v, path);

    // truncated payload
    {
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
    }
    CHECK_THROWS_WITH_AS(read_v3d(path), doctest::Contains("truncated"), DataError);

    // bad magic
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write("XXXX........................", 28);
    }
    CHECK_THROWS_WITH_AS(read_v3d(path), doctest::Contains("magic"), DataError);

    // zero dimension in the header
    {
        write_v3d(v, path);
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        const std::uint32_t zero = 0;
        f.write(reinterpret_cast<const char*>(&zero), 4);
    }
    CHECK_THROWS_AS(read_v3d(path), DataError);
}

TEST_CASE("phantom generation is deterministic in seed and index") {
    PhantomParams params;
    params.seed = 9;
    const Case a = generate_phantom(params, 3);
    const Case b = generate_phantom(params, 3);
    const Case c = generate_phantom(params, 4);
    CHECK(a.image.data() == b.image.data());
    CHECK(a.labels == b.labels);
    CHECK(a.image.data() != c.image.data());
}

TEST_CASE("phantom geometry and intensity contract") {
    PhantomParams params;
    params.seed = 10;
    for (int index = 0; index < 10; ++index) {
        const Case c = generate_phantom(params, index);
        long n_bg = 0, n_head = 0, n_tumor = 0;
        double head_sum = 0.0, tumor_sum = 0.0;
        for (std::size_t i = 0; i < c.labels.data().size(); ++i) {
            const int l = c.labels.data()[i];
            const float v = c.image.data()[i];
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
            if (l == 0) {
                ++n_bg;
                CHECK(v < -0.5f);  // background near -1
            } else if (l == 1) {
                ++n_head;
                head_sum += v;
            } else {
                REQUIRE(l == 2);
                ++n_tumor;
                tumor_sum += v;
            }
        }
        CHECK(n_bg > 0);
        CHECK(n_head > 0);
        CHECK(n_tumor > 0);
        // tumor is brighter than head tissue on average
        CHECK(tumor_sum / n_tumor > head_sum / n_head + 0.1);
    }
}

TEST_CASE("phantom rejects degenerate parameters") {
    PhantomParams params;
    params.tumor_radius_lo = 0.5;
    params.tumor_radius_hi = 0.4;
    CHECK_THROWS_AS(generate_phantom(params, 0), ConfigError);
}

TEST_CASE("preprocessing shape pipeline") {
    // non-cubic input: pad to a cube, resize, rescale intensity
    Rng rng(11);
    Volume img(1, Dims{24, 20, 16});
    for (auto& v : img.data()) v = 100.0f + 40.0f * rng.normal();
    LabelVolume lbl(Dims{24, 20, 16}, 0);
    lbl.at(12, 10, 8) = 2;
    const Case out = preprocess(img, lbl, Dims{16, 16, 16}, "case0");
    CHECK(out.image.dims() == Dims{16, 16, 16});
    CHECK(out.labels.dims() == Dims{16, 16, 16});
    const auto [lo, hi] = std::minmax_element(out.image.data().begin(), out.image.data().end());
    CHECK(*lo >= -1.0f);
    CHECK(*hi <= 1.0f);
    for (const int l : out.labels.data()) CHECK(l >= 0);
}

TEST_CASE("label remapping is total and supports a brain threshold rule") {
    LabelVolume labels(Dims{4, 1, 1});
    labels.data() = {0, 1, 2, 4};
    Volume ref(1, Dims{4, 1, 1});
    ref.data() = {-1.0f, 0.4f, 0.8f, 0.1f};

    std::map<int, int> mapping{{0, 0}, {1, 1}, {2, 2}, {4, 1}};
    const LabelVolume out = remap_labels(labels, mapping);
    CHECK(out.data() == std::vector<int>{0, 1, 2, 1});

    std::map<int, int> partial{{0, 0}, {1, 1}};
    CHECK_THROWS_AS(remap_labels(labels, partial), DataError);

    // threshold below every head intensity: all non-tumor, non-background
    // voxels of the support become brain
    BrainThreshold rule;
    rule.threshold = 0.0f;
    const LabelVolume brained = remap_labels(labels, mapping, rule, &ref);
    CHECK(brained.data() == std::vector<int>{0, 3, 2, 3});
}

TEST_CASE("manifest and case io round trip") {
    TempDir tmp("voxdiff_manifest_test");
    PhantomParams params;
    params.seed = 12;
    std::vector<std::string> ids;
    for (int i = 0; i < 3; ++i) {
        const Case c = generate_phantom(params, i);
        save_case(tmp.path.string(), c);
        ids.push_back(c.id);
    }
    write_manifest(tmp.path.string(), ids);
    CHECK(read_manifest(tmp.path.string()) == ids);
    const Case back = load_case(tmp.path.string(), ids[1]);
    const Case orig = generate_phantom(params, 1);
    CHECK(back.image.data() == orig.image.data());
    CHECK(back.labels == orig.labels);
}
