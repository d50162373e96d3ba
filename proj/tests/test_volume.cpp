#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "voxdiff/rng.hpp"
#include "voxdiff/volume.hpp"

using namespace voxdiff;

TEST_CASE("voxel layout is x-fastest") {
    Volume v(2, Dims{3, 4, 5});
    v.at(1, 2, 3, 4) = 7.0f;
    const int idx = ((1 * 5 + 4) * 4 + 3) * 3 + 2;
    CHECK(v.data()[idx] == 7.0f);
}

TEST_CASE("one-hot round trip over random label volumes") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        LabelVolume labels(Dims{5, 4, 3});
        for (auto& l : labels.data()) l = rng.uniform_int(0, 2);
        const Volume hot = one_hot_encode(labels, 3, /*exclude_background=*/true);
        CHECK(hot.channels() == 2);
        CHECK(decode_one_hot(hot) == labels);
    }
}

TEST_CASE("one-hot excludes the background channel") {
    LabelVolume labels(Dims{2, 1, 1});
    labels.data() = {0, 2};
    const Volume hot = one_hot_encode(labels, 3, true);
    CHECK(hot.at(0, 0, 0, 0) == 0.0f);  // label 1 channel
    CHECK(hot.at(1, 0, 0, 0) == 0.0f);
    CHECK(hot.at(0, 1, 0, 0) == 0.0f);
    CHECK(hot.at(1, 1, 0, 0) == 1.0f);  // label 2 channel
}

TEST_CASE("decode rejects multi-hot and non-binary masks") {
    Volume hot(2, Dims{1, 1, 1});
    hot.at(0, 0, 0, 0) = 1.0f;
    hot.at(1, 0, 0, 0) = 1.0f;
    CHECK_THROWS_AS(decode_one_hot(hot), DataError);
    hot.at(1, 0, 0, 0) = 0.5f;
    CHECK_THROWS_AS(decode_one_hot(hot), DataError);
}

TEST_CASE("channel concat and slice invert each other") {
    Rng rng(3);
    Volume a = rng.normal_volume(1, Dims{4, 4, 4});
    Volume b = rng.normal_volume(2, Dims{4, 4, 4});
    const Volume cat = concat_channels(a, b);
    CHECK(cat.channels() == 3);
    CHECK(slice_channels(cat, 0, 1).data() == a.data());
    CHECK(slice_channels(cat, 1, 2).data() == b.data());
}

TEST_CASE("concat requires matching spatial dims") {
    Volume a(1, Dims{4, 4, 4});
    Volume b(1, Dims{4, 4, 5});
    CHECK_THROWS_AS(concat_channels(a, b), DataError);
}

TEST_CASE("intensity rescale maps the source window onto [-1,1]") {
    Volume v(1, Dims{4, 1, 1});
    v.data() = {0.0f, 50.0f, 100.0f, 200.0f};
    const Volume out = rescale_intensity(v, 0.0f, 100.0f);
    CHECK(out.data()[0] == doctest::Approx(-1.0f));
    CHECK(out.data()[1] == doctest::Approx(0.0f));
    CHECK(out.data()[2] == doctest::Approx(1.0f));
    CHECK(out.data()[3] == doctest::Approx(1.0f));  // clamped
}

TEST_CASE("center crop and pad") {
    Volume v(1, Dims{4, 4, 4});
    for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] = static_cast<float>(i);
    const Volume cropped = crop_or_pad(v, Dims{2, 2, 2}, -1.0f);
    CHECK(cropped.at(0, 0, 0, 0) == v.at(0, 1, 1, 1));
    const Volume padded = crop_or_pad(v, Dims{6, 6, 6}, -1.0f);
    CHECK(padded.at(0, 0, 0, 0) == -1.0f);
    CHECK(padded.at(0, 1, 1, 1) == v.at(0, 0, 0, 0));
    // crop(pad(v)) restores the original
    const Volume back = crop_or_pad(padded, Dims{4, 4, 4}, -1.0f);
    CHECK(back.data() == v.data());
}

TEST_CASE("trilinear resize of a 2x2x2 block to one voxel averages it") {
    Volume v(1, Dims{2, 2, 2});
    v.data() = {0, 1, 2, 3, 4, 5, 6, 7};
    const Volume out = resize(v, Dims{1, 1, 1}, ResizeMode::Trilinear);
    CHECK(out.data()[0] == doctest::Approx(3.5f));
}

TEST_CASE("resize to the same shape is the identity") {
    Rng rng(5);
    const Volume v = rng.normal_volume(2, Dims{5, 6, 7});
    const Volume out = resize(v, Dims{5, 6, 7}, ResizeMode::Trilinear);
    for (std::size_t i = 0; i < v.data().size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-6));
}

TEST_CASE("nearest label resize never invents labels") {
    Rng rng(9);
    LabelVolume labels(Dims{6, 6, 6});
    for (auto& l : labels.data()) l = rng.uniform_int(0, 2);
    const LabelVolume out = resize_labels(labels, Dims{4, 5, 9});
    for (const int l : out.data()) {
        CHECK(l >= 0);
        CHECK(l <= 2);
    }
}

TEST_CASE("check_finite rejects NaN") {
    Volume v(1, Dims{2, 2, 2});
    v.data()[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(v.check_finite("test"), NumericError);
}
