#pragma once

#include <string>

#include "voxdiff/data.hpp"
#include "voxdiff/denoiser.hpp"
#include "voxdiff/diffusion.hpp"
#include "voxdiff/seg.hpp"
#include "voxdiff/training.hpp"

namespace voxdiff {

// Resolved run configuration. Every field has a default; files are flat
// sectioned key-value text and unknown keys are errors.
struct RunConfig {
    std::uint64_t seed = 0;
    DenoiserConfig model;
    TrainConfig train;
    SampleOptions sample;
    PhantomParams phantom;
    SegConfig seg;

    // metric options
    std::uint64_t extractor_seed = 42;
    int extractor_dim = 64;
    int msssim_window = 11;
    double msssim_data_lo = -1.0;
    double msssim_data_hi = 1.0;
    int equalize_bins = 256;

    static RunConfig preset(const std::string& name);  // "desk" or "paper"
    static RunConfig load(const std::string& path, const std::string& preset_name = "desk");

    void apply_line(const std::string& section, const std::string& key, const std::string& value);
    std::string canonical_text() const;
    void write(const std::string& path) const;
};

}  // namespace voxdiff
