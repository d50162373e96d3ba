#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "voxdiff/rng.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff {

double mse(const Volume& a, const Volume& b);

struct MmdOptions {
    double bandwidth = 0.0;  // 0 = median heuristic over pooled pairwise distances
    bool biased = true;      // V-statistic (non-negative); unbiased U-statistic behind the flag
};

// Squared-MMD estimate between two volume sets under a Gaussian kernel on
// flattened voxel vectors.
double mmd(const std::vector<Volume>& set_a, const std::vector<Volume>& set_b,
           const MmdOptions& opts = {});

struct MsSsimOptions {
    int window = 11;
    double window_sigma = 1.5;
    int max_scales = 5;
    // Source intensity range mapped onto [0,1] before scoring. The default
    // treats inputs as already being in [0,1].
    double data_lo = 0.0;
    double data_hi = 1.0;
    int* scales_used = nullptr;  // optional: reports the retained scale count
};

double ms_ssim_3d(const Volume& a, const Volume& b, const MsSsimOptions& opts = {});

// Empirical-CDF intensity remap onto [0,1]; rank-preserving.
Volume histogram_equalize(const Volume& v, int bins = 256);

class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual std::vector<double> extract(const Volume& v) const = 0;
};

// Seeded fixed random linear projection of the flattened voxels. Stands in
// for a pretrained feature network; deterministic per (seed, input size).
class RandomProjectionExtractor : public FeatureExtractor {
  public:
    explicit RandomProjectionExtractor(std::uint64_t seed, int out_dim = 64)
        : seed_(seed), out_dim_(out_dim) {}
    std::string name() const override;
    std::vector<double> extract(const Volume& v) const override;

  private:
    std::uint64_t seed_;
    int out_dim_;
};

// ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^(1/2)), population covariances,
// PSD-safe matrix square root. clamp_total, when given, receives the summed
// magnitude of clamped negative eigenvalues.
double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b,
                        double* clamp_total = nullptr);

struct SegScores {
    double dice, iou, accuracy, recall, precision;
};

// Confusion-matrix metrics over binary label volumes (foreground = 1).
SegScores seg_metrics(const LabelVolume& pred, const LabelVolume& truth);

// Per-case rows plus mean +/- std aggregates; set-level scalars kept apart.
class MetricReport {
  public:
    void add_case(const std::string& id) { case_ids_.push_back(id); }
    void add_value(const std::string& metric, double value) { values_[metric].push_back(value); }
    void set_scalar(const std::string& metric, double value) { scalars_[metric] = value; }
    void set_note(const std::string& key, const std::string& value) { notes_[key] = value; }

    const std::vector<double>& values(const std::string& metric) const { return values_.at(metric); }
    double scalar(const std::string& metric) const { return scalars_.at(metric); }
    double mean(const std::string& metric) const;
    double stddev(const std::string& metric) const;

    std::string table_text() const;
    std::string kv_text() const;
    void write(const std::string& table_path, const std::string& kv_path) const;

  private:
    std::vector<std::string> case_ids_;
    std::map<std::string, std::vector<double>> values_;
    std::map<std::string, double> scalars_;
    std::map<std::string, std::string> notes_;
};

}  // namespace voxdiff
