#pragma once

#include <memory>
#include <string>
#include <vector>

#include "voxdiff/data.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/nn/unet.hpp"

namespace voxdiff {

struct SegConfig {
    long total_steps = 1200;
    int batch_size = 2;  // gradients averaged over the batch per update
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double threshold = 0.5;
    int base_channels = 8;
    std::vector<int> channel_multipliers{1, 2};
    int groupnorm_groups = 8;
    Dims input{16, 16, 16};
    std::uint64_t seed = 0;

    void check() const;
};

// Mean voxel BCE with probabilities clamped to [1e-7, 1-1e-7].
double bce_loss(const Volume& pred_prob, const Volume& truth);

// Tumor segmenter: the denoiser's U-Net backbone without time conditioning,
// 1 input channel, 1 output logit channel.
class SegNet {
  public:
    SegNet(const SegConfig& cfg, Rng& rng);

    nn::UNet<float>& net() { return *net_; }
    const SegConfig& config() const { return cfg_; }

    Volume predict_prob(const Volume& image);

    void save(const std::string& path, long step, const std::string& rng_state,
              const std::vector<nn::Tensor<float>>& adam_m,
              const std::vector<nn::Tensor<float>>& adam_v) const;
    static std::unique_ptr<SegNet> load(const std::string& path);

  private:
    SegConfig cfg_;
    std::unique_ptr<nn::UNet<float>> net_;
};

// Binary tumor mask (label 2) from a phantom label volume.
LabelVolume tumor_mask(const LabelVolume& labels);

std::string seg_train(const SegConfig& cfg, const std::vector<Case>& dataset,
                      const std::string& out_dir);

MetricReport seg_evaluate(const std::string& checkpoint_path, const std::vector<Case>& test_set,
                          double threshold);

}  // namespace voxdiff
