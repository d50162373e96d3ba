#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "voxdiff/nn/unet.hpp"
#include "voxdiff/rng.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff {

enum class LossKind { L1, L2 };

struct DenoiserConfig {
    int image_channels = 1;  // M
    int mask_channels = 2;   // K
    int base_channels = 8;
    std::vector<int> channel_multipliers{1, 2};
    std::set<int> attention_levels{1};
    int attention_heads = 1;
    int groupnorm_groups = 8;
    int time_embed_dim = 0;  // 0 -> 4 * base_channels
    int num_res_blocks = 1;
    Dims input_size{16, 16, 16};

    int resolved_time_dim() const {
        return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels;
    }

    nn::UNetConfig unet() const {
        nn::UNetConfig u;
        u.in_channels = image_channels + mask_channels;
        u.out_channels = image_channels;
        u.base_channels = base_channels;
        u.channel_multipliers = channel_multipliers;
        u.attention_levels = attention_levels;
        u.attention_heads = attention_heads;
        u.groupnorm_groups = groupnorm_groups;
        u.time_embed_dim = resolved_time_dim();
        u.num_res_blocks = num_res_blocks;
        return u;
    }
};

// Noise predictor eps_theta(x_tilde, t): (M+K)-channel conditioned input in,
// M-channel noise estimate out.
class Denoiser {
  public:
    Denoiser(const DenoiserConfig& cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }
    nn::UNet<float>& net() { return *net_; }
    std::size_t param_count() const;

    Volume predict_noise(const Volume& x_tilde, int t);

    // Loss + full parameter gradient for one conditioned sample.
    // Gradients land in the net's grad tensors (zeroed first).
    double loss_and_gradients(const Volume& x_tilde, int t, LossKind kind,
                              const Volume& target_eps);

  private:
    DenoiserConfig cfg_;
    std::unique_ptr<nn::UNet<float>> net_;
};

// Raw sinusoidal time encoding (pre-MLP); deterministic and t-injective.
std::vector<double> time_embedding(int t, int dim);

// Conversion helpers between Volume (float, {C,W,H,D} dims) and nn tensors.
nn::Tensor<float> to_tensor(const Volume& v);
Volume to_volume(const nn::Tensor<float>& t);

// Templated loss-with-gradients used by both Denoiser and the double-precision
// gradient oracle tests.
template <typename T>
double loss_and_backward(nn::UNet<T>& net, const nn::Tensor<T>& x, int t, LossKind kind,
                         const nn::Tensor<T>& target) {
    net.zero_grads();
    nn::Tensor<T> pred = net.forward(x, t);
    if (!pred.same_shape(const_cast<nn::Tensor<T>&>(target)))
        throw DataError("loss: target shape " + target.shape_str() + " vs prediction " +
                        pred.shape_str());
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double loss = 0.0;
    nn::Tensor<T> grad(pred.shape);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        if (kind == LossKind::L1) {
            loss += std::abs(d) * inv_n;
            // subgradient at 0 defined as 0
            grad.data[i] = static_cast<T>((d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n);
        } else {
            loss += d * d * inv_n;
            grad.data[i] = static_cast<T>(2.0 * d * inv_n);
        }
    }
    net.backward(grad);
    return loss;
}

}  // namespace voxdiff
