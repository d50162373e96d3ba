#include "voxdiff/denoiser.hpp"

namespace voxdiff {

nn::Tensor<float> to_tensor(const Volume& v) {
    nn::Tensor<float> t({v.channels(), v.depth(), v.height(), v.width()});
    t.data = v.data();
    return t;
}

Volume to_volume(const nn::Tensor<float>& t) {
    if (t.shape.size() != 4) throw DataError("to_volume: tensor must be {C,D,H,W}");
    Volume v(t.shape[0], Dims{t.shape[3], t.shape[2], t.shape[1]});
    v.data() = t.data;
    return v;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    net_ = std::make_unique<nn::UNet<float>>(cfg.unet(), cfg.input_size, rng);
}

std::size_t Denoiser::param_count() const { return net_->param_count(); }

Volume Denoiser::predict_noise(const Volume& x_tilde, int t) {
    if (x_tilde.channels() != cfg_.image_channels + cfg_.mask_channels)
        throw DataError("predict_noise: expected " +
                        std::to_string(cfg_.image_channels + cfg_.mask_channels) +
                        " channels, got " + std::to_string(x_tilde.channels()));
    nn::Tensor<float> out = net_->forward(to_tensor(x_tilde), t);
    Volume v = to_volume(out);
    v.check_finite("predict_noise(t=" + std::to_string(t) + ")");
    return v;
}

double Denoiser::loss_and_gradients(const Volume& x_tilde, int t, LossKind kind,
                                    const Volume& target_eps) {
    if (target_eps.channels() != cfg_.image_channels)
        throw DataError("gradients: target must have M channels");
    return loss_and_backward(*net_, to_tensor(x_tilde), t, kind, to_tensor(target_eps));
}

std::vector<double> time_embedding(int t, int dim) {
    auto e = nn::sinusoidal_time_embedding<double>(t, dim);
    return {e.begin(), e.end()};
}

}  // namespace voxdiff
