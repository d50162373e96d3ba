#include "voxdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace voxdiff {

namespace {

void check_t(int t, const Schedule& sch, const char* what) {
    if (t < 1 || t > sch.T)
        throw DataError(std::string(what) + ": t=" + std::to_string(t) + " outside [1, " +
                        std::to_string(sch.T) + "]");
}

}  // namespace

Volume forward_sample(const Volume& x0, int t, const Volume& eps, const Schedule& sch) {
    check_t(t, sch, "forward_sample");
    if (!x0.same_shape(eps)) throw DataError("forward_sample: eps shape mismatch");
    const float a = static_cast<float>(std::sqrt(sch.alpha_bar[t]));
    const float b = static_cast<float>(std::sqrt(1.0 - sch.alpha_bar[t]));
    Volume out(x0.channels(), x0.dims());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
    return out;
}

Volume reverse_step(const Volume& xt, const Volume& eps_pred, int t, const Volume& z,
                    const Schedule& sch) {
    check_t(t, sch, "reverse_step");
    if (!xt.same_shape(eps_pred) || !xt.same_shape(z))
        throw DataError("reverse_step: shape mismatch");
    if (t == 1) {
        for (float v : z.data())
            if (v != 0.0f) throw DataError("reverse_step: z must be zero at t=1");
    }
    const float inv_sqrt_alpha = static_cast<float>(1.0 / std::sqrt(sch.alpha[t]));
    const float eps_coeff =
        static_cast<float>((1.0 - sch.alpha[t]) / std::sqrt(1.0 - sch.alpha_bar[t]));
    const float sigma = static_cast<float>(sch.sigma[t]);
    Volume out(xt.channels(), xt.dims());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] =
            inv_sqrt_alpha * (xt.data()[i] - eps_coeff * eps_pred.data()[i]) + sigma * z.data()[i];
    return out;
}

Volume sample(Denoiser& denoiser, const Volume& mask, const Schedule& sch, Rng& rng,
              const SampleOptions& opts) {
    const DenoiserConfig& cfg = denoiser.config();
    if (mask.channels() != cfg.mask_channels)
        throw DataError("sample: mask has " + std::to_string(mask.channels()) +
                        " channels, denoiser expects " + std::to_string(cfg.mask_channels));
    if (!(mask.dims() == cfg.input_size))
        throw DataError("sample: mask dims " + mask.dims().str() + " vs config " +
                        cfg.input_size.str());

    Volume xt = rng.normal_volume(cfg.image_channels, cfg.input_size);
    for (int t = sch.T; t >= 1; --t) {
        const Volume x_tilde = concat_channels(xt, mask);
        Volume eps_pred = denoiser.predict_noise(x_tilde, t);
        if (opts.clamp_x0) {
            // Rewrite eps_pred so the implied x0 = (xt - sb*eps)/sa lands in
            // [-1, 1]; reverse_step itself is unchanged.
            const double sa = std::sqrt(sch.alpha_bar[t]);
            const double sb = std::sqrt(1.0 - sch.alpha_bar[t]);
            for (std::size_t i = 0; i < eps_pred.size(); ++i) {
                const double x0 = std::clamp(
                    (xt.data()[i] - sb * eps_pred.data()[i]) / sa, -1.0, 1.0);
                eps_pred.data()[i] = static_cast<float>((xt.data()[i] - sa * x0) / sb);
            }
        }
        const Volume z = t > 1 ? rng.normal_volume(cfg.image_channels, cfg.input_size)
                               : Volume(cfg.image_channels, cfg.input_size, 0.0f);
        xt = reverse_step(xt, eps_pred, t, z, sch);
        xt.check_finite("sample at t=" + std::to_string(t));
    }
    if (opts.clamp_output)
        for (auto& v : xt.data()) v = std::clamp(v, -1.0f, 1.0f);
    return xt;
}

}  // namespace voxdiff
