#pragma once

#include "voxdiff/denoiser.hpp"
#include "voxdiff/rng.hpp"
#include "voxdiff/schedule.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff {

struct SampleOptions {
    bool clamp_output = true;  // clamp final x0 to [-1, 1]
    // Clamp the clean-image estimate implied by eps_pred to [-1, 1] at every
    // reverse step. Near t = T the beta clamp makes 1/sqrt(alpha_t) large
    // (~31.6 at the final step of the default schedule), so unbounded
    // prediction error is amplified until the chain diverges; bounding the
    // implied estimate keeps the trajectory in the training range.
    bool clamp_x0 = true;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Volume forward_sample(const Volume& x0, int t, const Volume& eps, const Schedule& sch);

// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-alpha_bar_t) eps_pred) / sqrt(alpha_t) + sigma_t z
// z must be all-zero at t = 1.
Volume reverse_step(const Volume& xt, const Volume& eps_pred, int t, const Volume& z,
                    const Schedule& sch);

// Full conditional generation: x_T ~ N(0,I), then T reverse steps with the
// mask re-concatenated every step. Deterministic given (denoiser, mask, rng).
Volume sample(Denoiser& denoiser, const Volume& mask, const Schedule& sch, Rng& rng,
              const SampleOptions& opts = {});

}  // namespace voxdiff
