#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "voxdiff/checkpoint.hpp"
#include "voxdiff/denoiser.hpp"
#include "voxdiff/diffusion.hpp"
#include "voxdiff/schedule.hpp"

namespace voxdiff {

struct TrainConfig {
    long total_steps = 2000;
    int batch_size = 1;
    // (step threshold, rate); the rate of the last stage with threshold <= step applies.
    std::vector<std::pair<long, double>> lr_stages{{0, 3e-4}};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    LossKind loss = LossKind::L1;
    int schedule_T = 250;
    double schedule_s = 0.008;
    long checkpoint_every = 1000;
    std::uint64_t seed = 0;
    double grad_clip = 0.0;  // 0 = off

    void check() const;
    double rate_at(long step) const;
};

double l1_loss(const Volume& eps, const Volume& eps_pred);
double l2_loss(const Volume& eps, const Volume& eps_pred);

// Standard bias-corrected Adam, elementwise; step is 1-based.
void adam_update(std::vector<float>& params, const std::vector<float>& grads,
                 std::vector<float>& m, std::vector<float>& v, long step, double rate,
                 double beta1, double beta2, double eps);

struct TrainCase {
    Volume image;  // [-1,1], M channels
    Volume mask;   // one-hot, K channels
    std::string id;
};

// Denoiser parameters + Adam accumulators + step counter + RNG stream.
class TrainState {
  public:
    TrainState(const DenoiserConfig& dcfg, const TrainConfig& tcfg);

    Denoiser& denoiser() { return *denoiser_; }
    const Schedule& schedule() const { return schedule_; }
    const TrainConfig& config() const { return tcfg_; }
    long step() const { return step_; }
    Rng& rng() { return rng_; }
    const std::deque<double>& loss_history() const { return loss_history_; }

    // One Algorithm-1 iteration: draw t and eps, noise x0, concatenate the
    // mask, backprop the loss, apply Adam at the stage rate.
    double train_step(const Volume& x0, const Volume& mask);

    void save(const std::string& path) const;
    static TrainState load(const std::string& path);

  private:
    TrainState() = default;
    void bind_params();

    DenoiserConfig dcfg_;
    TrainConfig tcfg_;
    Schedule schedule_;
    std::unique_ptr<Denoiser> denoiser_;
    // aligned with visit_params order
    std::vector<std::string> param_names_;
    std::vector<nn::Tensor<float>*> params_;
    std::vector<nn::Tensor<float>*> grads_;
    std::vector<nn::Tensor<float>> adam_m_, adam_v_;
    long step_ = 0;
    Rng rng_;
    std::deque<double> loss_history_;
};

// Full training loop: shuffled passes over the dataset, periodic checkpoints,
// an append-only "step<TAB>loss" curve. Returns the final checkpoint path.
std::string train(const DenoiserConfig& dcfg, const TrainConfig& tcfg,
                  const std::vector<TrainCase>& dataset, const std::string& out_dir);

// Continues an existing state (fresh or checkpoint-loaded) to total_steps,
// or to an explicit override when extending past the configured budget.
std::string continue_train(TrainState& state, const std::vector<TrainCase>& dataset,
                           const std::string& out_dir, long total_steps_override = 0);

}  // namespace voxdiff
