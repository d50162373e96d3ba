#include "voxdiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace voxdiff {

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt_int_list(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

std::map<std::string, std::string> denoiser_config_map(const DenoiserConfig& d) {
    std::map<std::string, std::string> kv;
    kv["model.kind"] = "denoiser";
    kv["model.image_channels"] = std::to_string(d.image_channels);
    kv["model.mask_channels"] = std::to_string(d.mask_channels);
    kv["model.base_channels"] = std::to_string(d.base_channels);
    kv["model.channel_multipliers"] = fmt_int_list(d.channel_multipliers);
    kv["model.attention_levels"] =
        fmt_int_list(std::vector<int>(d.attention_levels.begin(), d.attention_levels.end()));
    kv["model.attention_heads"] = std::to_string(d.attention_heads);
    kv["model.groupnorm_groups"] = std::to_string(d.groupnorm_groups);
    kv["model.time_embed_dim"] = std::to_string(d.time_embed_dim);
    kv["model.num_res_blocks"] = std::to_string(d.num_res_blocks);
    kv["model.input_width"] = std::to_string(d.input_size.width);
    kv["model.input_height"] = std::to_string(d.input_size.height);
    kv["model.input_depth"] = std::to_string(d.input_size.depth);
    return kv;
}

DenoiserConfig denoiser_config_from_map(const std::map<std::string, std::string>& kv) {
    DenoiserConfig d;
    d.image_channels = std::stoi(kv.at("model.image_channels"));
    d.mask_channels = std::stoi(kv.at("model.mask_channels"));
    d.base_channels = std::stoi(kv.at("model.base_channels"));
    d.channel_multipliers = parse_int_list(kv.at("model.channel_multipliers"));
    auto attn = parse_int_list(kv.at("model.attention_levels"));
    d.attention_levels = std::set<int>(attn.begin(), attn.end());
    d.attention_heads = std::stoi(kv.at("model.attention_heads"));
    d.groupnorm_groups = std::stoi(kv.at("model.groupnorm_groups"));
    d.time_embed_dim = std::stoi(kv.at("model.time_embed_dim"));
    d.num_res_blocks = std::stoi(kv.at("model.num_res_blocks"));
    d.input_size = Dims{std::stoi(kv.at("model.input_width")),
                        std::stoi(kv.at("model.input_height")),
                        std::stoi(kv.at("model.input_depth"))};
    return d;
}

std::map<std::string, std::string> train_config_map(const TrainConfig& t) {
    std::map<std::string, std::string> kv;
    kv["train.total_steps"] = std::to_string(t.total_steps);
    kv["train.batch_size"] = std::to_string(t.batch_size);
    std::string stages;
    for (std::size_t i = 0; i < t.lr_stages.size(); ++i)
        stages += (i ? "," : "") + std::to_string(t.lr_stages[i].first) + ":" +
                  fmt_double(t.lr_stages[i].second);
    kv["train.lr_stages"] = stages;
    kv["train.beta1"] = fmt_double(t.beta1);
    kv["train.beta2"] = fmt_double(t.beta2);
    kv["train.adam_eps"] = fmt_double(t.adam_eps);
    kv["train.loss"] = t.loss == LossKind::L1 ? "l1" : "l2";
    kv["train.schedule_T"] = std::to_string(t.schedule_T);
    kv["train.schedule_s"] = fmt_double(t.schedule_s);
    kv["train.checkpoint_every"] = std::to_string(t.checkpoint_every);
    kv["train.seed"] = std::to_string(t.seed);
    kv["train.grad_clip"] = fmt_double(t.grad_clip);
    return kv;
}

TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv) {
    TrainConfig t;
    t.total_steps = std::stol(kv.at("train.total_steps"));
    t.batch_size = std::stoi(kv.at("train.batch_size"));
    t.lr_stages.clear();
    std::istringstream is(kv.at("train.lr_stages"));
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw DataError("checkpoint: malformed lr stage " + tok);
        t.lr_stages.emplace_back(std::stol(tok.substr(0, colon)), std::stod(tok.substr(colon + 1)));
    }
    t.beta1 = std::stod(kv.at("train.beta1"));
    t.beta2 = std::stod(kv.at("train.beta2"));
    t.adam_eps = std::stod(kv.at("train.adam_eps"));
    t.loss = kv.at("train.loss") == "l2" ? LossKind::L2 : LossKind::L1;
    t.schedule_T = std::stoi(kv.at("train.schedule_T"));
    t.schedule_s = std::stod(kv.at("train.schedule_s"));
    t.checkpoint_every = std::stol(kv.at("train.checkpoint_every"));
    t.seed = std::stoull(kv.at("train.seed"));
    t.grad_clip = std::stod(kv.at("train.grad_clip"));
    return t;
}

double mean_abs_or_sq_diff(const Volume& a, const Volume& b, bool squared) {
    if (!a.same_shape(b)) throw DataError("loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += squared ? d * d : std::abs(d);
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace

void TrainConfig::check() const {
    if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (lr_stages.empty()) throw ConfigError("train: no learning-rate stages");
    if (lr_stages.front().first != 0)
        throw ConfigError("train: first lr stage must start at step 0");
    for (std::size_t i = 0; i < lr_stages.size(); ++i) {
        if (!(lr_stages[i].second >= 0.0)) throw ConfigError("train: negative learning rate");
        if (i > 0 && lr_stages[i].first <= lr_stages[i - 1].first)
            throw ConfigError("train: lr stages must be sorted by threshold");
    }
    if (schedule_T < 1) throw ConfigError("train: schedule_T must be >= 1");
}

double TrainConfig::rate_at(long step) const {
    double rate = lr_stages.front().second;
    for (const auto& [threshold, r] : lr_stages)
        if (step >= threshold) rate = r;
    return rate;
}

double l1_loss(const Volume& eps, const Volume& eps_pred) {
    return mean_abs_or_sq_diff(eps, eps_pred, false);
}

double l2_loss(const Volume& eps, const Volume& eps_pred) {
    return mean_abs_or_sq_diff(eps, eps_pred, true);
}

void adam_update(std::vector<float>& params, const std::vector<float>& grads,
                 std::vector<float>& m, std::vector<float>& v, long step, double rate,
                 double beta1, double beta2, double eps) {
    if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
        throw DataError("adam_update: size mismatch");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        const double mi = beta1 * m[i] + (1.0 - beta1) * g;
        const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        params[i] -= static_cast<float>(rate * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
}

TrainState::TrainState(const DenoiserConfig& dcfg, const TrainConfig& tcfg)
    : dcfg_(dcfg), tcfg_(tcfg), rng_(tcfg.seed) {
    tcfg.check();
    schedule_ = cosine_schedule(tcfg.schedule_T, tcfg.schedule_s);
    Rng init_rng = Rng::derive(tcfg.seed, 0xDE501);
    denoiser_ = std::make_unique<Denoiser>(dcfg, init_rng);
    bind_params();
    for (const auto* p : params_) {
        adam_m_.emplace_back(p->shape);
        adam_v_.emplace_back(p->shape);
    }
}

void TrainState::bind_params() {
    param_names_.clear();
    params_.clear();
    grads_.clear();
    denoiser_->net().visit_params([&](const std::string& name, nn::Tensor<float>& p,
                                      nn::Tensor<float>& g) {
        param_names_.push_back(name);
        params_.push_back(&p);
        grads_.push_back(&g);
    });
}

double TrainState::train_step(const Volume& x0, const Volume& mask) {
    const int t = rng_.uniform_int(1, schedule_.T);
    const Volume eps = rng_.normal_volume(x0.channels(), x0.dims());
    const Volume xt = forward_sample(x0, t, eps, schedule_);
    const Volume x_tilde = concat_channels(xt, mask);
    const double loss = denoiser_->loss_and_gradients(x_tilde, t, tcfg_.loss, eps);
    if (!std::isfinite(loss))
        throw NumericError("train_step: non-finite loss at step " + std::to_string(step_ + 1) +
                           " (t=" + std::to_string(t) + ")");

    if (tcfg_.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const auto* g : grads_)
            for (float x : g->data) norm_sq += static_cast<double>(x) * x;
        const double norm = std::sqrt(norm_sq);
        if (norm > tcfg_.grad_clip) {
            const float scale = static_cast<float>(tcfg_.grad_clip / norm);
            for (auto* g : grads_)
                for (float& x : g->data) x *= scale;
        }
    }

    ++step_;
    const double rate = tcfg_.rate_at(step_);
    for (std::size_t i = 0; i < params_.size(); ++i)
        adam_update(params_[i]->data, grads_[i]->data, adam_m_[i].data, adam_v_[i].data, step_,
                    rate, tcfg_.beta1, tcfg_.beta2, tcfg_.adam_eps);

    loss_history_.push_back(loss);
    if (loss_history_.size() > 1000) loss_history_.pop_front();
    return loss;
}

void TrainState::save(const std::string& path) const {
    CheckpointData data;
    auto kv = denoiser_config_map(dcfg_);
    kv.merge(train_config_map(tcfg_));
    data.config_text = config_text_from_map(kv);
    data.schedule = schedule_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        data.params.emplace_back(param_names_[i], *params_[i]);
        data.adam_m.emplace_back(param_names_[i], adam_m_[i]);
        data.adam_v.emplace_back(param_names_[i], adam_v_[i]);
    }
    data.step = static_cast<std::uint64_t>(step_);
    data.seed = tcfg_.seed;
    data.rng_state = rng_.serialize();
    save_checkpoint(path, data);
}

TrainState TrainState::load(const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    const auto kv = config_map_from_text(data.config_text);
    if (kv.at("model.kind") != "denoiser")
        throw DataError("checkpoint: not a denoiser checkpoint: " + path);
    TrainState state(denoiser_config_from_map(kv), train_config_from_map(kv));
    state.schedule_ = data.schedule;
    if (data.params.size() != state.params_.size())
        throw DataError("checkpoint: parameter count mismatch in " + path);
    for (std::size_t i = 0; i < state.params_.size(); ++i) {
        if (data.params[i].first != state.param_names_[i])
            throw DataError("checkpoint: parameter name mismatch: " + data.params[i].first);
        if (data.params[i].second.shape != state.params_[i]->shape)
            throw DataError("checkpoint: parameter shape mismatch: " + data.params[i].first);
        *state.params_[i] = data.params[i].second;
        state.adam_m_[i] = data.adam_m[i].second;
        state.adam_v_[i] = data.adam_v[i].second;
    }
    state.step_ = static_cast<long>(data.step);
    state.rng_ = Rng::deserialize(data.rng_state);
    return state;
}

std::string train(const DenoiserConfig& dcfg, const TrainConfig& tcfg,
                  const std::vector<TrainCase>& dataset, const std::string& out_dir) {
    TrainState state(dcfg, tcfg);
    return continue_train(state, dataset, out_dir);
}

std::string continue_train(TrainState& state, const std::vector<TrainCase>& dataset,
                           const std::string& out_dir, long total_steps_override) {
    if (dataset.empty()) throw DataError("train: empty dataset");
    std::filesystem::create_directories(out_dir);

    const TrainConfig& tcfg = state.config();
    const long total_steps =
        total_steps_override > 0 ? total_steps_override : tcfg.total_steps;
    std::ofstream curve(out_dir + "/loss_curve.tsv", std::ios::app);
    if (!curve) throw DataError("train: cannot open loss curve in " + out_dir);

    const std::size_t n = dataset.size();
    // Case order is a pure function of (seed, epoch), so resumed runs replay
    // the same sequence.
    std::vector<std::size_t> order(n);
    long cached_epoch = -1;
    auto case_at = [&](long step) -> const TrainCase& {
        const long epoch = step / static_cast<long>(n);
        if (epoch != cached_epoch) {
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            Rng shuffle_rng = Rng::derive(tcfg.seed, 0x5u + static_cast<std::uint64_t>(epoch));
            for (std::size_t i = n; i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);
            cached_epoch = epoch;
        }
        return dataset[order[static_cast<std::size_t>(step % static_cast<long>(n))]];
    };

    std::string last_path;
    while (state.step() < total_steps) {
        const TrainCase& c = case_at(state.step());
        const double loss = state.train_step(c.image, c.mask);
        curve << state.step() << "\t" << loss << "\n";
        if (state.step() % tcfg.checkpoint_every == 0 || state.step() == total_steps) {
            last_path = out_dir + "/ckpt_" + std::to_string(state.step()) + ".ckpt";
            state.save(last_path);
            curve.flush();
        }
    }
    const std::string final_path = out_dir + "/ckpt_final.ckpt";
    state.save(final_path);
    return final_path;
}

}  // namespace voxdiff
