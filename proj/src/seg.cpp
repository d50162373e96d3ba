#include "voxdiff/seg.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "voxdiff/checkpoint.hpp"
#include "voxdiff/denoiser.hpp"
#include "voxdiff/training.hpp"

namespace voxdiff {

namespace {

constexpr double kProbClamp = 1e-7;

std::string fmt_int_list(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::string tok;
    std::istringstream is(s);
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

nn::UNetConfig seg_unet_config(const SegConfig& cfg) {
    nn::UNetConfig u;
    u.in_channels = 1;
    u.out_channels = 1;
    u.base_channels = cfg.base_channels;
    u.channel_multipliers = cfg.channel_multipliers;
    u.attention_levels = {};  // plain convolutional segmenter
    u.groupnorm_groups = cfg.groupnorm_groups;
    u.time_embed_dim = 0;
    u.num_res_blocks = 1;
    return u;
}

}  // namespace

void SegConfig::check() const {
    if (total_steps < 1) throw ConfigError("seg: total_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("seg: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("seg: learning rate must be > 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("seg: threshold must be in (0,1)");
}

double bce_loss(const Volume& pred_prob, const Volume& truth) {
    if (!pred_prob.same_shape(truth)) throw DataError("bce_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred_prob.size(); ++i) {
        const double p =
            std::clamp(static_cast<double>(pred_prob.data()[i]), kProbClamp, 1.0 - kProbClamp);
        const double y = truth.data()[i];
        acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return acc / static_cast<double>(pred_prob.size());
}

SegNet::SegNet(const SegConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.check();
    net_ = std::make_unique<nn::UNet<float>>(seg_unet_config(cfg), cfg.input, rng);
}

Volume SegNet::predict_prob(const Volume& image) {
    nn::Tensor<float> logits = net_->forward(to_tensor(image), 0);
    Volume prob = to_volume(logits);
    for (auto& v : prob.data()) v = 1.0f / (1.0f + std::exp(-v));
    return prob;
}

LabelVolume tumor_mask(const LabelVolume& labels) {
    LabelVolume out(labels.dims());
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.labels()[i] = labels.labels()[i] == 2 ? 1 : 0;
    return out;
}

void SegNet::save(const std::string& path, long step, const std::string& rng_state,
                  const std::vector<nn::Tensor<float>>& adam_m,
                  const std::vector<nn::Tensor<float>>& adam_v) const {
    CheckpointData data;
    std::map<std::string, std::string> kv;
    kv["model.kind"] = "seg";
    kv["model.base_channels"] = std::to_string(cfg_.base_channels);
    kv["model.channel_multipliers"] = fmt_int_list(cfg_.channel_multipliers);
    kv["model.groupnorm_groups"] = std::to_string(cfg_.groupnorm_groups);
    kv["model.input_width"] = std::to_string(cfg_.input.width);
    kv["model.input_height"] = std::to_string(cfg_.input.height);
    kv["model.input_depth"] = std::to_string(cfg_.input.depth);
    kv["seg.threshold"] = std::to_string(cfg_.threshold);
    data.config_text = config_text_from_map(kv);
    data.schedule = cosine_schedule(1, 0.008);  // placeholder; segmenters are schedule-free
    std::size_t i = 0;
    const_cast<nn::UNet<float>&>(*net_).visit_params(
        [&](const std::string& name, nn::Tensor<float>& p, nn::Tensor<float>&) {
            data.params.emplace_back(name, p);
            data.adam_m.emplace_back(name, adam_m[i]);
            data.adam_v.emplace_back(name, adam_v[i]);
            ++i;
        });
    data.step = static_cast<std::uint64_t>(step);
    data.seed = cfg_.seed;
    data.rng_state = rng_state;
    save_checkpoint(path, data);
}

std::unique_ptr<SegNet> SegNet::load(const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    const auto kv = config_map_from_text(data.config_text);
    if (kv.at("model.kind") != "seg")
        throw DataError("seg checkpoint: wrong model kind in " + path);
    SegConfig cfg;
    cfg.base_channels = std::stoi(kv.at("model.base_channels"));
    cfg.channel_multipliers = parse_int_list(kv.at("model.channel_multipliers"));
    cfg.groupnorm_groups = std::stoi(kv.at("model.groupnorm_groups"));
    cfg.input = Dims{std::stoi(kv.at("model.input_width")), std::stoi(kv.at("model.input_height")),
                     std::stoi(kv.at("model.input_depth"))};
    cfg.threshold = std::stod(kv.at("seg.threshold"));
    cfg.seed = data.seed;
    Rng rng(0);
    auto net = std::make_unique<SegNet>(cfg, rng);
    std::size_t i = 0;
    net->net_->visit_params([&](const std::string& name, nn::Tensor<float>& p, nn::Tensor<float>&) {
        if (i >= data.params.size() || data.params[i].first != name ||
            data.params[i].second.shape != p.shape)
            throw DataError("seg checkpoint: parameter mismatch at " + name);
        p = data.params[i].second;
        ++i;
    });
    return net;
}

std::string seg_train(const SegConfig& cfg, const std::vector<Case>& dataset,
                      const std::string& out_dir) {
    if (dataset.empty()) throw DataError("seg_train: empty dataset");
    cfg.check();
    std::filesystem::create_directories(out_dir);

    Rng init_rng = Rng::derive(cfg.seed, 0x5E6);
    SegNet model(cfg, init_rng);
    nn::UNet<float>& net = model.net();

    std::vector<nn::Tensor<float>*> params, grads;
    std::vector<nn::Tensor<float>> batch_grads, adam_m, adam_v;
    net.visit_params([&](const std::string&, nn::Tensor<float>& p, nn::Tensor<float>& g) {
        params.push_back(&p);
        grads.push_back(&g);
        batch_grads.emplace_back(p.shape);
        adam_m.emplace_back(p.shape);
        adam_v.emplace_back(p.shape);
    });

    Rng rng(cfg.seed);
    std::ofstream curve(out_dir + "/loss_curve.tsv", std::ios::app);
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    long epoch = 0;
    auto next_case = [&]() -> const Case& {
        if (pos >= order.size()) {
            order.resize(dataset.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng shuffle_rng = Rng::derive(cfg.seed, 0x5E60000u + static_cast<std::uint64_t>(epoch));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);
            pos = 0;
            ++epoch;
        }
        return dataset[order[pos++]];
    };

    for (long step = 1; step <= cfg.total_steps; ++step) {
        for (auto& g : batch_grads) g.zero();
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Case& c = next_case();
            nn::Tensor<float> logits = net.forward(to_tensor(c.image), 0);
            const LabelVolume truth = tumor_mask(c.labels);
            const double inv_n = 1.0 / static_cast<double>(logits.size());
            nn::Tensor<float> grad(logits.shape);
            for (std::size_t i = 0; i < logits.size(); ++i) {
                const double p =
                    std::clamp(1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[i]))),
                               kProbClamp, 1.0 - kProbClamp);
                const double y = truth.labels()[i];
                loss -= (y * std::log(p) + (1.0 - y) * std::log(1.0 - p)) * inv_n;
                grad.data[i] = static_cast<float>((p - y) * inv_n);
            }
            net.zero_grads();
            net.backward(grad);
            for (std::size_t i = 0; i < grads.size(); ++i)
                for (std::size_t j = 0; j < grads[i]->size(); ++j)
                    batch_grads[i].data[j] += grads[i]->data[j] / cfg.batch_size;
        }
        loss /= cfg.batch_size;
        if (!std::isfinite(loss))
            throw NumericError("seg_train: non-finite loss at step " + std::to_string(step));
        for (std::size_t i = 0; i < params.size(); ++i)
            adam_update(params[i]->data, batch_grads[i].data, adam_m[i].data, adam_v[i].data, step,
                        cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
        curve << step << "\t" << loss << "\n";
    }

    const std::string path = out_dir + "/seg_final.ckpt";
    model.save(path, cfg.total_steps, rng.serialize(), adam_m, adam_v);
    return path;
}

MetricReport seg_evaluate(const std::string& checkpoint_path, const std::vector<Case>& test_set,
                          double threshold) {
    if (test_set.empty()) throw DataError("seg_evaluate: empty test set");
    auto model = SegNet::load(checkpoint_path);
    MetricReport report;
    report.set_note("threshold", std::to_string(threshold));
    report.set_note("checkpoint", checkpoint_path);
    for (const auto& c : test_set) {
        const Volume prob = model->predict_prob(c.image);
        LabelVolume pred(c.labels.dims());
        for (std::size_t i = 0; i < prob.size(); ++i)
            pred.labels()[i] = prob.data()[i] > threshold ? 1 : 0;
        const SegScores s = seg_metrics(pred, tumor_mask(c.labels));
        report.add_case(c.id);
        report.add_value("dice", s.dice);
        report.add_value("iou", s.iou);
        report.add_value("accuracy", s.accuracy);
        report.add_value("recall", s.recall);
        report.add_value("precision", s.precision);
    }
    return report;
}

}  // namespace voxdiff
