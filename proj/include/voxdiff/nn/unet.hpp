#pragma once

#include <map>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include "voxdiff/nn/layers.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff::nn {

struct UNetConfig {
    int in_channels = 3;
    int out_channels = 1;
    int base_channels = 8;
    std::vector<int> channel_multipliers{1, 2};
    std::set<int> attention_levels{1};  // level index, 0 = finest
    int attention_heads = 1;
    int groupnorm_groups = 8;
    int time_embed_dim = 0;  // 0 disables time conditioning (segmentation nets)
    int num_res_blocks = 1;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }

    void check(Dims input) const {
        if (in_channels < 1 || out_channels < 1 || base_channels < 1)
            throw ConfigError("unet: channel counts must be positive");
        if (channel_multipliers.empty()) throw ConfigError("unet: no resolution levels");
        if (num_res_blocks < 1) throw ConfigError("unet: num_res_blocks must be >= 1");
        for (int level : attention_levels)
            if (level < 0 || level >= levels())
                throw ConfigError("unet: attention level " + std::to_string(level) +
                                  " out of range");
        const int div = 1 << (levels() - 1);
        if (input.width % div || input.height % div || input.depth % div)
            throw ConfigError("unet: input size " + input.str() + " not divisible by " +
                              std::to_string(div));
        if (time_embed_dim % 2 != 0) throw ConfigError("unet: time_embed_dim must be even");
    }
};

// Encoder-decoder noise predictor / segmenter backbone. One parameter set,
// forward caches activations so a single backward() pass accumulates
// gradients for every parameter.
template <typename T>
class UNet {
  public:
    UNet(const UNetConfig& cfg, Dims input, Rng& rng) : cfg_(cfg), input_(input) {
        cfg.check(input);
        const int L = cfg.levels();
        channels_.resize(L);
        for (int l = 0; l < L; ++l) channels_[l] = cfg.base_channels * cfg.channel_multipliers[l];

        if (cfg.time_embed_dim > 0) {
            time_mlp1_.init(cfg.time_embed_dim, cfg.time_embed_dim, rng);
            time_mlp2_.init(cfg.time_embed_dim, cfg.time_embed_dim, rng);
        }
        stem_.init(cfg.in_channels, channels_[0], 3, 1, 1, rng);

        enc_blocks_.resize(L);
        enc_attn_.resize(L);
        down_.resize(L > 1 ? L - 1 : 0);
        for (int l = 0; l < L; ++l) {
            int in_c = l == 0 ? channels_[0] : channels_[l - 1];
            enc_blocks_[l].resize(cfg.num_res_blocks);
            for (int r = 0; r < cfg.num_res_blocks; ++r) {
                enc_blocks_[l][r].init(in_c, channels_[l], cfg.time_embed_dim,
                                       cfg.groupnorm_groups, rng);
                in_c = channels_[l];
            }
            if (cfg.attention_levels.count(l)) {
                enc_attn_[l] = std::make_unique<AttentionBlock<T>>();
                enc_attn_[l]->init(channels_[l], cfg.attention_heads, cfg.groupnorm_groups, rng);
            }
            if (l < L - 1) down_[l].init(channels_[l], channels_[l], 3, 2, 1, rng);
        }

        mid_res1_.init(channels_[L - 1], channels_[L - 1], cfg.time_embed_dim,
                       cfg.groupnorm_groups, rng);
        if (cfg.attention_levels.count(L - 1)) {
            mid_attn_ = std::make_unique<AttentionBlock<T>>();
            mid_attn_->init(channels_[L - 1], cfg.attention_heads, cfg.groupnorm_groups, rng);
        }
        mid_res2_.init(channels_[L - 1], channels_[L - 1], cfg.time_embed_dim,
                       cfg.groupnorm_groups, rng);

        dec_blocks_.resize(L);
        dec_attn_.resize(L);
        up_.resize(L > 1 ? L - 1 : 0);
        for (int l = L - 1; l >= 0; --l) {
            dec_blocks_[l].resize(cfg.num_res_blocks);
            int in_c = channels_[l] * 2;  // skip concatenation
            for (int r = 0; r < cfg.num_res_blocks; ++r) {
                dec_blocks_[l][r].init(in_c, channels_[l], cfg.time_embed_dim,
                                       cfg.groupnorm_groups, rng);
                in_c = channels_[l];
            }
            if (cfg.attention_levels.count(l)) {
                dec_attn_[l] = std::make_unique<AttentionBlock<T>>();
                dec_attn_[l]->init(channels_[l], cfg.attention_heads, cfg.groupnorm_groups, rng);
            }
            if (l > 0) up_[l - 1].init(channels_[l], channels_[l - 1], rng);
        }

        out_norm_.init(channels_[0], cfg.groupnorm_groups);
        out_conv_.init(channels_[0], cfg.out_channels, 3, 1, 1, rng, /*zero_init=*/true);
    }

    const UNetConfig& config() const { return cfg_; }
    Dims input_size() const { return input_; }

    Tensor<T> forward(const Tensor<T>& x, int t) {
        if (x.shape.size() != 4 || x.shape[0] != cfg_.in_channels ||
            x.shape[1] != input_.depth || x.shape[2] != input_.height ||
            x.shape[3] != input_.width)
            throw DataError("unet: input shape " + x.shape_str() + " does not match config");

        std::vector<T> temb;
        if (cfg_.time_embed_dim > 0) {
            temb = sinusoidal_time_embedding<T>(t, cfg_.time_embed_dim);
            temb = time_mlp1_.forward(temb);
            temb_mlp_pre_ = temb;
            for (auto& v : temb) v = v / (T(1) + std::exp(-v));
            temb = time_mlp2_.forward(temb);
        }
        temb_cache_ = temb;

        const int L = cfg_.levels();
        Tensor<T> h = stem_.forward(x);
        skips_.assign(L, Tensor<T>{});
        for (int l = 0; l < L; ++l) {
            for (auto& block : enc_blocks_[l]) h = block.forward(h, temb);
            if (enc_attn_[l]) h = enc_attn_[l]->forward(h);
            skips_[l] = h;
            if (l < L - 1) h = down_[l].forward(h);
        }

        h = mid_res1_.forward(h, temb);
        if (mid_attn_) h = mid_attn_->forward(h);
        h = mid_res2_.forward(h, temb);

        for (int l = L - 1; l >= 0; --l) {
            h = concat_c(h, skips_[l]);
            for (auto& block : dec_blocks_[l]) h = block.forward(h, temb);
            if (dec_attn_[l]) h = dec_attn_[l]->forward(h);
            if (l > 0) h = up_[l - 1].forward(h);
        }

        h = out_norm_.forward(h);
        out_pre_ = h;
        silu_inplace(h);
        return out_conv_.forward(h);
    }

    // Accumulates parameter gradients; returns grad w.r.t. the input.
    Tensor<T> backward(const Tensor<T>& grad_out) {
        const int L = cfg_.levels();
        std::vector<T> gtemb(temb_cache_.size(), T(0));

        Tensor<T> g = out_conv_.backward(grad_out);
        g = silu_backward(out_pre_, g);
        g = out_norm_.backward(g);

        for (int l = 0; l < L; ++l) {
            if (l > 0) g = up_[l - 1].backward(g);
            if (dec_attn_[l]) g = dec_attn_[l]->backward(g);
            for (int r = cfg_.num_res_blocks - 1; r >= 0; --r)
                g = dec_blocks_[l][r].backward(g, gtemb);
            auto [g_trunk, g_skip] = split_c(g, channels_[l]);
            skip_grads_[l] = std::move(g_skip);
            g = std::move(g_trunk);
        }

        g = mid_res2_.backward(g, gtemb);
        if (mid_attn_) g = mid_attn_->backward(g);
        g = mid_res1_.backward(g, gtemb);

        for (int l = L - 1; l >= 0; --l) {
            if (l < L - 1) g = down_[l].backward(g);
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += skip_grads_[l].data[i];
            if (enc_attn_[l]) g = enc_attn_[l]->backward(g);
            for (int r = cfg_.num_res_blocks - 1; r >= 0; --r)
                g = enc_blocks_[l][r].backward(g, gtemb);
        }
        g = stem_.backward(g);

        if (cfg_.time_embed_dim > 0) {
            std::vector<T> gmid = time_mlp2_.backward(gtemb);
            for (std::size_t i = 0; i < gmid.size(); ++i) {
                const T s = T(1) / (T(1) + std::exp(-temb_mlp_pre_[i]));
                gmid[i] *= s * (T(1) + temb_mlp_pre_[i] * (T(1) - s));
            }
            time_mlp1_.backward(gmid);
        }
        return g;
    }

    void visit_params(const ParamVisitor<T>& fn) {
        if (cfg_.time_embed_dim > 0) {
            time_mlp1_.visit("time_mlp1", fn);
            time_mlp2_.visit("time_mlp2", fn);
        }
        stem_.visit("stem", fn);
        const int L = cfg_.levels();
        for (int l = 0; l < L; ++l) {
            for (int r = 0; r < cfg_.num_res_blocks; ++r)
                enc_blocks_[l][r].visit("enc" + std::to_string(l) + ".res" + std::to_string(r), fn);
            if (enc_attn_[l]) enc_attn_[l]->visit("enc" + std::to_string(l) + ".attn", fn);
            if (l < L - 1) down_[l].visit("down" + std::to_string(l), fn);
        }
        mid_res1_.visit("mid.res1", fn);
        if (mid_attn_) mid_attn_->visit("mid.attn", fn);
        mid_res2_.visit("mid.res2", fn);
        for (int l = L - 1; l >= 0; --l) {
            for (int r = 0; r < cfg_.num_res_blocks; ++r)
                dec_blocks_[l][r].visit("dec" + std::to_string(l) + ".res" + std::to_string(r), fn);
            if (dec_attn_[l]) dec_attn_[l]->visit("dec" + std::to_string(l) + ".attn", fn);
            if (l > 0) up_[l - 1].visit("up" + std::to_string(l - 1), fn);
        }
        out_norm_.visit("out.norm", fn);
        out_conv_.visit("out.conv", fn);
    }

    std::size_t param_count() {
        std::size_t n = 0;
        visit_params([&](const std::string&, Tensor<T>& p, Tensor<T>&) { n += p.size(); });
        return n;
    }

    void zero_grads() {
        visit_params([](const std::string&, Tensor<T>&, Tensor<T>& g) { g.zero(); });
    }

  private:
    static Tensor<T> concat_c(const Tensor<T>& a, const Tensor<T>& b) {
        Tensor<T> out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]});
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
        return out;
    }

    static std::pair<Tensor<T>, Tensor<T>> split_c(const Tensor<T>& g, int c_each) {
        Tensor<T> a({c_each, g.shape[1], g.shape[2], g.shape[3]});
        Tensor<T> b({c_each, g.shape[1], g.shape[2], g.shape[3]});
        std::copy(g.data.begin(), g.data.begin() + a.size(), a.data.begin());
        std::copy(g.data.begin() + a.size(), g.data.end(), b.data.begin());
        return {std::move(a), std::move(b)};
    }

    UNetConfig cfg_;
    Dims input_;
    std::vector<int> channels_;

    Linear<T> time_mlp1_, time_mlp2_;
    Conv3dLayer<T> stem_;
    std::vector<std::vector<ResBlock<T>>> enc_blocks_;
    std::vector<std::unique_ptr<AttentionBlock<T>>> enc_attn_;
    std::vector<Conv3dLayer<T>> down_;
    ResBlock<T> mid_res1_, mid_res2_;
    std::unique_ptr<AttentionBlock<T>> mid_attn_;
    std::vector<std::vector<ResBlock<T>>> dec_blocks_;
    std::vector<std::unique_ptr<AttentionBlock<T>>> dec_attn_;
    std::vector<Upsample<T>> up_;
    GroupNorm<T> out_norm_;
    Conv3dLayer<T> out_conv_;

    // forward caches
    std::vector<T> temb_cache_, temb_mlp_pre_;
    std::vector<Tensor<T>> skips_;
    std::map<int, Tensor<T>> skip_grads_;
    Tensor<T> out_pre_;
};

}  // namespace voxdiff::nn
