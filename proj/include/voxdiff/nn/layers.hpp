#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "voxdiff/nn/conv3d.hpp"
#include "voxdiff/nn/gemm.hpp"
#include "voxdiff/nn/tensor.hpp"
#include "voxdiff/rng.hpp"

namespace voxdiff::nn {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&, Tensor<T>&)>;

template <typename T>
std::vector<T> sinusoidal_time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dim must be even and >= 2");
    const int half = dim / 2;
    std::vector<T> emb(dim);
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * (half > 1 ? static_cast<double>(i) / (half - 1) : 0.0));
        emb[i] = static_cast<T>(std::sin(t * freq));
        emb[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return emb;
}

template <typename T>
void silu_inplace(Tensor<T>& x) {
    for (auto& v : x.data) v = v / (T(1) + std::exp(-v));
}

// dy/dx = s(x) * (1 + x * (1 - s(x)))
template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x_pre, const Tensor<T>& grad) {
    Tensor<T> gx = grad;
    for (std::size_t i = 0; i < x_pre.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x_pre.data[i]));
        gx.data[i] *= s * (T(1) + x_pre.data[i] * (T(1) - s));
    }
    return gx;
}

template <typename T>
struct Conv3dLayer {
    Tensor<T> w, b, gw, gb;
    int stride = 1, pad = 1;
    Tensor<T> x_cache;

    void init(int in_c, int out_c, int k, int stride_, int pad_, Rng& rng, bool zero_init = false) {
        stride = stride_;
        pad = pad_;
        w = Tensor<T>({out_c, in_c, k, k, k});
        b = Tensor<T>({out_c});
        if (!zero_init) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(in_c) * k * k * k);
            rng.fill_normal(w.data, scale);
        }
        gw = Tensor<T>(w.shape);
        gb = Tensor<T>(b.shape);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_cache = x;
        return conv3d_fast(x, w, b, stride, pad);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        return conv3d_backward(x_cache, w, grad_out, stride, pad, gw, gb);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", w, gw);
        fn(prefix + ".bias", b, gb);
    }
};

template <typename T>
struct Linear {
    Tensor<T> w, b, gw, gb;  // w is {out, in}
    Tensor<T> x_cache;

    void init(int in, int out, Rng& rng) {
        w = Tensor<T>({out, in});
        b = Tensor<T>({out});
        rng.fill_normal(w.data, 1.0 / std::sqrt(static_cast<double>(in)));
        gw = Tensor<T>(w.shape);
        gb = Tensor<T>(b.shape);
    }

    std::vector<T> forward(const std::vector<T>& x) {
        x_cache = Tensor<T>({static_cast<int>(x.size())});
        x_cache.data = x;
        const int out = w.shape[0], in = w.shape[1];
        std::vector<T> y(out);
        for (int o = 0; o < out; ++o) {
            T acc = b.data[o];
            for (int i = 0; i < in; ++i) acc += w.data[o * in + i] * x[i];
            y[o] = acc;
        }
        return y;
    }

    std::vector<T> backward(const std::vector<T>& grad_out) {
        const int out = w.shape[0], in = w.shape[1];
        std::vector<T> gx(in, T(0));
        for (int o = 0; o < out; ++o) {
            gb.data[o] += grad_out[o];
            for (int i = 0; i < in; ++i) {
                gw.data[o * in + i] += grad_out[o] * x_cache.data[i];
                gx[i] += w.data[o * in + i] * grad_out[o];
            }
        }
        return gx;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", w, gw);
        fn(prefix + ".bias", b, gb);
    }
};

// Picks the largest group count <= requested that divides the channel count.
inline int effective_groups(int channels, int requested) {
    int g = std::min(channels, requested);
    while (channels % g != 0) --g;
    return g;
}

template <typename T>
struct GroupNorm {
    static constexpr double kEps = 1e-5;
    Tensor<T> gamma, beta, ggamma, gbeta;
    int groups = 1;
    Tensor<T> xhat_cache;
    std::vector<T> invstd_cache;

    void init(int channels, int requested_groups) {
        groups = effective_groups(channels, requested_groups);
        gamma = Tensor<T>({channels}, T(1));
        beta = Tensor<T>({channels});
        ggamma = Tensor<T>({channels});
        gbeta = Tensor<T>({channels});
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int c = x.shape[0];
        const std::size_t spatial = x.size() / c;
        const int cg = c / groups;
        const std::size_t m = cg * spatial;
        xhat_cache = Tensor<T>(x.shape);
        invstd_cache.assign(groups, T(0));
        Tensor<T> y(x.shape);
        for (int g = 0; g < groups; ++g) {
            const T* xs = x.ptr() + static_cast<std::size_t>(g) * m;
            T* xh = xhat_cache.ptr() + static_cast<std::size_t>(g) * m;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += xs[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double d = xs[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const T invstd = static_cast<T>(1.0 / std::sqrt(var + kEps));
            invstd_cache[g] = invstd;
            for (std::size_t i = 0; i < m; ++i) xh[i] = (xs[i] - static_cast<T>(mean)) * invstd;
        }
        for (int ch = 0; ch < c; ++ch) {
            const T* xh = xhat_cache.ptr() + ch * spatial;
            T* ys = y.ptr() + ch * spatial;
            for (std::size_t i = 0; i < spatial; ++i)
                ys[i] = gamma.data[ch] * xh[i] + beta.data[ch];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        const int c = grad_out.shape[0];
        const std::size_t spatial = grad_out.size() / c;
        const int cg = c / groups;
        const std::size_t m = cg * spatial;
        Tensor<T> gx(grad_out.shape);
        Tensor<T> dxhat(grad_out.shape);
        for (int ch = 0; ch < c; ++ch) {
            const T* g = grad_out.ptr() + ch * spatial;
            const T* xh = xhat_cache.ptr() + ch * spatial;
            T* dxh = dxhat.ptr() + ch * spatial;
            T sg = T(0), sgx = T(0);
            for (std::size_t i = 0; i < spatial; ++i) {
                sg += g[i];
                sgx += g[i] * xh[i];
                dxh[i] = g[i] * gamma.data[ch];
            }
            gbeta.data[ch] += sg;
            ggamma.data[ch] += sgx;
        }
        for (int g = 0; g < groups; ++g) {
            const T* dxh = dxhat.ptr() + static_cast<std::size_t>(g) * m;
            const T* xh = xhat_cache.ptr() + static_cast<std::size_t>(g) * m;
            T* gxp = gx.ptr() + static_cast<std::size_t>(g) * m;
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                s1 += dxh[i];
                s2 += dxh[i] * xh[i];
            }
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                gxp[i] = invstd_cache[g] *
                         static_cast<T>(dxh[i] - (s1 + static_cast<double>(xh[i]) * s2) * inv_m);
        }
        return gx;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".gamma", gamma, ggamma);
        fn(prefix + ".beta", beta, gbeta);
    }
};

// Pre-norm residual self-attention over all voxel positions:
// out = x + Wo * attn(Wq xn, Wk xn, Wv xn), xn = groupnorm(x).
template <typename T>
struct AttentionBlock {
    GroupNorm<T> norm;
    Tensor<T> wq, wk, wv, wo, bq, bk, bv, bo;
    Tensor<T> gwq, gwk, gwv, gwo, gbq, gbk, gbv, gbo;
    int heads = 1;

    // forward caches
    Tensor<T> xn_cache, q_cache, k_cache, v_cache, att_cache, o_cache;

    void init(int channels, int heads_, int gn_groups, Rng& rng) {
        if (channels % heads_ != 0) throw ConfigError("attention: heads must divide channels");
        heads = heads_;
        norm.init(channels, gn_groups);
        auto make = [&](Tensor<T>& w, Tensor<T>& gw_, Tensor<T>& b, Tensor<T>& gb_) {
            w = Tensor<T>({channels, channels});
            rng.fill_normal(w.data, 1.0 / std::sqrt(static_cast<double>(channels)));
            b = Tensor<T>({channels});
            gw_ = Tensor<T>(w.shape);
            gb_ = Tensor<T>(b.shape);
        };
        make(wq, gwq, bq, gbq);
        make(wk, gwk, bk, gbk);
        make(wv, gwv, bv, gbv);
        make(wo, gwo, bo, gbo);
    }

    static Tensor<T> project(const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& x, int c,
                             std::size_t n) {
        Tensor<T> y({c, static_cast<int>(n)});
        for (int ch = 0; ch < c; ++ch) std::fill_n(y.ptr() + ch * n, n, b.data[ch]);
        gemm_nn(c, n, c, w.ptr(), x.ptr(), y.ptr());
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int c = x.shape[0];
        const std::size_t n = x.size() / c;
        xn_cache = norm.forward(x);
        // flatten view: {C, N}
        q_cache = project(wq, bq, xn_cache, c, n);
        k_cache = project(wk, bk, xn_cache, c, n);
        v_cache = project(wv, bv, xn_cache, c, n);

        const int dh = c / heads;
        const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        att_cache = Tensor<T>({heads, static_cast<int>(n), static_cast<int>(n)});
        o_cache = Tensor<T>({c, static_cast<int>(n)});
        o_cache.zero();
        for (int h = 0; h < heads; ++h) {
            const T* qh = q_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            const T* kh = k_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            const T* vh = v_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            T* att = att_cache.ptr() + static_cast<std::size_t>(h) * n * n;
            std::fill_n(att, n * n, T(0));
            gemm_tn(n, n, dh, qh, kh, att);  // scores[i,j] = q_i . k_j
            for (std::size_t i = 0; i < n; ++i) {
                T* row = att + i * n;
                T mx = row[0] * inv;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] *= inv;
                    mx = std::max(mx, row[j]);
                }
                T sum = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                const T rsum = T(1) / sum;
                for (std::size_t j = 0; j < n; ++j) row[j] *= rsum;
            }
            T* oh = o_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            gemm_nt(dh, n, n, vh, att, oh);  // o[:,i] = sum_j att[i,j] v[:,j]
        }
        Tensor<T> y = project(wo, bo, o_cache, c, n);
        Tensor<T> out = x;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += y.data[i];
        out.shape = x.shape;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        const int c = grad_out.shape[0];
        const std::size_t n = grad_out.size() / c;
        const int dh = c / heads;
        const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

        // through output projection: y = wo * o + bo
        Tensor<T> go({c, static_cast<int>(n)});
        go.zero();
        gemm_tn(c, n, c, wo.ptr(), grad_out.ptr(), go.ptr());
        gemm_nt(c, c, n, grad_out.ptr(), o_cache.ptr(), gwo.ptr());
        for (int ch = 0; ch < c; ++ch) {
            T acc = T(0);
            const T* g = grad_out.ptr() + ch * n;
            for (std::size_t i = 0; i < n; ++i) acc += g[i];
            gbo.data[ch] += acc;
        }

        Tensor<T> gq({c, static_cast<int>(n)}), gk({c, static_cast<int>(n)}),
            gv({c, static_cast<int>(n)});
        gq.zero();
        gk.zero();
        gv.zero();
        std::vector<T> gatt(n * n), gs(n * n);
        for (int h = 0; h < heads; ++h) {
            const T* qh = q_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            const T* kh = k_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            const T* vh = v_cache.ptr() + static_cast<std::size_t>(h) * dh * n;
            const T* att = att_cache.ptr() + static_cast<std::size_t>(h) * n * n;
            const T* goh = go.ptr() + static_cast<std::size_t>(h) * dh * n;

            std::fill(gatt.begin(), gatt.end(), T(0));
            gemm_tn(n, n, dh, goh, vh, gatt.data());  // gatt[i,j] = go[:,i] . v[:,j]
            gemm_nn(dh, n, n, goh, att, gv.ptr() + static_cast<std::size_t>(h) * dh * n);

            // softmax backward, then fold in the 1/sqrt(dh) score scale
            for (std::size_t i = 0; i < n; ++i) {
                const T* arow = att + i * n;
                const T* garow = gatt.data() + i * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += arow[j] * garow[j];
                T* gsrow = gs.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gsrow[j] = inv * arow[j] * (garow[j] - dot);
            }
            gemm_nt(dh, n, n, kh, gs.data(), gq.ptr() + static_cast<std::size_t>(h) * dh * n);
            gemm_nn(dh, n, n, qh, gs.data(), gk.ptr() + static_cast<std::size_t>(h) * dh * n);
        }

        // through the q/k/v projections into xn
        Tensor<T> gxn({c, static_cast<int>(n)});
        gxn.zero();
        auto proj_backward = [&](const Tensor<T>& w, Tensor<T>& gw_, Tensor<T>& gb_,
                                 const Tensor<T>& g) {
            gemm_tn(c, n, c, w.ptr(), g.ptr(), gxn.ptr());
            gemm_nt(c, c, n, g.ptr(), xn_cache.ptr(), gw_.ptr());
            for (int ch = 0; ch < c; ++ch) {
                T acc = T(0);
                const T* gp = g.ptr() + ch * n;
                for (std::size_t i = 0; i < n; ++i) acc += gp[i];
                gb_.data[ch] += acc;
            }
        };
        proj_backward(wq, gwq, gbq, gq);
        proj_backward(wk, gwk, gbk, gk);
        proj_backward(wv, gwv, gbv, gv);

        gxn.shape = grad_out.shape;
        Tensor<T> gx = norm.backward(gxn);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += grad_out.data[i];  // residual
        return gx;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        norm.visit(prefix + ".norm", fn);
        fn(prefix + ".wq", wq, gwq);
        fn(prefix + ".bq", bq, gbq);
        fn(prefix + ".wk", wk, gwk);
        fn(prefix + ".bk", bk, gbk);
        fn(prefix + ".wv", wv, gwv);
        fn(prefix + ".bv", bv, gbv);
        fn(prefix + ".wo", wo, gwo);
        fn(prefix + ".bo", bo, gbo);
    }
};

// Two 3x3x3 convolutions, each preceded by groupnorm + SiLU; the (optional)
// time embedding enters after the first convolution via a learned projection.
template <typename T>
struct ResBlock {
    GroupNorm<T> gn1, gn2;
    Conv3dLayer<T> conv1, conv2;
    Linear<T> temb_proj;
    Conv3dLayer<T> skip;
    bool has_skip = false;
    bool has_temb = false;

    Tensor<T> x_cache, h1_pre_cache, h2_pre_cache;
    std::vector<T> temb_pre_cache;

    void init(int in_c, int out_c, int time_dim, int gn_groups, Rng& rng) {
        gn1.init(in_c, gn_groups);
        conv1.init(in_c, out_c, 3, 1, 1, rng);
        has_temb = time_dim > 0;
        if (has_temb) temb_proj.init(time_dim, out_c, rng);
        gn2.init(out_c, gn_groups);
        conv2.init(out_c, out_c, 3, 1, 1, rng);
        has_skip = in_c != out_c;
        if (has_skip) skip.init(in_c, out_c, 1, 1, 0, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, const std::vector<T>& temb) {
        x_cache = x;
        Tensor<T> h = gn1.forward(x);
        h1_pre_cache = h;
        silu_inplace(h);
        h = conv1.forward(h);
        if (has_temb) {
            temb_pre_cache = temb;
            std::vector<T> te = temb;
            for (auto& v : te) v = v / (T(1) + std::exp(-v));
            const std::vector<T> bias = temb_proj.forward(te);
            const std::size_t spatial = h.size() / h.shape[0];
            for (int ch = 0; ch < h.shape[0]; ++ch) {
                T* hp = h.ptr() + ch * spatial;
                for (std::size_t i = 0; i < spatial; ++i) hp[i] += bias[ch];
            }
        }
        Tensor<T> h2 = gn2.forward(h);
        h2_pre_cache = h2;
        silu_inplace(h2);
        h2 = conv2.forward(h2);
        Tensor<T> res = has_skip ? skip.forward(x) : x;
        for (std::size_t i = 0; i < h2.size(); ++i) h2.data[i] += res.data[i];
        return h2;
    }

    // Returns grad w.r.t. x; accumulates grad w.r.t. temb into gtemb.
    Tensor<T> backward(const Tensor<T>& grad_out, std::vector<T>& gtemb) {
        Tensor<T> gh = conv2.backward(grad_out);
        gh = silu_backward(h2_pre_cache, gh);
        gh = gn2.backward(gh);

        if (has_temb) {
            const std::size_t spatial = gh.size() / gh.shape[0];
            std::vector<T> gbias(gh.shape[0], T(0));
            for (int ch = 0; ch < gh.shape[0]; ++ch) {
                const T* gp = gh.ptr() + ch * spatial;
                for (std::size_t i = 0; i < spatial; ++i) gbias[ch] += gp[i];
            }
            std::vector<T> gte = temb_proj.backward(gbias);
            for (std::size_t i = 0; i < gte.size(); ++i) {
                const T s = T(1) / (T(1) + std::exp(-temb_pre_cache[i]));
                gtemb[i] += gte[i] * s * (T(1) + temb_pre_cache[i] * (T(1) - s));
            }
        }

        Tensor<T> gx = conv1.backward(gh);
        gx = silu_backward(h1_pre_cache, gx);
        gx = gn1.backward(gx);

        if (has_skip) {
            Tensor<T> gskip = skip.backward(grad_out);
            for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += gskip.data[i];
        } else {
            for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += grad_out.data[i];
        }
        return gx;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        gn1.visit(prefix + ".gn1", fn);
        conv1.visit(prefix + ".conv1", fn);
        if (has_temb) temb_proj.visit(prefix + ".temb", fn);
        gn2.visit(prefix + ".gn2", fn);
        conv2.visit(prefix + ".conv2", fn);
        if (has_skip) skip.visit(prefix + ".skip", fn);
    }
};

// Nearest-neighbor x2 upsampling followed by a 3x3x3 convolution.
template <typename T>
struct Upsample {
    Conv3dLayer<T> conv;
    std::vector<int> in_shape_cache;

    void init(int in_c, int out_c, Rng& rng) { conv.init(in_c, out_c, 3, 1, 1, rng); }

    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_cache = x.shape;
        const int c = x.shape[0], d = x.shape[1], h = x.shape[2], w = x.shape[3];
        Tensor<T> up({c, d * 2, h * 2, w * 2});
        for (int ch = 0; ch < c; ++ch)
            for (int z = 0; z < d * 2; ++z)
                for (int y = 0; y < h * 2; ++y) {
                    const T* src =
                        x.ptr() + ((static_cast<std::size_t>(ch) * d + z / 2) * h + y / 2) * w;
                    T* dst = up.ptr() +
                             ((static_cast<std::size_t>(ch) * d * 2 + z) * h * 2 + y) * w * 2;
                    for (int xx = 0; xx < w * 2; ++xx) dst[xx] = src[xx / 2];
                }
        return conv.forward(up);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        Tensor<T> gup = conv.backward(grad_out);
        const int c = in_shape_cache[0], d = in_shape_cache[1], h = in_shape_cache[2],
                  w = in_shape_cache[3];
        Tensor<T> gx({c, d, h, w});
        for (int ch = 0; ch < c; ++ch)
            for (int z = 0; z < d * 2; ++z)
                for (int y = 0; y < h * 2; ++y) {
                    T* dst = gx.ptr() + ((static_cast<std::size_t>(ch) * d + z / 2) * h + y / 2) * w;
                    const T* src = gup.ptr() +
                                   ((static_cast<std::size_t>(ch) * d * 2 + z) * h * 2 + y) * w * 2;
                    for (int xx = 0; xx < w * 2; ++xx) dst[xx / 2] += src[xx];
                }
        return gx;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        conv.visit(prefix + ".conv", fn);
    }
};

}  // namespace voxdiff::nn
