#pragma once

#include <algorithm>

#include "voxdiff/nn/gemm.hpp"
#include "voxdiff/nn/tensor.hpp"

namespace voxdiff::nn {

struct ConvShape {
    int in_c, in_d, in_h, in_w;
    int out_c, out_d, out_h, out_w;
    int k, stride, pad;
};

template <typename T>
ConvShape conv3d_shape(const Tensor<T>& input, const Tensor<T>& weights, int stride, int pad) {
    if (input.shape.size() != 4) throw DataError("conv3d: input must be {C,D,H,W}");
    if (weights.shape.size() != 5) throw DataError("conv3d: weights must be {OC,IC,K,K,K}");
    if (weights.shape[2] != weights.shape[3] || weights.shape[2] != weights.shape[4])
        throw DataError("conv3d: non-cubic kernel");
    if (weights.shape[1] != input.shape[0])
        throw DataError("conv3d: channel mismatch, input " + input.shape_str() + " weights " +
                        weights.shape_str());
    if (stride < 1 || pad < 0) throw DataError("conv3d: bad stride/pad");
    ConvShape s;
    s.in_c = input.shape[0];
    s.in_d = input.shape[1];
    s.in_h = input.shape[2];
    s.in_w = input.shape[3];
    s.out_c = weights.shape[0];
    s.k = weights.shape[2];
    auto out_extent = [&](int n) { return (n + 2 * pad - s.k) / stride + 1; };
    s.out_d = out_extent(s.in_d);
    s.out_h = out_extent(s.in_h);
    s.out_w = out_extent(s.in_w);
    if (s.out_d < 1 || s.out_h < 1 || s.out_w < 1)
        throw DataError("conv3d: kernel larger than padded input");
    s.stride = stride;
    s.pad = pad;
    return s;
}

// Direct 7-loop cross-correlation. The semantic ground truth; unoptimized.
template <typename T>
Tensor<T> conv3d_reference(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                           int stride, int pad) {
    const ConvShape s = conv3d_shape(input, weights, stride, pad);
    if (bias.size() != static_cast<std::size_t>(s.out_c))
        throw DataError("conv3d: bias size mismatch");
    Tensor<T> out({s.out_c, s.out_d, s.out_h, s.out_w});
    for (int oc = 0; oc < s.out_c; ++oc)
        for (int oz = 0; oz < s.out_d; ++oz)
            for (int oy = 0; oy < s.out_h; ++oy)
                for (int ox = 0; ox < s.out_w; ++ox) {
                    T acc = bias.data[oc];
                    for (int ic = 0; ic < s.in_c; ++ic)
                        for (int kz = 0; kz < s.k; ++kz)
                            for (int ky = 0; ky < s.k; ++ky)
                                for (int kx = 0; kx < s.k; ++kx) {
                                    const int iz = oz * stride - pad + kz;
                                    const int iy = oy * stride - pad + ky;
                                    const int ix = ox * stride - pad + kx;
                                    if (iz < 0 || iz >= s.in_d || iy < 0 || iy >= s.in_h ||
                                        ix < 0 || ix >= s.in_w)
                                        continue;
                                    acc += input.data[((static_cast<std::size_t>(ic) * s.in_d + iz) *
                                                           s.in_h +
                                                       iy) *
                                                          s.in_w +
                                                      ix] *
                                           weights.data[(((static_cast<std::size_t>(oc) * s.in_c +
                                                           ic) *
                                                              s.k +
                                                          kz) *
                                                             s.k +
                                                         ky) *
                                                            s.k +
                                                        kx];
                                }
                    out.data[((static_cast<std::size_t>(oc) * s.out_d + oz) * s.out_h + oy) *
                                 s.out_w +
                             ox] = acc;
                }
    return out;
}

// cols is {IC*K^3, OD*OH*OW}; row = ((ic*K + kz)*K + ky)*K + kx.
template <typename T>
void im2col(const Tensor<T>& input, const ConvShape& s, std::vector<T>& cols) {
    const std::size_t n_out = static_cast<std::size_t>(s.out_d) * s.out_h * s.out_w;
    cols.assign(static_cast<std::size_t>(s.in_c) * s.k * s.k * s.k * n_out, T(0));
    std::size_t row = 0;
    for (int ic = 0; ic < s.in_c; ++ic) {
        const T* in_c = input.ptr() + static_cast<std::size_t>(ic) * s.in_d * s.in_h * s.in_w;
        for (int kz = 0; kz < s.k; ++kz)
            for (int ky = 0; ky < s.k; ++ky)
                for (int kx = 0; kx < s.k; ++kx, ++row) {
                    T* dst = cols.data() + row * n_out;
                    for (int oz = 0; oz < s.out_d; ++oz) {
                        const int iz = oz * s.stride - s.pad + kz;
                        if (iz < 0 || iz >= s.in_d) {
                            dst += static_cast<std::size_t>(s.out_h) * s.out_w;
                            continue;
                        }
                        for (int oy = 0; oy < s.out_h; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.in_h) {
                                dst += s.out_w;
                                continue;
                            }
                            const T* src = in_c + (static_cast<std::size_t>(iz) * s.in_h + iy) * s.in_w;
                            if (s.stride == 1) {
                                const int ix0 = -s.pad + kx;
                                const int lo = std::max(0, -ix0);
                                const int hi = std::min(s.out_w, s.in_w - ix0);
                                for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ix0 + ox];
                            } else {
                                for (int ox = 0; ox < s.out_w; ++ox) {
                                    const int ix = ox * s.stride - s.pad + kx;
                                    if (ix >= 0 && ix < s.in_w) dst[ox] = src[ix];
                                }
                            }
                            dst += s.out_w;
                        }
                    }
                }
    }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im(const std::vector<T>& cols, const ConvShape& s, Tensor<T>& input_grad) {
    const std::size_t n_out = static_cast<std::size_t>(s.out_d) * s.out_h * s.out_w;
    std::size_t row = 0;
    for (int ic = 0; ic < s.in_c; ++ic) {
        T* in_c = input_grad.ptr() + static_cast<std::size_t>(ic) * s.in_d * s.in_h * s.in_w;
        for (int kz = 0; kz < s.k; ++kz)
            for (int ky = 0; ky < s.k; ++ky)
                for (int kx = 0; kx < s.k; ++kx, ++row) {
                    const T* src = cols.data() + row * n_out;
                    for (int oz = 0; oz < s.out_d; ++oz) {
                        const int iz = oz * s.stride - s.pad + kz;
                        if (iz < 0 || iz >= s.in_d) {
                            src += static_cast<std::size_t>(s.out_h) * s.out_w;
                            continue;
                        }
                        for (int oy = 0; oy < s.out_h; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.in_h) {
                                src += s.out_w;
                                continue;
                            }
                            T* dst = in_c + (static_cast<std::size_t>(iz) * s.in_h + iy) * s.in_w;
                            for (int ox = 0; ox < s.out_w; ++ox) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix >= 0 && ix < s.in_w) dst[ix] += src[ox];
                            }
                            src += s.out_w;
                        }
                    }
                }
    }
}

// im2col + GEMM path. Semantically identical to conv3d_reference.
template <typename T>
Tensor<T> conv3d_fast(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                      int stride, int pad) {
    const ConvShape s = conv3d_shape(input, weights, stride, pad);
    if (bias.size() != static_cast<std::size_t>(s.out_c))
        throw DataError("conv3d: bias size mismatch");
    const std::size_t n_out = static_cast<std::size_t>(s.out_d) * s.out_h * s.out_w;
    const std::size_t k_total = static_cast<std::size_t>(s.in_c) * s.k * s.k * s.k;

    std::vector<T> cols;
    im2col(input, s, cols);

    Tensor<T> out({s.out_c, s.out_d, s.out_h, s.out_w});
    for (int oc = 0; oc < s.out_c; ++oc)
        std::fill_n(out.ptr() + oc * n_out, n_out, bias.data[oc]);
    gemm_nn(s.out_c, n_out, k_total, weights.ptr(), cols.data(), out.ptr());
    return out;
}

// Gradients w.r.t. input, weights and bias; grads are accumulated into the
// (pre-sized) gw/gb tensors.
template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& grad_out, int stride, int pad, Tensor<T>& gw,
                          Tensor<T>& gb) {
    const ConvShape s = conv3d_shape(input, weights, stride, pad);
    const std::size_t n_out = static_cast<std::size_t>(s.out_d) * s.out_h * s.out_w;
    const std::size_t k_total = static_cast<std::size_t>(s.in_c) * s.k * s.k * s.k;
    if (grad_out.size() != n_out * s.out_c) throw DataError("conv3d_backward: grad shape");

    for (int oc = 0; oc < s.out_c; ++oc) {
        T acc = T(0);
        const T* g = grad_out.ptr() + oc * n_out;
        for (std::size_t n = 0; n < n_out; ++n) acc += g[n];
        gb.data[oc] += acc;
    }

    std::vector<T> cols;
    im2col(input, s, cols);
    gemm_nt(s.out_c, k_total, n_out, grad_out.ptr(), cols.data(), gw.ptr());

    std::vector<T> gcols(k_total * n_out, T(0));
    gemm_tn(k_total, n_out, s.out_c, weights.ptr(), grad_out.ptr(), gcols.data());
    Tensor<T> gin({s.in_c, s.in_d, s.in_h, s.in_w});
    col2im(gcols, s, gin);
    return gin;
}

}  // namespace voxdiff::nn
