#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

#include "sal/tensor.hpp"

// Minimal 2D building blocks with explicit forward caches and hand-derived
// backward passes. Layers are free functions over (input, params); parameter
// ownership and composition live in model.hpp.

namespace sal::nn {

// ---------------------------------------------------------------------------
// conv2d, stride 1, square kernel, zero padding. Weight is (c_out, c_in*k*k).
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const Tensor<T>& x, int k, int pad, Tensor<T>& cols) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int hw = h * w;
    for (int a = 0; a < c; ++a) {
        const T* plane = x.data() + static_cast<std::size_t>(a) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = cols.data() + (static_cast<std::size_t>(a) * k * k + ky * k + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) {
                        for (int xx = 0; xx < w; ++xx) dst[y * w + xx] = T(0);
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(sy) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + kx - pad;
                        dst[y * w + xx] = (sx < 0 || sx >= w) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const Tensor<T>& cols, int k, int pad, Tensor<T>& dx) {
    const int c = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
    const int hw = h * w;
    for (int a = 0; a < c; ++a) {
        T* plane = dx.data() + static_cast<std::size_t>(a) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = cols.data() + (static_cast<std::size_t>(a) * k * k + ky * k + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    T* dst_row = plane + static_cast<std::size_t>(sy) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + kx - pad;
                        if (sx >= 0 && sx < w) dst_row[sx] += src[y * w + xx];
                    }
                }
            }
        }
    }
}

template <typename T>
struct Conv2dCache {
    Tensor<T> input; // im2col is recomputed in backward to keep memory flat
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         int k, int pad, Conv2dCache<T>* cache = nullptr) {
    const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int c_out = weight.dim(0);
    require(weight.dim(1) == c_in * k * k, "conv2d: weight shape mismatch");
    const int hw = h * w;

    Tensor<T> cols({c_in * k * k, hw});
    im2col(x, k, pad, cols);
    Tensor<T> y({c_out, h, w});
    gemm_nn(c_out, hw, c_in * k * k, weight.data(), cols.data(), y.data());
    for (int o = 0; o < c_out; ++o) {
        const T b = bias.at(o);
        T* plane = y.data() + static_cast<std::size_t>(o) * hw;
        for (int p = 0; p < hw; ++p) plane[p] += b;
    }
    if (cache) cache->input = x;
    return y;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& dy, const Conv2dCache<T>& cache,
                          const Tensor<T>& weight, int k, int pad, Tensor<T>& dweight,
                          Tensor<T>& dbias) {
    const Tensor<T>& x = cache.input;
    const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int c_out = weight.dim(0);
    const int hw = h * w;

    Tensor<T> cols({c_in * k * k, hw});
    im2col(x, k, pad, cols);

    // dW += dY * cols^T ; db += rowsum(dY)
    gemm_nt(c_out, c_in * k * k, hw, dy.data(), cols.data(), dweight.data(), true);
    for (int o = 0; o < c_out; ++o) {
        const T* plane = dy.data() + static_cast<std::size_t>(o) * hw;
        T s = T(0);
        for (int p = 0; p < hw; ++p) s += plane[p];
        dbias.at(o) += s;
    }

    Tensor<T> dcols({c_in * k * k, hw});
    gemm_tn(c_in * k * k, hw, c_out, weight.data(), dy.data(), dcols.data());
    Tensor<T> dx({c_in, h, w});
    col2im_add(dcols, k, pad, dx);
    return dx;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties break to the first scanned element.
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolCache {
    std::vector<int> argmax; // flat input index per output element
    int c = 0, h = 0, w = 0; // input dims
};

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, MaxPoolCache<T>* cache = nullptr) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(h % 2 == 0 && w % 2 == 0, "maxpool2: odd spatial size ", h, "x", w);
    const int oh = h / 2, ow = w / 2;
    Tensor<T> y({c, oh, ow});
    if (cache) {
        cache->argmax.assign(static_cast<std::size_t>(c) * oh * ow, 0);
        cache->c = c;
        cache->h = h;
        cache->w = w;
    }
    for (int a = 0; a < c; ++a) {
        const T* plane = x.data() + static_cast<std::size_t>(a) * h * w;
        for (int y0 = 0; y0 < oh; ++y0) {
            for (int x0 = 0; x0 < ow; ++x0) {
                int best_idx = (2 * y0) * w + 2 * x0;
                T best = plane[best_idx];
                const int cand[3] = {(2 * y0) * w + 2 * x0 + 1, (2 * y0 + 1) * w + 2 * x0,
                                     (2 * y0 + 1) * w + 2 * x0 + 1};
                for (int idx : cand) {
                    if (plane[idx] > best) {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                y.at(a, y0, x0) = best;
                if (cache)
                    cache->argmax[(static_cast<std::size_t>(a) * oh + y0) * ow + x0] =
                        a * h * w + best_idx;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const MaxPoolCache<T>& cache) {
    Tensor<T> dx({cache.c, cache.h, cache.w});
    for (long long i = 0; i < dy.numel(); ++i)
        dx[cache.argmax[static_cast<std::size_t>(i)]] += dy[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> y({c, h * 2, w * 2});
    for (int a = 0; a < c; ++a)
        for (int yy = 0; yy < 2 * h; ++yy)
            for (int xx = 0; xx < 2 * w; ++xx)
                y.at(a, yy, xx) = x.at(a, yy / 2, xx / 2);
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    const int c = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2;
    Tensor<T> dx({c, h, w});
    for (int a = 0; a < c; ++a)
        for (int yy = 0; yy < 2 * h; ++yy)
            for (int xx = 0; xx < 2 * w; ++xx)
                dx.at(a, yy / 2, xx / 2) += dy.at(a, yy, xx);
    return dx;
}

// ---------------------------------------------------------------------------
// Instance normalization with affine parameters (stateless across calls, so
// train and eval behave identically and checkpoints carry no running stats).
// ---------------------------------------------------------------------------

inline constexpr double kInstNormEps = 1e-5;

template <typename T>
struct InstNormCache {
    Tensor<T> xhat;
    Tensor<T> inv_std; // per channel
};

template <typename T>
Tensor<T> instnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           InstNormCache<T>* cache = nullptr) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int hw = h * w;
    Tensor<T> y({c, h, w});
    Tensor<T> xhat({c, h, w});
    Tensor<T> inv_std({c});
    for (int a = 0; a < c; ++a) {
        const T* plane = x.data() + static_cast<std::size_t>(a) * hw;
        T mean = T(0);
        for (int p = 0; p < hw; ++p) mean += plane[p];
        mean /= static_cast<T>(hw);
        T var = T(0);
        for (int p = 0; p < hw; ++p) {
            const T d = plane[p] - mean;
            var += d * d;
        }
        var /= static_cast<T>(hw);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kInstNormEps));
        inv_std.at(a) = inv;
        T* xh = xhat.data() + static_cast<std::size_t>(a) * hw;
        T* out = y.data() + static_cast<std::size_t>(a) * hw;
        const T g = gamma.at(a), b = beta.at(a);
        for (int p = 0; p < hw; ++p) {
            xh[p] = (plane[p] - mean) * inv;
            out[p] = g * xh[p] + b;
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
Tensor<T> instnorm_backward(const Tensor<T>& dy, const InstNormCache<T>& cache,
                            const Tensor<T>& gamma, Tensor<T>& dgamma, Tensor<T>& dbeta) {
    const int c = dy.dim(0), h = dy.dim(1), w = dy.dim(2);
    const int hw = h * w;
    Tensor<T> dx({c, h, w});
    for (int a = 0; a < c; ++a) {
        const T* dyp = dy.data() + static_cast<std::size_t>(a) * hw;
        const T* xh = cache.xhat.data() + static_cast<std::size_t>(a) * hw;
        T sum_dy = T(0), sum_dy_xh = T(0);
        for (int p = 0; p < hw; ++p) {
            sum_dy += dyp[p];
            sum_dy_xh += dyp[p] * xh[p];
        }
        dgamma.at(a) += sum_dy_xh;
        dbeta.at(a) += sum_dy;
        const T g = gamma.at(a);
        const T inv = cache.inv_std.at(a);
        const T mean_dy = sum_dy / static_cast<T>(hw);
        const T mean_dy_xh = sum_dy_xh / static_cast<T>(hw);
        T* dxp = dx.data() + static_cast<std::size_t>(a) * hw;
        for (int p = 0; p < hw; ++p)
            dxp[p] = g * inv * (dyp[p] - mean_dy - xh[p] * mean_dy_xh);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
struct ReluCache {
    Tensor<T> output;
};

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, ReluCache<T>* cache = nullptr) {
    Tensor<T> y = x;
    for (long long i = 0; i < y.numel(); ++i)
        if (y[i] < T(0)) y[i] = T(0);
    if (cache) cache->output = y;
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const ReluCache<T>& cache) {
    Tensor<T> dx = dy;
    for (long long i = 0; i < dx.numel(); ++i)
        if (cache.output[i] <= T(0)) dx[i] = T(0);
    return dx;
}

// ---------------------------------------------------------------------------
// Channel concat / split (skip connections).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2), "concat: spatial mismatch");
    Tensor<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data(), a.data() + a.numel(), y.data());
    std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
    return y;
}

template <typename T>
void split_channels(const Tensor<T>& dy, int c_a, Tensor<T>& da, Tensor<T>& db) {
    const int h = dy.dim(1), w = dy.dim(2);
    da = Tensor<T>({c_a, h, w});
    db = Tensor<T>({dy.dim(0) - c_a, h, w});
    std::copy(dy.data(), dy.data() + da.numel(), da.data());
    std::copy(dy.data() + da.numel(), dy.data() + dy.numel(), db.data());
}

// ---------------------------------------------------------------------------
// Segmentation objective: pixel cross-entropy plus soft Dice over foreground
// classes, equally weighted.
// ---------------------------------------------------------------------------

inline constexpr double kDiceEps = 1.0;

template <typename T>
struct SegLossCache {
    Tensor<T> probs; // (K, hw)
};

template <typename T>
struct SegLossValue {
    T total = T(0), ce = T(0), dice = T(0);
};

template <typename T>
SegLossValue<T> seg_loss_forward(const Tensor<T>& logits, const Tensor<std::int32_t>& target,
                                 SegLossCache<T>* cache = nullptr) {
    const int K = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    const int hw = h * w;
    require(target.dim(0) == h && target.dim(1) == w, "seg_loss: target shape mismatch");

    Tensor<T> probs({K, hw});
    T ce = T(0);
    for (int p = 0; p < hw; ++p) {
        T mx = logits[p];
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits[static_cast<long long>(k) * hw + p]);
        T z = T(0);
        for (int k = 0; k < K; ++k) {
            const T e = std::exp(logits[static_cast<long long>(k) * hw + p] - mx);
            probs[static_cast<long long>(k) * hw + p] = e;
            z += e;
        }
        const T inv_z = T(1) / z;
        for (int k = 0; k < K; ++k) probs[static_cast<long long>(k) * hw + p] *= inv_z;
        const int t = target[p];
        ce -= std::log(std::max(probs[static_cast<long long>(t) * hw + p], static_cast<T>(1e-12)));
    }
    ce /= static_cast<T>(hw);

    // Soft Dice over foreground classes.
    T dice_sum = T(0);
    for (int k = 1; k < K; ++k) {
        T inter = T(0), psum = T(0), gsum = T(0);
        const T* pk = probs.data() + static_cast<std::size_t>(k) * hw;
        for (int p = 0; p < hw; ++p) {
            const T g = (target[p] == k) ? T(1) : T(0);
            inter += pk[p] * g;
            psum += pk[p];
            gsum += g;
        }
        dice_sum += (T(2) * inter + static_cast<T>(kDiceEps)) /
                    (psum + gsum + static_cast<T>(kDiceEps));
    }
    const T dice_loss = T(1) - dice_sum / static_cast<T>(K - 1);

    if (cache) cache->probs = std::move(probs);
    SegLossValue<T> v;
    v.ce = ce;
    v.dice = dice_loss;
    v.total = ce + dice_loss;
    return v;
}

template <typename T>
Tensor<T> seg_loss_backward(const Tensor<std::int32_t>& target, const SegLossCache<T>& cache,
                            int h, int w) {
    const int K = cache.probs.dim(0);
    const int hw = h * w;
    Tensor<T> dlogits({K, h, w});

    // Cross-entropy: (softmax - onehot) / hw.
    const T inv_hw = T(1) / static_cast<T>(hw);
    for (int k = 0; k < K; ++k) {
        const T* pk = cache.probs.data() + static_cast<std::size_t>(k) * hw;
        T* dk = dlogits.data() + static_cast<std::size_t>(k) * hw;
        for (int p = 0; p < hw; ++p)
            dk[p] = (pk[p] - ((target[p] == k) ? T(1) : T(0))) * inv_hw;
    }

    // Dice: d(loss)/d(probs), then through the softmax jacobian.
    Tensor<T> dprobs({K, hw});
    const T cls_scale = T(1) / static_cast<T>(K - 1);
    for (int k = 1; k < K; ++k) {
        T inter = T(0), psum = T(0), gsum = T(0);
        const T* pk = cache.probs.data() + static_cast<std::size_t>(k) * hw;
        for (int p = 0; p < hw; ++p) {
            const T g = (target[p] == k) ? T(1) : T(0);
            inter += pk[p] * g;
            psum += pk[p];
            gsum += g;
        }
        const T num = T(2) * inter + static_cast<T>(kDiceEps);
        const T den = psum + gsum + static_cast<T>(kDiceEps);
        T* dpk = dprobs.data() + static_cast<std::size_t>(k) * hw;
        for (int p = 0; p < hw; ++p) {
            const T g = (target[p] == k) ? T(1) : T(0);
            dpk[p] = -cls_scale * (T(2) * g * den - num) / (den * den);
        }
    }
    for (int p = 0; p < hw; ++p) {
        T inner = T(0);
        for (int k = 0; k < K; ++k)
            inner += dprobs[static_cast<long long>(k) * hw + p] *
                     cache.probs[static_cast<long long>(k) * hw + p];
        for (int k = 0; k < K; ++k) {
            const T pk = cache.probs[static_cast<long long>(k) * hw + p];
            dlogits[static_cast<long long>(k) * hw + p] +=
                pk * (dprobs[static_cast<long long>(k) * hw + p] - inner);
        }
    }
    return dlogits;
}

} // namespace sal::nn
