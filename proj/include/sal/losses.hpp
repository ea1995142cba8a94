#pragma once
#include <cmath>
#include <utility>
#include <vector>

#include "sal/pairing.hpp"
#include "sal/tensor.hpp"

namespace sal {

// ---------------------------------------------------------------------------
// Loss configuration
// ---------------------------------------------------------------------------

// Which side of the similarity matrix supplies the query pixels. Row: each
// pixel of the first slice seeks its best match in the second.
enum class LaAxis { Row, Col };

struct LossConfig {
    double lambda = 1.0;  // weight of the alignment term
    int omega = 4;        // window side length on the feature grid
    double tau = 0.1;     // similarity temperature
    int s = 4;            // encoder scale feeding the losses
    LaAxis la_axis = LaAxis::Row;
    bool la_symmetric = true; // average both directions of each pair

    void validate() const {
        require(lambda >= 0.0, "LossConfig: lambda must be nonnegative");
        require(omega >= 1, "LossConfig: omega must be positive");
        require(tau > 0.0, "LossConfig: tau must be positive");
        require(s >= 1, "LossConfig: scale index must be >= 1");
    }
};

struct ComplexityReport {
    long long mac_count = 0;               // multiply-accumulates in similarity GEMMs
    long long peak_similarity_entries = 0; // largest similarity buffer materialized

    ComplexityReport& operator+=(const ComplexityReport& o) {
        mac_count += o.mac_count;
        peak_similarity_entries = std::max(peak_similarity_entries, o.peak_similarity_entries);
        return *this;
    }
};

// ---------------------------------------------------------------------------
// Pixel embeddings: X is c x hw with unit-norm columns (epsilon-floored).
// ---------------------------------------------------------------------------

template <typename T>
struct PixelEmbedding {
    Tensor<T> X; // (c, hw)
    int h = 0, w = 0;
    long long zero_floored = 0; // columns whose pre-norm vector was ~zero

    int channels() const { return X.dim(0); }
    int hw() const { return X.dim(1); }
};

template <typename T>
struct LinearMap {
    Tensor<T> weight; // (out, in)
    Tensor<T> bias;   // (out)

    int out_dim() const { return weight.dim(0); }
    int in_dim() const { return weight.dim(1); }

    static LinearMap identity(int c) {
        LinearMap m{Tensor<T>({c, c}), Tensor<T>({c})};
        for (int i = 0; i < c; ++i) m.weight.at(i, i) = T(1);
        return m;
    }
};

inline constexpr double kEmbedNormEps = 1e-8;

template <typename T>
struct NormalizeEmbedCache {
    Tensor<T> fmat;     // input, viewed as (c_in, hw)
    Tensor<T> u;        // pre-normalization embedding (c_out, hw)
    Tensor<T> inv_norm; // per pixel, 1/sqrt(|u|^2 + eps^2)
};

// X_p = (W f_p + b) / sqrt(|W f_p + b|^2 + eps^2), reshaped to c x hw.
template <typename T>
PixelEmbedding<T> normalize_embed(const Tensor<T>& fmap, const LinearMap<T>& embed,
                                  NormalizeEmbedCache<T>* cache = nullptr) {
    require(fmap.ndim() == 3, "normalize_embed: feature map must be (c, h, w)");
    require(fmap.all_finite(), "normalize_embed: non-finite feature map");
    const int c_in = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    require(embed.in_dim() == c_in, "normalize_embed: embed expects ", embed.in_dim(),
            " channels, feature map has ", c_in);
    const int hw = h * w;
    const int c_out = embed.out_dim();

    Tensor<T> u({c_out, hw});
    gemm_nn(c_out, hw, c_in, embed.weight.data(), fmap.data(), u.data());
    for (int a = 0; a < c_out; ++a) {
        const T b = embed.bias.at(a);
        T* row = u.data() + static_cast<std::size_t>(a) * hw;
        for (int p = 0; p < hw; ++p) row[p] += b;
    }

    PixelEmbedding<T> out{Tensor<T>({c_out, hw}), h, w, 0};
    Tensor<T> inv_norm({hw});
    const T eps2 = static_cast<T>(kEmbedNormEps * kEmbedNormEps);
    for (int p = 0; p < hw; ++p) {
        T sq = T(0);
        for (int a = 0; a < c_out; ++a) {
            const T v = u.at(a, p);
            sq += v * v;
        }
        if (sq < static_cast<T>(1e-24)) ++out.zero_floored;
        const T inv = T(1) / std::sqrt(sq + eps2);
        inv_norm.at(p) = inv;
        for (int a = 0; a < c_out; ++a) out.X.at(a, p) = u.at(a, p) * inv;
    }

    if (cache) {
        cache->fmat = fmap;
        cache->fmat.reshape({c_in, hw});
        cache->u = std::move(u);
        cache->inv_norm = std::move(inv_norm);
    }
    return out;
}

// Accumulates into dfmap / dweight / dbias.
template <typename T>
void normalize_embed_backward(const Tensor<T>& dX, const NormalizeEmbedCache<T>& cache,
                              const LinearMap<T>& embed, Tensor<T>& dfmap,
                              Tensor<T>& dweight, Tensor<T>& dbias) {
    const int c_out = cache.u.dim(0), hw = cache.u.dim(1);
    const int c_in = cache.fmat.dim(0);

    Tensor<T> du({c_out, hw});
    for (int p = 0; p < hw; ++p) {
        const T inv = cache.inv_norm.at(p);
        T udot = T(0);
        for (int a = 0; a < c_out; ++a) udot += cache.u.at(a, p) * dX.at(a, p);
        const T inv3 = inv * inv * inv;
        for (int a = 0; a < c_out; ++a)
            du.at(a, p) = dX.at(a, p) * inv - cache.u.at(a, p) * udot * inv3;
    }

    gemm_nt(c_out, c_in, hw, du.data(), cache.fmat.data(), dweight.data(), true);
    for (int a = 0; a < c_out; ++a) {
        T s = T(0);
        const T* row = du.data() + static_cast<std::size_t>(a) * hw;
        for (int p = 0; p < hw; ++p) s += row[p];
        dbias.at(a) += s;
    }
    Tensor<T> df({c_in, hw});
    gemm_tn(c_in, hw, c_out, embed.weight.data(), du.data(), df.data());
    require(dfmap.numel() == df.numel(), "normalize_embed_backward: dfmap shape mismatch");
    for (long long i = 0; i < df.numel(); ++i) dfmap[i] += df[i];
}

// ---------------------------------------------------------------------------
// Alignment losses. Row k of A = X_i^T X_j holds the similarities of query
// pixel k of the first slice against the candidate pixels of the second; the
// row maximum is pushed toward 1 with an MAE penalty.
// ---------------------------------------------------------------------------

template <typename T>
struct AlignmentTrace {
    std::vector<int> argmax; // per query pixel: matched pixel in the other map
    std::vector<T> rowmax;   // per query pixel: its best similarity
    T loss = T(0);
};

namespace detail {

template <typename T>
T abs_dev_from_one(T m) {
    return m >= T(1) ? m - T(1) : T(1) - m;
}

// d|m-1|/dm with the exact-tie subgradient fixed to 0.
template <typename T>
T abs_dev_sign(T m) {
    if (m > T(1)) return T(1);
    if (m < T(1)) return T(-1);
    return T(0);
}

} // namespace detail

// Dense variant: materializes the full hw x hw similarity matrix. Quadratic
// in hw, so it serves as the reference path and small-scale oracle only.
template <typename T>
T local_alignment_loss(const PixelEmbedding<T>& xi, const PixelEmbedding<T>& xj,
                       AlignmentTrace<T>* trace = nullptr,
                       ComplexityReport* report = nullptr) {
    require(xi.channels() == xj.channels(), "local_alignment_loss: channel mismatch ",
            xi.channels(), " vs ", xj.channels());
    require(xi.hw() == xj.hw(), "local_alignment_loss: pixel count mismatch ", xi.hw(),
            " vs ", xj.hw());
    const int c = xi.channels(), hw = xi.hw();

    Tensor<T> a({hw, hw});
    gemm_tn(hw, hw, c, xi.X.data(), xj.X.data(), a.data());
    if (report) {
        report->mac_count += static_cast<long long>(hw) * hw * c;
        report->peak_similarity_entries =
            std::max<long long>(report->peak_similarity_entries, static_cast<long long>(hw) * hw);
    }

    if (trace) {
        trace->argmax.assign(static_cast<std::size_t>(hw), 0);
        trace->rowmax.assign(static_cast<std::size_t>(hw), T(0));
    }
    T sum = T(0);
    for (int k = 0; k < hw; ++k) {
        const T* row = a.data() + static_cast<std::size_t>(k) * hw;
        T best = row[0];
        int best_l = 0;
        for (int l = 1; l < hw; ++l) {
            if (row[l] > best) { // strict: ties break to the lowest index
                best = row[l];
                best_l = l;
            }
        }
        sum += detail::abs_dev_from_one(best);
        if (trace) {
            trace->argmax[static_cast<std::size_t>(k)] = best_l;
            trace->rowmax[static_cast<std::size_t>(k)] = best;
        }
    }
    const T loss = sum / static_cast<T>(hw);
    if (trace) trace->loss = loss;
    return loss;
}

// Windowed variant: the grid is partitioned into (h/wh)*(w/ww) windows and a
// query pixel only scans its own window in the other map. All window blocks
// of one pair are materialized together, matching the hw * wh*ww space bound.
template <typename T>
T windowed_alignment_loss(const PixelEmbedding<T>& xi, const PixelEmbedding<T>& xj,
                          int window_h, int window_w,
                          AlignmentTrace<T>* trace = nullptr,
                          ComplexityReport* report = nullptr) {
    require(xi.channels() == xj.channels(), "windowed_alignment_loss: channel mismatch");
    require(xi.h == xj.h && xi.w == xj.w, "windowed_alignment_loss: grid shape mismatch");
    const int c = xi.channels(), h = xi.h, w = xi.w;
    require(h % window_h == 0 && w % window_w == 0,
            "windowed_alignment_loss: feature grid h=", h, ", w=", w,
            " not divisible by window ", window_h, "x", window_w);

    const int wy_count = h / window_h, wx_count = w / window_w;
    const int num_windows = wy_count * wx_count;
    const int p = window_h * window_w;
    const int hw = h * w;

    // One buffer holding every window's p x p similarity block.
    Tensor<T> sim({num_windows, p, p});
    Tensor<T> bi({c, p}), bj({c, p});
    std::vector<int> pix(static_cast<std::size_t>(p));

    if (trace) {
        trace->argmax.assign(static_cast<std::size_t>(hw), 0);
        trace->rowmax.assign(static_cast<std::size_t>(hw), T(0));
    }

    long long macs = 0;
    T sum = T(0);
    for (int wy = 0; wy < wy_count; ++wy) {
        for (int wx = 0; wx < wx_count; ++wx) {
            const int widx = wy * wx_count + wx;
            for (int r = 0; r < window_h; ++r)
                for (int s = 0; s < window_w; ++s)
                    pix[static_cast<std::size_t>(r * window_w + s)] =
                        (wy * window_h + r) * w + (wx * window_w + s);

            for (int a = 0; a < c; ++a) {
                const T* xirow = xi.X.data() + static_cast<std::size_t>(a) * hw;
                const T* xjrow = xj.X.data() + static_cast<std::size_t>(a) * hw;
                T* bir = bi.data() + static_cast<std::size_t>(a) * p;
                T* bjr = bj.data() + static_cast<std::size_t>(a) * p;
                for (int q = 0; q < p; ++q) {
                    bir[q] = xirow[pix[static_cast<std::size_t>(q)]];
                    bjr[q] = xjrow[pix[static_cast<std::size_t>(q)]];
                }
            }

            T* block = sim.data() + static_cast<std::size_t>(widx) * p * p;
            gemm_tn(p, p, c, bi.data(), bj.data(), block);
            macs += static_cast<long long>(p) * p * c;

            for (int k = 0; k < p; ++k) {
                const T* row = block + static_cast<std::size_t>(k) * p;
                T best = row[0];
                int best_l = 0;
                for (int l = 1; l < p; ++l) {
                    if (row[l] > best) {
                        best = row[l];
                        best_l = l;
                    }
                }
                sum += detail::abs_dev_from_one(best);
                if (trace) {
                    const int gq = pix[static_cast<std::size_t>(k)];
                    trace->argmax[static_cast<std::size_t>(gq)] = pix[static_cast<std::size_t>(best_l)];
                    trace->rowmax[static_cast<std::size_t>(gq)] = best;
                }
            }
        }
    }

    if (report) {
        report->mac_count += macs;
        report->peak_similarity_entries =
            std::max(report->peak_similarity_entries, sim.numel());
    }
    const T loss = sum / static_cast<T>(hw);
    if (trace) trace->loss = loss;
    return loss;
}

// Backward of either alignment variant; accumulates into dxi / dxj.
template <typename T>
void alignment_loss_backward(const AlignmentTrace<T>& trace, const PixelEmbedding<T>& xi,
                             const PixelEmbedding<T>& xj, T upstream, Tensor<T>& dxi,
                             Tensor<T>& dxj) {
    const int c = xi.channels(), hw = xi.hw();
    const T scale = upstream / static_cast<T>(hw);
    for (int k = 0; k < hw; ++k) {
        const T g = scale * detail::abs_dev_sign(trace.rowmax[static_cast<std::size_t>(k)]);
        if (g == T(0)) continue;
        const int l = trace.argmax[static_cast<std::size_t>(k)];
        for (int a = 0; a < c; ++a) {
            dxi.at(a, k) += g * xj.X.at(a, l);
            dxj.at(a, l) += g * xi.X.at(a, k);
        }
    }
}

// Convenience form: raw feature maps in, embedding applied inside.
template <typename T>
std::pair<T, ComplexityReport> windowed_local_alignment_loss(const Tensor<T>& fmap_i,
                                                             const Tensor<T>& fmap_j,
                                                             const LinearMap<T>& embed,
                                                             int omega) {
    PixelEmbedding<T> xi = normalize_embed(fmap_i, embed);
    PixelEmbedding<T> xj = normalize_embed(fmap_j, embed);
    ComplexityReport report;
    const T loss = windowed_alignment_loss(xi, xj, omega, omega, static_cast<AlignmentTrace<T>*>(nullptr), &report);
    return {loss, report};
}

// ---------------------------------------------------------------------------
// Global positional loss (temperature-scaled cosine softmax over the batch).
// ---------------------------------------------------------------------------

template <typename T>
struct GlobalLossCache {
    Tensor<T> fhat;       // (m, d) unit feature rows
    Tensor<T> norms;      // (m)
    Tensor<T> cosine;     // (m, m)
    Tensor<T> simexp;     // (m, m), exp(cos/tau)
    std::vector<T> denom; // per sample, sum over q != i
};

template <typename T>
T global_positional_loss(const Tensor<T>& features, const std::vector<std::vector<int>>& positives,
                         double tau, GlobalLossCache<T>* cache = nullptr) {
    require(features.ndim() == 2, "global_positional_loss: features must be (2n, d)");
    const int m = features.dim(0), d = features.dim(1);
    require(m >= 2, "global_positional_loss: need at least 2 samples, have ", m);
    require(static_cast<int>(positives.size()) == m,
            "global_positional_loss: positive-set count mismatch");
    require(tau > 0.0, "global_positional_loss: tau must be positive");
    for (int i = 0; i < m; ++i)
        require(!positives[static_cast<std::size_t>(i)].empty(),
                "global_positional_loss: empty positive set for sample ", i,
                " (pairing bug: the twin should always be present)");

    Tensor<T> fhat({m, d});
    Tensor<T> norms({m});
    for (int i = 0; i < m; ++i) {
        const T* row = features.data() + static_cast<std::size_t>(i) * d;
        T sq = T(0);
        for (int k = 0; k < d; ++k) sq += row[k] * row[k];
        const T nrm = std::sqrt(sq);
        require(nrm > static_cast<T>(1e-12), "global_positional_loss: zero-norm feature at sample ", i);
        norms.at(i) = nrm;
        T* out = fhat.data() + static_cast<std::size_t>(i) * d;
        for (int k = 0; k < d; ++k) out[k] = row[k] / nrm;
    }

    Tensor<T> cosine({m, m});
    gemm_nt(m, m, d, fhat.data(), fhat.data(), cosine.data());

    const T inv_tau = static_cast<T>(1.0 / tau);
    Tensor<T> simexp({m, m});
    for (long long i = 0; i < cosine.numel(); ++i) simexp[i] = std::exp(cosine[i] * inv_tau);

    std::vector<T> denom(static_cast<std::size_t>(m), T(0));
    for (int i = 0; i < m; ++i) {
        T z = T(0);
        for (int q = 0; q < m; ++q)
            if (q != i) z += simexp.at(i, q);
        denom[static_cast<std::size_t>(i)] = z;
    }

    T total = T(0);
    for (int i = 0; i < m; ++i) {
        const auto& pos = positives[static_cast<std::size_t>(i)];
        T li = T(0);
        for (int j : pos) li += std::log(denom[static_cast<std::size_t>(i)]) - cosine.at(i, j) * inv_tau;
        total += li / static_cast<T>(pos.size());
    }
    const T loss = total / static_cast<T>(m);

    if (cache) {
        cache->fhat = std::move(fhat);
        cache->norms = std::move(norms);
        cache->cosine = std::move(cosine);
        cache->simexp = std::move(simexp);
        cache->denom = std::move(denom);
    }
    return loss;
}

// Accumulates d(loss)/d(features) into dfeatures.
template <typename T>
void global_positional_loss_backward(const Tensor<T>& features,
                                     const std::vector<std::vector<int>>& positives, double tau,
                                     const GlobalLossCache<T>& cache, T upstream,
                                     Tensor<T>& dfeatures) {
    const int m = features.dim(0), d = features.dim(1);
    const T inv_tau = static_cast<T>(1.0 / tau);
    const T batch_scale = upstream / static_cast<T>(m);

    // dL/dcos, zero diagonal.
    Tensor<T> g({m, m});
    for (int i = 0; i < m; ++i) {
        const auto& pos = positives[static_cast<std::size_t>(i)];
        const T inv_p = T(1) / static_cast<T>(pos.size());
        const T inv_z = T(1) / cache.denom[static_cast<std::size_t>(i)];
        for (int q = 0; q < m; ++q) {
            if (q == i) continue;
            g.at(i, q) = batch_scale * inv_tau * cache.simexp.at(i, q) * inv_z;
        }
        for (int j : pos) g.at(i, j) -= batch_scale * inv_tau * inv_p;
    }

    // cos = fhat fhat^T  =>  dfhat = (G + G^T) fhat
    Tensor<T> gsym({m, m});
    for (int i = 0; i < m; ++i)
        for (int q = 0; q < m; ++q) gsym.at(i, q) = g.at(i, q) + g.at(q, i);
    Tensor<T> dfhat({m, d});
    gemm_nn(m, d, m, gsym.data(), cache.fhat.data(), dfhat.data());

    // Through row normalization.
    for (int i = 0; i < m; ++i) {
        const T* fh = cache.fhat.data() + static_cast<std::size_t>(i) * d;
        const T* dh = dfhat.data() + static_cast<std::size_t>(i) * d;
        T* out = dfeatures.data() + static_cast<std::size_t>(i) * d;
        T proj = T(0);
        for (int k = 0; k < d; ++k) proj += fh[k] * dh[k];
        const T inv_n = T(1) / cache.norms.at(i);
        for (int k = 0; k < d; ++k) out[k] += (dh[k] - fh[k] * proj) * inv_n;
    }
}

// ---------------------------------------------------------------------------
// Overall loss: GP mean plus lambda times the mean (optionally symmetrized)
// windowed alignment over the batch's positive pairs.
// ---------------------------------------------------------------------------

template <typename T>
struct OverallLossResult {
    T total = T(0);
    T gp_term = T(0);
    T la_term = T(0);
    int pair_count = 0;
    ComplexityReport complexity;
};

template <typename T>
struct OverallLossCache {
    std::vector<NormalizeEmbedCache<T>> embed_caches;
    std::vector<PixelEmbedding<T>> embeddings;
    struct PairTrace {
        int i = 0, j = 0;
        AlignmentTrace<T> fwd; // queries from i
        AlignmentTrace<T> rev; // queries from j
        bool has_fwd = false, has_rev = false;
    };
    std::vector<PairTrace> pair_traces;
    Tensor<T> pooled;   // (m, c)
    Tensor<T> features; // (m, d)
    GlobalLossCache<T> gp;
    int c = 0, h = 0, w = 0;
};

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& fmap) {
    const int c = fmap.dim(0), hw = fmap.dim(1) * fmap.dim(2);
    Tensor<T> out({c});
    for (int a = 0; a < c; ++a) {
        const T* row = fmap.data() + static_cast<std::size_t>(a) * hw;
        T s = T(0);
        for (int p = 0; p < hw; ++p) s += row[p];
        out.at(a) = s / static_cast<T>(hw);
    }
    return out;
}

template <typename T>
OverallLossResult<T> overall_loss(const PairPlan& plan, const std::vector<Tensor<T>>& fmaps,
                                  const LinearMap<T>& embed, const LinearMap<T>& projection,
                                  const LossConfig& cfg, OverallLossCache<T>* cache = nullptr) {
    cfg.validate();
    const int m = static_cast<int>(fmaps.size());
    require(m == static_cast<int>(plan.views.size()),
            "overall_loss: ", plan.views.size(), " views but ", m, " feature maps");
    require(m >= 2, "overall_loss: need at least 2 samples");
    const int c = fmaps[0].dim(0), h = fmaps[0].dim(1), w = fmaps[0].dim(2);

    OverallLossResult<T> res;
    res.pair_count = static_cast<int>(plan.la_pairs.size());

    // Global branch: GAP -> projection -> positional loss.
    const int d = projection.out_dim();
    Tensor<T> pooled({m, c});
    for (int v = 0; v < m; ++v) {
        Tensor<T> g = global_average_pool(fmaps[static_cast<std::size_t>(v)]);
        std::copy(g.data(), g.data() + c, pooled.data() + static_cast<std::size_t>(v) * c);
    }
    Tensor<T> features({m, d});
    gemm_nt(m, d, c, pooled.data(), projection.weight.data(), features.data());
    for (int v = 0; v < m; ++v)
        for (int k = 0; k < d; ++k) features.at(v, k) += projection.bias.at(k);

    GlobalLossCache<T> gp_cache;
    res.gp_term = global_positional_loss(features, plan.gp_positives, cfg.tau,
                                         cache ? &gp_cache : nullptr);

    // Alignment branch, skipped entirely when it cannot contribute.
    const bool la_active = cfg.lambda > 0.0 && !plan.la_pairs.empty();
    if (cache) {
        cache->embed_caches.clear();
        cache->embeddings.clear();
        cache->pair_traces.clear();
        cache->c = c;
        cache->h = h;
        cache->w = w;
    }
    if (la_active) {
        std::vector<NormalizeEmbedCache<T>> ecaches(cache ? static_cast<std::size_t>(m) : 0);
        std::vector<PixelEmbedding<T>> embeddings;
        embeddings.reserve(static_cast<std::size_t>(m));
        for (int v = 0; v < m; ++v)
            embeddings.push_back(normalize_embed(fmaps[static_cast<std::size_t>(v)], embed,
                                                 cache ? &ecaches[static_cast<std::size_t>(v)] : nullptr));

        T la_sum = T(0);
        for (const auto& [i, j] : plan.la_pairs) {
            typename OverallLossCache<T>::PairTrace tr;
            tr.i = i;
            tr.j = j;
            T pair_val;
            if (cfg.la_symmetric) {
                const T fwd = windowed_alignment_loss(embeddings[i], embeddings[j], cfg.omega,
                                                      cfg.omega, cache ? &tr.fwd : nullptr,
                                                      &res.complexity);
                const T rev = windowed_alignment_loss(embeddings[j], embeddings[i], cfg.omega,
                                                      cfg.omega, cache ? &tr.rev : nullptr,
                                                      &res.complexity);
                tr.has_fwd = tr.has_rev = true;
                pair_val = (fwd + rev) / T(2);
            } else if (cfg.la_axis == LaAxis::Row) {
                pair_val = windowed_alignment_loss(embeddings[i], embeddings[j], cfg.omega,
                                                   cfg.omega, cache ? &tr.fwd : nullptr,
                                                   &res.complexity);
                tr.has_fwd = true;
            } else {
                pair_val = windowed_alignment_loss(embeddings[j], embeddings[i], cfg.omega,
                                                   cfg.omega, cache ? &tr.rev : nullptr,
                                                   &res.complexity);
                tr.has_rev = true;
            }
            la_sum += pair_val;
            if (cache) cache->pair_traces.push_back(std::move(tr));
        }
        res.la_term = la_sum / static_cast<T>(plan.la_pairs.size());
        if (cache) {
            cache->embed_caches = std::move(ecaches);
            cache->embeddings = std::move(embeddings);
        }
    }

    res.total = res.gp_term + static_cast<T>(cfg.lambda) * res.la_term;

    if (cache) {
        cache->pooled = std::move(pooled);
        cache->features = std::move(features);
        cache->gp = std::move(gp_cache);
    }
    return res;
}

// Gradients w.r.t. every feature map and both head parameter sets.
template <typename T>
void overall_loss_backward(const PairPlan& plan, const OverallLossCache<T>& cache,
                           const LinearMap<T>& embed, const LinearMap<T>& projection,
                           const LossConfig& cfg, std::vector<Tensor<T>>& dfmaps,
                           LinearMap<T>& dembed, LinearMap<T>& dprojection) {
    const int m = static_cast<int>(plan.views.size());
    const int c = cache.c, h = cache.h, w = cache.w;
    const int hw = h * w;
    const int d = projection.out_dim();

    // Global branch.
    Tensor<T> dfeatures({m, d});
    global_positional_loss_backward(cache.features, plan.gp_positives, cfg.tau, cache.gp,
                                    T(1), dfeatures);
    // features = pooled W^T + b
    gemm_tn(d, c, m, dfeatures.data(), cache.pooled.data(), dprojection.weight.data(), true);
    for (int k = 0; k < d; ++k) {
        T s = T(0);
        for (int v = 0; v < m; ++v) s += dfeatures.at(v, k);
        dprojection.bias.at(k) += s;
    }
    Tensor<T> dpooled({m, c});
    gemm_nn(m, c, d, dfeatures.data(), projection.weight.data(), dpooled.data());
    const T inv_hw = T(1) / static_cast<T>(hw);
    for (int v = 0; v < m; ++v) {
        Tensor<T>& df = dfmaps[static_cast<std::size_t>(v)];
        for (int a = 0; a < c; ++a) {
            const T gval = dpooled.at(v, a) * inv_hw;
            T* plane = df.data() + static_cast<std::size_t>(a) * hw;
            for (int p = 0; p < hw; ++p) plane[p] += gval;
        }
    }

    // Alignment branch.
    const bool la_active = cfg.lambda > 0.0 && !cache.pair_traces.empty();
    if (!la_active) return;

    const T pair_weight = static_cast<T>(cfg.lambda) / static_cast<T>(cache.pair_traces.size());
    std::vector<Tensor<T>> dX(static_cast<std::size_t>(m));
    for (int v = 0; v < m; ++v)
        dX[static_cast<std::size_t>(v)] = Tensor<T>({cache.embeddings[0].channels(), hw});

    for (const auto& tr : cache.pair_traces) {
        const T dir_weight = (tr.has_fwd && tr.has_rev) ? pair_weight / T(2) : pair_weight;
        if (tr.has_fwd)
            alignment_loss_backward(tr.fwd, cache.embeddings[tr.i], cache.embeddings[tr.j],
                                    dir_weight, dX[tr.i], dX[tr.j]);
        if (tr.has_rev)
            alignment_loss_backward(tr.rev, cache.embeddings[tr.j], cache.embeddings[tr.i],
                                    dir_weight, dX[tr.j], dX[tr.i]);
    }

    for (int v = 0; v < m; ++v)
        normalize_embed_backward(dX[static_cast<std::size_t>(v)],
                                 cache.embed_caches[static_cast<std::size_t>(v)], embed,
                                 dfmaps[static_cast<std::size_t>(v)], dembed.weight, dembed.bias);
}

} // namespace sal
