#pragma once
#include <deque>
#include <string>
#include <vector>

#include "sal/losses.hpp"
#include "sal/nn.hpp"
#include "sal/optim.hpp"
#include "sal/parallel.hpp"
#include "sal/rng.hpp"
#include "sal/volume.hpp"

namespace sal {

// ---------------------------------------------------------------------------
// Parameter store: flat registry the optimizer, checkpoints and gradient
// arenas all index into. Worker threads accumulate into private arenas which
// are reduced in a fixed order, keeping training bitwise reproducible.
// ---------------------------------------------------------------------------

template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    std::deque<Entry> entries;

    int add(std::string name, std::vector<int> shape) {
        entries.push_back(Entry{std::move(name), Tensor<T>(shape), Tensor<T>(shape)});
        return static_cast<int>(entries.size()) - 1;
    }

    Entry& operator[](int id) { return entries[static_cast<std::size_t>(id)]; }
    const Entry& operator[](int id) const { return entries[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(entries.size()); }

    auto begin() { return entries.begin(); }
    auto end() { return entries.end(); }
    auto begin() const { return entries.begin(); }
    auto end() const { return entries.end(); }

    void zero_grads() {
        for (auto& e : entries) e.grad.fill(T(0));
    }

    using Arena = std::vector<Tensor<T>>;

    Arena make_arena() const {
        Arena a;
        a.reserve(entries.size());
        for (const auto& e : entries) a.emplace_back(Tensor<T>::zeros_like(e.value));
        return a;
    }

    void accumulate(const Arena& a) {
        for (std::size_t i = 0; i < entries.size(); ++i) entries[i].grad += a[i];
    }

    // Digest over names and shapes; identifies the architecture in checkpoints.
    std::uint64_t arch_digest() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& e : entries) {
            h = fnv1a(e.name, h);
            for (int d : e.value.shape()) h = fnv1a(&d, sizeof(d), h);
        }
        return h;
    }
};

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int base_width = 16;
    int scales = 4;
    int in_channels = 1;
    int proj_dim = 128;

    void validate() const {
        require(base_width >= 1, "ModelConfig: base_width must be positive");
        require(scales >= 2 && scales <= 6, "ModelConfig: scales=", scales, " outside [2, 6]");
        require(in_channels >= 1, "ModelConfig: in_channels must be positive");
        require(proj_dim >= 1, "ModelConfig: proj_dim must be positive");
    }

    int channels_at(int s) const { return base_width << (s - 1); }
    int stride_at(int s) const { return 1 << (s - 1); }
};

namespace detail {

struct ConvIds {
    int w = -1, b = -1;
    int in_ch = 0, out_ch = 0, k = 3, pad = 1;
};
struct NormIds {
    int gamma = -1, beta = -1;
    int ch = 0;
};

template <typename T>
ConvIds add_conv(ParamStore<T>& store, const std::string& name, int in_ch, int out_ch, int k,
                 RngStream& rng) {
    ConvIds ids;
    ids.in_ch = in_ch;
    ids.out_ch = out_ch;
    ids.k = k;
    ids.pad = k / 2;
    ids.w = store.add(name + ".weight", {out_ch, in_ch * k * k});
    ids.b = store.add(name + ".bias", {out_ch});
    const double std_dev = std::sqrt(2.0 / (in_ch * k * k));
    Tensor<T>& w = store[ids.w].value;
    for (long long i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std_dev));
    return ids;
}

template <typename T>
NormIds add_norm(ParamStore<T>& store, const std::string& name, int ch) {
    NormIds ids;
    ids.ch = ch;
    ids.gamma = store.add(name + ".gamma", {ch});
    ids.beta = store.add(name + ".beta", {ch});
    store[ids.gamma].value.fill(T(1));
    return ids;
}

template <typename T>
int add_linear(ParamStore<T>& store, const std::string& name, int in_dim, int out_dim,
               RngStream& rng, int* bias_id) {
    const int w = store.add(name + ".weight", {out_dim, in_dim});
    *bias_id = store.add(name + ".bias", {out_dim});
    const double std_dev = std::sqrt(1.0 / in_dim);
    Tensor<T>& wt = store[w].value;
    for (long long i = 0; i < wt.numel(); ++i) wt[i] = static_cast<T>(rng.normal(0.0, std_dev));
    return w;
}

// conv-norm-relu twice
struct BlockIds {
    ConvIds conv1, conv2;
    NormIds norm1, norm2;
};

template <typename T>
BlockIds add_block(ParamStore<T>& store, const std::string& name, int in_ch, int out_ch,
                   RngStream& rng) {
    BlockIds b;
    b.conv1 = add_conv(store, name + ".conv1", in_ch, out_ch, 3, rng);
    b.norm1 = add_norm(store, name + ".norm1", out_ch);
    b.conv2 = add_conv(store, name + ".conv2", out_ch, out_ch, 3, rng);
    b.norm2 = add_norm(store, name + ".norm2", out_ch);
    return b;
}

template <typename T>
struct BlockCache {
    nn::Conv2dCache<T> c1, c2;
    nn::InstNormCache<T> n1, n2;
    nn::ReluCache<T> r1, r2;
};

template <typename T>
Tensor<T> block_forward(const ParamStore<T>& store, const BlockIds& ids, const Tensor<T>& x,
                        BlockCache<T>* cache) {
    Tensor<T> y = nn::conv2d_forward(x, store[ids.conv1.w].value, store[ids.conv1.b].value,
                                     ids.conv1.k, ids.conv1.pad, cache ? &cache->c1 : nullptr);
    y = nn::instnorm_forward(y, store[ids.norm1.gamma].value, store[ids.norm1.beta].value,
                             cache ? &cache->n1 : nullptr);
    y = nn::relu_forward(y, cache ? &cache->r1 : nullptr);
    y = nn::conv2d_forward(y, store[ids.conv2.w].value, store[ids.conv2.b].value, ids.conv2.k,
                           ids.conv2.pad, cache ? &cache->c2 : nullptr);
    y = nn::instnorm_forward(y, store[ids.norm2.gamma].value, store[ids.norm2.beta].value,
                             cache ? &cache->n2 : nullptr);
    y = nn::relu_forward(y, cache ? &cache->r2 : nullptr);
    return y;
}

template <typename T>
Tensor<T> block_backward(const ParamStore<T>& store, const BlockIds& ids, const Tensor<T>& dy,
                         const BlockCache<T>& cache, typename ParamStore<T>::Arena& arena) {
    Tensor<T> d = nn::relu_backward(dy, cache.r2);
    d = nn::instnorm_backward(d, cache.n2, store[ids.norm2.gamma].value,
                              arena[static_cast<std::size_t>(ids.norm2.gamma)],
                              arena[static_cast<std::size_t>(ids.norm2.beta)]);
    d = nn::conv2d_backward(d, cache.c2, store[ids.conv2.w].value, ids.conv2.k, ids.conv2.pad,
                            arena[static_cast<std::size_t>(ids.conv2.w)],
                            arena[static_cast<std::size_t>(ids.conv2.b)]);
    d = nn::relu_backward(d, cache.r1);
    d = nn::instnorm_backward(d, cache.n1, store[ids.norm1.gamma].value,
                              arena[static_cast<std::size_t>(ids.norm1.gamma)],
                              arena[static_cast<std::size_t>(ids.norm1.beta)]);
    d = nn::conv2d_backward(d, cache.c1, store[ids.conv1.w].value, ids.conv1.k, ids.conv1.pad,
                            arena[static_cast<std::size_t>(ids.conv1.w)],
                            arena[static_cast<std::size_t>(ids.conv1.b)]);
    return d;
}

} // namespace detail

// ---------------------------------------------------------------------------
// U-Net encoder: `scales` stages of conv-norm-relu x2 with 2x2 max pooling in
// between. F(x, s) is the output of stage s (stride 2^(s-1)).
// ---------------------------------------------------------------------------

template <typename T>
struct UNetEncoder {
    ModelConfig cfg;
    std::vector<detail::BlockIds> stages;

    void build(ParamStore<T>& store, RngStream& rng) {
        cfg.validate();
        stages.clear();
        int in_ch = cfg.in_channels;
        for (int s = 1; s <= cfg.scales; ++s) {
            const int out_ch = cfg.channels_at(s);
            stages.push_back(detail::add_block(store, cat("encoder.stage", s), in_ch, out_ch, rng));
            in_ch = out_ch;
        }
    }

    struct Cache {
        std::vector<detail::BlockCache<T>> block;
        std::vector<nn::MaxPoolCache<T>> pool;
        std::vector<Tensor<T>> stage_out; // f_1 .. f_S
    };

    // Returns the deepest stage output; all stage outputs are in the cache.
    Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const {
        require(x.dim(0) == cfg.in_channels, "encoder: expected ", cfg.in_channels,
                " input channels, got ", x.dim(0));
        const int div = 1 << (cfg.scales - 1);
        require(x.dim(1) % div == 0 && x.dim(2) % div == 0, "encoder: input ", x.dim(1), "x",
                x.dim(2), " not divisible by stride ", div);
        if (cache) {
            cache->block.resize(stages.size());
            cache->pool.resize(stages.size() - 1);
            cache->stage_out.resize(stages.size());
        }
        Tensor<T> cur = x;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            if (s > 0) cur = nn::maxpool2_forward(cur, cache ? &cache->pool[s - 1] : nullptr);
            cur = detail::block_forward(store, stages[s], cur, cache ? &cache->block[s] : nullptr);
            if (cache) cache->stage_out[s] = cur;
        }
        return cur;
    }

    // dstage holds one gradient tensor per stage output (empty tensors are
    // treated as zero). Used both for pre-training (deepest only) and for the
    // decoder's skip-connection gradients.
    void backward(const ParamStore<T>& store, const Cache& cache, std::vector<Tensor<T>> dstage,
                  typename ParamStore<T>::Arena& arena) const {
        Tensor<T> g;
        for (int s = static_cast<int>(stages.size()) - 1; s >= 0; --s) {
            Tensor<T>& contrib = dstage[static_cast<std::size_t>(s)];
            if (g.empty()) {
                require(!contrib.empty(), "encoder backward: no gradient reaches stage ", s + 1);
                g = std::move(contrib);
            } else if (!contrib.empty()) {
                g += contrib;
            }
            g = detail::block_backward(store, stages[static_cast<std::size_t>(s)], g,
                                       cache.block[static_cast<std::size_t>(s)], arena);
            if (s > 0) g = nn::maxpool2_backward(g, cache.pool[static_cast<std::size_t>(s - 1)]);
        }
    }
};

// ---------------------------------------------------------------------------
// Decoder: upsample, concat skip, conv block; then a 1x1 conv to class logits.
// ---------------------------------------------------------------------------

template <typename T>
struct UNetDecoder {
    ModelConfig cfg;
    int num_classes = 0;
    std::vector<detail::BlockIds> levels; // for s = scales-1 .. 1
    detail::ConvIds out_conv;

    void build(ParamStore<T>& store, int classes, RngStream& rng) {
        num_classes = classes;
        require(num_classes >= 2, "decoder: need at least 2 classes, got ", num_classes);
        levels.clear();
        for (int s = cfg.scales - 1; s >= 1; --s) {
            const int in_ch = cfg.channels_at(s + 1) + cfg.channels_at(s);
            levels.push_back(
                detail::add_block(store, cat("decoder.level", s), in_ch, cfg.channels_at(s), rng));
        }
        out_conv = detail::add_conv(store, "decoder.out", cfg.channels_at(1), num_classes, 1, rng);
    }

    struct Cache {
        std::vector<detail::BlockCache<T>> block;
        std::vector<int> skip_channels;
        nn::Conv2dCache<T> out;
    };

    Tensor<T> forward(const ParamStore<T>& store, const std::vector<Tensor<T>>& stage_out,
                      Cache* cache) const {
        if (cache) {
            cache->block.resize(levels.size());
            cache->skip_channels.assign(levels.size(), 0);
        }
        Tensor<T> cur = stage_out.back();
        for (std::size_t li = 0; li < levels.size(); ++li) {
            const int s = cfg.scales - 1 - static_cast<int>(li); // skip stage index (1-based)
            const Tensor<T>& skip = stage_out[static_cast<std::size_t>(s - 1)];
            Tensor<T> up = nn::upsample2_forward(cur);
            if (cache) cache->skip_channels[li] = up.dim(0);
            Tensor<T> cat_in = nn::concat_channels(up, skip);
            cur = detail::block_forward(store, levels[li], cat_in, cache ? &cache->block[li] : nullptr);
        }
        return nn::conv2d_forward(cur, store[out_conv.w].value, store[out_conv.b].value, 1, 0,
                                  cache ? &cache->out : nullptr);
    }

    // Produces per-stage gradients for the encoder.
    std::vector<Tensor<T>> backward(const ParamStore<T>& store, const Cache& cache,
                                    const Tensor<T>& dlogits,
                                    typename ParamStore<T>::Arena& arena) const {
        std::vector<Tensor<T>> dstage(static_cast<std::size_t>(cfg.scales));
        Tensor<T> d = nn::conv2d_backward(dlogits, cache.out, store[out_conv.w].value, 1, 0,
                                          arena[static_cast<std::size_t>(out_conv.w)],
                                          arena[static_cast<std::size_t>(out_conv.b)]);
        for (int li = static_cast<int>(levels.size()) - 1; li >= 0; --li) {
            const int s = cfg.scales - 1 - li;
            d = detail::block_backward(store, levels[static_cast<std::size_t>(li)], d,
                                       cache.block[static_cast<std::size_t>(li)], arena);
            Tensor<T> dup, dskip;
            nn::split_channels(d, cache.skip_channels[static_cast<std::size_t>(li)], dup, dskip);
            dstage[static_cast<std::size_t>(s - 1)] = std::move(dskip);
            d = nn::upsample2_backward(dup);
        }
        dstage.back() = std::move(d);
        return dstage;
    }
};

// ---------------------------------------------------------------------------
// Bare encoder bundle (the encoder contract on its own).
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderModel {
    ModelConfig cfg;
    ParamStore<T> store;
    UNetEncoder<T> encoder;
};

template <typename T = float>
EncoderModel<T> build_encoder(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderModel<T> m;
    m.cfg = cfg;
    m.encoder.cfg = cfg;
    RngStream rng(seed);
    RngStream init = rng.derive("init");
    m.encoder.build(m.store, init);
    return m;
}

// ---------------------------------------------------------------------------
// Pre-training model: encoder + pixel embedding head + global projection head.
// The heads are SSL-only and are not transferred to fine-tuning.
// ---------------------------------------------------------------------------

template <typename T>
struct PretrainModel {
    ModelConfig cfg;
    int scale = 4; // encoder scale feeding the losses
    ParamStore<T> store;
    UNetEncoder<T> encoder;
    int embed_w = -1, embed_b = -1, proj_w = -1, proj_b = -1;

    static PretrainModel build(const ModelConfig& cfg, int scale, std::uint64_t seed) {
        cfg.validate();
        require(scale >= 1 && scale <= cfg.scales, "PretrainModel: scale ", scale,
                " outside [1, ", cfg.scales, "]");
        PretrainModel m;
        m.cfg = cfg;
        m.scale = scale;
        m.encoder.cfg = cfg;
        RngStream rng(seed);
        RngStream init = rng.derive("init");
        m.encoder.build(m.store, init);
        const int c = cfg.channels_at(scale);
        m.embed_w = detail::add_linear(m.store, "embed", c, c, init, &m.embed_b);
        m.proj_w = detail::add_linear(m.store, "proj", c, cfg.proj_dim, init, &m.proj_b);
        return m;
    }

    LinearMap<T> embed_map() const {
        return LinearMap<T>{store[embed_w].value, store[embed_b].value};
    }
    LinearMap<T> proj_map() const {
        return LinearMap<T>{store[proj_w].value, store[proj_b].value};
    }

    // Feature map of the configured scale for one input slice.
    Tensor<T> features(const Tensor<T>& x, typename UNetEncoder<T>::Cache* cache) const {
        typename UNetEncoder<T>::Cache local;
        typename UNetEncoder<T>::Cache* c = cache ? cache : &local;
        encoder.forward(store, x, c);
        return c->stage_out[static_cast<std::size_t>(scale - 1)];
    }

    // GAP + linear projection (the GP-loss feature path).
    Tensor<T> global_feature(const Tensor<T>& fmap) const {
        Tensor<T> pooled = global_average_pool(fmap);
        const int c = pooled.dim(0), d = cfg.proj_dim;
        Tensor<T> f({d});
        gemm_nt(1, d, c, pooled.data(), store[proj_w].value.data(), f.data());
        for (int k = 0; k < d; ++k) f.at(k) += store[proj_b].value.at(k);
        return f;
    }
};

// ---------------------------------------------------------------------------
// Segmentation model: shared encoder + decoder + 1x1 output head.
// ---------------------------------------------------------------------------

template <typename T>
struct SegmentationModel {
    ModelConfig cfg;
    int num_classes = 0;
    ParamStore<T> store;
    UNetEncoder<T> encoder;
    UNetDecoder<T> decoder;

    static SegmentationModel build(const ModelConfig& cfg, int num_classes, std::uint64_t seed) {
        cfg.validate();
        SegmentationModel m;
        m.cfg = cfg;
        m.num_classes = num_classes;
        m.encoder.cfg = cfg;
        m.decoder.cfg = cfg;
        RngStream rng(seed);
        RngStream init = rng.derive("init");
        m.encoder.build(m.store, init);
        m.decoder.build(m.store, num_classes, init);
        return m;
    }

    struct Cache {
        typename UNetEncoder<T>::Cache enc;
        typename UNetDecoder<T>::Cache dec;
    };

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        Cache local;
        Cache* c = cache ? cache : &local;
        encoder.forward(store, x, &c->enc);
        return decoder.forward(store, c->enc.stage_out, &c->dec);
    }

    void backward(const Tensor<T>& dlogits, const Cache& cache,
                  typename ParamStore<T>::Arena& arena) const {
        std::vector<Tensor<T>> dstage = decoder.backward(store, cache.dec, dlogits, arena);
        encoder.backward(store, cache.enc, std::move(dstage), arena);
    }

    Tensor<std::int32_t> predict_slice(const Tensor<float>& pixels) const {
        const int h = pixels.dim(0), w = pixels.dim(1);
        Tensor<T> x({1, h, w});
        for (long long i = 0; i < pixels.numel(); ++i) x[i] = static_cast<T>(pixels[i]);
        Tensor<T> logits = forward(x, nullptr);
        Tensor<std::int32_t> out({h, w});
        const int K = logits.dim(0);
        for (int p = 0; p < h * w; ++p) {
            int best = 0;
            T bv = logits[p];
            for (int k = 1; k < K; ++k) {
                const T v = logits[static_cast<long long>(k) * h * w + p];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            out[p] = best;
        }
        return out;
    }

    Tensor<std::int32_t> predict_volume(const Volume& vol) const {
        Tensor<std::int32_t> labels({vol.V(), vol.H(), vol.W()});
        const long long plane = static_cast<long long>(vol.H()) * vol.W();
        parallel_for(vol.V(), [&](int z) {
            SliceRecord rec = get_slice(vol, z);
            Tensor<std::int32_t> pred = predict_slice(rec.pixels);
            std::copy(pred.data(), pred.data() + plane, labels.data() + z * plane);
        });
        return labels;
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: float32 parameter blob + JSON metadata. Optimizer moments and
// rng states ride along so training can resume bit-compatibly.
// ---------------------------------------------------------------------------

struct Checkpoint {
    json meta;
    std::vector<std::pair<std::string, Tensor<float>>> params;
    std::vector<Tensor<float>> adam_m, adam_v;
    long long adam_step = 0;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return &t;
        return nullptr;
    }
};

template <typename T>
void save_checkpoint(const fs::path& header_path, const ParamStore<T>& store,
                     const std::string& arch, json extra_meta, Adam<T>* optimizer = nullptr) {
    require(header_path.extension() == ".json", "checkpoint path must end in .json: ",
            header_path.string());
    std::vector<float> blob;
    json params = json::array();
    auto append = [&blob](const Tensor<T>& t) {
        for (long long i = 0; i < t.numel(); ++i) blob.push_back(static_cast<float>(t[i]));
    };
    for (const auto& e : store.entries) {
        params.push_back(json{{"name", e.name}, {"shape", e.value.shape()}});
        append(e.value);
    }
    const bool has_adam = optimizer && !optimizer->moment1().empty();
    if (has_adam) {
        for (const auto& t : optimizer->moment1()) append(t);
        for (const auto& t : optimizer->moment2()) append(t);
    }

    fs::path bin = header_path;
    bin.replace_extension(".bin");
    detail::write_file_bytes(bin, blob.data(), blob.size() * sizeof(float));

    json meta = std::move(extra_meta);
    meta["format"] = "sal-checkpoint-v1";
    meta["arch"] = arch;
    meta["arch_digest"] = cat(std::hex, store.arch_digest());
    meta["params"] = params;
    meta["has_adam"] = has_adam;
    meta["adam_step"] = has_adam ? optimizer->step_count() : 0;
    meta["data"] = bin.filename().string();
    std::ofstream out(header_path);
    require(out.good(), "cannot open for write: ", header_path.string());
    out << meta.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const fs::path& header_path) {
    require(fs::exists(header_path), "checkpoint does not exist: ", header_path.string());
    Checkpoint ck;
    ck.meta = detail::load_json_file(header_path);
    require(ck.meta.value("format", "") == "sal-checkpoint-v1",
            header_path.string(), ": not a sal checkpoint");
    const fs::path bin = header_path.parent_path() / ck.meta.at("data").get<std::string>();
    std::vector<char> raw = detail::read_file_bytes(bin);
    const float* cur = reinterpret_cast<const float*>(raw.data());
    const float* end = cur + raw.size() / sizeof(float);

    auto take = [&cur, &end, &header_path](const std::vector<int>& shape) {
        Tensor<float> t(shape);
        require(cur + t.numel() <= end, header_path.string(), ": checkpoint blob truncated");
        std::copy(cur, cur + t.numel(), t.data());
        cur += t.numel();
        return t;
    };

    std::vector<std::vector<int>> shapes;
    for (const auto& p : ck.meta.at("params")) {
        const auto shape = p.at("shape").get<std::vector<int>>();
        shapes.push_back(shape);
        ck.params.emplace_back(p.at("name").get<std::string>(), take(shape));
    }
    if (ck.meta.value("has_adam", false)) {
        for (const auto& s : shapes) ck.adam_m.push_back(take(s));
        for (const auto& s : shapes) ck.adam_v.push_back(take(s));
        ck.adam_step = ck.meta.value("adam_step", 0LL);
    }
    require(cur == end, header_path.string(), ": trailing bytes in checkpoint blob");
    return ck;
}

// Restore every parameter (and optimizer moments) from a checkpoint; used by
// resume. Requires an exact architecture match.
template <typename T>
void restore_full_state(ParamStore<T>& store, Adam<T>* optimizer, const Checkpoint& ck) {
    require(static_cast<int>(ck.params.size()) == store.size(),
            "restore: parameter count mismatch");
    for (int i = 0; i < store.size(); ++i) {
        auto& e = store[i];
        const auto& [name, tensor] = ck.params[static_cast<std::size_t>(i)];
        require(name == e.name, "restore: parameter order mismatch at ", name, " vs ", e.name);
        require(tensor.shape() == e.value.shape(), "restore: shape mismatch for ", name);
        for (long long k = 0; k < tensor.numel(); ++k) e.value[k] = static_cast<T>(tensor[k]);
    }
    if (optimizer && !ck.adam_m.empty()) {
        optimizer->moment1().clear();
        optimizer->moment2().clear();
        for (const auto& t : ck.adam_m) optimizer->moment1().push_back(t.template cast<T>());
        for (const auto& t : ck.adam_v) optimizer->moment2().push_back(t.template cast<T>());
        optimizer->set_step_count(ck.adam_step);
    }
}

struct LoadReport {
    std::vector<std::string> loaded;  // encoder params copied into the model
    std::vector<std::string> skipped; // checkpoint params not consumed (heads etc.)
};

// Initialize a segmentation model's encoder from a pre-training checkpoint.
// Decoder and output head keep their fresh initialization.
template <typename T>
LoadReport load_pretrained_encoder(SegmentationModel<T>& model, const Checkpoint& ck) {
    LoadReport report;
    for (auto& e : model.store) {
        if (e.name.rfind("encoder.", 0) != 0) continue;
        const Tensor<float>* src = ck.find(e.name);
        require(src != nullptr, "load_pretrained_encoder: checkpoint lacks parameter ", e.name);
        require(src->shape() == e.value.shape(),
                "load_pretrained_encoder: shape mismatch for parameter ", e.name);
        for (long long i = 0; i < src->numel(); ++i) e.value[i] = static_cast<T>((*src)[i]);
        report.loaded.push_back(e.name);
    }
    require(!report.loaded.empty(), "load_pretrained_encoder: checkpoint holds no encoder params");
    for (const auto& [name, t] : ck.params) {
        bool consumed = false;
        for (const auto& l : report.loaded)
            if (l == name) {
                consumed = true;
                break;
            }
        if (!consumed) report.skipped.push_back(name);
    }
    return report;
}

} // namespace sal
