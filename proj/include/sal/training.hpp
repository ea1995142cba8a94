#pragma once
#include <optional>
#include <vector>

#include "sal/config.hpp"
#include "sal/model.hpp"
#include "sal/parallel.hpp"
#include "sal/pairing.hpp"
#include "sal/phantom.hpp"

namespace sal {

struct StepRecord {
    long long step = 0;
    int epoch = 0;
    double total = 0.0, gp_term = 0.0, la_term = 0.0;
    int pair_count = 0;
};

struct PretrainRun {
    PretrainModel<float> model;
    Adam<float> optimizer;
    std::vector<StepRecord> log;
    RngStream data_rng;
    int epochs_done = 0;
    long long steps_done = 0;
};

namespace detail {

inline void append_jsonl(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::app);
    require(out.good(), "cannot open for append: ", path.string());
    out << j.dump() << "\n";
}

} // namespace detail

// Pre-training loop: sample batch -> encoder forward on all 2n views ->
// overall loss -> backward -> Adam step. Views are processed in parallel with
// per-view gradient arenas reduced in view order, so loss curves do not
// depend on the worker count. Labels are never touched; the label read
// counter is audited across the run.
inline PretrainRun pretrain(const Dataset& dataset, const ExperimentConfig& cfg,
                            const fs::path* out_dir = nullptr,
                            const Checkpoint* resume = nullptr) {
    cfg.validate();
    require(dataset.volumes.size() >= 2, "pretrain: need >= 2 subjects");
    const std::uint64_t labels_before = Volume::label_read_count().load();

    PretrainRun run{PretrainModel<float>::build(cfg.model, cfg.loss.s, cfg.seed),
                    Adam<float>(cfg.pretrain.optimizer),
                    {},
                    RngStream(cfg.seed).derive("pretrain-data"),
                    0,
                    0};

    if (resume) {
        restore_full_state(run.model.store, &run.optimizer, *resume);
        run.data_rng.load_state(resume->meta.at("rng").at("pretrain-data").get<std::string>());
        run.epochs_done = resume->meta.value("epoch", 0);
        run.steps_done = resume->meta.value("step", 0LL);
    }

    fs::path log_path;
    if (out_dir) {
        fs::create_directories(*out_dir / "logs");
        fs::create_directories(*out_dir / "checkpoints");
        log_path = *out_dir / "logs" / "pretrain.jsonl";
    }

    const int m = 2 * cfg.pairing.n; // views per iteration

    for (int epoch = run.epochs_done; epoch < cfg.pretrain.epochs; ++epoch) {
        for (int it = 0; it < cfg.pretrain.iterations_per_epoch; ++it) {
            PairPlan plan = sample_pretrain_batch(dataset, cfg.pairing, cfg.augment, run.data_rng);

            // Forward all views.
            std::vector<Tensor<float>> fmaps(static_cast<std::size_t>(m));
            std::vector<typename UNetEncoder<float>::Cache> caches(static_cast<std::size_t>(m));
            parallel_for(m, [&](int v) {
                const SliceView& view = plan.views[static_cast<std::size_t>(v)];
                Tensor<float> x({1, view.pixels.dim(0), view.pixels.dim(1)});
                std::copy(view.pixels.data(), view.pixels.data() + view.pixels.numel(), x.data());
                fmaps[static_cast<std::size_t>(v)] =
                    run.model.features(x, &caches[static_cast<std::size_t>(v)]);
            });

            const LinearMap<float> embed = run.model.embed_map();
            const LinearMap<float> proj = run.model.proj_map();
            OverallLossCache<float> loss_cache;
            OverallLossResult<float> res =
                overall_loss(plan, fmaps, embed, proj, cfg.loss, &loss_cache);

            if (!std::isfinite(res.total)) {
                std::string batch_desc;
                for (const auto& v : plan.views)
                    batch_desc += cat(" (", v.subject_id, ",", v.slice_index, ",v", v.view_id, ")");
                fail("pretrain: non-finite loss at step ", run.steps_done + 1, " (gp=", res.gp_term,
                     ", la=", res.la_term, "); batch:", batch_desc);
            }

            // Backward: loss -> feature maps -> encoder, then one Adam step.
            std::vector<Tensor<float>> dfmaps;
            dfmaps.reserve(static_cast<std::size_t>(m));
            for (int v = 0; v < m; ++v)
                dfmaps.emplace_back(Tensor<float>::zeros_like(fmaps[static_cast<std::size_t>(v)]));
            LinearMap<float> dembed{Tensor<float>::zeros_like(embed.weight),
                                    Tensor<float>::zeros_like(embed.bias)};
            LinearMap<float> dproj{Tensor<float>::zeros_like(proj.weight),
                                   Tensor<float>::zeros_like(proj.bias)};
            overall_loss_backward(plan, loss_cache, embed, proj, cfg.loss, dfmaps, dembed, dproj);

            std::vector<ParamStore<float>::Arena> arenas(static_cast<std::size_t>(m));
            parallel_for(m, [&](int v) {
                arenas[static_cast<std::size_t>(v)] = run.model.store.make_arena();
                std::vector<Tensor<float>> dstage(static_cast<std::size_t>(cfg.model.scales));
                dstage[static_cast<std::size_t>(run.model.scale - 1)] =
                    std::move(dfmaps[static_cast<std::size_t>(v)]);
                run.model.encoder.backward(run.model.store, caches[static_cast<std::size_t>(v)],
                                           std::move(dstage), arenas[static_cast<std::size_t>(v)]);
            });

            run.model.store.zero_grads();
            for (int v = 0; v < m; ++v) run.model.store.accumulate(arenas[static_cast<std::size_t>(v)]);
            run.model.store[run.model.embed_w].grad += dembed.weight;
            run.model.store[run.model.embed_b].grad += dembed.bias;
            run.model.store[run.model.proj_w].grad += dproj.weight;
            run.model.store[run.model.proj_b].grad += dproj.bias;
            run.optimizer.step(run.model.store);

            ++run.steps_done;
            StepRecord rec{run.steps_done, epoch + 1, static_cast<double>(res.total),
                           static_cast<double>(res.gp_term), static_cast<double>(res.la_term),
                           res.pair_count};
            run.log.push_back(rec);
            if (out_dir)
                detail::append_jsonl(log_path, json{{"step", rec.step},
                                                    {"epoch", rec.epoch},
                                                    {"total", rec.total},
                                                    {"gp_term", rec.gp_term},
                                                    {"la_term", rec.la_term},
                                                    {"pair_count", rec.pair_count}});
        }
        run.epochs_done = epoch + 1;
    }

    require(Volume::label_read_count().load() == labels_before,
            "pretrain: label volumes were read during pre-training");

    if (out_dir) {
        json meta{{"epoch", run.epochs_done},
                  {"step", run.steps_done},
                  {"rng", {{"pretrain-data", run.data_rng.save_state()}}},
                  {"config", cfgio::to_json(cfg)}};
        save_checkpoint(*out_dir / "checkpoints" / "final.ckpt.json", run.model.store,
                        cat("unet-encoder+heads:b", cfg.model.base_width, ":s", cfg.model.scales),
                        meta, &run.optimizer);
    }
    return run;
}

// Convenience for tests and the CLI: checkpoint an in-memory run.
inline void save_pretrain_checkpoint(const PretrainRun& run, const ExperimentConfig& cfg,
                                     const fs::path& path) {
    json meta{{"epoch", run.epochs_done},
              {"step", run.steps_done},
              {"rng", {{"pretrain-data", run.data_rng.save_state()}}},
              {"config", cfgio::to_json(cfg)}};
    Adam<float>& opt = const_cast<Adam<float>&>(run.optimizer);
    save_checkpoint(path, run.model.store,
                    cat("unet-encoder+heads:b", cfg.model.base_width, ":s", cfg.model.scales),
                    meta, &opt);
}

// ---------------------------------------------------------------------------
// Fine-tuning: supervised cross-entropy + soft Dice on the slices of the M
// labeled subjects. With `init`, the encoder starts from the pre-training
// checkpoint; otherwise everything trains from scratch (the Random control).
// ---------------------------------------------------------------------------

struct FinetuneEpochRecord {
    int epoch = 0;
    double mean_loss = 0.0, mean_ce = 0.0, mean_dice_loss = 0.0;
};

struct FinetuneRun {
    SegmentationModel<float> model;
    std::vector<FinetuneEpochRecord> log;
    LoadReport init_report; // empty when training from scratch
};

inline FinetuneRun finetune(const Dataset& dataset,
                            const std::vector<std::string>& labeled_subject_ids,
                            const ExperimentConfig& cfg,
                            const Checkpoint* init = nullptr,
                            std::optional<std::uint64_t> seed_override = std::nullopt) {
    cfg.validate();
    require(!labeled_subject_ids.empty(), "finetune: empty labeled subject list");
    for (const auto& id : labeled_subject_ids) {
        const Volume& v = dataset.by_subject(id);
        require(v.has_labels(), "finetune: subject \"", id, "\" has no labels");
    }
    const std::uint64_t seed = seed_override.value_or(cfg.seed);

    FinetuneRun run{SegmentationModel<float>::build(cfg.model, dataset.num_classes, seed), {}, {}};
    if (init) run.init_report = load_pretrained_encoder(run.model, *init);

    // All (subject, slice) pairs of the labeled subjects.
    struct Item {
        const Volume* vol;
        int z;
    };
    std::vector<Item> pool;
    for (const auto& id : labeled_subject_ids) {
        const Volume& v = dataset.by_subject(id);
        for (int z = 0; z < v.V(); ++z) pool.push_back({&v, z});
    }

    Adam<float> opt(cfg.finetune.optimizer);
    RngStream order_rng = RngStream(seed).derive("finetune-order");

    const int B = cfg.finetune.batch_size;
    for (int epoch = 1; epoch <= cfg.finetune.epochs; ++epoch) {
        order_rng.shuffle(pool.begin(), pool.end());
        double sum_loss = 0.0, sum_ce = 0.0, sum_dice = 0.0;
        long long seen = 0;
        for (std::size_t start = 0; start < pool.size(); start += static_cast<std::size_t>(B)) {
            const int bsz = static_cast<int>(std::min(pool.size() - start, static_cast<std::size_t>(B)));
            std::vector<ParamStore<float>::Arena> arenas(static_cast<std::size_t>(bsz));
            std::vector<nn::SegLossValue<float>> losses(static_cast<std::size_t>(bsz));

            parallel_for(bsz, [&](int bi) {
                const Item& item = pool[start + static_cast<std::size_t>(bi)];
                SliceRecord rec = get_slice(*item.vol, item.z);
                const int h = rec.pixels.dim(0), w = rec.pixels.dim(1);
                Tensor<float> x({1, h, w});
                std::copy(rec.pixels.data(), rec.pixels.data() + rec.pixels.numel(), x.data());

                const Tensor<std::int32_t>& labels = item.vol->labels();
                Tensor<std::int32_t> target({h, w});
                const long long plane = static_cast<long long>(h) * w;
                std::copy(labels.data() + item.z * plane, labels.data() + (item.z + 1) * plane,
                          target.data());

                typename SegmentationModel<float>::Cache cache;
                Tensor<float> logits = run.model.forward(x, &cache);
                nn::SegLossCache<float> lcache;
                losses[static_cast<std::size_t>(bi)] = nn::seg_loss_forward(logits, target, &lcache);
                Tensor<float> dlogits = nn::seg_loss_backward(target, lcache, h, w);
                dlogits *= 1.0f / static_cast<float>(bsz);
                arenas[static_cast<std::size_t>(bi)] = run.model.store.make_arena();
                run.model.backward(dlogits, cache, arenas[static_cast<std::size_t>(bi)]);
            });

            run.model.store.zero_grads();
            for (int bi = 0; bi < bsz; ++bi)
                run.model.store.accumulate(arenas[static_cast<std::size_t>(bi)]);
            opt.step(run.model.store);

            for (int bi = 0; bi < bsz; ++bi) {
                sum_loss += losses[static_cast<std::size_t>(bi)].total;
                sum_ce += losses[static_cast<std::size_t>(bi)].ce;
                sum_dice += losses[static_cast<std::size_t>(bi)].dice;
            }
            seen += bsz;
        }
        run.log.push_back(FinetuneEpochRecord{epoch, sum_loss / static_cast<double>(seen),
                                              sum_ce / static_cast<double>(seen),
                                              sum_dice / static_cast<double>(seen)});
    }
    return run;
}

} // namespace sal
