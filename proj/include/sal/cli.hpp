#pragma once
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sal/config.hpp"
#include "sal/evaluation.hpp"
#include "sal/phantom.hpp"
#include "sal/training.hpp"

namespace sal::cli {

namespace detail {

inline void write_snapshot(const fs::path& out_dir, const std::string& command,
                           const ExperimentConfig& cfg) {
    fs::create_directories(out_dir);
    json snap{{"command", command},
              {"seed", cfg.seed},
              {"num_workers", num_workers()},
              {"config", cfgio::to_json(cfg)}};
    std::ofstream out(out_dir / "config_snapshot.json");
    require(out.good(), "cannot write config snapshot in ", out_dir.string());
    out << snap.dump(2) << "\n";
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        out.push_back(s.substr(start, comma == std::string::npos ? comma : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

inline Dataset load_dataset_from_config(const ExperimentConfig& cfg) {
    require(!cfg.data.manifest.empty(), "config: data.manifest is required for this command");
    return load_dataset(cfg.data.manifest);
}

} // namespace detail

// ---------------------------------------------------------------------------
// synth: write a phantom dataset + manifest
// ---------------------------------------------------------------------------

inline void cmd_synth(int subjects, int V, int H, int W, std::uint64_t seed,
                      const fs::path& out_dir) {
    std::vector<Volume> volumes = make_phantom_dataset(subjects, V, H, W, seed);
    fs::create_directories(out_dir / "volumes");
    DatasetManifest manifest;
    manifest.num_classes = kPhantomNumClasses;
    for (const auto& vol : volumes) {
        ManifestEntry e;
        e.subject_id = vol.subject_id();
        e.volume_path = out_dir / "volumes" / (vol.subject_id() + ".json");
        e.label_path = out_dir / "volumes" / (vol.subject_id() + "_labels.json");
        save_volume(vol, e.volume_path);
        save_labels(vol, *e.label_path);
        manifest.entries.push_back(std::move(e));
    }
    save_manifest(manifest, out_dir / "manifest.json");
    std::cout << "wrote " << volumes.size() << " subjects to " << out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// pretrain / finetune / evaluate / sweep
// ---------------------------------------------------------------------------

inline void cmd_pretrain(const ExperimentConfig& cfg, const fs::path& out_dir,
                         const std::string& resume_path) {
    detail::write_snapshot(out_dir, "pretrain", cfg);
    Dataset dataset = detail::load_dataset_from_config(cfg);
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) resume = load_checkpoint(resume_path);
    PretrainRun run = pretrain(dataset, cfg, &out_dir, resume ? &*resume : nullptr);
    std::cout << "pretrain done: " << run.steps_done << " steps, final total loss "
              << (run.log.empty() ? 0.0 : run.log.back().total) << "\n"
              << "checkpoint: " << (out_dir / "checkpoints" / "final.ckpt.json").string() << "\n";
}

inline void cmd_finetune(const ExperimentConfig& cfg, const fs::path& out_dir,
                         const std::string& init_path, int M,
                         const std::string& subjects_csv) {
    detail::write_snapshot(out_dir, "finetune", cfg);
    Dataset dataset = detail::load_dataset_from_config(cfg);

    std::vector<std::string> labeled;
    if (!subjects_csv.empty()) {
        labeled = detail::split_csv(subjects_csv);
    } else {
        require(M >= 1, "finetune: pass --M or --subjects");
        std::vector<std::string> ids = dataset.subject_ids();
        std::sort(ids.begin(), ids.end());
        RngStream(cfg.seed).derive("finetune-select").shuffle(ids.begin(), ids.end());
        require(M <= static_cast<int>(ids.size()), "finetune: M=", M, " exceeds ", ids.size(),
                " subjects");
        labeled.assign(ids.begin(), ids.begin() + M);
    }

    std::optional<Checkpoint> init;
    if (!init_path.empty()) init = load_checkpoint(init_path);
    FinetuneRun run = finetune(dataset, labeled, cfg, init ? &*init : nullptr);

    fs::create_directories(out_dir / "logs");
    fs::create_directories(out_dir / "checkpoints");
    for (const auto& rec : run.log)
        sal::detail::append_jsonl(out_dir / "logs" / "finetune.jsonl",
                             json{{"epoch", rec.epoch},
                                  {"mean_loss", rec.mean_loss},
                                  {"ce", rec.mean_ce},
                                  {"dice_loss", rec.mean_dice_loss}});
    json meta{{"labeled_subjects", labeled},
              {"config", cfgio::to_json(cfg)},
              {"init", init_path},
              {"loaded_params", run.init_report.loaded},
              {"skipped_params", run.init_report.skipped}};
    save_checkpoint(out_dir / "checkpoints" / "model.ckpt.json", run.model.store,
                    cat("unet-seg:b", cfg.model.base_width, ":c", dataset.num_classes), meta);
    std::cout << "finetune done: final mean loss " << run.log.back().mean_loss << "\n";
}

inline std::vector<MethodSpec> parse_methods(const std::string& methods_arg) {
    std::vector<MethodSpec> methods;
    for (const auto& tok : detail::split_csv(methods_arg)) {
        require(!tok.empty(), "evaluate: empty method token");
        const auto eq = tok.find('=');
        MethodSpec m;
        if (eq == std::string::npos) {
            m.name = tok; // no checkpoint: train from scratch
        } else {
            m.name = tok.substr(0, eq);
            m.init = load_checkpoint(tok.substr(eq + 1));
        }
        methods.push_back(std::move(m));
    }
    require(!methods.empty(), "evaluate: no methods given");
    return methods;
}

inline void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out_dir,
                         const std::string& methods_arg) {
    detail::write_snapshot(out_dir, "evaluate", cfg);
    Dataset dataset = detail::load_dataset_from_config(cfg);
    std::vector<MethodSpec> methods = parse_methods(methods_arg);
    ResultTable table =
        run_protocol(dataset, methods, cfg.evaluate.Ms, cfg.evaluate.k, cfg.seed, cfg);

    std::ofstream csv(out_dir / "results.csv");
    csv << table.to_csv();
    std::ofstream js(out_dir / "results.json");
    js << table.to_json().dump(2) << "\n";
    std::cout << table.to_csv();
}

inline void cmd_sweep(const json& base_config, const std::string& param,
                      const std::string& values_csv, const fs::path& out_dir) {
    const std::vector<std::string> values = detail::split_csv(values_csv);
    require(!values.empty(), "sweep: no values given");

    // Validate the whole grid before any training starts.
    std::vector<ExperimentConfig> grid;
    for (const auto& v : values) {
        json j = base_config;
        cfgio::apply_override(j, param + "=" + v);
        ExperimentConfig cfg = cfgio::from_json(j);
        cfg.validate();
        grid.push_back(std::move(cfg));
    }
    detail::write_snapshot(out_dir, "sweep", grid.front());

    ResultTable table;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const ExperimentConfig& cfg = grid[i];
        Dataset dataset = detail::load_dataset_from_config(cfg);
        const fs::path run_dir = out_dir / (param + "_" + values[i]);
        fs::create_directories(run_dir);
        PretrainRun run = pretrain(dataset, cfg, &run_dir);
        Checkpoint ck = load_checkpoint(run_dir / "checkpoints" / "final.ckpt.json");
        std::vector<MethodSpec> methods;
        methods.push_back(MethodSpec{param + "=" + values[i], std::move(ck)});
        ResultTable part =
            run_protocol(dataset, methods, cfg.evaluate.Ms, cfg.evaluate.k, cfg.seed, cfg);
        for (auto& row : part.rows) table.rows.push_back(std::move(row));
    }

    std::ofstream csv(out_dir / "sweep.csv");
    csv << table.to_csv();
    std::ofstream js(out_dir / "sweep.json");
    js << table.to_json().dump(2) << "\n";
    std::cout << table.to_csv();
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"sal: slice-alignment self-supervised pre-training toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed_flag;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)");
        sub->add_option("--set", overrides, "dotted config override key=value")->take_all();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_flag, "seed override");
    };

    // synth
    auto* synth = app.add_subcommand("synth", "generate a phantom dataset");
    int sy_subjects = 8, sy_V = 24, sy_size = 64, sy_H = 0, sy_W = 0;
    std::uint64_t sy_seed = 7;
    synth->add_option("--subjects", sy_subjects, "number of subjects");
    synth->add_option("--V", sy_V, "slices per volume");
    synth->add_option("--size", sy_size, "square slice size");
    synth->add_option("--H", sy_H, "slice height (overrides --size)");
    synth->add_option("--W", sy_W, "slice width (overrides --size)");
    synth->add_option("--seed", sy_seed, "generator seed");
    synth->add_option("--out", out_dir, "output directory");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training");
    std::string resume_path;
    add_common(pre);
    pre->add_option("--resume", resume_path, "checkpoint to resume from");

    // finetune
    auto* fin = app.add_subcommand("finetune", "supervised fine-tuning");
    std::string init_path, subjects_csv;
    int ft_M = 0;
    add_common(fin);
    fin->add_option("--init", init_path, "pre-training checkpoint for encoder init");
    fin->add_option("--M", ft_M, "number of labeled subjects (seed-selected)");
    fin->add_option("--subjects", subjects_csv, "explicit labeled subject ids (csv)");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "k-fold limited-label protocol");
    std::string methods_arg = "random";
    add_common(ev);
    ev->add_option("--methods", methods_arg, "csv of name[=checkpoint] entries");

    // sweep
    auto* sw = app.add_subcommand("sweep", "hyperparameter grid (pretrain + protocol per value)");
    std::string sweep_param = "loss.lambda", sweep_values;
    add_common(sw);
    sw->add_option("--param", sweep_param, "dotted config key to sweep");
    sw->add_option("--values", sweep_values, "csv of values")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) {
            const int H = sy_H > 0 ? sy_H : sy_size;
            const int W = sy_W > 0 ? sy_W : sy_size;
            cmd_synth(sy_subjects, sy_V, H, W, sy_seed, out_dir);
        } else if (pre->parsed()) {
            cmd_pretrain(load_config(config_path, overrides, seed_flag), out_dir, resume_path);
        } else if (fin->parsed()) {
            cmd_finetune(load_config(config_path, overrides, seed_flag), out_dir, init_path, ft_M,
                         subjects_csv);
        } else if (ev->parsed()) {
            cmd_evaluate(load_config(config_path, overrides, seed_flag), out_dir, methods_arg);
        } else if (sw->parsed()) {
            json base = cfgio::to_json(ExperimentConfig{});
            if (!config_path.empty()) {
                json file = sal::detail::load_json_file(config_path);
                cfgio::check_known_keys(file, base, "");
                base.merge_patch(file);
            }
            for (const auto& o : overrides) cfgio::apply_override(base, o);
            if (seed_flag) base["seed"] = *seed_flag;
            cmd_sweep(base, sweep_param, sweep_values, out_dir);
        }
    } catch (const std::exception& e) {
        json err{{"error", e.what()},
                 {"command", app.get_subcommands().empty()
                                 ? ""
                                 : app.get_subcommands().front()->get_name()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}

} // namespace sal::cli
