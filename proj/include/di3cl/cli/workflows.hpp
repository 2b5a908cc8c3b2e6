#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <opencv2/core.hpp>

#include "di3cl/cli/run_config.hpp"
#include "di3cl/datapipe/dataset.hpp"
#include "di3cl/datapipe/synth.hpp"
#include "di3cl/downstream/finetune.hpp"
#include "di3cl/pretrain/trainer.hpp"
#include "di3cl/scene/infer.hpp"

namespace di3cl::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, generic_failure = 1, config_error = 2, data_error = 3, divergence_error = 4, io_error = 5 };

inline int exit_code_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return config_error;
        case ErrorKind::data: return data_error;
        case ErrorKind::divergence: return divergence_error;
        case ErrorKind::io: return io_error;
        default: return generic_failure;
    }
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

inline void require_dir(const std::string& key, const std::string& dir) {
    if (dir.empty()) throw DataError(key + " is not set");
    if (!fs::is_directory(dir)) throw DataError(key + " does not exist: " + dir);
}

inline const char* kModelFile = "model_best.seg";

/// Accepts either a model archive or a fine-tune run directory.
inline fs::path resolve_model(const std::string& key, const std::string& value) {
    if (value.empty()) throw ConfigError(key + " is not set");
    fs::path p(value);
    if (fs::is_directory(p)) p /= kModelFile;
    if (!fs::is_regular_file(p)) throw IoError(key + " does not name a model file: " + p.string());
    return p;
}

/// Writes `synth.count` scenes as 16-bit images plus index masks.
inline void run_synth(const RunConfig& cfg, const fs::path& run_dir, std::ostream& log) {
    fs::create_directories(run_dir / "images");
    fs::create_directories(run_dir / "masks");
    for (int i = 0; i < cfg.synth.count; ++i) {
        SynthConfig sc = cfg.synth.scene;
        sc.seed = mix_seed(cfg.seed + mix_seed(static_cast<std::uint64_t>(i)));
        const SynthScene s = synth_scene(sc);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%05d.png", i);
        save_gray(run_dir / "images" / name, s.image);
        save_labels(run_dir / "masks" / name, s.mask);
    }
    log << "wrote " << cfg.synth.count << " scenes to " << run_dir.string() << '\n';
}

inline void run_pretrain(const RunConfig& cfg, const fs::path& run_dir, const std::string& echo, std::ostream& log) {
    require_dir("data.dir", cfg.data.dir);
    const auto data = load_all(scan_dataset(cfg.data.dir));
    std::optional<fs::path> resume;
    if (!cfg.resume.empty()) resume = cfg.resume;
    const auto res = run_pretraining<float>(cfg.pretrain, data, run_dir, echo, resume, &log);
    log << "best epoch " << res.best_epoch << ", backbone " << res.best_backbone.string() << '\n';
}

inline void report_metrics(const MetricsReport& r, const fs::path& record, std::ostream& log) {
    print_metrics_table(log, r);
    std::ofstream out(record);
    write_metrics_record(out, r);
    if (!out) throw IoError("cannot write " + record.string());
}

inline void run_finetune(const RunConfig& cfg, const fs::path& run_dir, const std::string& echo, std::ostream& log) {
    require_dir("data.train_dir", cfg.data.train_dir);
    require_dir("data.val_dir", cfg.data.val_dir);
    const auto train = load_labeled(cfg.data.train_dir);
    const auto val = load_labeled(cfg.data.val_dir);
    auto model = make_seg_model<float>(cfg.finetune, cfg.pretrain.encoder.backbone);
    std::ofstream hist(run_dir / "finetune_log.tsv");
    hist << "epoch\ttrain_loss\tval_miou\tlr\n";
    auto res = finetune<float>(cfg.finetune, train, val, std::move(model), [&](const FinetuneEpoch& e) {
        hist << e.epoch << '\t' << e.train_loss << '\t' << e.val_miou << '\t' << e.lr << '\n' << std::flush;
        log << "epoch " << e.epoch << " loss " << e.train_loss << " val mIoU " << e.val_miou << '\n';
    });
    save_seg_model(run_dir / kModelFile, res.model, echo);
    log << "best epoch " << res.best_epoch << " of " << res.epochs_run << '\n';
    report_metrics(res.report, run_dir / "val_metrics.tsv", log);
    if (!cfg.data.test_dir.empty()) {
        require_dir("data.test_dir", cfg.data.test_dir);
        const auto test = load_labeled(cfg.data.test_dir);
        report_metrics(evaluate(res.model, std::span<const LabeledSample>(test), cfg.evaluate.batch_size), run_dir / "test_metrics.tsv", log);
    }
}

inline void run_evaluate(const RunConfig& cfg, const fs::path& run_dir, std::ostream& log) {
    const std::string& dir = cfg.data.test_dir.empty() ? cfg.data.val_dir : cfg.data.test_dir;
    require_dir(cfg.data.test_dir.empty() ? "data.val_dir" : "data.test_dir", dir);
    auto model = load_seg_model<float>(resolve_model("evaluate.model", cfg.evaluate.model));
    const auto samples = load_labeled(dir);
    report_metrics(evaluate(model, std::span<const LabeledSample>(samples), cfg.evaluate.batch_size), run_dir / "metrics.tsv", log);
}

inline void run_infer_scene(const RunConfig& cfg, const fs::path& run_dir, std::ostream& log) {
    if (cfg.data.scene.empty()) throw DataError("data.scene is not set");
    if (!fs::is_regular_file(cfg.data.scene)) throw DataError("data.scene does not exist: " + cfg.data.scene);
    auto model = load_seg_model<float>(resolve_model("inference.model", cfg.inference.model));
    const auto res = infer_scene_file(as_tile_model(model), cfg.data.scene, run_dir / "labels.png", run_dir / "rendering.png",
                                      cfg.inference.scene);
    log << "scene " << res.plan.height << "x" << res.plan.width << ", " << res.plan.size() << " tiles"
        << (res.plan.padded ? " (reflect-padded)" : "") << '\n';
    std::ofstream legend(run_dir / "palette.tsv");
    legend << "class\tr\tg\tb\n";
    const auto& pal = default_palette();
    for (std::size_t c = 0; c < pal.size(); ++c) legend << c << '\t' << int(pal[c].r) << '\t' << int(pal[c].g) << '\t' << int(pal[c].b) << '\n';
}

/// Creates the run directory, echoes the effective config into it and runs
/// the selected workflow. Errors propagate to the caller.
inline fs::path dispatch(const RunConfig& cfg, std::ostream& log = std::cout) {
    const fs::path run_dir = make_run_dir(cfg);
    RunConfig copy = cfg;
    const std::string echo = Registry(copy).echo();
    write_text(run_dir / "config.txt", echo);
    log << "run directory " << run_dir.string() << '\n';
    if (cfg.mode == "synth") run_synth(cfg, run_dir, log);
    else if (cfg.mode == "pretrain") run_pretrain(cfg, run_dir, echo, log);
    else if (cfg.mode == "finetune") run_finetune(cfg, run_dir, echo, log);
    else if (cfg.mode == "evaluate") run_evaluate(cfg, run_dir, log);
    else if (cfg.mode == "infer-scene") run_infer_scene(cfg, run_dir, log);
    else throw ConfigError("unknown mode '" + cfg.mode + "'");
    return run_dir;
}

/// Runs `dispatch` and maps failures to exit codes, printing the message.
inline int run_guarded(const RunConfig& cfg, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    try {
        dispatch(cfg, log);
        return ok;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return io_error;
    } catch (const cv::Exception& e) {
        err << "error: " << e.what() << '\n';
        return io_error;
    }
}

}  // namespace di3cl::cli
