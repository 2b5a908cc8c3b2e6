#pragma once

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "di3cl/datapipe/synth.hpp"
#include "di3cl/downstream/finetune.hpp"
#include "di3cl/pretrain/config.hpp"
#include "di3cl/scene/infer.hpp"

namespace di3cl::cli {

struct DataPaths {
    std::string dir;        // unlabeled patches for pre-training
    std::string train_dir;  // labeled sets: <dir>/images and <dir>/masks
    std::string val_dir;
    std::string test_dir;
    std::string scene;      // raster for infer-scene
};

struct EvaluateOptions {
    std::string model;  // .seg archive or a fine-tune run directory
    int batch_size = 16;
};

struct InferenceOptions {
    std::string model;
    SceneOptions scene;
};

struct SynthOptions {
    int count = 4;
    SynthConfig scene;
};

struct RunConfig {
    std::string mode = "pretrain";
    std::uint64_t seed = 0;
    std::string run_root = "runs";
    std::string resume;  // pre-training checkpoint to continue from
    DataPaths data;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    EvaluateOptions evaluate;
    InferenceOptions inference;
    SynthOptions synth;

    /// Every section, regardless of mode, is checked before work starts.
    void validate() const {
        pretrain.validate();
        finetune.validate();
        inference.scene.validate();
        synth.scene.validate();
        if (synth.count < 1) throw ConfigError("synth.count must be >= 1");
        if (evaluate.batch_size < 1) throw ConfigError("evaluate.batch_size must be >= 1");
        if (run_root.empty()) throw ConfigError("run.root must be non-empty");
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename I>
I parse_integer(const std::string& key, const std::string& s) {
    I v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError(key + " expects an integer, got '" + s + "'");
    return v;
}

inline double parse_real(const std::string& key, const std::string& s) {
    double v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError(key + " expects a number, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(key + " expects true or false, got '" + s + "'");
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace detail

/// One settable key: a parser that writes into the bound RunConfig, a printer
/// for the config echo, and a one-line description for `--help`.
struct KeySpec {
    std::string key;
    std::string doc;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

/// Key table bound to one RunConfig instance.
class Registry {
public:
    explicit Registry(RunConfig& c) {
        using namespace detail;
        str("run.root", "output root for timestamped run directories (DI3CL_RUN_DIR wins)", c.run_root);
        u64("seed", "master seed for initialization, augmentation and shuffling", c.seed);

        str("data.dir", "directory of unlabeled patches (or its images/ subdirectory)", c.data.dir);
        str("data.train_dir", "labeled training set with images/ and masks/", c.data.train_dir);
        str("data.val_dir", "labeled validation set", c.data.val_dir);
        str("data.test_dir", "labeled held-out set", c.data.test_dir);
        str("data.scene", "grayscale raster for infer-scene", c.data.scene);

        // encoder.preset is applied before every other key; see apply().
        add("encoder.preset", "tiny | micro | resnet50 | resnet101 (sets backbone, heads and ema_m)",
            [&c](const std::string& v) { c.pretrain.encoder = EncoderConfig::from_preset(v); },
            [&c] { return c.pretrain.encoder.preset; });
        integer("encoder.cc_tap", "backbone stage feeding the contour-consistency branch (1-3)", c.pretrain.encoder.cc_tap);
        integer("encoder.head_hidden", "projection head hidden width", c.pretrain.encoder.heads.hidden);
        integer("encoder.head_out", "embedding dimension", c.pretrain.encoder.heads.out);
        real("encoder.ema_m", "target-network momentum", c.pretrain.encoder.ema_m);

        real("loss.tau", "InfoNCE temperature", c.pretrain.loss.tau);
        real("loss.alpha", "weight of the global term against the shallow term", c.pretrain.loss.alpha);
        real("loss.beta", "weight of the local regression term", c.pretrain.loss.beta);
        boolean("loss.enable_di", "enable the dynamic-instance local term", c.pretrain.loss.enable_di);
        boolean("loss.enable_cc", "enable the shallow contour-consistency term", c.pretrain.loss.enable_cc);
        boolean("loss.symmetric", "average both view orderings", c.pretrain.loss.symmetric);

        integer("pretrain.epochs", "pre-training epochs", c.pretrain.epochs);
        integer("pretrain.batch_size", "images per step", c.pretrain.batch_size);
        real("pretrain.base_lr", "peak learning rate of the cosine schedule", c.pretrain.base_lr);
        real("pretrain.min_lr", "final learning rate of the cosine schedule", c.pretrain.min_lr);
        real("pretrain.weight_decay", "L2 weight decay", c.pretrain.weight_decay);
        real("pretrain.momentum", "SGD momentum", c.pretrain.momentum);
        integer("pretrain.k_boxes", "local boxes per view pair", c.pretrain.k_boxes);
        real("pretrain.min_side", "minimum box side in source pixels", c.pretrain.min_side);
        integer("pretrain.bank_capacity", "entries per memory bank", c.pretrain.bank_capacity);
        boolean("pretrain.warmup", "fill the memory banks before the first update", c.pretrain.warmup);
        str("pretrain.resume", "checkpoint to resume from", c.resume);

        real("augment.scale_min", "smallest crop area fraction", c.pretrain.augment.scale_min);
        real("augment.scale_max", "largest crop area fraction", c.pretrain.augment.scale_max);
        real("augment.ratio_min", "smallest crop aspect ratio", c.pretrain.augment.ratio_min);
        real("augment.ratio_max", "largest crop aspect ratio", c.pretrain.augment.ratio_max);
        real("augment.hflip_prob", "horizontal flip probability", c.pretrain.augment.hflip_prob);
        real("augment.blur_prob", "Gaussian blur probability", c.pretrain.augment.blur_prob);
        real("augment.blur_sigma_min", "smallest blur sigma", c.pretrain.augment.blur_sigma_min);
        real("augment.blur_sigma_max", "largest blur sigma", c.pretrain.augment.blur_sigma_max);
        real("augment.brightness", "brightness jitter", c.pretrain.augment.brightness);
        real("augment.contrast", "contrast jitter", c.pretrain.augment.contrast);
        integer("augment.output_size", "view side in pixels (0: shorter source side)", c.pretrain.augment.output_size);
        integer("augment.max_resample", "view-pair retries before the center-crop fallback", c.pretrain.augment.max_resample);

        integer("finetune.num_classes", "segmentation classes", c.finetune.num_classes);
        real("finetune.base_lr", "initial learning rate of the poly schedule", c.finetune.base_lr);
        real("finetune.poly_power", "poly schedule exponent", c.finetune.poly_power);
        real("finetune.weight_decay", "L2 weight decay", c.finetune.weight_decay);
        real("finetune.momentum", "SGD momentum", c.finetune.momentum);
        integer("finetune.batch_size", "patches per iteration", c.finetune.batch_size);
        integer("finetune.epochs", "maximum epochs", c.finetune.epochs);
        integer("finetune.patience", "epochs without validation mIoU gain before stopping", c.finetune.patience);
        boolean("finetune.use_dice", "add the Dice loss to cross-entropy", c.finetune.use_dice);
        boolean("finetune.sixfold", "expand training data with rotations and flips", c.finetune.sixfold);
        integer("finetune.decoder_dim", "decoder channel width", c.finetune.decoder_dim);
        str("finetune.init", "'random' or a pre-training checkpoint / backbone export", c.finetune.init);

        str("evaluate.model", "segmentation model archive or fine-tune run directory", c.evaluate.model);
        integer("evaluate.batch_size", "patches per forward pass", c.evaluate.batch_size);

        str("inference.model", "segmentation model archive or fine-tune run directory", c.inference.model);
        integer("inference.window", "tile side", c.inference.scene.window);
        integer("inference.stride", "tile stride", c.inference.scene.stride);
        integer("inference.tile_batch", "tiles per forward pass", c.inference.scene.tile_batch);
        add("inference.blend", "uniform | cosine",
            [&c](const std::string& v) {
                if (v == "uniform") c.inference.scene.blend = Blend::uniform;
                else if (v == "cosine") c.inference.scene.blend = Blend::cosine;
                else throw ConfigError("inference.blend must be uniform or cosine");
            },
            [&c] { return std::string(c.inference.scene.blend == Blend::cosine ? "cosine" : "uniform"); });

        integer("synth.count", "scenes to generate", c.synth.count);
        integer("synth.scene_size", "scene side in pixels", c.synth.scene.scene_size);
        integer("synth.n_classes", "land-cover classes", c.synth.scene.n_classes);
        integer("synth.region_count", "Voronoi regions per scene", c.synth.scene.region_count);
        real("synth.speckle_looks", "speckle looks (gamma shape)", c.synth.scene.speckle_looks);
    }

    const std::vector<KeySpec>& keys() const { return keys_; }

    const KeySpec& find(const std::string& key) const {
        const auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("unknown config key '" + key + "'");
        return keys_[it->second];
    }

    /// Applies assignments in order, except that encoder.preset goes first so
    /// that explicit encoder keys refine the preset.
    void apply(const std::vector<std::pair<std::string, std::string>>& kv) const {
        for (const auto& [k, v] : kv) find(k);
        for (const auto& [k, v] : kv)
            if (k == "encoder.preset") find(k).set(v);
        for (const auto& [k, v] : kv)
            if (k != "encoder.preset") find(k).set(v);
    }

    std::string echo() const {
        std::ostringstream os;
        for (const auto& k : keys_) os << k.key << " = " << k.get() << '\n';
        return os.str();
    }

private:
    void add(std::string key, std::string doc, std::function<void(const std::string&)> set, std::function<std::string()> get) {
        index_[key] = keys_.size();
        keys_.push_back({std::move(key), std::move(doc), std::move(set), std::move(get)});
    }
    void str(const std::string& key, const std::string& doc, std::string& ref) {
        add(key, doc, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; });
    }
    void integer(const std::string& key, const std::string& doc, int& ref) {
        add(key, doc, [&ref, key](const std::string& v) { ref = detail::parse_integer<int>(key, v); }, [&ref] { return std::to_string(ref); });
    }
    void u64(const std::string& key, const std::string& doc, std::uint64_t& ref) {
        add(key, doc, [&ref, key](const std::string& v) { ref = detail::parse_integer<std::uint64_t>(key, v); },
            [&ref] { return std::to_string(ref); });
    }
    void real(const std::string& key, const std::string& doc, double& ref) {
        add(key, doc, [&ref, key](const std::string& v) { ref = detail::parse_real(key, v); }, [&ref] { return detail::format_double(ref); });
    }
    void boolean(const std::string& key, const std::string& doc, bool& ref) {
        add(key, doc, [&ref, key](const std::string& v) { ref = detail::parse_bool(key, v); },
            [&ref] { return std::string(ref ? "true" : "false"); });
    }

    std::vector<KeySpec> keys_;
    std::map<std::string, std::size_t> index_;
};

/// Line format: `section.key = value`; `#` starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": missing key");
        out.emplace_back(std::move(key), detail::trim(line.substr(eq + 1)));
    }
    return out;
}

/// Builds and validates the effective configuration: the file first, then
/// flag overrides in order. The seed is propagated to every workflow.
inline RunConfig parse_config(const std::string& file_text, const std::vector<std::pair<std::string, std::string>>& overrides = {},
                              const std::string& mode = "pretrain") {
    RunConfig cfg;
    cfg.mode = mode;
    auto kv = parse_config_text(file_text);
    kv.insert(kv.end(), overrides.begin(), overrides.end());
    Registry(cfg).apply(kv);
    cfg.pretrain.seed = cfg.seed;
    cfg.finetune.seed = cfg.seed;
    cfg.synth.scene.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// `<root>/<mode>-YYYYmmdd-HHMMSS[-n]`, created fresh; an existing directory
/// is never reused. DI3CL_RUN_DIR replaces the configured root.
inline std::filesystem::path make_run_dir(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    const char* env = std::getenv("DI3CL_RUN_DIR");
    const fs::path root = env && *env ? fs::path(env) : fs::path(cfg.run_root);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create run root " + root.string() + ": " + ec.message());
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const std::string base = cfg.mode + "-" + stamp;
    for (int n = 0; n < 10000; ++n) {
        const fs::path dir = root / (n == 0 ? base : base + "-" + std::to_string(n));
        if (fs::create_directory(dir, ec)) return dir;
        if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
    }
    throw IoError("could not find a free run directory name under " + root.string());
}

}  // namespace di3cl::cli
