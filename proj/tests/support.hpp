// Shared fixtures and independent reference implementations for the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "di3cl/datapipe/synth.hpp"
#include "di3cl/downstream/finetune.hpp"
#include "di3cl/pretrain/trainer.hpp"
#include "di3cl/scene/infer.hpp"

namespace di3cl::testing {

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("di3cl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::vector<LabeledSample> synth_labeled(int n, std::uint64_t seed_base, int size = 64, int classes = 4) {
    std::vector<LabeledSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SynthConfig c;
        c.scene_size = size;
        c.n_classes = classes;
        c.region_count = std::max(8, classes);
        c.seed = seed_base + static_cast<std::uint64_t>(i);
        auto s = synth_scene(c);
        out.push_back({std::move(s.image), std::move(s.mask)});
    }
    return out;
}

inline std::vector<Image<float>> synth_unlabeled(int n, std::uint64_t seed_base, int size = 64) {
    std::vector<Image<float>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SynthConfig c;
        c.scene_size = size;
        c.seed = seed_base + static_cast<std::uint64_t>(i);
        out.push_back(synth_scene(c).image);
    }
    return out;
}

/// Small pre-training config on 64 px patches.
inline PretrainConfig desk_pretrain_config(const std::string& preset = "tiny") {
    PretrainConfig cfg;
    cfg.encoder = EncoderConfig::from_preset(preset);
    cfg.min_side = 16;
    return cfg;
}

// ---------------------------------------------------------------------------
// Metrics computed directly from pixel pairs, without a confusion matrix.

struct BruteMetrics {
    double oa = 0, kappa = 0, miou = 0;
    std::vector<double> f1, iou;
};

inline BruteMetrics brute_force_metrics(const std::vector<LabelMap>& truth, const std::vector<LabelMap>& pred, int k) {
    std::int64_t total = 0, correct = 0;
    std::vector<std::int64_t> t_count(static_cast<std::size_t>(k)), p_count(static_cast<std::size_t>(k)), both(static_cast<std::size_t>(k));
    for (std::size_t m = 0; m < truth.size(); ++m)
        for (std::size_t i = 0; i < truth[m].data.size(); ++i) {
            const int t = truth[m].data[i], p = pred[m].data[i];
            if (t == LabelMap::kIgnore) continue;
            ++total;
            ++t_count[static_cast<std::size_t>(t)];
            ++p_count[static_cast<std::size_t>(p)];
            if (t == p) {
                ++correct;
                ++both[static_cast<std::size_t>(t)];
            }
        }
    BruteMetrics r;
    r.oa = double(correct) / double(total);
    double pe = 0;
    for (int c = 0; c < k; ++c) pe += double(t_count[static_cast<std::size_t>(c)]) * double(p_count[static_cast<std::size_t>(c)]);
    pe /= double(total) * double(total);
    r.kappa = pe < 1 ? (r.oa - pe) / (1 - pe) : 1.0;
    double sum = 0;
    int defined = 0;
    for (int c = 0; c < k; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const double uni = double(t_count[ci] + p_count[ci] - both[ci]);
        if (uni == 0) {
            r.iou.push_back(std::nan(""));
            r.f1.push_back(std::nan(""));
            continue;
        }
        r.iou.push_back(double(both[ci]) / uni);
        r.f1.push_back(2.0 * double(both[ci]) / double(t_count[ci] + p_count[ci]));
        sum += r.iou.back();
        ++defined;
    }
    r.miou = sum / defined;
    return r;
}

// ---------------------------------------------------------------------------
// Memory bank reference: a bounded FIFO list.

struct ListBank {
    std::size_t capacity;
    std::deque<std::vector<double>> rows;
    void enqueue(const std::vector<double>& r) {
        rows.push_back(r);
        if (rows.size() > capacity) rows.pop_front();
    }
};

// ---------------------------------------------------------------------------
// Scene stitching reference: every tile's probabilities summed into a
// full-scene double accumulator, divided by coverage, then arg-max.

inline LabelMap reference_stitch(const std::vector<Tensor<float>>& tiles, const TilePlan& plan) {
    const int k = tiles.front().dim(0), w = plan.window;
    std::vector<double> acc(static_cast<std::size_t>(k) * plan.grid_height * plan.grid_width, 0.0);
    std::vector<int> cover(static_cast<std::size_t>(plan.grid_height) * plan.grid_width, 0);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const auto [oy, ox] = plan.origin(t);
        for (int y = 0; y < w; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t px = static_cast<std::size_t>(oy + y) * plan.grid_width + static_cast<std::size_t>(ox + x);
                ++cover[px];
                for (int c = 0; c < k; ++c)
                    acc[static_cast<std::size_t>(c) * plan.grid_height * plan.grid_width + px] += tiles[t](c, 0, y, x);
            }
    }
    LabelMap out(plan.height, plan.width);
    for (int y = 0; y < plan.height; ++y)
        for (int x = 0; x < plan.width; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * plan.grid_width + static_cast<std::size_t>(x);
            int best = 0;
            double bv = -1;
            for (int c = 0; c < k; ++c) {
                const double v = acc[static_cast<std::size_t>(c) * plan.grid_height * plan.grid_width + px] / cover[px];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    return out;
}

/// Probabilities of every planned tile, computed one tile at a time.
inline std::vector<Tensor<float>> tile_probabilities(const TileModel& model, const Image<float>& scene, const TilePlan& plan) {
    const Image<float> grid = pad_to_grid(scene, plan);
    std::vector<Tensor<float>> out;
    for (std::size_t t = 0; t < plan.size(); ++t) {
        const auto [oy, ox] = plan.origin(t);
        Tensor<float> tile(1, 1, plan.window, plan.window);
        for (int y = 0; y < plan.window; ++y)
            std::copy_n(grid.data() + grid.offset(0, 0, oy + y, ox), plan.window, tile.data() + tile.offset(0, 0, y, 0));
        out.push_back(model(tile));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference check of the combined pre-training objective.

struct GradCheckResult {
    std::size_t params = 0;
    double max_rel_error = 0;
    int directions = 0;
};

/// Compares the analytic directional derivative of the combined loss with a
/// central difference along `directions` random unit directions.
inline GradCheckResult gradient_check(std::uint64_t seed, int directions, double h = 1e-6) {
    PretrainConfig cfg = desk_pretrain_config("micro");
    cfg.encoder.heads = {4, 4};
    cfg.batch_size = 4;
    cfg.bank_capacity = 8;
    cfg.k_boxes = 2;
    cfg.seed = seed;
    cfg.augment.output_size = 64;
    TrainState<double> st(cfg);
    std::vector<Image<double>> imgs;
    for (const auto& im : synth_unlabeled(4, 77 + seed)) imgs.push_back(im.cast<double>());
    Rng rng = derive_rng(seed, 99);
    const auto batch = make_pair_batch<double>(imgs, cfg, rng);

    // Fill the banks with unit rows so every term is active.
    RowMatrix<double> bank_rows = RowMatrix<double>::Random(8, 4);
    st.deep_bank.enqueue(nn::l2_normalize(bank_rows));
    st.shallow_bank.enqueue(nn::l2_normalize(RowMatrix<double>(bank_rows.reverse())));

    auto params = st.pair.trainable();
    GradCheckResult res;
    res.params = parameter_count(params);
    nn::zero_grad(params);
    compute_objective(st.pair, st.deep_bank, st.shallow_bank, batch, cfg.loss, true);
    std::vector<AlignedVector<double>> grad;
    for (auto* p : params) grad.push_back(p->grad);

    auto loss_at = [&](const std::vector<std::vector<double>>& dir, double step) {
        std::vector<AlignedVector<double>> saved;
        for (auto* p : params) saved.push_back(p->value);
        for (std::size_t i = 0; i < params.size(); ++i)
            for (std::size_t j = 0; j < params[i]->value.size(); ++j) params[i]->value[j] += step * dir[i][j];
        const double l = compute_objective(st.pair, st.deep_bank, st.shallow_bank, batch, cfg.loss, false).report.total;
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
        return l;
    };

    Rng drng = derive_rng(seed, 98);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < directions; ++d) {
        std::vector<std::vector<double>> dir;
        double norm = 0;
        for (auto* p : params) {
            dir.emplace_back(p->value.size());
            for (auto& v : dir.back()) {
                v = normal(drng);
                norm += v * v;
            }
        }
        norm = std::sqrt(norm);
        double analytic = 0;
        for (std::size_t i = 0; i < params.size(); ++i)
            for (std::size_t j = 0; j < dir[i].size(); ++j) {
                dir[i][j] /= norm;
                analytic += grad[i][j] * dir[i][j];
            }
        const double numeric = (loss_at(dir, h) - loss_at(dir, -h)) / (2 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        res.max_rel_error = std::max(res.max_rel_error, rel);
        ++res.directions;
    }
    return res;
}

}  // namespace di3cl::testing
