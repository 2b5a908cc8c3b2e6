#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "di3cl/datapipe/raster_io.hpp"
#include "di3cl/downstream/finetune.hpp"
#include "di3cl/scene/tiling.hpp"

namespace di3cl {

/// Maps a (1, N, window, window) batch of tiles to (K, N, window, window)
/// class probabilities.
using TileModel = std::function<Tensor<float>(const Tensor<float>&)>;

struct SceneOptions {
    int window = 512;
    int stride = 100;
    int tile_batch = 4;
    Blend blend = Blend::uniform;

    void validate() const {
        if (window < 1) throw ConfigError("inference.window must be >= 1");
        if (stride < 1 || stride > window) throw ConfigError("inference.stride must lie in [1, inference.window]");
        if (tile_batch < 1) throw ConfigError("inference.tile_batch must be >= 1");
    }
};

struct SceneResult {
    LabelMap labels;
    TilePlan plan;
    std::size_t peak_accumulator_rows = 0;
};

inline std::string tile_context(int row, int col) {
    return "tile at row " + std::to_string(row) + ", col " + std::to_string(col) + ": ";
}

/// Streams tile rows top to bottom. The accumulator spans one window of grid
/// rows; rows above the next tile row's origin are final and resolved before
/// the band moves down.
inline SceneResult infer_scene(const TileModel& model, const Image<float>& scene, const SceneOptions& opt) {
    opt.validate();
    SceneResult res;
    res.plan = plan_tiles(scene.dim(2), scene.dim(3), opt.window, opt.stride);
    const TilePlan& plan = res.plan;
    const Image<float> grid = pad_to_grid(scene, plan);
    const auto weights = blend_weights(plan.window, opt.blend);
    res.labels = LabelMap(plan.height, plan.width);

    std::optional<BandAccumulator> band;
    const int w = plan.window;
    for (std::size_t r = 0; r < plan.rows.size(); ++r) {
        const int oy = plan.rows[r];
        if (band) band->shift_to(oy);
        for (std::size_t c0 = 0; c0 < plan.cols.size(); c0 += static_cast<std::size_t>(opt.tile_batch)) {
            const std::size_t c1 = std::min(plan.cols.size(), c0 + static_cast<std::size_t>(opt.tile_batch));
            Tensor<float> batch(1, static_cast<int>(c1 - c0), w, w);
            for (std::size_t c = c0; c < c1; ++c)
                for (int y = 0; y < w; ++y)
                    std::copy_n(grid.data() + grid.offset(0, 0, oy + y, plan.cols[c]), w,
                                batch.data() + batch.offset(0, static_cast<int>(c - c0), y, 0));
            Tensor<float> probs;
            try {
                probs = model(batch);
            } catch (const Error& e) {
                throw_error(e.kind(), tile_context(oy, plan.cols[c0]) + e.what());
            } catch (const std::exception& e) {
                throw IoError(tile_context(oy, plan.cols[c0]) + e.what());
            }
            if (probs.dim(1) != batch.dim(1) || probs.dim(2) != w || probs.dim(3) != w)
                throw ShapeError("tile model returned a wrongly shaped probability tensor");
            if (!band) band.emplace(probs.dim(0), oy, w, plan.grid_width);
            for (std::size_t c = c0; c < c1; ++c) band->add(probs, static_cast<int>(c - c0), oy, plan.cols[c], weights);
        }
        const int final_to = r + 1 < plan.rows.size() ? plan.rows[r + 1] : plan.grid_height;
        band->resolve(oy, final_to, res.labels);
        res.peak_accumulator_rows = static_cast<std::size_t>(band->rows());
    }
    return res;
}

/// Wraps a segmentation model as a tile model (running-stat inference).
template <typename T>
TileModel as_tile_model(SegModel<T>& model) {
    return [&model](const Tensor<float>& batch) { return predict_probs(model, batch.template cast<T>()).template cast<float>(); };
}

/// Reads a grayscale raster, runs the streaming pass and writes the indexed
/// label raster plus an RGB rendering.
inline SceneResult infer_scene_file(const TileModel& model, const std::filesystem::path& scene_path,
                                    const std::filesystem::path& labels_path, const std::filesystem::path& rendering_path,
                                    const SceneOptions& opt) {
    const Image<float> scene = load_patch(scene_path);
    SceneResult res = infer_scene(model, scene, opt);
    save_labels(labels_path, res.labels);
    save_rendering(rendering_path, res.labels);
    return res;
}

}  // namespace di3cl
