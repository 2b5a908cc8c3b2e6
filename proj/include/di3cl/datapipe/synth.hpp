#pragma once

// Synthetic speckled scenes with pixel-exact ground truth. Stands in for real
// SAR patch collections in tests and desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/core/rng.hpp"
#include "di3cl/datapipe/raster_io.hpp"

namespace di3cl {

struct SynthConfig {
    int scene_size = 64;
    int n_classes = 4;
    int region_count = 8;
    double speckle_looks = 4.0;
    std::uint64_t seed = 0;

    static constexpr double kMaxLooks = 1e6;

    void validate() const {
        if (scene_size < 8) throw ConfigError("synth.scene_size must be >= 8");
        if (n_classes < 2 || n_classes > 254) throw ConfigError("synth.n_classes must lie in [2, 254]");
        if (region_count < n_classes) throw ConfigError("synth.region_count must be >= synth.n_classes");
        if (!(speckle_looks > 0.0)) throw ConfigError("synth.speckle_looks must be > 0");
    }
};

/// Mean backscatter of class c: increasing with c, so class 0 (water-like) is
/// darkest and the last class (road-like) brightest.
inline double class_reflectivity(int c, int n_classes) {
    return 0.06 + 0.30 * static_cast<double>(c) / static_cast<double>(n_classes - 1);
}

struct SynthScene {
    Image<float> image;
    Image<float> clean;  // noiseless reflectivity (speckle-free)
    LabelMap mask;
};

/// Nearest-seed regions with random classes (every class used at least once),
/// low-reflectivity blobs of class 0 and thin bright curvilinear strips of the
/// last class, multiplied by unit-mean gamma speckle with shape = looks.
inline SynthScene synth_scene(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng = derive_rng(cfg.seed, 0x5EED5CE7E);
    const int s = cfg.scene_size;
    const int n = cfg.n_classes;

    struct Seed {
        double x, y;
        std::uint8_t cls;
    };
    std::vector<std::uint8_t> classes(static_cast<std::size_t>(cfg.region_count));
    for (int r = 0; r < cfg.region_count; ++r)
        classes[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(r < n ? r : static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n))));
    shuffle(classes, rng);
    std::vector<Seed> seeds;
    for (int r = 0; r < cfg.region_count; ++r)
        seeds.push_back({uniform(rng, 0.0, double(s)), uniform(rng, 0.0, double(s)), classes[static_cast<std::size_t>(r)]});

    LabelMap mask(s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double best = 1e300;
            std::uint8_t cls = 0;
            for (const auto& sd : seeds) {
                const double d = (x + 0.5 - sd.x) * (x + 0.5 - sd.x) + (y + 0.5 - sd.y) * (y + 0.5 - sd.y);
                if (d < best) {
                    best = d;
                    cls = sd.cls;
                }
            }
            mask.at(y, x) = cls;
        }

    // Water-like blobs.
    const int blobs = 1 + static_cast<int>(uniform_index(rng, 2));
    for (int b = 0; b < blobs; ++b) {
        const double cx = uniform(rng, 0.0, double(s)), cy = uniform(rng, 0.0, double(s));
        const double rx = uniform(rng, 0.05, 0.15) * s, ry = uniform(rng, 0.05, 0.15) * s;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) mask.at(y, x) = 0;
            }
    }

    // Road-like strips: quadratic Bezier curves of width ~2 px.
    const int roads = 1 + static_cast<int>(uniform_index(rng, 2));
    const auto road = static_cast<std::uint8_t>(n - 1);
    for (int r = 0; r < roads; ++r) {
        const double x0 = uniform(rng, 0.0, double(s)), y0 = 0.0;
        const double x2 = uniform(rng, 0.0, double(s)), y2 = double(s);
        const double x1 = uniform(rng, 0.0, double(s)), y1 = uniform(rng, 0.0, double(s));
        const double half_width = uniform(rng, 0.8, 1.5);
        const int steps = 4 * s;
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            const double px = (1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * x1 + t * t * x2;
            const double py = (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * y1 + t * t * y2;
            const int lo_x = std::max(0, static_cast<int>(std::floor(px - half_width)));
            const int hi_x = std::min(s - 1, static_cast<int>(std::ceil(px + half_width)));
            const int lo_y = std::max(0, static_cast<int>(std::floor(py - half_width)));
            const int hi_y = std::min(s - 1, static_cast<int>(std::ceil(py + half_width)));
            for (int y = lo_y; y <= hi_y; ++y)
                for (int x = lo_x; x <= hi_x; ++x) {
                    const double dx = x + 0.5 - px, dy = y + 0.5 - py;
                    if (dx * dx + dy * dy <= half_width * half_width) mask.at(y, x) = road;
                }
        }
    }

    SynthScene scene{make_image<float>(s, s), make_image<float>(s, s), mask};
    const double looks = std::min(cfg.speckle_looks, SynthConfig::kMaxLooks);
    std::gamma_distribution<double> speckle(looks, 1.0 / looks);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double r = class_reflectivity(mask.at(y, x), n);
            scene.clean(0, 0, y, x) = static_cast<float>(r);
            scene.image(0, 0, y, x) = static_cast<float>(r * speckle(rng));
        }
    return scene;
}

}  // namespace di3cl
