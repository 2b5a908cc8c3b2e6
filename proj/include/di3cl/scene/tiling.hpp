#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/core/tensor.hpp"
#include "di3cl/datapipe/raster_io.hpp"
#include "di3cl/geometry.hpp"

namespace di3cl {

/// Window origins for a sliding-window pass. When the scene is smaller than
/// the window along an axis, the scene is reflect-padded up to the window and
/// `padded` is set; offsets then refer to the padded grid.
struct TilePlan {
    int window = 512, stride = 100;
    int height = 0, width = 0;             // original scene
    int grid_height = 0, grid_width = 0;   // after padding
    bool padded = false;
    std::vector<int> rows, cols;

    std::size_t size() const { return rows.size() * cols.size(); }
    /// Row-major tile order: index = row_index * cols.size() + col_index.
    std::pair<int, int> origin(std::size_t index) const { return {rows[index / cols.size()], cols[index % cols.size()]}; }
};

namespace detail {
inline std::vector<int> axis_offsets(int extent, int window, int stride) {
    std::vector<int> out;
    for (int o = 0;; o += stride) {
        if (o + window >= extent) {
            out.push_back(extent - window);
            break;
        }
        out.push_back(o);
    }
    return out;
}
}  // namespace detail

inline TilePlan plan_tiles(int height, int width, int window, int stride) {
    if (window < 1) throw ConfigError("inference.window must be >= 1");
    if (stride < 1 || stride > window) throw ConfigError("inference.stride must lie in [1, inference.window]");
    if (height < 1 || width < 1) throw GeometryError("scene must be non-empty");
    TilePlan p;
    p.window = window;
    p.stride = stride;
    p.height = height;
    p.width = width;
    p.grid_height = std::max(height, window);
    p.grid_width = std::max(width, window);
    p.padded = p.grid_height != height || p.grid_width != width;
    p.rows = detail::axis_offsets(p.grid_height, window, stride);
    p.cols = detail::axis_offsets(p.grid_width, window, stride);
    return p;
}

/// Mirror index into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

/// Pads a (1,1,H,W) image reflectively on the bottom and right to the plan grid.
template <typename T>
Image<T> pad_to_grid(const Image<T>& scene, const TilePlan& plan) {
    if (!plan.padded) return scene;
    Image<T> out = make_image<T>(plan.grid_height, plan.grid_width);
    for (int y = 0; y < plan.grid_height; ++y)
        for (int x = 0; x < plan.grid_width; ++x)
            out(0, 0, y, x) = scene(0, 0, reflect_index(y, plan.height), reflect_index(x, plan.width));
    return out;
}

enum class Blend { uniform, cosine };

/// Integer per-pixel blend weights for one window, row-major. Uniform weights
/// are all 1; cosine weights follow sin(pi (i + 0.5) / window) per axis.
inline std::vector<std::int64_t> blend_weights(int window, Blend blend) {
    std::vector<std::int64_t> w(static_cast<std::size_t>(window) * window, 1);
    if (blend == Blend::uniform) return w;
    std::vector<double> axis(static_cast<std::size_t>(window));
    for (int i = 0; i < window; ++i) axis[static_cast<std::size_t>(i)] = std::sin(std::numbers::pi * (i + 0.5) / window);
    for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x)
            w[static_cast<std::size_t>(y) * window + x] =
                std::max<std::int64_t>(1, std::llround(axis[static_cast<std::size_t>(y)] * axis[static_cast<std::size_t>(x)] * 65536.0));
    return w;
}

/// Probabilities are accumulated as integers (prob * 2^30, rounded, times the
/// blend weight) so that the sum, and hence the arg-max, does not depend on
/// tile order or on how the scene is split into bands.
inline constexpr double kProbScale = 1073741824.0;

inline std::int64_t quantize_prob(double p) { return std::llround(std::clamp(p, 0.0, 1.0) * kProbScale); }

/// Accumulator over rows [row0, row0 + rows) of the plan grid.
class BandAccumulator {
public:
    BandAccumulator(int classes, int row0, int rows, int width)
        : k_(classes), row0_(row0), rows_(rows), width_(width),
          acc_(static_cast<std::size_t>(classes) * rows * width, 0), hits_(static_cast<std::size_t>(rows) * width, 0) {}

    int row0() const { return row0_; }
    int rows() const { return rows_; }

    /// Adds image `n` of a (K, N, window, window) probability tensor at grid origin (oy, ox).
    template <typename T>
    void add(const Tensor<T>& probs, int n, int oy, int ox, const std::vector<std::int64_t>& weights) {
        const int win = probs.dim(2);
        if (probs.dim(0) != k_) throw ShapeError("tile class count does not match the accumulator");
        for (int y = 0; y < win; ++y) {
            const int ry = oy + y - row0_;
            if (ry < 0 || ry >= rows_) continue;
            for (int x = 0; x < win; ++x) {
                const std::int64_t w = weights[static_cast<std::size_t>(y) * win + x];
                const std::size_t px = static_cast<std::size_t>(ry) * width_ + static_cast<std::size_t>(ox + x);
                for (int c = 0; c < k_; ++c)
                    acc_[static_cast<std::size_t>(c) * rows_ * width_ + px] += quantize_prob(static_cast<double>(probs(c, n, y, x))) * w;
                ++hits_[px];
            }
        }
    }

    /// Arg-max of rows [from, to) (grid coordinates) into `out`, cropped to its
    /// size; ties go to the lowest class index.
    void resolve(int from, int to, LabelMap& out) const {
        for (int gy = std::max(from, row0_); gy < std::min(to, row0_ + rows_); ++gy) {
            if (gy >= out.height) break;
            const std::size_t base = static_cast<std::size_t>(gy - row0_) * width_;
            for (int x = 0; x < out.width; ++x) {
                if (hits_[base + x] == 0) throw StateError("incomplete tile plan: pixel (" + std::to_string(gy) + ", " + std::to_string(x) + ") not covered");
                int best = 0;
                std::int64_t bv = acc_[base + x];
                for (int c = 1; c < k_; ++c) {
                    const std::int64_t v = acc_[static_cast<std::size_t>(c) * rows_ * width_ + base + x];
                    if (v > bv) {
                        bv = v;
                        best = c;
                    }
                }
                out.at(gy, x) = static_cast<std::uint8_t>(best);
            }
        }
    }

    /// Moves the band down so it starts at `new_row0`, keeping the overlapping
    /// rows and zeroing the rest.
    void shift_to(int new_row0) {
        const int d = new_row0 - row0_;
        if (d < 0) throw StateError("band accumulator cannot move up");
        if (d == 0) return;
        const std::size_t keep = static_cast<std::size_t>(std::max(0, rows_ - d)) * width_;
        const std::size_t plane = static_cast<std::size_t>(rows_) * width_;
        const std::size_t skip = std::min(plane, static_cast<std::size_t>(d) * width_);
        for (int c = 0; c < k_; ++c) {
            auto* a = acc_.data() + static_cast<std::size_t>(c) * plane;
            std::copy(a + skip, a + skip + keep, a);
            std::fill(a + keep, a + plane, 0);
        }
        std::copy(hits_.begin() + static_cast<std::ptrdiff_t>(skip), hits_.begin() + static_cast<std::ptrdiff_t>(skip + keep), hits_.begin());
        std::fill(hits_.begin() + static_cast<std::ptrdiff_t>(keep), hits_.end(), 0);
        row0_ = new_row0;
    }

private:
    int k_, row0_, rows_, width_;
    std::vector<std::int64_t> acc_;
    std::vector<std::int32_t> hits_;
};

/// Full-memory stitching of one (K, 1, window, window) probability tensor per
/// planned tile, in plan order. `order` optionally permutes the order in
/// which tiles are accumulated.
template <typename T>
LabelMap stitch(const std::vector<Tensor<T>>& tile_probs, const TilePlan& plan, Blend blend = Blend::uniform,
                const std::vector<std::size_t>& order = {}) {
    if (tile_probs.size() != plan.size())
        throw StateError("incomplete tile plan: expected " + std::to_string(plan.size()) + " tiles, got " + std::to_string(tile_probs.size()));
    if (tile_probs.empty()) throw StateError("incomplete tile plan: no tiles");
    const auto weights = blend_weights(plan.window, blend);
    BandAccumulator acc(tile_probs.front().dim(0), 0, plan.grid_height, plan.grid_width);
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const std::size_t t = order.empty() ? i : order.at(i);
        if (tile_probs[t].dim(2) != plan.window || tile_probs[t].dim(3) != plan.window) throw ShapeError("tile size does not match the plan window");
        const auto [oy, ox] = plan.origin(t);
        acc.add(tile_probs[t], 0, oy, ox, weights);
    }
    LabelMap out(plan.height, plan.width);
    acc.resolve(0, plan.grid_height, out);
    return out;
}

}  // namespace di3cl
