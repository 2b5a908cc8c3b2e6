#pragma once

// Geometry-tracked augmentation and the box plumbing behind the local
// (dynamic-instance) consistency loss: crops are recorded so that any region of
// the source image can be located in both augmented views and, from there, on
// the feature maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/core/rng.hpp"
#include "di3cl/core/tensor.hpp"

namespace di3cl {

/// Single-channel image, shape (1, 1, H, W).
template <typename T>
using Image = Tensor<T>;

template <typename T>
Image<T> make_image(int h, int w, T fill = T(0)) {
    return Image<T>(1, 1, h, w, fill);
}

struct CropRect {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const CropRect&) const = default;
};

struct Photometric {
    double brightness = 1.0;  // multiplicative gain
    double contrast = 1.0;    // scale about the view mean
    double blur_sigma = 0.0;  // 0 disables the Gaussian blur
    bool operator==(const Photometric&) const = default;
};

struct ViewParams {
    CropRect crop;
    int output_size = 0;
    bool hflip = false;
    Photometric photometric;
    bool operator==(const ViewParams&) const = default;
};

/// Axis-aligned box. The frame (source px, view px, feature cells) is implied
/// by the function that produced it.
struct Box {
    double x = 0, y = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
};

using BoxSet = std::vector<Box>;

struct AugmentConfig {
    double scale_min = 0.2;
    double scale_max = 1.0;
    double ratio_min = 3.0 / 4.0;
    double ratio_max = 4.0 / 3.0;
    double hflip_prob = 0.5;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double brightness = 0.4;  // gain drawn from [1 - b, 1 + b]
    double contrast = 0.4;
    int output_size = 0;      // 0: min(H, W) of the source
    int max_resample = 10;    // view-pair retries before the center-crop fallback

    void validate() const {
        if (!(scale_min > 0.0) || scale_max > 1.0) throw ConfigError("augment scale range must lie in (0, 1]");
        if (scale_min > scale_max) throw ConfigError("augment.scale_min must be <= augment.scale_max");
        if (!(ratio_min > 0.0) || ratio_min > ratio_max) throw ConfigError("augment ratio range is invalid");
        if (hflip_prob < 0 || hflip_prob > 1 || blur_prob < 0 || blur_prob > 1)
            throw ConfigError("augment probabilities must lie in [0, 1]");
        if (blur_sigma_min < 0 || blur_sigma_min > blur_sigma_max) throw ConfigError("augment blur sigma range is invalid");
        if (brightness < 0 || brightness >= 1 || contrast < 0 || contrast >= 1)
            throw ConfigError("augment brightness/contrast jitter must lie in [0, 1)");
        if (output_size < 0) throw ConfigError("augment.output_size must be >= 0");
        if (max_resample < 0) throw ConfigError("augment.max_resample must be >= 0");
    }
};

/// Draws a random resized crop, flip flag and photometric parameters.
inline ViewParams sample_view_params(Rng& rng, const AugmentConfig& cfg, int src_h, int src_w) {
    cfg.validate();
    const double area = static_cast<double>(src_h) * src_w;
    if (cfg.scale_min * area < 1.0) throw ConfigError("source image too small for augment.scale_min");

    ViewParams p;
    p.output_size = cfg.output_size > 0 ? cfg.output_size : std::min(src_h, src_w);

    bool found = false;
    const double log_r0 = std::log(cfg.ratio_min), log_r1 = std::log(cfg.ratio_max);
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const double target = area * uniform(rng, cfg.scale_min, cfg.scale_max);
        const double ratio = std::exp(uniform(rng, log_r0, log_r1));
        const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
        const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
        const double s = static_cast<double>(w) * h / area;
        if (w < 1 || h < 1 || w > src_w || h > src_h || s < cfg.scale_min || s > cfg.scale_max) continue;
        p.crop = {static_cast<int>(uniform_index(rng, static_cast<std::size_t>(src_w - w + 1))),
                  static_cast<int>(uniform_index(rng, static_cast<std::size_t>(src_h - h + 1))), w, h};
        found = true;
    }
    if (!found) {
        // Largest centered square whose area fraction stays within the scale range.
        int side = std::min(src_h, src_w);
        const int cap = static_cast<int>(std::floor(std::sqrt(cfg.scale_max * area)));
        side = std::max(1, std::min(side, cap));
        p.crop = {(src_w - side) / 2, (src_h - side) / 2, side, side};
    }

    p.hflip = bernoulli(rng, cfg.hflip_prob);
    p.photometric.brightness = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness);
    p.photometric.contrast = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
    p.photometric.blur_sigma = bernoulli(rng, cfg.blur_prob) ? uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max) : 0.0;
    return p;
}

namespace detail {

template <typename T>
void gaussian_blur_inplace(Image<T>& img, double sigma) {
    if (sigma <= 0.0) return;
    const int h = img.dim(2), w = img.dim(3);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * img(0, 0, y, reflect(x + i, w));
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
            img(0, 0, y, x) = static_cast<T>(acc);
        }
}

}  // namespace detail

/// Crop, optional horizontal flip, bilinear resize to output_size, then the
/// photometric transform. Pixel centers follow the half-pixel convention, so an
/// integer-aligned crop at its native size is returned verbatim.
template <typename T>
Image<T> apply_view(const Image<T>& image, const ViewParams& p) {
    const int src_h = image.dim(2), src_w = image.dim(3);
    const auto& c = p.crop;
    if (c.w < 1 || c.h < 1 || c.x < 0 || c.y < 0 || c.x + c.w > src_w || c.y + c.h > src_h)
        throw GeometryError("crop rectangle exceeds image bounds");
    if (p.output_size < 1) throw GeometryError("view output_size must be >= 1");

    const int s = p.output_size;
    Image<T> out = make_image<T>(s, s);
    const double sx = static_cast<double>(c.w) / s, sy = static_cast<double>(c.h) / s;
    for (int oy = 0; oy < s; ++oy) {
        const double fy = std::clamp(c.y + (oy + 0.5) * sy - 0.5, double(c.y), double(c.y + c.h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, c.y + c.h - 1);
        const double ty = fy - y0;
        for (int ox = 0; ox < s; ++ox) {
            const double fx = std::clamp(c.x + (ox + 0.5) * sx - 0.5, double(c.x), double(c.x + c.w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, c.x + c.w - 1);
            const double tx = fx - x0;
            const double v = (1 - ty) * ((1 - tx) * image(0, 0, y0, x0) + tx * image(0, 0, y0, x1)) +
                             ty * ((1 - tx) * image(0, 0, y1, x0) + tx * image(0, 0, y1, x1));
            out(0, 0, oy, p.hflip ? s - 1 - ox : ox) = static_cast<T>(v);
        }
    }

    detail::gaussian_blur_inplace(out, p.photometric.blur_sigma);
    const auto& ph = p.photometric;
    if (ph.brightness != 1.0 || ph.contrast != 1.0) {
        double mean = 0;
        for (T v : out.span()) mean += v;
        mean /= static_cast<double>(out.size());
        for (T& v : out.span()) {
            const double b = v * ph.brightness;
            v = static_cast<T>((b - mean * ph.brightness) * ph.contrast + mean * ph.brightness);
        }
    }
    return out;
}

/// Intersection of the two crop rectangles in source pixels, or nullopt when
/// it is empty or either side is shorter than `min_side`.
inline std::optional<Box> intersection_region(const ViewParams& p1, const ViewParams& p2, double min_side = 1.0) {
    const auto& a = p1.crop;
    const auto& b = p2.crop;
    const int x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
    const double w = x1 - x0, h = y1 - y0;
    if (w <= 0 || h <= 0 || w < min_side || h < min_side) return std::nullopt;
    return Box{double(x0), double(y0), w, h};
}

/// K boxes inside `region`, sides uniform in [min_side, region side], position
/// uniform over the placements that keep the box inside.
inline BoxSet sample_boxes(const Box& region, int k, double min_side, Rng& rng) {
    if (k < 1) throw GeometryError("sample_boxes: K must be >= 1");
    if (region.w < min_side || region.h < min_side)
        throw GeometryError("sample_boxes: degenerate region smaller than min_side");
    BoxSet boxes;
    boxes.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const double w = uniform(rng, min_side, region.w);
        const double h = uniform(rng, min_side, region.h);
        const double x = region.x + uniform(rng, 0.0, region.w - w);
        const double y = region.y + uniform(rng, 0.0, region.h - h);
        boxes.push_back({x, y, w, h});
    }
    return boxes;
}

/// Source-frame box to view-pixel frame: crop translation, resize scaling, then
/// horizontal reflection about the view width.
inline Box map_box_to_view(const Box& b, const ViewParams& p) {
    const double sx = static_cast<double>(p.output_size) / p.crop.w;
    const double sy = static_cast<double>(p.output_size) / p.crop.h;
    Box v{(b.x - p.crop.x) * sx, (b.y - p.crop.y) * sy, b.w * sx, b.h * sy};
    if (p.hflip) v.x = p.output_size - (v.x + v.w);
    return v;
}

/// Inverse of map_box_to_view.
inline Box map_box_to_source(const Box& v, const ViewParams& p) {
    const double sx = static_cast<double>(p.output_size) / p.crop.w;
    const double sy = static_cast<double>(p.output_size) / p.crop.h;
    const double vx = p.hflip ? p.output_size - (v.x + v.w) : v.x;
    return {vx / sx + p.crop.x, v.y / sy + p.crop.y, v.w / sx, v.h / sy};
}

inline Box box_to_feature_coords(const Box& b, int stride) {
    if (stride < 1) throw GeometryError("stride must be >= 1");
    const double s = stride;
    return {b.x / s, b.y / s, b.w / s, b.h / s};
}

/// One bilinear tap: flat index into an H*W plane and its weight.
struct RoiTap {
    int index;
    double weight;
};

/// Sampling taps of a 1x1 RoI-Align over an H x W grid: 2x2 points at the box's
/// quarter positions, each bilinearly interpolated with cell centers at +0.5,
/// weights already divided by the point count. Boxes thinner than one cell are
/// widened to one cell about their center.
inline std::vector<RoiTap> roi_align_taps(Box b, int h, int w) {
    if (b.w < 1.0) {
        b.x += b.w / 2 - 0.5;
        b.w = 1.0;
    }
    if (b.h < 1.0) {
        b.y += b.h / 2 - 0.5;
        b.h = 1.0;
    }
    if (b.x >= w || b.y >= h || b.x + b.w <= 0 || b.y + b.h <= 0)
        throw GeometryError("roi_align: box lies entirely outside the feature grid");

    std::vector<RoiTap> taps;
    taps.reserve(16);
    for (int iy = 0; iy < 2; ++iy) {
        const double v = std::clamp(b.y + b.h * (0.25 + 0.5 * iy) - 0.5, 0.0, double(h - 1));
        const int y0 = static_cast<int>(std::floor(v));
        const int y1 = std::min(y0 + 1, h - 1);
        const double ty = v - y0;
        for (int ix = 0; ix < 2; ++ix) {
            const double u = std::clamp(b.x + b.w * (0.25 + 0.5 * ix) - 0.5, 0.0, double(w - 1));
            const int x0 = static_cast<int>(std::floor(u));
            const int x1 = std::min(x0 + 1, w - 1);
            const double tx = u - x0;
            taps.push_back({y0 * w + x0, 0.25 * (1 - ty) * (1 - tx)});
            taps.push_back({y0 * w + x1, 0.25 * (1 - ty) * tx});
            taps.push_back({y1 * w + x0, 0.25 * ty * (1 - tx)});
            taps.push_back({y1 * w + x1, 0.25 * ty * tx});
        }
    }
    return taps;
}

/// 1x1 RoI-Align of image `n` of a (C, N, H, W) feature batch; box in feature cells.
template <typename T>
std::vector<T> roi_align_1x1(const Tensor<T>& fmap, int n, const Box& b) {
    const int c = fmap.dim(0), h = fmap.dim(2), w = fmap.dim(3);
    const auto taps = roi_align_taps(b, h, w);
    std::vector<T> out(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = fmap.data() + fmap.offset(ch, n, 0, 0);
        double acc = 0;
        for (const auto& t : taps) acc += t.weight * plane[t.index];
        out[static_cast<std::size_t>(ch)] = static_cast<T>(acc);
    }
    return out;
}

/// C x H x W convenience form (a batch of one).
template <typename T>
std::vector<T> roi_align_1x1(const Tensor<T>& fmap, const Box& b) {
    return roi_align_1x1(fmap, 0, b);
}

/// Scatters `grad` (length C) back onto image `n` of a feature-gradient batch.
template <typename T>
void roi_align_1x1_backward(Tensor<T>& grad_fmap, int n, const Box& b, std::span<const T> grad) {
    const int c = grad_fmap.dim(0), h = grad_fmap.dim(2), w = grad_fmap.dim(3);
    const auto taps = roi_align_taps(b, h, w);
    for (int ch = 0; ch < c; ++ch) {
        T* plane = grad_fmap.data() + grad_fmap.offset(ch, n, 0, 0);
        for (const auto& t : taps) plane[t.index] += static_cast<T>(t.weight * grad[static_cast<std::size_t>(ch)]);
    }
}

/// Both views of one source image plus the shared region and its boxes.
struct ViewPair {
    ViewParams first, second;
    Box region;
    bool fallback = false;  // true when the center-crop fallback was used
};

/// Samples two views whose crops overlap by at least `min_side` on each axis,
/// retrying up to cfg.max_resample times before falling back to identical
/// centered crops (each view keeps its own flip and photometric draw).
inline ViewPair sample_view_pair(Rng& rng, const AugmentConfig& cfg, int src_h, int src_w, double min_side) {
    for (int attempt = 0; attempt <= cfg.max_resample; ++attempt) {
        ViewPair vp{sample_view_params(rng, cfg, src_h, src_w), sample_view_params(rng, cfg, src_h, src_w), {}, false};
        if (auto is = intersection_region(vp.first, vp.second, min_side)) {
            vp.region = *is;
            return vp;
        }
    }
    ViewPair vp{sample_view_params(rng, cfg, src_h, src_w), sample_view_params(rng, cfg, src_h, src_w), {}, true};
    const int side = std::min(src_h, src_w);
    const CropRect center{(src_w - side) / 2, (src_h - side) / 2, side, side};
    vp.first.crop = vp.second.crop = center;
    vp.region = {double(center.x), double(center.y), double(side), double(side)};
    if (side < min_side) throw GeometryError("source image smaller than the DI minimum box side");
    return vp;
}

}  // namespace di3cl
