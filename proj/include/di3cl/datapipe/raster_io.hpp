#pragma once

// Grayscale raster I/O (8/16-bit PNG and TIFF) backed by OpenCV's codecs.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/geometry.hpp"

namespace di3cl {

/// Per-pixel class indices; 255 marks pixels excluded from loss and metrics.
struct LabelMap {
    static constexpr std::uint8_t kIgnore = 255;

    int height = 0, width = 0;
    std::vector<std::uint8_t> data;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}
    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const LabelMap&) const = default;
};

inline bool is_raster_path(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

/// Loads an 8- or 16-bit single-channel raster scaled to [0, 1] by bit depth.
inline Image<float> load_patch(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw IoError("cannot read raster " + path.string());
    if (m.channels() != 1) throw IoError("raster is not single-channel: " + path.string());
    double scale;
    if (m.depth() == CV_8U) scale = 1.0 / 255.0;
    else if (m.depth() == CV_16U) scale = 1.0 / 65535.0;
    else throw IoError("unsupported raster bit depth (need 8/16-bit): " + path.string());
    cv::Mat f;
    m.convertTo(f, CV_32F, scale);
    auto img = make_image<float>(f.rows, f.cols);
    for (int y = 0; y < f.rows; ++y) std::copy_n(f.ptr<float>(y), f.cols, img.data() + img.offset(0, 0, y, 0));
    return img;
}

/// Writes an image clipped to [0, 1] as 16-bit (or 8-bit) grayscale.
inline void save_gray(const std::filesystem::path& path, const Image<float>& img, int bits = 16) {
    const int h = img.dim(2), w = img.dim(3);
    cv::Mat m(h, w, bits == 16 ? CV_16U : CV_8U);
    const double maxv = bits == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = std::lround(std::clamp<double>(img(0, 0, y, x), 0.0, 1.0) * maxv);
            if (bits == 16) m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
            else m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
        }
    if (!cv::imwrite(path.string(), m)) throw IoError("cannot write raster " + path.string());
}

inline LabelMap load_labels(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw IoError("cannot read label raster " + path.string());
    if (m.channels() != 1 || m.depth() != CV_8U) throw IoError("label raster must be 8-bit single-channel: " + path.string());
    LabelMap out(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) std::copy_n(m.ptr<std::uint8_t>(y), m.cols, out.data.data() + static_cast<std::size_t>(y) * m.cols);
    return out;
}

inline void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
    cv::Mat m(labels.height, labels.width, CV_8U, const_cast<std::uint8_t*>(labels.data.data()));
    if (!cv::imwrite(path.string(), m)) throw IoError("cannot write label raster " + path.string());
}

struct Rgb {
    std::uint8_t r, g, b;
};

/// Fixed class palette: water, wetland, farmland, forest, meadow, road,
/// village, city, bare ground, other; further classes cycle.
inline const std::vector<Rgb>& default_palette() {
    static const std::vector<Rgb> palette{{0, 0, 255},   {0, 255, 255}, {255, 255, 0}, {0, 128, 0},     {128, 255, 0},
                                          {255, 0, 0},   {255, 128, 0}, {128, 0, 128}, {160, 128, 96}, {128, 128, 128}};
    return palette;
}

inline void save_rendering(const std::filesystem::path& path, const LabelMap& labels,
                           const std::vector<Rgb>& palette = default_palette()) {
    cv::Mat m(labels.height, labels.width, CV_8UC3);
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x) {
            const auto l = labels.at(y, x);
            const Rgb c = l == LabelMap::kIgnore ? Rgb{0, 0, 0} : palette[l % palette.size()];
            m.at<cv::Vec3b>(y, x) = cv::Vec3b(c.b, c.g, c.r);
        }
    if (!cv::imwrite(path.string(), m)) throw IoError("cannot write rendering " + path.string());
}

}  // namespace di3cl
