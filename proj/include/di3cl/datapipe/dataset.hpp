#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/core/rng.hpp"
#include "di3cl/datapipe/raster_io.hpp"

namespace di3cl {

namespace fs = std::filesystem;

struct ManifestEntry {
    fs::path path;
    int height = 0, width = 0;
    bool operator==(const ManifestEntry&) const = default;
};

struct PatchManifest {
    std::vector<ManifestEntry> entries;
    std::vector<fs::path> skipped;  // unreadable or not single-channel 8/16-bit
    int patch_size = 512;
};

/// Directory holding images to use: `root/images` when present, else `root`.
inline fs::path image_dir(const fs::path& root) {
    return fs::is_directory(root / "images") ? root / "images" : root;
}

inline fs::path manifest_cache_path(const fs::path& root) {
    const fs::path abs = fs::absolute(root).lexically_normal();
    const auto name = abs.has_filename() ? abs.filename() : abs.parent_path().filename();
    return abs.parent_path() / (name.string() + ".manifest.tsv");
}

/// Lists readable single-channel rasters in lexicographic order. The manifest
/// is also cached beside the root as `path<TAB>H<TAB>W` rows (best effort).
inline PatchManifest scan_dataset(const fs::path& root, bool write_cache = true) {
    if (!fs::is_directory(root)) throw DataError("dataset directory does not exist: " + root.string());
    const fs::path dir = image_dir(root);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_raster_path(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    PatchManifest m;
    for (const auto& f : files) {
        try {
            const auto img = load_patch(f);
            m.entries.push_back({f, img.dim(2), img.dim(3)});
        } catch (const IoError&) {
            m.skipped.push_back(f);
        }
    }
    if (m.entries.empty()) throw DataError("no readable patches in " + dir.string());
    if (!m.entries.empty()) m.patch_size = std::min(m.entries.front().height, m.entries.front().width);

    if (write_cache) {
        std::ofstream out(manifest_cache_path(root));
        for (const auto& e : m.entries) out << e.path.string() << '\t' << e.height << '\t' << e.width << '\n';
    }
    return m;
}

inline std::vector<Image<float>> load_all(const PatchManifest& m) {
    std::vector<Image<float>> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) out.push_back(load_patch(e.path));
    return out;
}

struct LabeledSample {
    Image<float> image;
    LabelMap mask;
};

/// Labeled set: `root/images/<name>` paired with `root/masks/<name>`.
inline std::vector<LabeledSample> load_labeled(const fs::path& root) {
    if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks"))
        throw DataError("labeled dataset needs images/ and masks/ under " + root.string());
    const auto manifest = scan_dataset(root, false);
    std::vector<LabeledSample> out;
    for (const auto& e : manifest.entries) {
        const fs::path mask_path = root / "masks" / e.path.filename();
        if (!fs::exists(mask_path)) throw DataError("missing mask for " + e.path.string());
        LabeledSample s{load_patch(e.path), load_labels(mask_path)};
        if (s.mask.height != e.height || s.mask.width != e.width) throw DataError("mask size mismatch for " + e.path.string());
        out.push_back(std::move(s));
    }
    return out;
}

/// Index batches for one epoch, shuffled under `rng`. With drop_last the final
/// incomplete batch is discarded.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n_items, int batch_size, Rng& rng, bool drop_last) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order(n_items);
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    const auto bs = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start < n_items; start += bs) {
        const std::size_t end = std::min(n_items, start + bs);
        if (drop_last && end - start < bs) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace di3cl
