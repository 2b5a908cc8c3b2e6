#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "di3cl/core/archive.hpp"
#include "di3cl/datapipe/dataset.hpp"
#include "di3cl/datapipe/raster_io.hpp"
#include "di3cl/encoder/backbone.hpp"
#include "di3cl/pretrain/trainer.hpp"

namespace di3cl {

/// Backbone plus a pyramid decoder: a 1x1 lateral per stage, bilinear
/// upsampling to the stride-4 grid, summation, 3x3 conv-BN-ReLU fusion, a 1x1
/// classifier and bilinear upsampling to the input size.
template <typename T>
class SegModel {
public:
    SegModel() = default;
    SegModel(Backbone<T> backbone, int num_classes, int decoder_dim, Rng& rng)
        : backbone_(std::move(backbone)), classes_(num_classes), dim_(decoder_dim) {
        if (num_classes < 2) throw ConfigError("finetune.num_classes must be >= 2");
        if (decoder_dim < 1) throw ConfigError("finetune.decoder_dim must be >= 1");
        for (int s = 0; s < 4; ++s)
            lateral_[static_cast<std::size_t>(s)] =
                nn::Conv2d<T>("dec.lateral" + std::to_string(s + 1), backbone_.channels(s + 1), decoder_dim, 1, 1, 0, true, rng);
        fuse_ = detail::ConvUnit<T>("dec.fuse", decoder_dim, decoder_dim, 3, 1, true, rng);
        classifier_ = nn::Conv2d<T>("dec.classifier", decoder_dim, num_classes, 1, 1, 0, true, rng);
    }

    int num_classes() const { return classes_; }
    int decoder_dim() const { return dim_; }
    Backbone<T>& backbone() { return backbone_; }

    /// (1, N, H, W) -> logits (K, N, H, W).
    Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) {
        auto taps = backbone_.forward_taps(x, mode);
        const int h4 = taps.stages[0].dim(2), w4 = taps.stages[0].dim(3);
        Tensor<T> sum = lateral_[0].forward(taps.stages[0], mode);
        for (std::size_t s = 1; s < 4; ++s) sum += up_[s].forward(lateral_[s].forward(taps.stages[s], mode), h4, w4);
        return out_.forward(classifier_.forward(fuse_.forward(sum, mode), mode), x.dim(2), x.dim(3));
    }

    void backward(const Tensor<T>& grad_logits) {
        const Tensor<T> gsum = fuse_.backward(classifier_.backward(out_.backward(grad_logits)));
        std::array<Tensor<T>, 4> grads;
        grads[0] = lateral_[0].backward(gsum);
        for (std::size_t s = 1; s < 4; ++s) grads[s] = lateral_[s].backward(up_[s].backward(gsum));
        backbone_.backward_taps(grads);
    }

    void params(nn::ParamList<T>& out) {
        backbone_.params(out);
        decoder_params(out);
    }
    void decoder_params(nn::ParamList<T>& out) {
        for (auto& l : lateral_) l.params(out);
        fuse_.params(out);
        classifier_.params(out);
    }
    void buffers(nn::BufferList<T>& out) {
        backbone_.buffers(out);
        fuse_.buffers(out);
    }

private:
    Backbone<T> backbone_;
    int classes_ = 2, dim_ = 32;
    std::array<nn::Conv2d<T>, 4> lateral_;
    std::array<nn::BilinearResize<T>, 4> up_;
    detail::ConvUnit<T> fuse_;
    nn::Conv2d<T> classifier_;
    nn::BilinearResize<T> out_;
};

template <typename T>
SegModel<T> attach_seg_head(Backbone<T> backbone, int num_classes, Rng& rng, int decoder_dim = 32) {
    return SegModel<T>(std::move(backbone), num_classes, decoder_dim, rng);
}

/// Per-pixel softmax over the class axis of (K, N, H, W) logits.
template <typename T>
Tensor<T> softmax_classes(const Tensor<T>& logits) {
    const int k = logits.dim(0);
    const std::size_t px = logits.size() / static_cast<std::size_t>(k);
    Tensor<T> p(logits.shape());
    for (std::size_t i = 0; i < px; ++i) {
        T mx = logits[i];
        for (int c = 1; c < k; ++c) mx = std::max(mx, logits[c * px + i]);
        T z = 0;
        for (int c = 0; c < k; ++c) z += p[c * px + i] = std::exp(logits[c * px + i] - mx);
        for (int c = 0; c < k; ++c) p[c * px + i] /= z;
    }
    return p;
}

/// Mean cross-entropy over pixels whose label is not 255. `labels` are in
/// (N, H, W) order. Writes d(loss)/d(logits) when `grad` is non-null.
template <typename T>
T cross_entropy(const Tensor<T>& probs, std::span<const std::uint8_t> labels, Tensor<T>* grad) {
    const int k = probs.dim(0);
    const std::size_t px = probs.size() / static_cast<std::size_t>(k);
    if (labels.size() != px) throw ShapeError("cross_entropy: label count mismatch");
    std::size_t valid = 0;
    for (auto l : labels) valid += l != LabelMap::kIgnore;
    if (grad) grad->resize(probs.shape());
    if (valid == 0) return T(0);
    double loss = 0;
    const T inv = T(1) / static_cast<T>(valid);
    for (std::size_t i = 0; i < px; ++i) {
        const int l = labels[i];
        if (l == LabelMap::kIgnore) continue;
        if (l >= k) throw DataError("label index exceeds class count");
        loss -= std::log(std::max(probs[static_cast<std::size_t>(l) * px + i], T(1e-30)));
        if (grad) {
            for (int c = 0; c < k; ++c) (*grad)[c * px + i] = probs[c * px + i] * inv;
            (*grad)[static_cast<std::size_t>(l) * px + i] -= inv;
        }
    }
    return static_cast<T>(loss / static_cast<double>(valid));
}

/// 1 - mean_c (2 sum p*g + eps) / (sum p + sum g + eps), eps = 1, over pixels
/// whose label is not 255. Writes d(loss)/d(logits) (through the softmax)
/// when `grad_logits` is non-null.
template <typename T>
T dice_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels, Tensor<T>* grad_logits = nullptr, double eps = 1.0) {
    const int k = probs.dim(0);
    const std::size_t px = probs.size() / static_cast<std::size_t>(k);
    if (labels.size() != px) throw ShapeError("dice_loss: label count mismatch");
    std::vector<double> inter(static_cast<std::size_t>(k), 0.0), denom(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < px; ++i) {
        const int l = labels[i];
        if (l == LabelMap::kIgnore) continue;
        for (int c = 0; c < k; ++c) {
            const double p = probs[static_cast<std::size_t>(c) * px + i];
            const double g = c == l ? 1.0 : 0.0;
            inter[static_cast<std::size_t>(c)] += p * g;
            denom[static_cast<std::size_t>(c)] += p + g;
        }
    }
    double dice = 0;
    for (int c = 0; c < k; ++c) dice += (2 * inter[static_cast<std::size_t>(c)] + eps) / (denom[static_cast<std::size_t>(c)] + eps);
    dice /= k;
    if (grad_logits) {
        grad_logits->resize(probs.shape());
        std::vector<double> gp(static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < px; ++i) {
            const int l = labels[i];
            if (l == LabelMap::kIgnore) continue;
            double dot = 0;
            for (int c = 0; c < k; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                const double g = c == l ? 1.0 : 0.0;
                const double s = denom[ci] + eps;
                gp[ci] = -(2 * g * s - (2 * inter[ci] + eps)) / (s * s * k);
                dot += gp[ci] * probs[ci * px + i];
            }
            for (int c = 0; c < k; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                (*grad_logits)[ci * px + i] = static_cast<T>(probs[ci * px + i] * (gp[ci] - dot));
            }
        }
    }
    return static_cast<T>(1.0 - dice);
}

/// Arg-max labels of (K, N, H, W) scores for image n; ties go to the lower class.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores, int n) {
    const int k = scores.dim(0), h = scores.dim(2), w = scores.dim(3);
    LabelMap out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int best = 0;
            T bv = scores(0, n, y, x);
            for (int c = 1; c < k; ++c)
                if (scores(c, n, y, x) > bv) {
                    bv = scores(c, n, y, x);
                    best = c;
                }
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    return out;
}

/// Square-patch dihedral variants: original, clockwise rotations by 90, 180 and
/// 270 degrees, horizontal flip, vertical flip.
enum class Dihedral { identity, rot90, rot180, rot270, hflip, vflip };

/// Source pixel (r, c) of an n x n grid lands at the returned position.
inline std::pair<int, int> dihedral_map(Dihedral d, int r, int c, int n) {
    switch (d) {
        case Dihedral::identity: return {r, c};
        case Dihedral::rot90: return {c, n - 1 - r};
        case Dihedral::rot180: return {n - 1 - r, n - 1 - c};
        case Dihedral::rot270: return {n - 1 - c, r};
        case Dihedral::hflip: return {r, n - 1 - c};
        case Dihedral::vflip: return {n - 1 - r, c};
    }
    return {r, c};
}

inline LabeledSample apply_dihedral(const LabeledSample& s, Dihedral d) {
    const int n = s.mask.height;
    if (s.image.dim(2) != n || s.image.dim(3) != n || s.mask.width != n) throw GeometryError("sixfold augmentation needs square patches");
    LabeledSample out{make_image<float>(n, n), LabelMap(n, n)};
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const auto [rr, cc] = dihedral_map(d, r, c, n);
            out.image(0, 0, rr, cc) = s.image(0, 0, r, c);
            out.mask.at(rr, cc) = s.mask.at(r, c);
        }
    return out;
}

inline std::vector<LabeledSample> sixfold_augment(std::span<const LabeledSample> samples) {
    std::vector<LabeledSample> out;
    out.reserve(samples.size() * 6);
    for (const auto& s : samples)
        for (auto d : {Dihedral::identity, Dihedral::rot90, Dihedral::rot180, Dihedral::rot270, Dihedral::hflip, Dihedral::vflip})
            out.push_back(apply_dihedral(s, d));
    return out;
}

inline constexpr const char* kSegModelFormat = "di3cl-segmodel/1";

template <typename T>
void save_seg_model(const std::filesystem::path& path, SegModel<T>& model, const std::string& config_text) {
    Archive a;
    a.put_string("format", kSegModelFormat);
    a.put_string("config", config_text);
    a.put<std::int64_t>("meta.backbone", backbone_meta(model.backbone().config()));
    a.put<std::int64_t>("meta.seg", std::vector<std::int64_t>{model.num_classes(), model.decoder_dim()});
    nn::ParamList<T> p;
    model.params(p);
    detail::put_params(a, "seg.", p);
    nn::BufferList<T> b;
    model.buffers(b);
    detail::put_buffers(a, "seg.buf.", b);
    a.save(path);
}

template <typename T>
SegModel<T> load_seg_model(const std::filesystem::path& path) {
    const Archive a = Archive::load(path);
    if (a.get_string("format") != kSegModelFormat) throw IoError("not a segmentation model archive: " + path.string());
    const auto seg = a.get<std::int64_t>("meta.seg");
    Rng rng(0);
    Backbone<T> bb(backbone_from_meta(a.get<std::int64_t>("meta.backbone")), rng);
    SegModel<T> model(std::move(bb), static_cast<int>(seg.at(0)), static_cast<int>(seg.at(1)), rng);
    nn::ParamList<T> p;
    model.params(p);
    detail::get_params(a, "seg.", p);
    nn::BufferList<T> b;
    model.buffers(b);
    detail::get_buffers(a, "seg.buf.", b);
    return model;
}

}  // namespace di3cl
