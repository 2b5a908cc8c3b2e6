#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "di3cl/core/rng.hpp"
#include "di3cl/downstream/metrics.hpp"
#include "di3cl/downstream/seg_model.hpp"
#include "di3cl/nn/optim.hpp"

namespace di3cl {

struct FinetuneConfig {
    int num_classes = 2;
    double base_lr = 0.01;
    double poly_power = 0.9;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    int batch_size = 16;
    int epochs = 30;
    int patience = 10;
    bool use_dice = false;
    bool sixfold = false;
    int decoder_dim = 32;
    std::string init = "random";  // "random" or a backbone/checkpoint path
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw ConfigError("finetune.num_classes must be >= 2");
        if (num_classes > 255) throw ConfigError("finetune.num_classes must be <= 255");
        if (!(base_lr >= 0.0)) throw ConfigError("finetune.base_lr must be >= 0");
        if (!(poly_power > 0.0)) throw ConfigError("finetune.poly_power must be > 0");
        if (weight_decay < 0.0) throw ConfigError("finetune.weight_decay must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("finetune.momentum must lie in [0, 1)");
        if (batch_size < 1) throw ConfigError("finetune.batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("finetune.epochs must be >= 1");
        if (patience < 1) throw ConfigError("finetune.patience must be >= 1");
        if (decoder_dim < 1) throw ConfigError("finetune.decoder_dim must be >= 1");
        if (init.empty()) throw ConfigError("finetune.init must be 'random' or a checkpoint path");
    }
};

/// Builds a segmentation model whose backbone is either freshly initialized or
/// loaded from a pre-training checkpoint, a backbone export, or a pre-training
/// run directory (its final backbone).
template <typename T>
SegModel<T> make_seg_model(const FinetuneConfig& cfg, const BackboneConfig& fallback) {
    Rng rng = derive_rng(cfg.seed, streams::init, 0);
    if (cfg.init == "random") return attach_seg_head(Backbone<T>(fallback, rng), cfg.num_classes, rng, cfg.decoder_dim);
    std::filesystem::path src = cfg.init;
    if (std::filesystem::is_directory(src)) src /= "backbone_final.bin";
    Backbone<T> bb(read_backbone_config(src), rng);
    load_backbone(src, bb);
    return attach_seg_head(std::move(bb), cfg.num_classes, rng, cfg.decoder_dim);
}

namespace detail {

inline Tensor<float> stack_samples(std::span<const LabeledSample> samples, std::span<const std::size_t> idx,
                                   std::vector<std::uint8_t>* labels) {
    std::vector<Image<float>> imgs;
    imgs.reserve(idx.size());
    if (labels) labels->clear();
    for (auto i : idx) imgs.push_back(samples[i].image);
    if (labels)
        for (auto i : idx) labels->insert(labels->end(), samples[i].mask.data.begin(), samples[i].mask.data.end());
    return stack_images<float>(std::span<const Image<float>>(imgs));
}

}  // namespace detail

/// Class probabilities (K, N, H, W) for a (1, N, H, W) batch, running-stat BN.
template <typename T>
Tensor<T> predict_probs(SegModel<T>& model, const Tensor<T>& batch) {
    return softmax_classes(model.forward(batch, nn::Mode::eval()));
}

template <typename T>
ConfusionMatrix confusion_on(SegModel<T>& model, std::span<const LabeledSample> samples, int batch_size) {
    ConfusionMatrix cm(model.num_classes());
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const auto logits = model.forward(detail::stack_samples(samples, idx, nullptr).template cast<T>(), nn::Mode::eval());
        for (std::size_t i = 0; i < idx.size(); ++i) cm.add(samples[idx[i]].mask, argmax_labels(logits, static_cast<int>(i)));
    }
    return cm;
}

template <typename T>
MetricsReport evaluate(SegModel<T>& model, std::span<const LabeledSample> samples, int batch_size = 16) {
    if (samples.empty()) throw DataError("evaluation set is empty");
    return compute_metrics(confusion_on(model, samples, batch_size));
}

struct FinetuneEpoch {
    int epoch = 0;
    double train_loss = 0, val_miou = 0, lr = 0;
};

template <typename T>
struct FinetuneResult {
    SegModel<T> model;  // best validation mIoU
    MetricsReport report;
    int best_epoch = 0;
    int epochs_run = 0;
    std::vector<FinetuneEpoch> history;
};

/// SGD with per-iteration poly decay; the model with the highest validation
/// mIoU is kept, and training halts after `patience` epochs without a strict
/// improvement.
template <typename T>
FinetuneResult<T> finetune(const FinetuneConfig& cfg, std::span<const LabeledSample> train, std::span<const LabeledSample> val,
                           SegModel<T> model, const std::function<void(const FinetuneEpoch&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) throw DataError("fine-tuning training set is empty");
    if (val.empty()) throw DataError("fine-tuning validation set is empty");
    if (model.num_classes() != cfg.num_classes) throw ConfigError("finetune.num_classes does not match the model");

    std::vector<LabeledSample> augmented;
    if (cfg.sixfold) {
        augmented = sixfold_augment(train);
        train = augmented;
    }

    nn::ParamList<T> params;
    model.params(params);
    nn::Sgd<T> opt(cfg.momentum, cfg.weight_decay);
    const std::size_t per_epoch = (train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
    const long max_iter = static_cast<long>(per_epoch) * cfg.epochs;

    FinetuneResult<T> res;
    double best = -std::numeric_limits<double>::infinity();
    long iter = 0;
    std::vector<std::uint8_t> labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = derive_rng(cfg.seed, streams::shuffle, static_cast<std::uint64_t>(epoch));
        const auto batches = make_batches(train.size(), cfg.batch_size, rng, false);
        double loss_sum = 0, lr = 0;
        for (const auto& idx : batches) {
            const Tensor<T> x = detail::stack_samples(train, idx, &labels).template cast<T>();
            const Tensor<T> logits = model.forward(x, nn::Mode::train());
            const Tensor<T> probs = softmax_classes(logits);
            Tensor<T> grad;
            T loss = cross_entropy(probs, labels, &grad);
            if (cfg.use_dice) {
                Tensor<T> gd;
                loss += dice_loss(probs, labels, &gd);
                grad += gd;
            }
            if (!std::isfinite(static_cast<double>(loss)))
                throw DivergenceError("fine-tuning loss is not finite at epoch " + std::to_string(epoch) + ", iteration " +
                                      std::to_string(iter));
            nn::zero_grad(params);
            model.backward(grad);
            lr = poly_lr(iter, max_iter, cfg.base_lr, cfg.poly_power);
            opt.step(params, lr);
            loss_sum += static_cast<double>(loss);
            ++iter;
        }
        const MetricsReport rep = evaluate(model, val, cfg.batch_size);
        const FinetuneEpoch info{epoch, loss_sum / static_cast<double>(batches.size()), rep.miou, lr};
        res.history.push_back(info);
        res.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(info);
        if (rep.miou > best) {
            best = rep.miou;
            res.best_epoch = epoch;
            res.model = model;
            res.report = rep;
        } else if (epoch - res.best_epoch >= cfg.patience) {
            break;
        }
    }
    return res;
}

}  // namespace di3cl
