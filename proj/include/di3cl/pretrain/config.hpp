#pragma once

#include <cstdint>
#include <string>

#include "di3cl/core/error.hpp"
#include "di3cl/encoder/network.hpp"
#include "di3cl/geometry.hpp"
#include "di3cl/losses.hpp"

namespace di3cl {

struct EncoderConfig {
    std::string preset = "tiny";  // tiny | micro | resnet50 | resnet101
    BackboneConfig backbone = BackboneConfig::tiny();
    HeadConfig heads{64, 32};
    int cc_tap = 3;
    double ema_m = 0.99;

    /// Applies a preset's backbone, head and momentum defaults.
    static EncoderConfig from_preset(const std::string& name) {
        EncoderConfig e;
        e.preset = name;
        if (name == "tiny") {
            e.backbone = BackboneConfig::tiny();
            e.heads = {64, 32};
            e.ema_m = 0.99;
        } else if (name == "micro") {
            e.backbone = BackboneConfig::micro();
            e.heads = {4, 4};
            e.ema_m = 0.99;
        } else if (name == "resnet50") {
            e.backbone = BackboneConfig::resnet50();
            e.heads = {2048, 128};
            e.ema_m = 0.999;
        } else if (name == "resnet101") {
            e.backbone = BackboneConfig::resnet101();
            e.heads = {2048, 128};
            e.ema_m = 0.999;
        } else {
            throw ConfigError("encoder.preset must be one of tiny, micro, resnet50, resnet101");
        }
        return e;
    }

    void validate() const {
        backbone.validate();
        if (heads.hidden < 1 || heads.out < 1) throw ConfigError("encoder head dims must be >= 1");
        if (cc_tap < 1 || cc_tap > 3) throw ConfigError("encoder.cc_tap must be in {1, 2, 3}");
        if (ema_m < 0.0 || ema_m > 1.0) throw ConfigError("encoder.ema_m must lie in [0, 1]");
    }
};

struct PretrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double base_lr = 0.09;
    double min_lr = 0.0;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    int k_boxes = 8;
    double min_side = 32.0;  // source pixels
    int bank_capacity = 1024;
    bool warmup = true;      // fill the banks before the first optimizer step
    std::uint64_t seed = 0;
    AugmentConfig augment;
    LossConfig loss;
    EncoderConfig encoder;

    void validate() const {
        if (epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
        if (!(base_lr > 0.0)) throw ConfigError("pretrain.base_lr must be > 0");
        if (min_lr < 0.0 || min_lr > base_lr) throw ConfigError("pretrain.min_lr must lie in [0, base_lr]");
        if (weight_decay < 0.0) throw ConfigError("pretrain.weight_decay must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("pretrain.momentum must lie in [0, 1)");
        if (k_boxes < 1) throw ConfigError("pretrain.k_boxes must be >= 1");
        if (!(min_side >= 1.0)) throw ConfigError("pretrain.min_side must be >= 1");
        if (bank_capacity < batch_size) throw ConfigError("pretrain.bank_capacity must be >= pretrain.batch_size");
        augment.validate();
        loss.validate();
        encoder.validate();
    }
};

}  // namespace di3cl
