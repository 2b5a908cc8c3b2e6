#pragma once

#include <array>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/nn/layers.hpp"

namespace di3cl {

enum class BlockType { basic, bottleneck };

/// Residual backbone with four stages at strides 4, 8, 16 and 32.
struct BackboneConfig {
    BlockType block = BlockType::basic;
    int stem_channels = 16;
    int stem_kernel = 3;
    bool stem_pool = false;  // 3x3/2 max pool after the stem; otherwise stage 1 downsamples
    std::array<int, 4> widths{16, 32, 64, 128};
    std::array<int, 4> depths{1, 1, 1, 1};

    int expansion() const { return block == BlockType::bottleneck ? 4 : 1; }
    int stage_channels(int stage) const { return widths[static_cast<std::size_t>(stage)] * expansion(); }
    static constexpr std::array<int, 4> strides() { return {4, 8, 16, 32}; }

    void validate() const {
        if (stem_channels < 1 || stem_kernel < 1 || stem_kernel % 2 == 0) throw ConfigError("encoder stem is invalid");
        for (int i = 0; i < 4; ++i)
            if (widths[static_cast<std::size_t>(i)] < 1 || depths[static_cast<std::size_t>(i)] < 1)
                throw ConfigError("encoder widths and depths must be >= 1");
    }

    /// Desk-scale preset: four basic blocks, well under 1M parameters.
    static BackboneConfig tiny() { return {}; }
    /// Gradient-check scale: a few hundred parameters.
    static BackboneConfig micro() { return {BlockType::basic, 2, 3, false, {2, 2, 2, 2}, {1, 1, 1, 1}}; }
    static BackboneConfig resnet50() { return {BlockType::bottleneck, 64, 7, true, {64, 128, 256, 512}, {3, 4, 6, 3}}; }
    static BackboneConfig resnet101() { return {BlockType::bottleneck, 64, 7, true, {64, 128, 256, 512}, {3, 4, 23, 3}}; }
};

namespace detail {

/// conv -> batch norm -> optional ReLU
template <typename T>
struct ConvUnit {
    nn::Conv2d<T> conv;
    nn::BatchNorm2d<T> bn;
    bool relu = true;
    nn::ReLU<T> act;

    ConvUnit() = default;
    ConvUnit(const std::string& name, int in, int out, int k, int stride, bool with_relu, Rng& rng)
        : conv(name + ".conv", in, out, k, stride, k / 2, false, rng), bn(name + ".bn", out), relu(with_relu) {}

    Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) {
        auto y = bn.forward(conv.forward(x, mode), mode);
        return relu ? act.forward(y, mode) : y;
    }
    Tensor<T> backward(const Tensor<T>& g) {
        return conv.backward(bn.backward(relu ? act.backward(g) : g));
    }
    void params(nn::ParamList<T>& out) {
        conv.params(out);
        bn.params(out);
    }
    void buffers(nn::BufferList<T>& out) { bn.buffers(out); }
};

template <typename T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(const std::string& name, BlockType type, int in, int width, int stride, Rng& rng) {
        const int out = width * (type == BlockType::bottleneck ? 4 : 1);
        if (type == BlockType::basic) {
            main_.emplace_back(name + ".a", in, width, 3, stride, true, rng);
            main_.emplace_back(name + ".b", width, out, 3, 1, false, rng);
        } else {
            main_.emplace_back(name + ".a", in, width, 1, 1, true, rng);
            main_.emplace_back(name + ".b", width, width, 3, stride, true, rng);
            main_.emplace_back(name + ".c", width, out, 1, 1, false, rng);
        }
        if (stride != 1 || in != out) {
            shortcut_.emplace_back(name + ".down", in, out, 1, stride, false, rng);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) {
        Tensor<T> y = x;
        for (auto& u : main_) y = u.forward(y, mode);
        if (shortcut_.empty())
            y += x;
        else
            y += shortcut_.front().forward(x, mode);
        return act_.forward(y, mode);
    }

    Tensor<T> backward(const Tensor<T>& g) {
        const Tensor<T> gsum = act_.backward(g);
        Tensor<T> gx = gsum;
        for (auto it = main_.rbegin(); it != main_.rend(); ++it) gx = it->backward(gx);
        gx += shortcut_.empty() ? gsum : shortcut_.front().backward(gsum);
        return gx;
    }

    void params(nn::ParamList<T>& out) {
        for (auto& u : main_) u.params(out);
        for (auto& u : shortcut_) u.params(out);
    }
    void buffers(nn::BufferList<T>& out) {
        for (auto& u : main_) u.buffers(out);
        for (auto& u : shortcut_) u.buffers(out);
    }

private:
    std::vector<ConvUnit<T>> main_;
    std::vector<ConvUnit<T>> shortcut_;  // empty or one projection unit
    nn::ReLU<T> act_;
};

}  // namespace detail

/// Outputs of the four stages from one forward pass.
template <typename T>
struct FeatureTaps {
    std::array<Tensor<T>, 4> stages;

    /// Stage by 1-based index; stage 4 is the deep map.
    const Tensor<T>& tap(int stage) const { return stages.at(static_cast<std::size_t>(stage - 1)); }
    const Tensor<T>& deep() const { return stages[3]; }
};

template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        stem_ = detail::ConvUnit<T>("stem", 1, cfg.stem_channels, cfg.stem_kernel, 2, true, rng);
        int in = cfg.stem_channels;
        for (int s = 0; s < 4; ++s) {
            auto& stage = stages_[static_cast<std::size_t>(s)];
            for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b) {
                const int stride = (b == 0 && !(s == 0 && cfg.stem_pool)) ? 2 : 1;
                stage.emplace_back("stage" + std::to_string(s + 1) + "." + std::to_string(b), cfg.block, in,
                                   cfg.widths[static_cast<std::size_t>(s)], stride, rng);
                in = cfg.stage_channels(s);
            }
        }
    }

    const BackboneConfig& config() const { return cfg_; }
    int channels(int stage) const { return cfg_.stage_channels(stage - 1); }
    static int stride(int stage) { return BackboneConfig::strides()[static_cast<std::size_t>(stage - 1)]; }

    /// Input (1, N, S, S) -> per-stage maps; stage t has spatial size ceil(S / stride_t).
    FeatureTaps<T> forward_taps(const Tensor<T>& x, nn::Mode mode) {
        if (x.dim(0) != 1) throw ShapeError("backbone expects single-channel input");
        if (x.dim(2) < 1 || x.dim(3) < 1) throw ShapeError("backbone input must be non-empty");
        FeatureTaps<T> taps;
        Tensor<T> y = stem_.forward(x, mode);
        if (cfg_.stem_pool) y = pool_.forward(y, mode);
        for (std::size_t s = 0; s < 4; ++s) {
            for (auto& block : stages_[s]) y = block.forward(y, mode);
            taps.stages[s] = y;
        }
        return taps;
    }

    /// Backward from per-stage gradients (an empty tensor means no gradient
    /// enters at that stage). Returns the gradient w.r.t. the input.
    Tensor<T> backward_taps(const std::array<Tensor<T>, 4>& grads) {
        Tensor<T> g;
        for (int s = 3; s >= 0; --s) {
            const auto& gs = grads[static_cast<std::size_t>(s)];
            if (!gs.empty()) {
                if (g.empty())
                    g = gs;
                else
                    g += gs;
            }
            if (g.empty()) continue;
            auto& stage = stages_[static_cast<std::size_t>(s)];
            for (auto it = stage.rbegin(); it != stage.rend(); ++it) g = it->backward(g);
        }
        if (g.empty()) throw StateError("backward_taps: no gradient supplied");
        if (cfg_.stem_pool) g = pool_.backward(g);
        return stem_.backward(g);
    }

    void params(nn::ParamList<T>& out) {
        stem_.params(out);
        for (auto& stage : stages_)
            for (auto& b : stage) b.params(out);
    }
    void buffers(nn::BufferList<T>& out) {
        stem_.buffers(out);
        for (auto& stage : stages_)
            for (auto& b : stage) b.buffers(out);
    }

private:
    BackboneConfig cfg_;
    detail::ConvUnit<T> stem_;
    nn::MaxPool3x3s2<T> pool_;
    std::array<std::vector<detail::ResidualBlock<T>>, 4> stages_;
};

template <typename T>
std::size_t parameter_count(nn::ParamList<T> params) {
    std::size_t n = 0;
    for (auto* p : params) n += p->value.size();
    return n;
}

}  // namespace di3cl
