#pragma once

#include <string>

#include "di3cl/encoder/backbone.hpp"

namespace di3cl {

/// Two-layer perceptron in -> hidden -> out with a ReLU between; projection
/// heads L2-normalize their output, the predictor does not.
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::string& name, int in, int hidden, int out, bool normalize, Rng& rng)
        : fc1_(name + ".fc1", in, hidden, true, rng), fc2_(name + ".fc2", hidden, out, true, rng), normalize_(normalize) {}

    int in_dim() const { return fc1_.in_features(); }
    int out_dim() const { return fc2_.out_features(); }

    RowMatrix<T> forward(const RowMatrix<T>& x, nn::Mode mode) {
        RowMatrix<T> h = fc1_.forward(x, mode);
        h = h.cwiseMax(T(0));
        if (mode.record) hidden_ = h;
        RowMatrix<T> y = fc2_.forward(h, mode);
        if (!normalize_) return y;
        if (mode.record) pre_norm_ = y;
        return nn::l2_normalize(y);
    }

    RowMatrix<T> backward(const RowMatrix<T>& gy) {
        RowMatrix<T> g = normalize_ ? nn::l2_normalize_backward(pre_norm_, gy) : gy;
        g = fc2_.backward(g);
        g = (hidden_.array() > T(0)).select(g, T(0));
        return fc1_.backward(g);
    }

    void params(nn::ParamList<T>& out) {
        fc1_.params(out);
        fc2_.params(out);
    }

private:
    nn::Linear<T> fc1_, fc2_;
    bool normalize_ = true;
    RowMatrix<T> hidden_, pre_norm_;
};

/// Unit-norm projection of v through a projection head (batch of one).
template <typename T>
Vec<T> project(Mlp<T>& head, const Vec<T>& v) {
    if (v.size() != head.in_dim()) throw ShapeError("project: dimension mismatch");
    RowMatrix<T> x = v.transpose();
    return head.forward(x, nn::Mode::eval()).row(0).transpose();
}

struct HeadConfig {
    int hidden = 64;
    int out = 32;
};

/// Backbone plus the three projection heads (deep, shallow, local).
template <typename T>
class Encoder {
public:
    Encoder() = default;
    Encoder(const BackboneConfig& bb, const HeadConfig& heads, int cc_tap, Rng& rng)
        : backbone(bb, rng), cc_tap_(cc_tap) {
        if (cc_tap < 1 || cc_tap > 3) throw ConfigError("encoder.cc_tap must be in {1, 2, 3}");
        proj_deep = Mlp<T>("proj_deep", backbone.channels(4), heads.hidden, heads.out, true, rng);
        proj_shallow = Mlp<T>("proj_shallow", backbone.channels(cc_tap), heads.hidden, heads.out, true, rng);
        proj_local = Mlp<T>("proj_local", backbone.channels(4), heads.hidden, heads.out, true, rng);
    }

    int cc_tap() const { return cc_tap_; }

    void params(nn::ParamList<T>& out) {
        backbone.params(out);
        proj_deep.params(out);
        proj_shallow.params(out);
        proj_local.params(out);
    }
    void buffers(nn::BufferList<T>& out) { backbone.buffers(out); }

    Backbone<T> backbone;
    Mlp<T> proj_deep, proj_shallow, proj_local;

private:
    int cc_tap_ = 3;
};

/// Online network (gradient-trained, with the local predictor) and its
/// momentum-averaged target copy.
template <typename T>
class NetworkPair {
public:
    NetworkPair() = default;
    NetworkPair(const BackboneConfig& bb, const HeadConfig& heads, int cc_tap, T momentum, Rng& rng)
        : online(bb, heads, cc_tap, rng), momentum_(momentum) {
        if (momentum < T(0) || momentum > T(1)) throw ConfigError("encoder.ema_m must lie in [0, 1]");
        predictor = Mlp<T>("pred_local", heads.out, heads.hidden, heads.out, false, rng);
        target = online;
    }

    T momentum() const { return momentum_; }
    void set_momentum(T m) { momentum_ = m; }

    /// Parameters updated by the optimizer: online encoder and predictor.
    nn::ParamList<T> trainable() {
        nn::ParamList<T> p;
        online.params(p);
        predictor.params(p);
        return p;
    }

    /// target <- m * target + (1 - m) * online, parameter by parameter.
    void ema_update() {
        nn::ParamList<T> on, tg;
        online.params(on);
        target.params(tg);
        if (on.size() != tg.size()) throw ShapeError("ema_update: online/target structure mismatch");
        const T m = momentum_;
        for (std::size_t i = 0; i < on.size(); ++i) {
            auto& src = on[i]->value;
            auto& dst = tg[i]->value;
            if (src.size() != dst.size()) throw ShapeError("ema_update: parameter shape mismatch at " + on[i]->name);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] = m * dst[j] + (T(1) - m) * src[j];
        }
    }

    Encoder<T> online, target;
    Mlp<T> predictor;

private:
    T momentum_ = T(0.99);
};

}  // namespace di3cl
