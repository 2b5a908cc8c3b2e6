#pragma once

// Minimal layer set with hand-written backward passes. Every layer caches what
// its backward needs during a recording forward; a layer therefore supports one
// outstanding forward/backward pair at a time.
//
// Batches use the channel-major (C, N, H, W) layout described in tensor.hpp.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/core/rng.hpp"
#include "di3cl/core/tensor.hpp"

namespace di3cl::nn {

struct Mode {
    bool batch_stats;  // batch normalization uses batch statistics
    bool record;       // cache activations for backward

    static constexpr Mode train() { return {true, true}; }
    static constexpr Mode no_grad() { return {true, false}; }  // momentum network forward
    static constexpr Mode eval() { return {false, false}; }
};

template <typename T>
struct Param {
    std::string name;
    AlignedVector<T> value;
    AlignedVector<T> grad;

    Param() = default;
    Param(std::string n, std::size_t size) : name(std::move(n)), value(size, T(0)), grad(size, T(0)) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

/// Non-trainable persistent state (batch-norm running statistics).
template <typename T>
using BufferList = std::vector<std::pair<std::string, std::vector<T>*>>;

template <typename T>
void he_normal(AlignedVector<T>& w, int fan_in, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : w) v = static_cast<T>(dist(rng));
}

template <typename T>
void uniform_fan_in(AlignedVector<T>& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w) v = uniform<T>(rng, T(-bound), T(bound));
}

/// 2-D convolution via im2col + GEMM; square kernel, symmetric zero padding.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, Rng& rng)
        : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad),
          weight_(name + ".weight", static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel) {
        he_normal(weight_.value, in_ch * kernel * kernel, rng);
        if (bias) bias_ = Param<T>(name + ".bias", static_cast<std::size_t>(out_ch));
    }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int out_size(int s) const { return (s + 2 * pad_ - k_) / stride_ + 1; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        if (x.dim(0) != in_) throw ShapeError("Conv2d " + weight_.name + ": input channel mismatch");
        n_ = x.dim(1);
        h_ = x.dim(2);
        w_ = x.dim(3);
        const int ho = out_size(h_), wo = out_size(w_);
        Tensor<T> y(out_, n_, ho, wo);
        const int kk = in_ * k_ * k_;
        ConstMatMap<T> wm(weight_.value.data(), out_, kk);
        if (pointwise()) {
            as_matrix(y, out_).noalias() = wm * as_matrix(x, in_);
            if (mode.record) cols_ = x;
        } else {
            Tensor<T> cols(kk, 1, 1, static_cast<int>(static_cast<std::size_t>(n_) * ho * wo));
            im2col(x, cols, ho, wo);
            as_matrix(y, out_).noalias() = wm * as_matrix(cols, kk);
            if (mode.record) cols_ = std::move(cols);
        }
        if (!bias_.value.empty()) {
            auto ym = as_matrix(y, out_);
            for (int o = 0; o < out_; ++o) ym.row(o).array() += bias_.value[static_cast<std::size_t>(o)];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const int kk = in_ * k_ * k_;
        const int ho = gy.dim(2), wo = gy.dim(3);
        auto gym = as_matrix(gy, out_);
        MatMap<T> gw(weight_.grad.data(), out_, kk);
        ConstMatMap<T> wm(weight_.value.data(), out_, kk);
        if (!bias_.value.empty())
            for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += gym.row(o).sum();
        Tensor<T> gx(in_, n_, h_, w_);
        if (pointwise()) {
            gw.noalias() += gym * as_matrix(cols_, in_).transpose();
            as_matrix(gx, in_).noalias() = wm.transpose() * gym;
        } else {
            gw.noalias() += gym * as_matrix(cols_, kk).transpose();
            Tensor<T> gcols(kk, 1, 1, static_cast<int>(static_cast<std::size_t>(n_) * ho * wo));
            as_matrix(gcols, kk).noalias() = wm.transpose() * gym;
            col2im(gcols, gx, ho, wo);
        }
        cols_ = Tensor<T>();
        return gx;
    }

    void params(ParamList<T>& out) {
        out.push_back(&weight_);
        if (!bias_.value.empty()) out.push_back(&bias_);
    }

private:
    bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

    void im2col(const Tensor<T>& x, Tensor<T>& cols, int ho, int wo) const {
        const std::size_t row_len = static_cast<std::size_t>(n_) * ho * wo;
        T* dst = cols.data();
        for (int c = 0; c < in_; ++c)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    T* row = dst + ((static_cast<std::size_t>(c) * k_ + ky) * k_ + kx) * row_len;
                    for (int n = 0; n < n_; ++n) {
                        const T* src = x.data() + x.offset(c, n, 0, 0);
                        T* out = row + static_cast<std::size_t>(n) * ho * wo;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride_ - pad_ + ky;
                            T* o = out + static_cast<std::size_t>(oy) * wo;
                            if (iy < 0 || iy >= h_) {
                                std::fill(o, o + wo, T(0));
                                continue;
                            }
                            const T* srow = src + static_cast<std::size_t>(iy) * w_;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride_ - pad_ + kx;
                                o[ox] = (ix >= 0 && ix < w_) ? srow[ix] : T(0);
                            }
                        }
                    }
                }
    }

    void col2im(const Tensor<T>& cols, Tensor<T>& gx, int ho, int wo) const {
        const std::size_t row_len = static_cast<std::size_t>(n_) * ho * wo;
        const T* srcall = cols.data();
        for (int c = 0; c < in_; ++c)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const T* row = srcall + ((static_cast<std::size_t>(c) * k_ + ky) * k_ + kx) * row_len;
                    for (int n = 0; n < n_; ++n) {
                        T* dst = gx.data() + gx.offset(c, n, 0, 0);
                        const T* in = row + static_cast<std::size_t>(n) * ho * wo;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride_ - pad_ + ky;
                            if (iy < 0 || iy >= h_) continue;
                            T* drow = dst + static_cast<std::size_t>(iy) * w_;
                            const T* irow = in + static_cast<std::size_t>(oy) * wo;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride_ - pad_ + kx;
                                if (ix >= 0 && ix < w_) drow[ix] += irow[ox];
                            }
                        }
                    }
                }
    }

    int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    Param<T> weight_, bias_;
    int n_ = 0, h_ = 0, w_ = 0;
    Tensor<T> cols_;
};

/// Batch normalization over (N, H, W) per channel.
template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(std::string name, int channels, T zero_init_gamma = T(1))
        : c_(channels), gamma_(name + ".gamma", static_cast<std::size_t>(channels)),
          beta_(name + ".beta", static_cast<std::size_t>(channels)),
          running_mean_(static_cast<std::size_t>(channels), T(0)), running_var_(static_cast<std::size_t>(channels), T(1)),
          name_(std::move(name)) {
        std::fill(gamma_.value.begin(), gamma_.value.end(), zero_init_gamma);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        if (x.dim(0) != c_) throw ShapeError("BatchNorm2d " + name_ + ": channel mismatch");
        Tensor<T> y(x.shape());
        const auto m = static_cast<Eigen::Index>(x.size() / c_);
        auto xm = as_matrix(x, c_);
        auto ym = as_matrix(y, c_);
        if (mode.record) {
            xhat_.resize(x.shape());
            inv_std_.assign(static_cast<std::size_t>(c_), T(0));
        }
        for (int c = 0; c < c_; ++c) {
            const auto i = static_cast<std::size_t>(c);
            T mean, var;
            if (mode.batch_stats) {
                mean = xm.row(c).mean();
                var = (xm.row(c).array() - mean).square().mean();
                const T unbiased = m > 1 ? var * T(m) / T(m - 1) : var;
                running_mean_[i] = (1 - momentum_) * running_mean_[i] + momentum_ * mean;
                running_var_[i] = (1 - momentum_) * running_var_[i] + momentum_ * unbiased;
            } else {
                mean = running_mean_[i];
                var = running_var_[i];
            }
            const T inv = T(1) / std::sqrt(var + eps_);
            if (mode.record) {
                auto xh = as_matrix(xhat_, c_);
                xh.row(c) = (xm.row(c).array() - mean) * inv;
                ym.row(c) = xh.row(c).array() * gamma_.value[i] + beta_.value[i];
                inv_std_[i] = inv;
            } else {
                ym.row(c) = (xm.row(c).array() - mean) * (inv * gamma_.value[i]) + beta_.value[i];
            }
        }
        return y;
    }

    /// Backward for a batch-statistics forward.
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape());
        const T m = static_cast<T>(gy.size() / c_);
        auto gym = as_matrix(gy, c_);
        auto xh = as_matrix(xhat_, c_);
        auto gxm = as_matrix(gx, c_);
        for (int c = 0; c < c_; ++c) {
            const auto i = static_cast<std::size_t>(c);
            const T sum_g = gym.row(c).sum();
            const T sum_gx = (gym.row(c).array() * xh.row(c).array()).sum();
            gamma_.grad[i] += sum_gx;
            beta_.grad[i] += sum_g;
            const T k = gamma_.value[i] * inv_std_[i] / m;
            gxm.row(c) = k * (m * gym.row(c).array() - sum_g - xh.row(c).array() * sum_gx);
        }
        xhat_ = Tensor<T>();
        return gx;
    }

    void params(ParamList<T>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void buffers(BufferList<T>& out) {
        out.emplace_back(name_ + ".running_mean", &running_mean_);
        out.emplace_back(name_ + ".running_var", &running_var_);
    }

private:
    int c_ = 0;
    Param<T> gamma_, beta_;
    std::vector<T> running_mean_, running_var_;
    std::string name_;
    T eps_ = T(1e-5);
    T momentum_ = T(0.1);
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        Tensor<T> y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        if (mode.record) out_ = y;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = out_[i] > T(0) ? gy[i] : T(0);
        out_ = Tensor<T>();
        return gx;
    }

private:
    Tensor<T> out_;
};

/// 3x3 stride-2 max pooling with padding 1.
template <typename T>
class MaxPool3x3s2 {
public:
    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        shape_ = x.shape();
        const int c = x.dim(0), n = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int ho = (h - 1) / 2 + 1, wo = (w - 1) / 2 + 1;
        Tensor<T> y(c, n, ho, wo);
        if (mode.record) argmax_.assign(y.size(), 0);
        for (int ch = 0; ch < c; ++ch)
            for (int b = 0; b < n; ++b)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t arg = 0;
                        for (int ky = -1; ky <= 1; ++ky)
                            for (int kx = -1; kx <= 1; ++kx) {
                                const int iy = oy * 2 + ky, ix = ox * 2 + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                const std::size_t o = x.offset(ch, b, iy, ix);
                                if (x[o] > best) {
                                    best = x[o];
                                    arg = o;
                                }
                            }
                        const std::size_t oi = y.offset(ch, b, oy, ox);
                        y[oi] = best;
                        if (mode.record) argmax_[oi] = arg;
                    }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(shape_);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax_[i]] += gy[i];
        return gx;
    }

private:
    typename Tensor<T>::Shape shape_{};
    std::vector<std::size_t> argmax_;
};

/// Fully connected layer on row-major (rows = samples) matrices.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in, int out, bool bias, Rng& rng)
        : in_(in), out_(out), weight_(name + ".weight", static_cast<std::size_t>(in) * out) {
        uniform_fan_in(weight_.value, in, rng);
        if (bias) {
            bias_ = Param<T>(name + ".bias", static_cast<std::size_t>(out));
            uniform_fan_in(bias_.value, in, rng);
        }
    }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    RowMatrix<T> forward(const RowMatrix<T>& x, Mode mode) {
        if (x.cols() != in_) throw ShapeError("Linear " + weight_.name + ": input dimension mismatch");
        ConstMatMap<T> w(weight_.value.data(), out_, in_);
        RowMatrix<T> y = x * w.transpose();
        if (!bias_.value.empty())
            y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
        if (mode.record) x_ = x;
        return y;
    }

    RowMatrix<T> backward(const RowMatrix<T>& gy) {
        MatMap<T> gw(weight_.grad.data(), out_, in_);
        ConstMatMap<T> w(weight_.value.data(), out_, in_);
        gw.noalias() += gy.transpose() * x_;
        if (!bias_.value.empty()) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bias_.grad.data(), out_);
            gb += gy.colwise().sum();
        }
        RowMatrix<T> gx = gy * w;
        x_.resize(0, 0);
        return gx;
    }

    void params(ParamList<T>& out) {
        out.push_back(&weight_);
        if (!bias_.value.empty()) out.push_back(&bias_);
    }

private:
    int in_ = 0, out_ = 0;
    Param<T> weight_, bias_;
    RowMatrix<T> x_;
};

/// Global average pooling: (C, N, H, W) -> N x C.
template <typename T>
RowMatrix<T> global_pool(const Tensor<T>& x) {
    const int c = x.dim(0), n = x.dim(1);
    const auto plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
    RowMatrix<T> out(n, c);
    for (int ch = 0; ch < c; ++ch)
        for (int b = 0; b < n; ++b)
            out(b, ch) = Eigen::Map<const Vec<T>>(x.data() + x.offset(ch, b, 0, 0), plane).mean();
    return out;
}

template <typename T>
Tensor<T> global_pool_backward(const RowMatrix<T>& g, const typename Tensor<T>::Shape& shape) {
    Tensor<T> gx(shape);
    const auto plane = static_cast<std::size_t>(shape[2]) * shape[3];
    for (int ch = 0; ch < shape[0]; ++ch)
        for (int b = 0; b < shape[1]; ++b)
            std::fill_n(gx.data() + gx.offset(ch, b, 0, 0), plane, g(b, ch) / static_cast<T>(plane));
    return gx;
}

/// Row-wise x / max(||x||, eps).
template <typename T>
RowMatrix<T> l2_normalize(const RowMatrix<T>& x, T eps = T(1e-12)) {
    RowMatrix<T> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) y.row(r) = x.row(r) / std::max(x.row(r).norm(), eps);
    return y;
}

template <typename T>
RowMatrix<T> l2_normalize_backward(const RowMatrix<T>& x, const RowMatrix<T>& gy, T eps = T(1e-12)) {
    RowMatrix<T> gx(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T n = x.row(r).norm();
        if (n > eps)
            gx.row(r) = gy.row(r) / n - x.row(r) * (x.row(r).dot(gy.row(r)) / (n * n * n));
        else
            gx.row(r) = gy.row(r) / eps;
    }
    return gx;
}

/// Bilinear resize to an explicit output size with the half-pixel convention;
/// src = (dst + 0.5) * in / out - 0.5, clamped to the grid.
template <typename T>
class BilinearResize {
public:
    Tensor<T> forward(const Tensor<T>& x, int out_h, int out_w) {
        in_shape_ = x.shape();
        build(in_shape_[2], in_shape_[3], out_h, out_w);
        const int c = x.dim(0), n = x.dim(1);
        Tensor<T> y(c, n, out_h, out_w);
        for (int ch = 0; ch < c; ++ch)
            for (int b = 0; b < n; ++b) {
                const T* src = x.data() + x.offset(ch, b, 0, 0);
                T* dst = y.data() + y.offset(ch, b, 0, 0);
                for (int oy = 0; oy < out_h; ++oy) {
                    const auto& ty = ys_[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const auto& tx = xs_[static_cast<std::size_t>(ox)];
                        const int w = in_shape_[3];
                        dst[oy * out_w + ox] = (1 - ty.t) * ((1 - tx.t) * src[ty.i0 * w + tx.i0] + tx.t * src[ty.i0 * w + tx.i1]) +
                                               ty.t * ((1 - tx.t) * src[ty.i1 * w + tx.i0] + tx.t * src[ty.i1 * w + tx.i1]);
                    }
                }
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape_);
        const int c = gy.dim(0), n = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3), w = in_shape_[3];
        for (int ch = 0; ch < c; ++ch)
            for (int b = 0; b < n; ++b) {
                const T* g = gy.data() + gy.offset(ch, b, 0, 0);
                T* dst = gx.data() + gx.offset(ch, b, 0, 0);
                for (int oy = 0; oy < oh; ++oy) {
                    const auto& ty = ys_[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < ow; ++ox) {
                        const auto& tx = xs_[static_cast<std::size_t>(ox)];
                        const T v = g[oy * ow + ox];
                        dst[ty.i0 * w + tx.i0] += (1 - ty.t) * (1 - tx.t) * v;
                        dst[ty.i0 * w + tx.i1] += (1 - ty.t) * tx.t * v;
                        dst[ty.i1 * w + tx.i0] += ty.t * (1 - tx.t) * v;
                        dst[ty.i1 * w + tx.i1] += ty.t * tx.t * v;
                    }
                }
            }
        return gx;
    }

private:
    struct Tap {
        int i0, i1;
        T t;
    };
    static std::vector<Tap> axis(int in, int out) {
        std::vector<Tap> taps(static_cast<std::size_t>(out));
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            const double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, double(in - 1));
            const int i0 = static_cast<int>(std::floor(s));
            taps[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), static_cast<T>(s - i0)};
        }
        return taps;
    }
    void build(int ih, int iw, int oh, int ow) {
        ys_ = axis(ih, oh);
        xs_ = axis(iw, ow);
    }

    typename Tensor<T>::Shape in_shape_{};
    std::vector<Tap> ys_, xs_;
};

}  // namespace di3cl::nn
