#pragma once

#include <cmath>
#include <string>

#include "di3cl/core/error.hpp"
#include "di3cl/core/tensor.hpp"
#include "di3cl/nn/layers.hpp"

namespace di3cl {

struct LossConfig {
    double tau = 0.2;
    double alpha = 0.8;
    double beta = 10.0;
    bool enable_di = true;
    bool enable_cc = true;
    bool symmetric = false;  // average both view orderings

    void validate() const {
        if (!(tau > 0.0)) throw ConfigError("loss.tau must be > 0");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("loss.alpha must lie in [0, 1]");
        if (beta < 0.0) throw ConfigError("loss.beta must be >= 0");
    }
};

struct LossReport {
    double l_d = 0, l_s = 0, l_l = 0, total = 0;
    long step = 0;
};

/// Contrastive loss of one query against its positive and a bank of negatives:
/// -log(exp(p.q/tau) / (exp(p.q/tau) + sum_i exp(p.k_i/tau))). The max logit is
/// subtracted before exponentiation.
template <typename T>
T info_nce(const Vec<T>& p, const Vec<T>& q, const RowMatrix<T>& negatives, T tau) {
    if (negatives.rows() == 0) throw StateError("info_nce: no negatives (bank not ready)");
    if (!(tau > T(0))) throw ConfigError("info_nce: tau must be > 0");
    const T pos = p.dot(q) / tau;
    const Vec<T> neg = (negatives * p) / tau;
    const T mx = std::max(pos, neg.maxCoeff());
    const T sum = std::exp(pos - mx) + (neg.array() - mx).exp().sum();
    return mx + std::log(sum) - pos;
}

/// Batched form: rows of `queries` against matching rows of `positives`.
/// Returns the mean loss; writes d(mean)/d(queries) into `grad` when non-null.
template <typename T>
T info_nce_batch(const RowMatrix<T>& queries, const RowMatrix<T>& positives, const RowMatrix<T>& negatives, T tau,
                 RowMatrix<T>* grad) {
    if (negatives.rows() == 0) throw StateError("info_nce: no negatives (bank not ready)");
    if (queries.rows() != positives.rows() || queries.cols() != positives.cols() || negatives.cols() != queries.cols())
        throw ShapeError("info_nce: shape mismatch");
    const auto b = queries.rows();
    const RowMatrix<T> neg_logits = (queries * negatives.transpose()) / tau;
    if (grad) grad->setZero(b, queries.cols());
    double total = 0;
    for (Eigen::Index r = 0; r < b; ++r) {
        const T pos = queries.row(r).dot(positives.row(r)) / tau;
        const T mx = std::max(pos, neg_logits.row(r).maxCoeff());
        const Eigen::Array<T, 1, Eigen::Dynamic> e = (neg_logits.row(r).array() - mx).exp();
        const T e0 = std::exp(pos - mx);
        const T z = e0 + e.sum();
        total += mx + std::log(z) - pos;
        if (grad) {
            // d/dq = (softmax-weighted mean of candidates - positive) / tau
            grad->row(r) = ((e0 / z - T(1)) * positives.row(r) + (e / z).matrix() * negatives) / (tau * T(b));
        }
    }
    return static_cast<T>(total / static_cast<double>(b));
}

/// Mean squared distance between L2-normalized predictions and targets
/// (row-wise); equals 2 - 2 * mean cosine similarity. Gradient w.r.t. the raw
/// predictions is written into `grad` when non-null.
template <typename T>
T di_loss(const RowMatrix<T>& preds, const RowMatrix<T>& targets, RowMatrix<T>* grad = nullptr) {
    if (preds.rows() == 0) throw StateError("di_loss: K must be >= 1");
    if (preds.rows() != targets.rows() || preds.cols() != targets.cols()) throw ShapeError("di_loss: shape mismatch");
    const RowMatrix<T> f = nn::l2_normalize(preds);
    const RowMatrix<T> z = nn::l2_normalize(targets);
    const RowMatrix<T> diff = f - z;
    const T k = static_cast<T>(preds.rows());
    if (grad) *grad = nn::l2_normalize_backward(preds, RowMatrix<T>(diff * (T(2) / k)));
    return diff.squaredNorm() / k;
}

/// Contour-consistency loss: the same functional form as info_nce, applied to
/// shallow projections against the shallow bank.
template <typename T>
T cc_loss(const Vec<T>& p_s, const Vec<T>& q_s, const RowMatrix<T>& shallow_negatives, T tau) {
    return info_nce(p_s, q_s, shallow_negatives, tau);
}

/// alpha * l_d + (1 - alpha) * l_s + beta * l_l with disabled terms zeroed.
inline double combine(double l_d, double l_s, double l_l, const LossConfig& cfg, long step = 0) {
    if (!std::isfinite(l_d) || !std::isfinite(l_s) || !std::isfinite(l_l))
        throw DivergenceError("non-finite loss at step " + std::to_string(step) + " (l_d=" + std::to_string(l_d) +
                              ", l_s=" + std::to_string(l_s) + ", l_l=" + std::to_string(l_l) + ")");
    const double s = cfg.enable_cc ? l_s : 0.0;
    const double l = cfg.enable_di ? l_l : 0.0;
    return cfg.alpha * l_d + (1.0 - cfg.alpha) * s + cfg.beta * l;
}

}  // namespace di3cl
