#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>

#include "veli4sbr/model.hpp"

namespace veli4sbr::losses {

inline constexpr double kProbClamp = 1e-12;

/// Multi-label binary cross-entropy averaged over intents, on probabilities:
/// -(1/|G|) sum_c [y_c log p_c + (1-y_c) log(1-p_c)]. Logs are clamped.
/// If `d_y_hat` is non-null it receives the gradient w.r.t. y_hat.
inline double loss_intent(const Vec& y, const Vec& y_hat, Vec* d_y_hat = nullptr) {
    if (y.size() != y_hat.size()) throw Error("loss_intent: shape mismatch");
    const auto G = static_cast<double>(y.size());
    if (G == 0) return 0.0;
    double total = 0.0;
    if (d_y_hat) d_y_hat->resize(y.size());
    for (Eigen::Index c = 0; c < y.size(); ++c) {
        const double p = std::clamp(y_hat[c], kProbClamp, 1.0 - kProbClamp);
        total += y[c] * std::log(p) + (1.0 - y[c]) * std::log(1.0 - p);
        if (d_y_hat) (*d_y_hat)[c] = -(y[c] / p - (1.0 - y[c]) / (1.0 - p)) / G;
    }
    return -total / G;
}

/// Same loss expressed on logits (y_hat = sigmoid(logits)); exact and stable
/// for any logit magnitude. Gradient w.r.t. logits is (sigmoid(l) - y)/|G|.
inline double loss_intent_logits(const Vec& y, const Vec& logits, Vec* d_logits = nullptr) {
    if (y.size() != logits.size()) throw Error("loss_intent: shape mismatch");
    const auto G = static_cast<double>(y.size());
    if (G == 0) return 0.0;
    double total = 0.0;
    if (d_logits) d_logits->resize(y.size());
    for (Eigen::Index c = 0; c < y.size(); ++c) {
        // -[y log s(l) + (1-y) log(1-s(l))] = y softplus(-l) + (1-y) softplus(l)
        total += y[c] * nn::softplus(-logits[c]) + (1.0 - y[c]) * nn::softplus(logits[c]);
        if (d_logits) (*d_logits)[c] = (nn::sigmoid(logits[c]) - y[c]) / G;
    }
    return total / G;
}

/// Intent-decoupling loss on row-normalized embeddings:
/// -(1/(G(G-1))) sum_{i != j} ||e_i/|e_i| - e_j/|e_j|||^2, in [-4, 0].
/// Uses the identity sum_{i!=j} ||a_i - a_j||^2 = 2G^2 - 2||sum_i a_i||^2 for unit rows.
/// Returns 0 (with a warning) for fewer than two intents.
inline double loss_decouple(const Mat& E, Mat* dE = nullptr, bool warn = true) {
    const auto G = E.rows();
    if (dE) *dE = Mat::Zero(E.rows(), E.cols());
    if (G < 2) {
        if (warn) std::cerr << "warning: decoupling loss needs at least two intents; returning 0\n";
        return 0.0;
    }
    const Vec norms = E.rowwise().norm().cwiseMax(1e-12);
    const Mat unit = norms.cwiseInverse().asDiagonal() * E;
    const Eigen::RowVectorXd sum = unit.colwise().sum();
    const double g = static_cast<double>(G);
    const double pair_sum = 2.0 * g * g - 2.0 * sum.squaredNorm();
    const double value = -pair_sum / (g * (g - 1.0));
    if (dE) {
        // dL/d unit_i = 4 s / (G(G-1)); then project out the radial component.
        const Eigen::RowVectorXd d_unit = (4.0 / (g * (g - 1.0))) * sum;
        for (Eigen::Index i = 0; i < G; ++i) {
            const Eigen::RowVectorXd a = unit.row(i);
            dE->row(i) = (d_unit - a.dot(d_unit) * a) / norms[i];
        }
    }
    return value;
}

/// Next-item loss for one session with raw scores s = e^T h_tilde:
/// -[log s(s_pos) + sum_neg log(1 - s(s_neg))] = softplus(-s_pos) + sum softplus(s_neg).
inline double loss_rec_scores(double pos_score, std::span<const double> neg_scores, double* d_pos = nullptr,
                              std::span<double> d_negs = {}) {
    double total = nn::softplus(-pos_score);
    if (d_pos) *d_pos = -(1.0 - nn::sigmoid(pos_score));
    for (std::size_t k = 0; k < neg_scores.size(); ++k) {
        total += nn::softplus(neg_scores[k]);
        if (!d_negs.empty()) d_negs[k] = nn::sigmoid(neg_scores[k]);
    }
    return total;
}

struct RecLossGrad {
    Vec d_h_tilde;
    /// (item index, gradient row) pairs for the embeddings that were scored.
    std::vector<std::pair<std::size_t, Vec>> d_items;
};

inline double loss_rec(const Mat& item_embeddings, const Vec& h_tilde, std::size_t pos, std::span<const std::size_t> negs,
                       RecLossGrad* grad = nullptr) {
    const double sp = item_embeddings.row(static_cast<Eigen::Index>(pos)).dot(h_tilde);
    std::vector<double> sn(negs.size()), dn(negs.size());
    for (std::size_t k = 0; k < negs.size(); ++k) sn[k] = item_embeddings.row(static_cast<Eigen::Index>(negs[k])).dot(h_tilde);
    double dp = 0.0;
    const double value = loss_rec_scores(sp, sn, &dp, dn);
    if (grad) {
        grad->d_h_tilde = dp * item_embeddings.row(static_cast<Eigen::Index>(pos)).transpose();
        grad->d_items.clear();
        grad->d_items.emplace_back(pos, dp * h_tilde);
        for (std::size_t k = 0; k < negs.size(); ++k) {
            grad->d_h_tilde += dn[k] * item_embeddings.row(static_cast<Eigen::Index>(negs[k])).transpose();
            grad->d_items.emplace_back(negs[k], dn[k] * h_tilde);
        }
    }
    return value;
}

}  // namespace veli4sbr::losses
