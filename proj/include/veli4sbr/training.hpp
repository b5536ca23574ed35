#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "veli4sbr/config.hpp"
#include "veli4sbr/data.hpp"
#include "veli4sbr/evaluation.hpp"
#include "veli4sbr/losses.hpp"
#include "veli4sbr/model.hpp"
#include "veli4sbr/pc_loop.hpp"

namespace veli4sbr {

struct TrainConfig {
    double lr = 1e-3;
    double l2 = 1e-4;
    double dropout_rate = 0.1;
    double lambda_intent = 1e-3;
    double lambda_decouple = 1e-3;
    int top_k_neighbors = 10;
    int rho = 5;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 1;
    double intent_fraction = 1.0;
    int d = 64;
    double tau = 0.5;
    /// Epochs without a validation NDCG@10 improvement before stopping; 0 disables.
    int patience = 10;
    bool use_fusion = true;
    bool hard_negatives = true;
    /// Train failure sessions toward their all-zero rows before the first enrichment.
    bool intent_loss_on_failures = false;
    bool exclude_prefix = true;

    std::map<std::string, ConfigField> fields() {
        return {{"lr", &lr},
                {"l2", &l2},
                {"dropout_rate", &dropout_rate},
                {"lambda_intent", &lambda_intent},
                {"lambda_decouple", &lambda_decouple},
                {"top_k_neighbors", &top_k_neighbors},
                {"rho", &rho},
                {"epochs", &epochs},
                {"batch_size", &batch_size},
                {"seed", &seed},
                {"intent_fraction", &intent_fraction},
                {"d", &d},
                {"tau", &tau},
                {"patience", &patience},
                {"use_fusion", &use_fusion},
                {"hard_negatives", &hard_negatives},
                {"intent_loss_on_failures", &intent_loss_on_failures},
                {"exclude_prefix", &exclude_prefix}};
    }

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be > 0");
        if (l2 < 0) throw ConfigError("l2 must be >= 0");
        if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("dropout_rate must be in [0, 1)");
        if (lambda_intent < 0 || lambda_decouple < 0) throw ConfigError("lambda_* must be >= 0");
        if (top_k_neighbors < 1) throw ConfigError("top_k_neighbors must be >= 1");
        if (rho < 1) throw ConfigError("rho must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (intent_fraction < 0 || intent_fraction > 1) throw ConfigError("intent_fraction must be in [0, 1]");
        if (d < 1) throw ConfigError("d must be >= 1");
        if (patience < 0) throw ConfigError("patience must be >= 0");
    }
};

/// Soft intent labels for the training sessions, one row per session in `session_ids` order.
struct LabelMatrix {
    Mat y;
    /// Rows that contribute to the intent loss.
    std::vector<bool> active;
    std::vector<SessionId> session_ids;
    /// Epoch of the last enrichment (0 = initial labels).
    int epoch_tag = 0;
};

/// y^(0): one-hot rows for accepted annotations, zero rows for failures. When
/// `intent_fraction` < 1 a seeded subset of the annotated sessions is masked
/// back to the failure state.
inline LabelMatrix initial_labels(const std::vector<Session>& train, const std::map<SessionId, IntentAnnotation>& annotations,
                                  std::size_t n_intents, double intent_fraction, std::uint64_t seed,
                                  bool include_failures = false) {
    LabelMatrix L;
    L.y = Mat::Zero(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(n_intents));
    L.active.assign(train.size(), include_failures);
    std::vector<std::size_t> annotated;
    for (std::size_t r = 0; r < train.size(); ++r) {
        L.session_ids.push_back(train[r].session_id);
        const auto it = annotations.find(train[r].session_id);
        if (it != annotations.end() && it->second.accepted && !it->second.intents.empty()) annotated.push_back(r);
    }
    std::mt19937_64 rng(util::hash_combine(seed, 0x6d61736bULL));
    std::shuffle(annotated.begin(), annotated.end(), rng);
    const auto keep = static_cast<std::size_t>(std::llround(intent_fraction * static_cast<double>(annotated.size())));
    annotated.resize(std::min(keep, annotated.size()));
    std::sort(annotated.begin(), annotated.end());
    for (const auto r : annotated) {
        for (const int c : annotations.at(train[r].session_id).intents) {
            if (c < 0 || static_cast<std::size_t>(c) >= n_intents)
                throw DataError("annotation of session " + std::to_string(train[r].session_id) + " references intent " +
                                std::to_string(c) + " outside the pool");
            L.y(static_cast<Eigen::Index>(r), c) = 1.0;
        }
        L.active[r] = true;
    }
    return L;
}

/// (random negative, hard negative). The hard one is drawn from the
/// annotation's mispredicted items when there are any, otherwise it is a
/// second random draw.
inline std::pair<ItemId, ItemId> sample_negatives(const Session& session, const IntentAnnotation* annotation,
                                                  const Catalog& catalog, std::uint64_t seed) {
    std::unordered_set<ItemId> in_session(session.items.begin(), session.items.end());
    if (catalog.size() <= in_session.size()) throw DataError("catalog must be larger than the session");
    std::mt19937_64 rng(util::hash_combine(seed, static_cast<std::uint64_t>(session.session_id)));
    std::uniform_int_distribution<std::size_t> pick(0, catalog.size() - 1);
    const auto random_item = [&] {
        for (;;) {
            const auto id = catalog.by_index(pick(rng)).item_id;
            if (!in_session.count(id)) return id;
        }
    };
    const ItemId neg = random_item();
    if (annotation && !annotation->mispredicted_items.empty()) {
        std::vector<ItemId> hard;
        for (const auto id : annotation->mispredicted_items)
            if (catalog.contains(id) && !in_session.count(id)) hard.push_back(id);
        if (!hard.empty()) {
            std::uniform_int_distribution<std::size_t> h(0, hard.size() - 1);
            return {neg, hard[h(rng)]};
        }
    }
    return {neg, random_item()};
}

/// Collaborative enrichment: each row becomes ½(ŷ_S + Σ_w ŷ_S') over the k
/// most cosine-similar other sessions, w = softmax of those similarities.
inline Mat enrich_labels(const Mat& H, const Mat& y_hat, int k) {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (H.rows() != y_hat.rows()) throw Error("enrich_labels: row count mismatch");
    const auto n = H.rows();
    const Vec norms = H.rowwise().norm().cwiseMax(1e-12);
    const Mat U = norms.cwiseInverse().asDiagonal() * H;
    const Mat sim = U * U.transpose();
    Mat out(n, y_hat.cols());
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
        idx.clear();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) idx.push_back(j);
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
        if (take == 0) {
            out.row(i) = y_hat.row(i);
            continue;
        }
        std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(take), idx.end(), [&](auto a, auto b) {
            return sim(i, a) != sim(i, b) ? sim(i, a) > sim(i, b) : a < b;
        });
        double mx = sim(i, idx[0]);
        std::vector<double> w(take);
        double z = 0;
        for (std::size_t t = 0; t < take; ++t) z += w[t] = std::exp(sim(i, idx[t]) - mx);
        Eigen::RowVectorXd nbr = Eigen::RowVectorXd::Zero(y_hat.cols());
        for (std::size_t t = 0; t < take; ++t) nbr += (w[t] / z) * y_hat.row(idx[t]);
        out.row(i) = 0.5 * (y_hat.row(i) + nbr);
    }
    return out;
}

/// Adam with decoupled weight decay: p -= lr (m̂ / (√v̂ + eps) + l2 p).
class AdamOptimizer {
public:
    AdamOptimizer(double lr, double l2, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), l2_(l2), b1_(beta1), b2_(beta2), eps_(eps) {}

    template <class State>
    void step(State& params, State& grads) {
        auto p = params.tensors();
        auto g = grads.tensors();
        if (m_.empty())
            for (auto& [name, t] : p) {
                m_.push_back(Mat::Zero(t->rows(), t->cols()));
                v_.push_back(Mat::Zero(t->rows(), t->cols()));
            }
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < p.size(); ++i) {
            Mat& w = *p[i].second;
            const Mat& gr = *g[i].second;
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * gr;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * gr.cwiseAbs2();
            w.array() -= lr_ * ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_) + l2_ * w.array());
        }
    }

    int steps() const { return t_; }

private:
    double lr_, l2_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Mat> m_, v_;
};

struct EpochStats {
    int epoch = 0;
    double loss_rec = 0;
    double loss_intent = 0;
    double loss_decouple = 0;
    double valid_hr10 = 0;
    double valid_ndcg10 = 0;
};

inline std::string history_csv(const std::vector<EpochStats>& h) {
    std::string out = "epoch,loss_rec,loss_intent,loss_decouple,valid_hr10,valid_ndcg10\n";
    char buf[256];
    for (const auto& e : h) {
        std::snprintf(buf, sizeof buf, "%d,%.8f,%.8f,%.8f,%.6f,%.6f\n", e.epoch, e.loss_rec, e.loss_intent,
                      e.loss_decouple, e.valid_hr10, e.valid_ndcg10);
        out += buf;
    }
    return out;
}

struct FitHooks {
    /// Called right after each enrichment with the epoch and the new labels.
    std::function<void(int, const LabelMatrix&)> on_enrich;
    std::function<void(const EpochStats&)> on_epoch;
};

struct FitResult {
    std::vector<EpochStats> history;
    /// Total objective of every optimizer step, in order.
    std::vector<double> loss_trajectory;
    int best_epoch = 0;
    double best_valid_ndcg10 = -1;
    int enrichments = 0;
    bool intent_module = false;
    LabelMatrix labels;
};

namespace detail {

inline std::vector<std::size_t> to_indices(const std::vector<ItemId>& ids, const Catalog& catalog) {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto id : ids) out.push_back(catalog.index_of(id));
    return out;
}

inline void check_finite(double v, const char* term, int epoch) {
    if (!std::isfinite(v))
        throw Error(std::string("non-finite ") + term + " at epoch " + std::to_string(epoch) + "; aborting");
}

}  // namespace detail

/// Session representations and intent predictions in eval mode, one row per session.
template <SessionEncoder Encoder>
std::pair<Mat, Mat> snapshot_predictions(const ModelState<Encoder>& state, const std::vector<std::vector<std::size_t>>& prefixes) {
    IntentGuidedModel<Encoder> model;
    const auto proj = project_intents(state);
    Mat H(static_cast<Eigen::Index>(prefixes.size()), static_cast<Eigen::Index>(state.d));
    Mat Y(static_cast<Eigen::Index>(prefixes.size()), static_cast<Eigen::Index>(state.n_intents()));
    for (std::size_t r = 0; r < prefixes.size(); ++r) {
        const Vec h = model.encode_session(state, prefixes[r]);
        H.row(static_cast<Eigen::Index>(r)) = h.transpose();
        if (state.n_intents() > 0) Y.row(static_cast<Eigen::Index>(r)) = predict_intent_relevance(state, proj, h).transpose();
    }
    return {std::move(H), std::move(Y)};
}

/// Trains `state` in place on one (prefix -> last item) example per train
/// session. The best state by validation NDCG@10 is restored at the end.
/// With no usable intent labels (none accepted, or intent_fraction 0) the
/// intent module is switched off: no fusion, no intent terms, no enrichment.
template <SessionEncoder Encoder>
FitResult fit(ModelState<Encoder>& state, const std::vector<Session>& train, const std::vector<Session>& valid,
              const std::map<SessionId, IntentAnnotation>& annotations, const Catalog& catalog, const TrainConfig& cfg,
              const FitHooks& hooks = {}) {
    cfg.validate();
    if (train.empty()) throw DataError("no training sessions");
    for (const auto& s : train)
        if (s.items.size() < 2) throw DataError("session " + std::to_string(s.session_id) + " is too short to train on");

    FitResult result;
    result.labels = initial_labels(train, annotations, state.n_intents(), cfg.intent_fraction, cfg.seed,
                                   cfg.intent_loss_on_failures);
    const bool any_labels = state.n_intents() > 0 && result.labels.y.sum() > 0;
    result.intent_module = any_labels;
    state.use_fusion = cfg.use_fusion && any_labels;
    state.dropout_rate = cfg.dropout_rate;
    state.tau = cfg.tau;
    const double lam_i = any_labels ? cfg.lambda_intent : 0.0;
    const double lam_d = any_labels ? cfg.lambda_decouple : 0.0;

    std::vector<std::vector<std::size_t>> prefixes;
    std::vector<std::size_t> targets;
    for (const auto& s : train) {
        prefixes.push_back(detail::to_indices(s.prefix(), catalog));
        targets.push_back(catalog.index_of(s.target()));
    }

    IntentGuidedModel<Encoder> model;
    AdamOptimizer opt(cfg.lr, cfg.l2);
    ModelState<Encoder> grad = state.zeros_like();
    ModelState<Encoder> best = state;
    int since_best = 0;
    EvalOptions eopt;
    eopt.cutoffs = {10};
    eopt.exclude_prefix = cfg.exclude_prefix;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    losses::RecLossGrad rg;
    Vec d_logits;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (any_labels && epoch % cfg.rho == 0) {
            const auto [H, Y] = snapshot_predictions(state, prefixes);
            result.labels.y = enrich_labels(H, Y, cfg.top_k_neighbors);
            std::fill(result.labels.active.begin(), result.labels.active.end(), true);
            result.labels.epoch_tag = epoch;
            ++result.enrichments;
            if (hooks.on_enrich) hooks.on_enrich(epoch, result.labels);
        }

        std::mt19937_64 rng(util::hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats st;
        st.epoch = epoch;
        std::size_t n_intent_rows = 0, n_batches = 0;

        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const auto b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            for (auto& [name, m] : grad.tensors()) m->setZero();
            const auto proj = project_intents(state);
            double batch_rec = 0, batch_int = 0, batch_dec = 0;

            for (std::size_t bi = b0; bi < b1; ++bi) {
                const auto r = order[bi];
                const auto& s = train[r];
                const auto f = model.forward(state, proj, prefixes[r], &rng);

                const auto ann_it = annotations.find(s.session_id);
                const IntentAnnotation* ann =
                    cfg.hard_negatives && ann_it != annotations.end() ? &ann_it->second : nullptr;
                const auto seed = util::hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch));
                const auto [neg_r, neg_h] = sample_negatives(s, ann, catalog, seed);
                const std::size_t negs[2] = {catalog.index_of(neg_r), catalog.index_of(neg_h)};
                const double lr_ = losses::loss_rec(state.item_embeddings, f.h_tilde, targets[r], negs, &rg);
                batch_rec += lr_;
                for (const auto& [idx, g] : rg.d_items)
                    grad.item_embeddings.row(static_cast<Eigen::Index>(idx)) += g.transpose();

                d_logits.resize(0);
                if (lam_i > 0 && result.labels.active[r]) {
                    const Vec y = result.labels.y.row(static_cast<Eigen::Index>(r)).transpose();
                    const double li = losses::loss_intent_logits(y, f.logits, &d_logits);
                    batch_int += li;
                    ++n_intent_rows;
                    d_logits *= lam_i;
                }
                model.backward(state, proj, f, rg.d_h_tilde, d_logits, grad);
            }

            if (lam_d > 0 && state.n_intents() >= 2) {
                Mat dE;
                batch_dec = losses::loss_decouple(state.intent_embeddings, &dE, false);
                grad.intent_embeddings += lam_d * dE;
            }
            detail::check_finite(batch_rec, "loss_rec", epoch);
            detail::check_finite(batch_int, "loss_intent", epoch);
            detail::check_finite(batch_dec, "loss_decouple", epoch);
            result.loss_trajectory.push_back(batch_rec + lam_i * batch_int + lam_d * batch_dec);
            st.loss_rec += batch_rec;
            st.loss_intent += batch_int;
            st.loss_decouple += batch_dec;
            ++n_batches;

            opt.step(state, grad);
            if (!state.all_finite()) throw Error("non-finite parameters after step at epoch " + std::to_string(epoch));
        }
        st.loss_rec /= static_cast<double>(train.size());
        st.loss_intent = n_intent_rows ? st.loss_intent / static_cast<double>(n_intent_rows) : 0.0;
        st.loss_decouple = n_batches ? st.loss_decouple / static_cast<double>(n_batches) : 0.0;

        bool stop = false;
        if (!valid.empty()) {
            const auto rep = evaluate(state, valid, catalog, eopt);
            st.valid_hr10 = rep.hr.at(10);
            st.valid_ndcg10 = rep.ndcg.at(10);
            if (st.valid_ndcg10 > result.best_valid_ndcg10) {
                result.best_valid_ndcg10 = st.valid_ndcg10;
                result.best_epoch = epoch;
                best = state;
                since_best = 0;
            } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
                stop = true;
            }
        } else {
            result.best_epoch = epoch;
            best = state;
        }
        result.history.push_back(st);
        if (hooks.on_epoch) hooks.on_epoch(st);
        if (stop) break;
    }
    if (result.best_epoch > 0) state = std::move(best);
    return result;
}

}  // namespace veli4sbr
