#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "veli4sbr/common.hpp"

namespace veli4sbr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Named view over every trainable tensor of a parameter set. Vectors are
/// stored as single-column matrices so all tensors share one type.
using TensorList = std::vector<std::pair<std::string, Mat*>>;

namespace nn {

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline Vec sigmoid(const Vec& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

/// phi(x) = x * 1[x > tau]; strict inequality.
inline double filter(double x, double tau) { return x > tau ? x : 0.0; }

inline void xavier_uniform(Mat& m, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

inline void uniform_fill(Mat& m, double a, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Session encoders

/// Maps a sequence of item embeddings to a session representation and
/// back-propagates into its own parameters and the embedding rows it read.
template <class E>
concept SessionEncoder = requires(const E enc, typename E::Params p, typename E::Tape tape, const Mat& emb, Mat& demb,
                                  std::span<const std::size_t> seq, const Vec& dh) {
    { E::init(std::size_t{}, std::declval<std::mt19937_64&>()) } -> std::same_as<typename E::Params>;
    { enc.forward(p, emb, seq, &tape) } -> std::same_as<Vec>;
    enc.backward(p, emb, seq, tape, dh, p, demb);
    { p.tensors() } -> std::same_as<TensorList>;
};

/// Single-layer gated recurrent encoder; the session representation is the
/// last hidden state (h_0 = 0).
///   z = s(Wz x + Uz h + bz),  r = s(Wr x + Ur h + br)
///   n = tanh(Wn x + Un (r*h) + bn),  h' = (1-z)*n + z*h
class GruEncoder {
public:
    struct Params {
        Mat Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn;

        TensorList tensors() {
            return {{"gru.Wz", &Wz}, {"gru.Wr", &Wr}, {"gru.Wn", &Wn}, {"gru.Uz", &Uz}, {"gru.Ur", &Ur},
                    {"gru.Un", &Un}, {"gru.bz", &bz}, {"gru.br", &br}, {"gru.bn", &bn}};
        }
    };

    struct Tape {
        std::vector<Vec> h_prev, z, r, n;
    };

    static Params init(std::size_t d, std::mt19937_64& rng) {
        const auto n = static_cast<Eigen::Index>(d);
        Params p;
        for (Mat* m : {&p.Wz, &p.Wr, &p.Wn, &p.Uz, &p.Ur, &p.Un}) {
            m->resize(n, n);
            nn::xavier_uniform(*m, rng);
        }
        for (Mat* b : {&p.bz, &p.br, &p.bn}) *b = Mat::Zero(n, 1);
        return p;
    }

    Vec forward(const Params& p, const Mat& emb, std::span<const std::size_t> seq, Tape* tape) const {
        if (seq.empty()) throw DataError("cannot encode an empty session prefix");
        const auto d = p.Wz.rows();
        Vec h = Vec::Zero(d);
        if (tape) *tape = Tape{};
        for (const auto idx : seq) {
            const Vec x = emb.row(static_cast<Eigen::Index>(idx)).transpose();
            const Vec z = nn::sigmoid(p.Wz * x + p.Uz * h + p.bz);
            const Vec r = nn::sigmoid(p.Wr * x + p.Ur * h + p.br);
            const Vec n = (p.Wn * x + p.Un * r.cwiseProduct(h) + p.bn).array().tanh().matrix();
            Vec next = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h);
            if (tape) {
                tape->h_prev.push_back(std::move(h));
                tape->z.push_back(z);
                tape->r.push_back(r);
                tape->n.push_back(n);
            }
            h = std::move(next);
        }
        return h;
    }

    void backward(const Params& p, const Mat& emb, std::span<const std::size_t> seq, const Tape& tape,
                  const Vec& dh_out, Params& grad, Mat& d_emb) const {
        Vec dh = dh_out;
        for (std::size_t t = seq.size(); t-- > 0;) {
            const auto row = static_cast<Eigen::Index>(seq[t]);
            const Vec x = emb.row(row).transpose();
            const Vec& h = tape.h_prev[t];
            const Vec& z = tape.z[t];
            const Vec& r = tape.r[t];
            const Vec& n = tape.n[t];

            const Vec dn = dh.cwiseProduct((1.0 - z.array()).matrix());
            const Vec dz = dh.cwiseProduct(h - n);
            Vec dh_prev = dh.cwiseProduct(z);

            const Vec an = dn.cwiseProduct((1.0 - n.array().square()).matrix());
            const Vec rh = r.cwiseProduct(h);
            const Vec d_rh = p.Un.transpose() * an;
            dh_prev += d_rh.cwiseProduct(r);
            const Vec ar = d_rh.cwiseProduct(h).cwiseProduct((r.array() * (1.0 - r.array())).matrix());
            const Vec az = dz.cwiseProduct((z.array() * (1.0 - z.array())).matrix());

            grad.Wn.noalias() += an * x.transpose();
            grad.Wr.noalias() += ar * x.transpose();
            grad.Wz.noalias() += az * x.transpose();
            grad.Un.noalias() += an * rh.transpose();
            grad.Ur.noalias() += ar * h.transpose();
            grad.Uz.noalias() += az * h.transpose();
            grad.bn += an;
            grad.br += ar;
            grad.bz += az;
            dh_prev.noalias() += p.Ur.transpose() * ar + p.Uz.transpose() * az;
            d_emb.row(row).noalias() += (p.Wn.transpose() * an + p.Wr.transpose() * ar + p.Wz.transpose() * az).transpose();
            dh = std::move(dh_prev);
        }
    }
};

static_assert(SessionEncoder<GruEncoder>);

// ---------------------------------------------------------------------------
// Intent-guided model

/// All trainable parameters plus the fixed hyperparameters of the forward pass.
template <SessionEncoder Encoder = GruEncoder>
struct ModelState {
    Mat item_embeddings;    // |I| x d
    Mat intent_embeddings;  // |G| x d
    Mat Wq, Wk, Wv;         // d x d
    typename Encoder::Params encoder;
    Mat ln_gamma, ln_beta;  // d x 1

    std::size_t d = 64;
    double tau = 0.5;
    double dropout_rate = 0.1;
    double ln_eps = 1e-5;
    /// When false the guidance term is skipped entirely and h_tilde = h.
    bool use_fusion = true;

    std::size_t n_items() const { return static_cast<std::size_t>(item_embeddings.rows()); }
    std::size_t n_intents() const { return static_cast<std::size_t>(intent_embeddings.rows()); }

    TensorList tensors() {
        TensorList out{{"item_embeddings", &item_embeddings},
                       {"intent_embeddings", &intent_embeddings},
                       {"W_q", &Wq},
                       {"W_k", &Wk},
                       {"W_v", &Wv}};
        for (auto& t : encoder.tensors()) out.push_back(t);
        out.emplace_back("ln_gamma", &ln_gamma);
        out.emplace_back("ln_beta", &ln_beta);
        return out;
    }

    /// A same-shaped state with every tensor zeroed (used as a gradient buffer).
    ModelState zeros_like() const {
        ModelState g = *this;
        for (auto& [name, m] : g.tensors()) m->setZero();
        return g;
    }

    bool all_finite() {
        for (auto& [name, m] : tensors())
            if (!m->allFinite()) return false;
        return true;
    }
};

template <SessionEncoder Encoder = GruEncoder>
ModelState<Encoder> init_model(std::size_t n_items, std::size_t n_intents, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelState<Encoder> s;
    const auto D = static_cast<Eigen::Index>(d);
    s.d = d;
    s.item_embeddings.resize(static_cast<Eigen::Index>(n_items), D);
    nn::uniform_fill(s.item_embeddings, 0.1, rng);
    s.intent_embeddings.resize(static_cast<Eigen::Index>(n_intents), D);
    nn::uniform_fill(s.intent_embeddings, 0.1, rng);
    for (Mat* m : {&s.Wq, &s.Wk, &s.Wv}) {
        m->resize(D, D);
        nn::xavier_uniform(*m, rng);
    }
    s.encoder = Encoder::init(d, rng);
    s.ln_gamma = Mat::Ones(D, 1);
    s.ln_beta = Mat::Zero(D, 1);
    return s;
}

/// Intent keys and values shared by every session in a step: rows k_c = W_k e_c, v_c = W_v e_c.
struct IntentProjections {
    Mat keys;    // |G| x d
    Mat values;  // |G| x d
};

template <class State>
IntentProjections project_intents(const State& s) {
    return {s.intent_embeddings * s.Wk.transpose(), s.intent_embeddings * s.Wv.transpose()};
}

/// Everything a single session's forward pass produces, including what the
/// backward pass needs.
template <SessionEncoder Encoder = GruEncoder>
struct SessionForward {
    std::vector<std::size_t> prefix;
    typename Encoder::Tape tape;
    Vec h;        // session representation
    Vec q;        // W_q h
    Vec logits;   // q^T k_c
    Vec y_hat;    // sigmoid(logits)
    Vec phi;      // filtered relevance
    Vec xhat;     // normalized pre-LayerNorm input
    double inv_std = 1.0;
    Vec dropout_mask;  // already scaled by 1/(1-p); empty in eval mode
    Vec g;        // guidance representation
    Vec h_tilde;  // h + g
};

template <SessionEncoder Encoder>
Vec predict_intent_relevance(const ModelState<Encoder>& s, const IntentProjections& proj, const Vec& h, Vec* q_out = nullptr,
                             Vec* logits_out = nullptr) {
    Vec q = s.Wq * h;
    Vec logits = proj.keys * q;
    Vec y = nn::sigmoid(logits);
    if (q_out) *q_out = std::move(q);
    if (logits_out) *logits_out = std::move(logits);
    return y;
}

template <SessionEncoder Encoder = GruEncoder>
class IntentGuidedModel {
public:
    using State = ModelState<Encoder>;
    using Forward = SessionForward<Encoder>;

    explicit IntentGuidedModel(Encoder encoder = {}) : encoder_(std::move(encoder)) {}

    Vec encode_session(const State& s, std::span<const std::size_t> prefix, typename Encoder::Tape* tape = nullptr) const {
        return encoder_.forward(s.encoder, s.item_embeddings, prefix, tape);
    }

    /// g = Dropout(LayerNorm(h + sum_c phi(y_c) v_c)), h_tilde = h + g.
    /// `rng` non-null means train mode (dropout active).
    void fuse_intents(const State& s, const IntentProjections& proj, Forward& f, std::mt19937_64* rng) const {
        const auto d = static_cast<Eigen::Index>(s.d);
        if (!s.use_fusion) {
            f.g = Vec::Zero(d);
            f.h_tilde = f.h;
            return;
        }
        f.phi = f.y_hat.unaryExpr([&](double v) { return nn::filter(v, s.tau); });
        Vec u = f.h;
        if (proj.values.rows() > 0) u.noalias() += proj.values.transpose() * f.phi;
        const double mean = u.mean();
        const Vec centered = (u.array() - mean).matrix();
        const double var = centered.squaredNorm() / static_cast<double>(d);
        f.inv_std = 1.0 / std::sqrt(var + s.ln_eps);
        f.xhat = centered * f.inv_std;
        Vec ln = f.xhat.cwiseProduct(s.ln_gamma.col(0)) + s.ln_beta.col(0);
        if (rng && s.dropout_rate > 0.0) {
            std::bernoulli_distribution keep(1.0 - s.dropout_rate);
            f.dropout_mask.resize(d);
            const double scale = 1.0 / (1.0 - s.dropout_rate);
            for (Eigen::Index i = 0; i < d; ++i) f.dropout_mask[i] = keep(*rng) ? scale : 0.0;
            f.g = ln.cwiseProduct(f.dropout_mask);
        } else {
            f.dropout_mask.resize(0);
            f.g = std::move(ln);
        }
        f.h_tilde = f.h + f.g;
    }

    Forward forward(const State& s, const IntentProjections& proj, std::span<const std::size_t> prefix,
                    std::mt19937_64* rng = nullptr) const {
        Forward f;
        f.prefix.assign(prefix.begin(), prefix.end());
        f.h = encode_session(s, f.prefix, &f.tape);
        f.y_hat = predict_intent_relevance(s, proj, f.h, &f.q, &f.logits);
        fuse_intents(s, proj, f, rng);
        return f;
    }

    /// Raw dot products e_i^T h_tilde for every item.
    static Vec score_items(const State& s, const Vec& h_tilde) { return s.item_embeddings * h_tilde; }

    /// Back-propagates dL/dh_tilde and dL/dlogits (from the intent loss) into `grad`.
    void backward(const State& s, const IntentProjections& proj, const Forward& f, const Vec& d_h_tilde,
                  const Vec& d_logits_direct, State& grad) const {
        Vec dh = d_h_tilde;
        Vec d_logits = d_logits_direct.size() ? d_logits_direct : Vec::Zero(f.logits.size());
        const auto G = f.logits.size();

        if (s.use_fusion) {
            Vec dln = f.dropout_mask.size() ? Vec(d_h_tilde.cwiseProduct(f.dropout_mask)) : d_h_tilde;
            grad.ln_gamma.col(0) += dln.cwiseProduct(f.xhat);
            grad.ln_beta.col(0) += dln;
            const Vec dxhat = dln.cwiseProduct(s.ln_gamma.col(0));
            const double n = static_cast<double>(s.d);
            const Vec du = f.inv_std * (dxhat.array() - dxhat.sum() / n - f.xhat.array() * (dxhat.dot(f.xhat) / n)).matrix();
            dh += du;
            if (G > 0) {
                // u = h + V^T phi, V rows v_c = W_v e_c
                const Vec d_phi = proj.values * du;
                // dV = phi du^T ; dW_v = dV^T E ; dE += dV W_v
                const Mat dV = f.phi * du.transpose();
                grad.Wv.noalias() += dV.transpose() * s.intent_embeddings;
                grad.intent_embeddings.noalias() += dV * s.Wv;
                for (Eigen::Index c = 0; c < G; ++c)
                    if (f.y_hat[c] > s.tau) d_logits[c] += d_phi[c] * f.y_hat[c] * (1.0 - f.y_hat[c]);
            }
        }

        if (G > 0) {
            // logits = K q, K rows k_c = W_k e_c
            const Vec dq = proj.keys.transpose() * d_logits;
            const Mat dK = d_logits * f.q.transpose();
            grad.Wk.noalias() += dK.transpose() * s.intent_embeddings;
            grad.intent_embeddings.noalias() += dK * s.Wk;
            grad.Wq.noalias() += dq * f.h.transpose();
            dh.noalias() += s.Wq.transpose() * dq;
        }

        encoder_.backward(s.encoder, s.item_embeddings, f.prefix, f.tape, dh, grad.encoder, grad.item_embeddings);
    }

    const Encoder& encoder() const { return encoder_; }

private:
    Encoder encoder_;
};

/// Top-k recommendation with the intents that passed the filter.
struct Recommendation {
    std::vector<std::pair<std::size_t, double>> items;    // (item index, score)
    std::vector<std::pair<std::size_t, double>> intents;  // (intent id, probability), y > tau
};

template <SessionEncoder Encoder>
Recommendation recommend(const ModelState<Encoder>& s, std::span<const std::size_t> prefix, std::size_t k,
                         bool exclude_prefix = true) {
    if (k < 1) throw ConfigError("k must be >= 1");
    IntentGuidedModel<Encoder> model;
    const auto proj = project_intents(s);
    const auto f = model.forward(s, proj, prefix);
    const Vec scores = IntentGuidedModel<Encoder>::score_items(s, f.h_tilde);
    std::vector<std::size_t> order;
    std::vector<bool> excluded(s.n_items(), false);
    if (exclude_prefix)
        for (const auto i : prefix) excluded[i] = true;
    for (std::size_t i = 0; i < s.n_items(); ++i)
        if (!excluded[i]) order.push_back(i);
    const auto take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(), [&](auto a, auto b) {
        const double sa = scores[static_cast<Eigen::Index>(a)], sb = scores[static_cast<Eigen::Index>(b)];
        return sa != sb ? sa > sb : a < b;
    });
    Recommendation rec;
    for (std::size_t i = 0; i < take; ++i) rec.items.emplace_back(order[i], scores[static_cast<Eigen::Index>(order[i])]);
    for (Eigen::Index c = 0; c < f.y_hat.size(); ++c)
        if (f.y_hat[c] > s.tau) rec.intents.emplace_back(static_cast<std::size_t>(c), f.y_hat[c]);
    std::sort(rec.intents.begin(), rec.intents.end(), [](auto& a, auto& b) { return a.second > b.second; });
    return rec;
}

}  // namespace veli4sbr
