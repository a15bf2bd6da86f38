#pragma once

// Context-aware attentive knowledge tracing.
//
// Rasch embeddings:
//   x_t = c[kc_t] + mu[q_t] * d[kc_t]
//   y_t = q[(kc_t, a_t)] + mu[q_t] * f[(kc_t, a_t)]
// with mu a scalar difficulty per question and (kc, a) indexed a*K + kc.
//
// The exercise encoder self-attends x_1..x_t (tau <= t), the knowledge
// encoder self-attends y_1..y_t, and the retriever attends queries e~_t over
// keys e~_{<t} and values y~_{<t}; position 1 gets a zero context. All three
// use monotonic attention: the weight at (t, tau) is proportional to
// exp(score/sqrt(d_head)) * exp(-theta * dist(t, tau)) with theta >= 0 per
// head (softplus of a learned raw value).
//
// dist is either the index distance t - tau, or the context-aware variant:
// the sum over intermediate positions of (1 - gamma), where gamma is the
// decay-free attention weight; equivalently (t - tau) minus the cumulative
// attention mass on (tau, t]. Both are monotone in t - tau at equal scores.

#include <cmath>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "kt/dkt.hpp"  // binarize + masked BCE live with the recurrent model
#include "kt/model.hpp"
#include "kt/tensor.hpp"

namespace kt::akt {

enum class DecayMode { index_distance, context_aware };

inline const char* to_string(DecayMode m) {
    return m == DecayMode::index_distance ? "index_distance" : "context_aware";
}
inline DecayMode decay_from_string(const std::string& s) {
    if (s == "index_distance") return DecayMode::index_distance;
    if (s == "context_aware") return DecayMode::context_aware;
    fail(ErrorKind::config, "unknown decay mode '" + s + "'");
}

struct AKTConfig {
    std::size_t num_kcs = 0;
    std::size_t num_questions = 0;
    std::size_t embed_dim = 64;  // D
    std::size_t num_heads = 4;
    std::size_t num_layers = 1;  // per encoder
    std::size_t ff_dim = 128;
    DecayMode decay = DecayMode::index_distance;
    double dropout = 0.05;
    double rasch_lambda = 1e-5;

    std::size_t head_dim() const { return embed_dim / num_heads; }

    void validate() const {
        if (num_kcs == 0 || num_questions == 0) {
            fail(ErrorKind::config, "num_kcs and num_questions must be positive");
        }
        if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
            fail(ErrorKind::config, "embed_dim must be a positive multiple of num_heads");
        }
    }

    nlohmann::json to_json() const {
        return {{"num_kcs", num_kcs},       {"num_questions", num_questions},
                {"embed_dim", embed_dim},   {"num_heads", num_heads},
                {"num_layers", num_layers}, {"ff_dim", ff_dim},
                {"decay", to_string(decay)}, {"dropout", dropout},
                {"rasch_lambda", rasch_lambda}};
    }
    static AKTConfig from_json(const nlohmann::json& j) {
        AKTConfig c;
        c.num_kcs = j.at("num_kcs").get<std::size_t>();
        c.num_questions = j.at("num_questions").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.num_heads = j.at("num_heads").get<std::size_t>();
        c.num_layers = j.at("num_layers").get<std::size_t>();
        c.ff_dim = j.at("ff_dim").get<std::size_t>();
        c.decay = decay_from_string(j.at("decay").get<std::string>());
        c.dropout = j.at("dropout").get<double>();
        c.rasch_lambda = j.at("rasch_lambda").get<double>();
        c.validate();
        return c;
    }
};

struct RaschEmbeddings {
    Tensor c;   // num_kcs x D
    Tensor d;   // num_kcs x D
    Tensor mu;  // num_questions
    Tensor q;   // 2*num_kcs x D
    Tensor f;   // 2*num_kcs x D
};

inline Tensor embed_exercise(const RaschEmbeddings& tables, std::size_t kc, std::size_t question) {
    return add(row(tables.c, kc), mul(pick(tables.mu, question), row(tables.d, kc)));
}

// answer may be fractional under probability feedback; exact 0/1 selects a
// single (kc, answer) row.
inline Tensor embed_interaction(const RaschEmbeddings& tables, std::size_t kc, double answer,
                                std::size_t question, std::size_t num_kcs) {
    const Tensor mu = pick(tables.mu, question);
    auto one = [&](std::size_t idx) {
        return add(row(tables.q, idx), mul(mu, row(tables.f, idx)));
    };
    if (answer == 0.0) return one(kc);
    if (answer == 1.0) return one(num_kcs + kc);
    return add(scale(one(kc), 1.0 - answer), scale(one(num_kcs + kc), answer));
}

inline Tensor rasch_penalty(const RaschEmbeddings& tables, double lambda) {
    return scale(sum(mul(tables.mu, tables.mu)), lambda);
}

// ---------------------------------------------------------------------
//  Monotonic attention
// ---------------------------------------------------------------------

struct AttentionSpec {
    DecayMode mode = DecayMode::index_distance;
    std::vector<std::size_t> allowed;  // per query row: attendable leading key rows
    std::vector<double> qpos;          // timeline position of each query row
    std::vector<double> kpos;          // timeline position of each key row
    bool zero_row_when_empty = false;  // rows with no support emit zeros
    double dropout = 0.0;
    Rng* rng = nullptr;
};

// queries [Tq x dh], keys [Tk x dh], values [Tk x dv]; theta is a scalar
// tensor, theta >= 0. Returns [Tq x dv].
inline Tensor monotonic_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                  const Tensor& theta, const AttentionSpec& spec) {
    const std::size_t tq = queries.rows();
    const std::size_t tk = keys.rows();
    if (keys.cols() != queries.cols() || values.rows() != tk) {
        fail(ErrorKind::dimension, "attention shapes disagree");
    }
    if (spec.allowed.size() != tq || spec.qpos.size() != tq || spec.kpos.size() != tk) {
        fail(ErrorKind::dimension, "attention spec sizes disagree");
    }
    for (std::size_t t = 0; t < tq; ++t) {
        if (spec.allowed[t] > tk) fail(ErrorKind::contract, "allowed count exceeds key rows");
        if (spec.allowed[t] == 0 && !spec.zero_row_when_empty) {
            fail(ErrorKind::empty_support, "query row " + std::to_string(t) +
                                               " has no attendable position");
        }
    }

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    Tensor scores = scale(matmul(queries, transpose(keys)), inv_sqrt);

    // Delta(t, tau) = qpos[t] - kpos[tau] on the allowed support.
    std::vector<double> delta(tq * tk, 0.0);
    for (std::size_t t = 0; t < tq; ++t) {
        for (std::size_t u = 0; u < spec.allowed[t]; ++u) {
            delta[t * tk + u] = spec.qpos[t] - spec.kpos[u];
        }
    }
    Tensor dist = Tensor::from({tq, tk}, delta);

    if (spec.mode == DecayMode::context_aware) {
        // gamma: decay-free attention weights; the cumulative mass on the
        // positions between tau and t shortens the effective distance:
        // dist(t, tau) = Delta - sum_{tau' > tau} gamma(t, tau').
        std::vector<Tensor> gamma_rows;
        gamma_rows.reserve(tq);
        for (std::size_t t = 0; t < tq; ++t) {
            if (spec.allowed[t] == 0) {
                gamma_rows.push_back(Tensor::zeros({tk}));
                continue;
            }
            BoolMask mask(tk, 0);
            for (std::size_t u = 0; u < spec.allowed[t]; ++u) mask[u] = 1;
            gamma_rows.push_back(masked_softmax(row(scores, t), mask));
        }
        Tensor gamma = stack_rows(gamma_rows);
        std::vector<double> strict_lower(tk * tk, 0.0);
        for (std::size_t r = 0; r < tk; ++r) {
            for (std::size_t cidx = 0; cidx < r; ++cidx) strict_lower[r * tk + cidx] = 1.0;
        }
        Tensor mass_beyond = matmul(gamma, Tensor::from({tk, tk}, strict_lower));
        dist = sub(dist, mass_beyond);
    }

    Tensor decayed = sub(scores, mul(theta, dist));

    std::vector<Tensor> weight_rows;
    weight_rows.reserve(tq);
    for (std::size_t t = 0; t < tq; ++t) {
        if (spec.allowed[t] == 0) {
            weight_rows.push_back(Tensor::zeros({tk}));
            continue;
        }
        BoolMask mask(tk, 0);
        for (std::size_t u = 0; u < spec.allowed[t]; ++u) mask[u] = 1;
        Tensor w = masked_softmax(row(decayed, t), mask);
        if (spec.dropout > 0.0 && spec.rng) w = dropout(w, spec.dropout, *spec.rng);
        weight_rows.push_back(w);
    }
    return matmul(stack_rows(weight_rows), values);
}

// ---------------------------------------------------------------------
//  Layers
// ---------------------------------------------------------------------

struct HeadParams {
    Tensor wq, wk, wv;  // D x head_dim
    Tensor theta_raw;   // scalar; theta = softplus(theta_raw)
};

struct MultiHead {
    std::vector<HeadParams> heads;
    Tensor wo;  // D x D
};

struct FeedForward {
    Tensor w1, b1;  // D x ff, ff
    Tensor w2, b2;  // ff x D, D
};

struct EncoderLayer {
    MultiHead attn;
    FeedForward ff;
};

namespace detail_akt {

inline Tensor attend(const MultiHead& mh, const Tensor& q_in, const Tensor& k_in,
                     const Tensor& v_in, DecayMode mode, AttentionSpec spec) {
    spec.mode = mode;
    std::vector<Tensor> outs;
    outs.reserve(mh.heads.size());
    for (const auto& head : mh.heads) {
        Tensor theta = softplus(head.theta_raw);
        outs.push_back(monotonic_attention(matmul(q_in, head.wq), matmul(k_in, head.wk),
                                           matmul(v_in, head.wv), theta, spec));
    }
    return matmul(concat_cols(outs), mh.wo);
}

inline Tensor feed_forward(const FeedForward& ff, const Tensor& x) {
    Tensor hidden = kt::tanh(add_rowvec(matmul(x, ff.w1), ff.b1));
    return add_rowvec(matmul(hidden, ff.w2), ff.b2);
}

}  // namespace detail_akt

// Causal self-attention stack with residual and feedforward sublayers;
// row t depends on rows 0..t only.
inline Tensor encode(const std::vector<EncoderLayer>& layers, Tensor x, DecayMode mode,
                     double drop_rate, Rng* rng) {
    const std::size_t t_len = x.rows();
    AttentionSpec spec;
    spec.allowed.resize(t_len);
    spec.qpos.resize(t_len);
    spec.kpos.resize(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        spec.allowed[t] = t + 1;  // self plus everything before
        spec.qpos[t] = static_cast<double>(t);
        spec.kpos[t] = static_cast<double>(t);
    }
    spec.dropout = rng ? drop_rate : 0.0;
    spec.rng = rng;
    for (const auto& layer : layers) {
        Tensor a = detail_akt::attend(layer.attn, x, x, x, mode, spec);
        if (rng && drop_rate > 0.0) a = dropout(a, drop_rate, *rng);
        x = add(x, a);
        Tensor f = detail_akt::feed_forward(layer.ff, x);
        if (rng && drop_rate > 0.0) f = dropout(f, drop_rate, *rng);
        x = add(x, f);
    }
    return x;
}

// ---------------------------------------------------------------------
//  Model
// ---------------------------------------------------------------------

class AKTModel final : public TrainableModel {
public:
    explicit AKTModel(AKTConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        allocate();
    }

    ModelKind kind() const override { return ModelKind::akt; }
    const AKTConfig& config() const { return cfg_; }
    RaschEmbeddings& tables() { return tables_; }

    // Probabilities for every query row. kv_limit[t] bounds the interaction
    // rows attendable by row t (strictly fewer than t+1 keeps it causal);
    // responses are consumed only below max(kv_limit).
    std::vector<Tensor> forward_probs(const std::vector<int>& concepts,
                                      const std::vector<int>& questions,
                                      const std::vector<double>& responses,
                                      const std::vector<std::size_t>& kv_limit, bool training,
                                      Rng* rng) const {
        const std::size_t t_len = concepts.size();
        if (questions.size() != t_len || kv_limit.size() != t_len) {
            fail(ErrorKind::dimension, "forward_probs arguments disagree in length");
        }
        std::size_t kv_rows = 0;
        for (std::size_t t = 0; t < t_len; ++t) {
            if (kv_limit[t] > t) fail(ErrorKind::contract, "kv_limit must stay strictly causal");
            kv_rows = std::max(kv_rows, kv_limit[t]);
        }
        Rng* drop = training ? rng : nullptr;
        const double rate = training ? cfg_.dropout : 0.0;

        std::vector<Tensor> x_rows;
        x_rows.reserve(t_len);
        for (std::size_t t = 0; t < t_len; ++t) {
            x_rows.push_back(embed_exercise(tables_, checked_kc(concepts[t]),
                                            checked_question(questions[t])));
        }
        Tensor e_ctx = encode(ex_layers_, stack_rows(x_rows), cfg_.decay, rate, drop);

        Tensor h_ctx;  // retrieved knowledge states, zero rows where no context
        if (kv_rows == 0) {
            h_ctx = Tensor::zeros({t_len, cfg_.embed_dim});
        } else {
            if (responses.size() < kv_rows) {
                fail(ErrorKind::dimension, "responses shorter than the attendable context");
            }
            std::vector<Tensor> y_rows;
            y_rows.reserve(kv_rows);
            for (std::size_t t = 0; t < kv_rows; ++t) {
                y_rows.push_back(embed_interaction(tables_, checked_kc(concepts[t]), responses[t],
                                                   checked_question(questions[t]), cfg_.num_kcs));
            }
            Tensor y_ctx = encode(kn_layers_, stack_rows(y_rows), cfg_.decay, rate, drop);
            Tensor keys = kv_rows == t_len ? e_ctx : slice_rows(e_ctx, 0, kv_rows);

            AttentionSpec spec;
            spec.allowed = kv_limit;
            spec.qpos.resize(t_len);
            for (std::size_t t = 0; t < t_len; ++t) spec.qpos[t] = static_cast<double>(t);
            spec.kpos.resize(kv_rows);
            for (std::size_t t = 0; t < kv_rows; ++t) spec.kpos[t] = static_cast<double>(t);
            spec.zero_row_when_empty = true;
            spec.dropout = rate;
            spec.rng = drop;
            h_ctx = detail_akt::attend(retriever_, e_ctx, keys, y_ctx, cfg_.decay, spec);
        }

        std::vector<Tensor> probs;
        probs.reserve(t_len);
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor joint = concat(row(h_ctx, t), row(e_ctx, t));
            Tensor hidden = kt::tanh(add(matmul(head_w1_, joint), head_b1_));
            probs.push_back(sigmoid(add(dot(head_w2_, hidden), head_b2_)));
        }
        return probs;
    }

    void predict_sequence(const InteractionSequence& seq, std::vector<std::size_t>& positions,
                          std::vector<double>& probs) const override {
        positions.clear();
        probs.clear();
        const std::size_t real = seq.real_length();
        if (real == 0) return;
        auto [concepts, questions, responses] = real_slices(seq, real);
        std::vector<std::size_t> kv_limit(real);
        for (std::size_t t = 0; t < real; ++t) kv_limit[t] = t;
        auto p = forward_probs(concepts, questions, responses, kv_limit, false, nullptr);
        for (std::size_t t = 0; t < real; ++t) {
            if (!seq.selectmask.empty() && seq.selectmask[t] != 1) continue;
            positions.push_back(t);
            probs.push_back(p[t].value());
        }
    }

    double predict_at(const InteractionSequence& seq, const std::vector<double>& responses,
                      std::size_t t) const override {
        if (t >= seq.length() || t > responses.size()) {
            fail(ErrorKind::contract, "predict_at position out of range");
        }
        std::vector<int> concepts, questions;
        std::vector<double> resp;
        for (std::size_t u = 0; u <= t; ++u) {
            concepts.push_back(seq.concepts[u]);
            questions.push_back(seq.questions[u]);
            if (u < t) resp.push_back(responses[u]);
        }
        resp.push_back(0.0);  // never consumed: kv_limit[t] <= t
        std::vector<std::size_t> kv_limit(t + 1);
        for (std::size_t u = 0; u <= t; ++u) kv_limit[u] = u;
        auto p = forward_probs(concepts, questions, resp, kv_limit, false, nullptr);
        return p[t].value();
    }

    std::vector<double> predict_suffix_frozen(const InteractionSequence& seq,
                                              std::size_t prefix_len) const override {
        if (prefix_len == 0) fail(ErrorKind::protocol, "empty known prefix");
        const std::size_t real = seq.real_length();
        if (prefix_len > real) fail(ErrorKind::contract, "prefix exceeds sequence length");
        auto [concepts, questions, responses] = real_slices(seq, real, prefix_len);
        std::vector<std::size_t> kv_limit(real);
        for (std::size_t t = 0; t < real; ++t) kv_limit[t] = std::min(t, prefix_len);
        auto p = forward_probs(concepts, questions, responses, kv_limit, false, nullptr);
        std::vector<double> out;
        out.reserve(real - prefix_len);
        for (std::size_t s = prefix_len; s < real; ++s) out.push_back(p[s].value());
        return out;
    }

    Tensor sequence_loss_sum(const InteractionSequence& seq, std::size_t& n_terms,
                             Rng* dropout_rng) override {
        n_terms = 0;
        const std::size_t real = seq.real_length();
        if (real == 0) return Tensor();
        auto [concepts, questions, responses] = real_slices(seq, real);
        std::vector<std::size_t> kv_limit(real);
        for (std::size_t t = 0; t < real; ++t) kv_limit[t] = t;
        auto p = forward_probs(concepts, questions, responses, kv_limit, dropout_rng != nullptr,
                               dropout_rng);
        Tensor acc;
        for (std::size_t t = 0; t < real; ++t) {
            if (!seq.selectmask.empty() && seq.selectmask[t] != 1) continue;
            const int target = seq.responses[t];
            if (target != 0 && target != 1) continue;
            Tensor term = dkt::detail_loss::bce_term(p[t], target);
            acc = n_terms == 0 ? term : add(acc, term);
            ++n_terms;
        }
        return acc;
    }

    Tensor regularizer() override { return rasch_penalty(tables_, cfg_.rasch_lambda); }

    std::vector<NamedTensor> parameters() override {
        std::vector<NamedTensor> out = {{"c", tables_.c},
                                        {"d", tables_.d},
                                        {"mu", tables_.mu},
                                        {"q", tables_.q},
                                        {"f", tables_.f}};
        auto add_mh = [&](const std::string& prefix, MultiHead& mh) {
            for (std::size_t h = 0; h < mh.heads.size(); ++h) {
                const std::string hp = prefix + "_h" + std::to_string(h);
                out.push_back({hp + "_wq", mh.heads[h].wq});
                out.push_back({hp + "_wk", mh.heads[h].wk});
                out.push_back({hp + "_wv", mh.heads[h].wv});
                out.push_back({hp + "_theta", mh.heads[h].theta_raw});
            }
            out.push_back({prefix + "_wo", mh.wo});
        };
        auto add_layers = [&](const std::string& prefix, std::vector<EncoderLayer>& layers) {
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const std::string lp = prefix + std::to_string(l);
                add_mh(lp, layers[l].attn);
                out.push_back({lp + "_ff_w1", layers[l].ff.w1});
                out.push_back({lp + "_ff_b1", layers[l].ff.b1});
                out.push_back({lp + "_ff_w2", layers[l].ff.w2});
                out.push_back({lp + "_ff_b2", layers[l].ff.b2});
            }
        };
        add_layers("ex", ex_layers_);
        add_layers("kn", kn_layers_);
        add_mh("ret", retriever_);
        out.push_back({"head_w1", head_w1_});
        out.push_back({"head_b1", head_b1_});
        out.push_back({"head_w2", head_w2_});
        out.push_back({"head_b2", head_b2_});
        return out;
    }

    // Tables and projections uniform in +-1/sqrt(D); mu and biases zero;
    // theta_raw set so softplus gives theta = 1.
    void init_params(Rng& rng) override {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
        const double theta_one = std::log(std::exp(1.0) - 1.0);
        for (auto& [name, tensor] : parameters()) {
            if (name == "mu" || name.find("_b") != std::string::npos || name == "head_b1" ||
                name == "head_b2") {
                continue;  // stays zero
            }
            if (name.find("theta") != std::string::npos) {
                tensor.data()[0] = theta_one;
                continue;
            }
            for (double& v : tensor.data()) v = rng.uniform(-bound, bound);
        }
    }

    nlohmann::json checkpoint() const override {
        auto* self = const_cast<AKTModel*>(this);
        return {{"format_version", kCheckpointVersion},
                {"kind", "akt"},
                {"config", cfg_.to_json()},
                {"tensors", named_tensors_to_json(self->parameters())}};
    }

    static std::unique_ptr<AKTModel> from_checkpoint(const nlohmann::json& j) {
        if (j.at("kind").get<std::string>() != "akt") {
            fail(ErrorKind::schema, "checkpoint kind is not akt");
        }
        auto model = std::make_unique<AKTModel>(AKTConfig::from_json(j.at("config")));
        load_named_tensors(j.at("tensors"), model->parameters());
        return model;
    }

private:
    void allocate() {
        const std::size_t dim = cfg_.embed_dim;
        const std::size_t dh = cfg_.head_dim();
        auto mk = [](std::vector<std::size_t> shape) { return Tensor::zeros(std::move(shape), true); };
        tables_.c = mk({cfg_.num_kcs, dim});
        tables_.d = mk({cfg_.num_kcs, dim});
        tables_.mu = mk({cfg_.num_questions});
        tables_.q = mk({2 * cfg_.num_kcs, dim});
        tables_.f = mk({2 * cfg_.num_kcs, dim});
        auto mk_mh = [&]() {
            MultiHead mh;
            for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
                mh.heads.push_back({mk({dim, dh}), mk({dim, dh}), mk({dim, dh}), mk({1})});
            }
            mh.wo = mk({dim, dim});
            return mh;
        };
        auto mk_layers = [&]() {
            std::vector<EncoderLayer> layers;
            for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
                layers.push_back({mk_mh(), {mk({dim, cfg_.ff_dim}), mk({cfg_.ff_dim}),
                                            mk({cfg_.ff_dim, dim}), mk({dim})}});
            }
            return layers;
        };
        ex_layers_ = mk_layers();
        kn_layers_ = mk_layers();
        retriever_ = mk_mh();
        head_w1_ = mk({dim, 2 * dim});
        head_b1_ = mk({dim});
        head_w2_ = mk({dim});
        head_b2_ = mk({1});
    }

    std::size_t checked_kc(int kc) const {
        if (kc < 0 || static_cast<std::size_t>(kc) >= cfg_.num_kcs) {
            fail(ErrorKind::index, "kc " + std::to_string(kc) + " out of range");
        }
        return static_cast<std::size_t>(kc);
    }
    std::size_t checked_question(int q) const {
        if (q < 0 || static_cast<std::size_t>(q) >= cfg_.num_questions) {
            fail(ErrorKind::index, "question " + std::to_string(q) + " out of range");
        }
        return static_cast<std::size_t>(q);
    }

    // Real-position slices; responses at positions >= known are placeholders
    // and never consumed (kv limits stop short of them).
    static std::tuple<std::vector<int>, std::vector<int>, std::vector<double>> real_slices(
        const InteractionSequence& seq, std::size_t real,
        std::size_t known = std::numeric_limits<std::size_t>::max()) {
        std::vector<int> concepts(seq.concepts.begin(), seq.concepts.begin() + real);
        std::vector<int> questions(seq.questions.begin(), seq.questions.begin() + real);
        std::vector<double> responses(real, 0.0);
        for (std::size_t t = 0; t < std::min(real, known); ++t) {
            const int y = seq.responses[t];
            if (y == 0 || y == 1) responses[t] = static_cast<double>(y);
        }
        return {std::move(concepts), std::move(questions), std::move(responses)};
    }

    AKTConfig cfg_;
    RaschEmbeddings tables_;
    std::vector<EncoderLayer> ex_layers_;
    std::vector<EncoderLayer> kn_layers_;
    MultiHead retriever_;
    Tensor head_w1_, head_b1_, head_w2_, head_b2_;
};

}  // namespace kt::akt
