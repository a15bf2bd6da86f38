#pragma once

// Recurrent next-response predictor. The vanilla cell is
//   h_t = Tanh(W_hx x_t + W_hh h_{t-1} + b_h)
//   p_t = sigma(W_hy h_t + b_p)
// with x_t the one-hot (KC, response) pair of width 2 * num_kcs, hot index
// response * num_kcs + kc. The lstm cell swaps the first line for the
// standard four-gate cell and keeps the output equation.
//
// Inside forward passes the one-hot product W x is taken as column selection,
// which is the same linear map without materializing the input vector; the
// unit tests pin the equivalence against the literal matrix product.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kt/model.hpp"
#include "kt/tensor.hpp"

namespace kt::dkt {

enum class CellKind { vanilla, lstm };

inline const char* to_string(CellKind c) { return c == CellKind::vanilla ? "vanilla" : "lstm"; }
inline CellKind cell_from_string(const std::string& s) {
    if (s == "vanilla") return CellKind::vanilla;
    if (s == "lstm") return CellKind::lstm;
    fail(ErrorKind::config, "unknown cell kind '" + s + "'");
}

struct DKTConfig {
    std::size_t num_kcs = 0;
    std::size_t hidden_dim = 64;
    CellKind cell = CellKind::lstm;

    std::size_t input_width() const { return 2 * num_kcs; }

    nlohmann::json to_json() const {
        return {{"num_kcs", num_kcs}, {"hidden_dim", hidden_dim}, {"cell", to_string(cell)}};
    }
    static DKTConfig from_json(const nlohmann::json& j) {
        DKTConfig c;
        c.num_kcs = j.at("num_kcs").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.cell = cell_from_string(j.at("cell").get<std::string>());
        return c;
    }
};

// 1 iff p >= 0.5; the tie at exactly 0.5 maps to 1.
inline int binarize(double p) {
    if (p < 0.0 || p > 1.0) fail(ErrorKind::contract, "binarize expects a probability");
    return p >= 0.5 ? 1 : 0;
}

inline Tensor encode_input(std::size_t kc, int response, std::size_t num_kcs) {
    if (kc >= num_kcs) {
        fail(ErrorKind::index, "kc " + std::to_string(kc) + " out of range for " +
                                   std::to_string(num_kcs) + " KCs");
    }
    if (response != 0 && response != 1) fail(ErrorKind::contract, "response must be 0 or 1");
    return Tensor::one_hot(2 * num_kcs,
                           static_cast<std::size_t>(response) * num_kcs + kc);
}

// ---------------------------------------------------------------------
//  Masked binary cross-entropy
// ---------------------------------------------------------------------

inline constexpr double kBceEps = 1e-7;

namespace detail_loss {

inline Tensor bce_term(const Tensor& p, int target) {
    const Tensor one = Tensor::scalar(1.0);
    const Tensor lp = kt::log(clamp(p, kBceEps, 1.0));
    const Tensor lq = kt::log(clamp(sub(one, p), kBceEps, 1.0));
    const double y = static_cast<double>(target);
    return neg(add(scale(lp, y), scale(lq, 1.0 - y)));
}

}  // namespace detail_loss

// Mean of -[y ln p + (1-y) ln(1-p)] over positions with selectmask 1;
// predictions are clamped at kBceEps before the logs.
inline Tensor masked_bce_loss(const std::vector<Tensor>& predictions,
                              const std::vector<int>& targets,
                              const std::vector<int>& selectmask) {
    if (predictions.size() != targets.size() || targets.size() != selectmask.size()) {
        fail(ErrorKind::dimension, "masked_bce_loss arguments disagree in length");
    }
    Tensor acc;
    std::size_t count = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (selectmask[i] != 1) continue;
        if (targets[i] != 0 && targets[i] != 1) {
            fail(ErrorKind::contract, "selected target must be 0 or 1");
        }
        Tensor term = detail_loss::bce_term(predictions[i], targets[i]);
        acc = count == 0 ? term : add(acc, term);
        ++count;
    }
    if (count == 0) fail(ErrorKind::no_signal, "every position is masked out");
    return scale(acc, 1.0 / static_cast<double>(count));
}

// ---------------------------------------------------------------------
//  Cells
// ---------------------------------------------------------------------

struct DKTParams {
    // vanilla cell
    Tensor w_hx, w_hh, b_h;
    // lstm gates: input, forget, candidate, output
    Tensor w_xi, w_hi, b_i;
    Tensor w_xf, w_hf, b_f;
    Tensor w_xg, w_hg, b_g;
    Tensor w_xo, w_ho, b_o;
    // output head (Eq. 2 in both variants)
    Tensor w_hy, b_p;
};

struct StepOutput {
    Tensor h;
    Tensor p;  // full per-KC probability vector
};

// The vanilla equations verbatim, on an explicit input vector.
inline StepOutput forward_step(const DKTParams& params, const Tensor& h_prev, const Tensor& x) {
    Tensor pre = add(add(matmul(params.w_hx, x), matmul(params.w_hh, h_prev)), params.b_h);
    Tensor h = kt::tanh(pre);
    Tensor p = sigmoid(add(matmul(params.w_hy, h), params.b_p));
    return {h, p};
}

// ---------------------------------------------------------------------
//  Model
// ---------------------------------------------------------------------

class DKTModel final : public TrainableModel {
public:
    explicit DKTModel(DKTConfig cfg) : cfg_(cfg) {
        if (cfg_.num_kcs == 0 || cfg_.hidden_dim == 0) {
            fail(ErrorKind::config, "num_kcs and hidden_dim must be positive");
        }
        allocate();
    }

    ModelKind kind() const override { return ModelKind::dkt; }
    const DKTConfig& config() const { return cfg_; }
    DKTParams& params() { return p_; }

    struct State {
        Tensor h;
        Tensor c;  // lstm only
    };

    State initial_state() const {
        State s;
        s.h = Tensor::zeros({cfg_.hidden_dim});
        if (cfg_.cell == CellKind::lstm) s.c = Tensor::zeros({cfg_.hidden_dim});
        return s;
    }

    // One step with (kc, response); response may be fractional, in which case
    // the input is the matching blend of the two one-hot encodings.
    State step(const State& prev, std::size_t kc, double response) const {
        check_kc(kc);
        if (cfg_.cell == CellKind::vanilla) {
            Tensor pre = add(add(input_term(p_.w_hx, kc, response), matmul(p_.w_hh, prev.h)), p_.b_h);
            return {kt::tanh(pre), Tensor()};
        }
        Tensor i = sigmoid(gate_pre(p_.w_xi, p_.w_hi, p_.b_i, prev.h, kc, response));
        Tensor f = sigmoid(gate_pre(p_.w_xf, p_.w_hf, p_.b_f, prev.h, kc, response));
        Tensor g = kt::tanh(gate_pre(p_.w_xg, p_.w_hg, p_.b_g, prev.h, kc, response));
        Tensor o = sigmoid(gate_pre(p_.w_xo, p_.w_ho, p_.b_o, prev.h, kc, response));
        Tensor c = add(mul(f, prev.c), mul(i, g));
        return {mul(o, kt::tanh(c)), c};
    }

    // Full Eq. (2) output vector for the current state.
    Tensor output_vector(const State& s) const {
        return sigmoid(add(matmul(p_.w_hy, s.h), p_.b_p));
    }

    // Single component of Eq. (2): the prediction for one KC.
    Tensor output_at(const State& s, std::size_t kc) const {
        check_kc(kc);
        return sigmoid(add(dot(row(p_.w_hy, kc), s.h), pick(p_.b_p, kc)));
    }

    void predict_sequence(const InteractionSequence& seq, std::vector<std::size_t>& positions,
                          std::vector<double>& probs) const override {
        positions.clear();
        probs.clear();
        const std::size_t real = seq.real_length();
        State st = initial_state();
        for (std::size_t t = 0; t + 1 < real; ++t) {
            st = step(st, checked_kc(seq, t), checked_response(seq, t));
            if (seq.selectmask.empty() || seq.selectmask[t + 1] == 1) {
                positions.push_back(t + 1);
                probs.push_back(output_at(st, checked_kc(seq, t + 1)).value());
            }
        }
    }

    double predict_at(const InteractionSequence& seq, const std::vector<double>& responses,
                      std::size_t t) const override {
        if (t >= seq.length() || t > responses.size()) {
            fail(ErrorKind::contract, "predict_at position out of range");
        }
        State st = initial_state();
        for (std::size_t u = 0; u < t; ++u) {
            st = step(st, checked_kc(seq, u), responses[u]);
        }
        return output_at(st, checked_kc(seq, t)).value();
    }

    std::vector<double> predict_suffix_frozen(const InteractionSequence& seq,
                                              std::size_t prefix_len) const override {
        if (prefix_len == 0) fail(ErrorKind::protocol, "empty known prefix");
        const std::size_t real = seq.real_length();
        if (prefix_len > real) fail(ErrorKind::contract, "prefix exceeds sequence length");
        State st = initial_state();
        for (std::size_t u = 0; u < prefix_len; ++u) {
            st = step(st, checked_kc(seq, u), checked_response(seq, u));
        }
        const Tensor p_full = output_vector(st);
        std::vector<double> out;
        out.reserve(real - prefix_len);
        for (std::size_t s = prefix_len; s < real; ++s) {
            out.push_back(p_full.at(checked_kc(seq, s)));
        }
        return out;
    }

    Tensor sequence_loss_sum(const InteractionSequence& seq, std::size_t& n_terms,
                             Rng* dropout_rng) override {
        (void)dropout_rng;  // the recurrent model uses no dropout
        n_terms = 0;
        const std::size_t real = seq.real_length();
        Tensor acc;
        State st = initial_state();
        for (std::size_t t = 0; t + 1 < real; ++t) {
            st = step(st, checked_kc(seq, t), checked_response(seq, t));
            if (!seq.selectmask.empty() && seq.selectmask[t + 1] != 1) continue;
            const int target = seq.responses[t + 1];
            if (target != 0 && target != 1) continue;
            Tensor term = detail_loss::bce_term(output_at(st, checked_kc(seq, t + 1)), target);
            acc = n_terms == 0 ? term : add(acc, term);
            ++n_terms;
        }
        return acc;
    }

    std::vector<NamedTensor> parameters() override {
        std::vector<NamedTensor> out = {{"w_hy", p_.w_hy}, {"b_p", p_.b_p}};
        if (cfg_.cell == CellKind::vanilla) {
            out.insert(out.end(), {{"w_hx", p_.w_hx}, {"w_hh", p_.w_hh}, {"b_h", p_.b_h}});
        } else {
            out.insert(out.end(), {{"w_xi", p_.w_xi}, {"w_hi", p_.w_hi}, {"b_i", p_.b_i},
                                   {"w_xf", p_.w_xf}, {"w_hf", p_.w_hf}, {"b_f", p_.b_f},
                                   {"w_xg", p_.w_xg}, {"w_hg", p_.w_hg}, {"b_g", p_.b_g},
                                   {"w_xo", p_.w_xo}, {"w_ho", p_.w_ho}, {"b_o", p_.b_o}});
        }
        return out;
    }

    // Weight matrices uniform in +-1/sqrt(hidden_dim); biases zero.
    void init_params(Rng& rng) override {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
        for (auto& [name, tensor] : parameters()) {
            if (name[0] == 'b') continue;
            for (double& v : tensor.data()) v = rng.uniform(-bound, bound);
        }
    }

    nlohmann::json checkpoint() const override {
        auto* self = const_cast<DKTModel*>(this);
        return {{"format_version", kCheckpointVersion},
                {"kind", "dkt"},
                {"config", cfg_.to_json()},
                {"tensors", named_tensors_to_json(self->parameters())}};
    }

    static std::unique_ptr<DKTModel> from_checkpoint(const nlohmann::json& j) {
        if (j.at("kind").get<std::string>() != "dkt") {
            fail(ErrorKind::schema, "checkpoint kind is not dkt");
        }
        auto model = std::make_unique<DKTModel>(DKTConfig::from_json(j.at("config")));
        load_named_tensors(j.at("tensors"), model->parameters());
        return model;
    }

private:
    void allocate() {
        const std::size_t h = cfg_.hidden_dim;
        const std::size_t in = cfg_.input_width();
        const std::size_t k = cfg_.num_kcs;
        auto mk = [](std::vector<std::size_t> shape) { return Tensor::zeros(std::move(shape), true); };
        p_.w_hy = mk({k, h});
        p_.b_p = mk({k});
        if (cfg_.cell == CellKind::vanilla) {
            p_.w_hx = mk({h, in});
            p_.w_hh = mk({h, h});
            p_.b_h = mk({h});
        } else {
            p_.w_xi = mk({h, in}); p_.w_hi = mk({h, h}); p_.b_i = mk({h});
            p_.w_xf = mk({h, in}); p_.w_hf = mk({h, h}); p_.b_f = mk({h});
            p_.w_xg = mk({h, in}); p_.w_hg = mk({h, h}); p_.b_g = mk({h});
            p_.w_xo = mk({h, in}); p_.w_ho = mk({h, h}); p_.b_o = mk({h});
        }
    }

    void check_kc(std::size_t kc) const {
        if (kc >= cfg_.num_kcs) {
            fail(ErrorKind::index, "kc " + std::to_string(kc) + " out of range");
        }
    }

    static std::size_t checked_kc(const InteractionSequence& seq, std::size_t t) {
        if (seq.concepts[t] < 0) fail(ErrorKind::data, "negative KC index at a real position");
        return static_cast<std::size_t>(seq.concepts[t]);
    }

    static double checked_response(const InteractionSequence& seq, std::size_t t) {
        const int y = seq.responses[t];
        if (y != 0 && y != 1) fail(ErrorKind::data, "response at a consumed position must be 0/1");
        return static_cast<double>(y);
    }

    // W x for the (kc, response) input. Exact one-hot responses select one
    // column; fractional feedback blends the two columns.
    Tensor input_term(const Tensor& w, std::size_t kc, double r) const {
        const std::size_t k = cfg_.num_kcs;
        if (r == 0.0) return col(w, kc);
        if (r == 1.0) return col(w, k + kc);
        return add(scale(col(w, kc), 1.0 - r), scale(col(w, k + kc), r));
    }

    Tensor gate_pre(const Tensor& wx, const Tensor& wh, const Tensor& b, const Tensor& h,
                    std::size_t kc, double r) const {
        return add(add(input_term(wx, kc, r), matmul(wh, h)), b);
    }

    DKTConfig cfg_;
    DKTParams p_;
};

}  // namespace kt::dkt
