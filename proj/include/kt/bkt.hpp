#pragma once

// Bayesian knowledge tracing: a two-state HMM per KC with zero forgetting.
//
// Filtering follows the Corbett-Anderson equations. With m = P(mastered)
// before an opportunity:
//   P(correct)            = m (1 - pS) + (1 - m) pG
//   P(mastered | correct) = m (1 - pS) / P(correct)
//   P(mastered | wrong)   = m pS / P(wrong)
//   after transition      = posterior + (1 - posterior) pT
// The path-enumeration oracle in the tests makes this the checked reading
// rather than a trusted one.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kt/errors.hpp"
#include "kt/model.hpp"

namespace kt::bkt {

struct BKTParams {
    double pL0 = 0.0;  // initial mastery
    double pT = 0.0;   // unlearned -> learned per opportunity
    double pS = 0.0;   // slip
    double pG = 0.0;   // guess
    static constexpr double pF = 0.0;  // forgetting, fixed at zero

    bool valid() const {
        auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
        return in01(pL0) && in01(pT) && in01(pS) && in01(pG);
    }
    // Identifiability region used by the fitters.
    bool identifiable() const { return valid() && pG + pS < 1.0; }
};

inline double predict_correct(const BKTParams& p, double mastery) {
    if (mastery < 0.0 || mastery > 1.0) fail(ErrorKind::contract, "mastery outside [0,1]");
    return mastery * (1.0 - p.pS) + (1.0 - mastery) * p.pG;
}

// Bayes update on the observation, then the learning transition.
inline double posterior_update(const BKTParams& p, double mastery, int observed) {
    if (mastery < 0.0 || mastery > 1.0) fail(ErrorKind::contract, "mastery outside [0,1]");
    if (observed != 0 && observed != 1) fail(ErrorKind::contract, "observation must be 0 or 1");
    const double e_mastered = observed ? 1.0 - p.pS : p.pS;
    const double e_unmastered = observed ? p.pG : 1.0 - p.pG;
    const double evidence = mastery * e_mastered + (1.0 - mastery) * e_unmastered;
    if (evidence <= 0.0) {
        fail(ErrorKind::degenerate_evidence,
             "observation has probability zero under the current parameters");
    }
    const double posterior = mastery * e_mastered / evidence;
    return posterior + (1.0 - posterior) * p.pT;
}

// Marginal probability of the response sequence: the product over steps of
// the one-step predictive probability at the running filtered mastery.
inline double sequence_likelihood(const BKTParams& p, const std::vector<int>& responses) {
    if (responses.empty()) fail(ErrorKind::contract, "empty response sequence");
    double mastery = p.pL0;
    double likelihood = 1.0;
    for (int y : responses) {
        const double pc = predict_correct(p, mastery);
        likelihood *= y ? pc : 1.0 - pc;
        if (likelihood == 0.0) return 0.0;
        mastery = posterior_update(p, mastery, y);
    }
    return likelihood;
}

inline double sequences_log_likelihood(const BKTParams& p,
                                       const std::vector<std::vector<int>>& seqs) {
    double ll = 0.0;
    for (const auto& seq : seqs) {
        double mastery = p.pL0;
        for (int y : seq) {
            const double pc = predict_correct(p, mastery);
            const double f = y ? pc : 1.0 - pc;
            ll += std::log(f);
            mastery = posterior_update(p, mastery, y);
        }
    }
    return ll;
}

// ---------------------------------------------------------------------
//  Fitting
// ---------------------------------------------------------------------

enum class FitMethod { em, grid };

struct FitOptions {
    FitMethod method = FitMethod::em;
    int max_iters = 200;
    double tol = 1e-6;           // stop when the log-likelihood gain drops below
    double clamp_eps = 1e-4;     // fitted probabilities stay in [eps, 1-eps]
    double grid_step = 0.05;
};

namespace detail {

inline double clamp01(double x, double eps) { return std::min(std::max(x, eps), 1.0 - eps); }

struct EmAccum {
    double init_l = 0.0;
    double n_seq = 0.0;
    double trans_num = 0.0, trans_den = 0.0;
    double slip_num = 0.0, slip_den = 0.0;
    double guess_num = 0.0, guess_den = 0.0;
};

// Scaled forward-backward for one sequence; returns its log-likelihood and
// adds expected counts. State 0 = unlearned, 1 = learned.
inline double forward_backward(const BKTParams& p, const std::vector<int>& seq, EmAccum& acc) {
    const std::size_t n = seq.size();
    auto emit = [&](int s, int y) {
        return s ? (y ? 1.0 - p.pS : p.pS) : (y ? p.pG : 1.0 - p.pG);
    };
    std::vector<double> a0(n), a1(n), scale(n);
    double ll = 0.0;

    a0[0] = (1.0 - p.pL0) * emit(0, seq[0]);
    a1[0] = p.pL0 * emit(1, seq[0]);
    scale[0] = a0[0] + a1[0];
    if (scale[0] <= 0.0) fail(ErrorKind::degenerate_evidence, "zero-probability observation in EM");
    a0[0] /= scale[0];
    a1[0] /= scale[0];
    ll += std::log(scale[0]);
    for (std::size_t t = 1; t < n; ++t) {
        const double p0 = a0[t - 1] * (1.0 - p.pT);
        const double p1 = a0[t - 1] * p.pT + a1[t - 1];
        a0[t] = p0 * emit(0, seq[t]);
        a1[t] = p1 * emit(1, seq[t]);
        scale[t] = a0[t] + a1[t];
        if (scale[t] <= 0.0) {
            fail(ErrorKind::degenerate_evidence, "zero-probability observation in EM");
        }
        a0[t] /= scale[t];
        a1[t] /= scale[t];
        ll += std::log(scale[t]);
    }

    std::vector<double> b0(n), b1(n);
    b0[n - 1] = 1.0;
    b1[n - 1] = 1.0;
    for (std::size_t t = n - 1; t-- > 0;) {
        const double e0 = emit(0, seq[t + 1]) * b0[t + 1];
        const double e1 = emit(1, seq[t + 1]) * b1[t + 1];
        b0[t] = ((1.0 - p.pT) * e0 + p.pT * e1) / scale[t + 1];
        b1[t] = e1 / scale[t + 1];
    }

    for (std::size_t t = 0; t < n; ++t) {
        const double g0 = a0[t] * b0[t];
        const double g1 = a1[t] * b1[t];
        const double z = g0 + g1;
        const double gamma1 = g1 / z;
        if (t == 0) {
            acc.init_l += gamma1;
        }
        if (t + 1 < n) {
            // xi over the U->{U,L} transitions
            const double xi_ul = a0[t] * p.pT * emit(1, seq[t + 1]) * b1[t + 1] / scale[t + 1];
            const double xi_uu =
                a0[t] * (1.0 - p.pT) * emit(0, seq[t + 1]) * b0[t + 1] / scale[t + 1];
            acc.trans_num += xi_ul;
            acc.trans_den += xi_ul + xi_uu;
        }
        acc.slip_den += gamma1;
        if (seq[t] == 0) acc.slip_num += gamma1;
        acc.guess_den += 1.0 - gamma1;
        if (seq[t] == 1) acc.guess_num += 1.0 - gamma1;
    }
    acc.n_seq += 1.0;
    return ll;
}

inline BKTParams run_em(const std::vector<std::vector<int>>& seqs, BKTParams start,
                        const FitOptions& opt, std::vector<double>* ll_trace) {
    BKTParams p = start;
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opt.max_iters; ++iter) {
        EmAccum acc;
        double ll = 0.0;
        for (const auto& seq : seqs) ll += forward_backward(p, seq, acc);
        if (ll_trace) ll_trace->push_back(ll);
        if (ll + 1e-9 < prev_ll) {
            fail(ErrorKind::numeric, "EM log-likelihood decreased (iteration " +
                                         std::to_string(iter) + ")");
        }
        if (iter > 0 && ll - prev_ll < opt.tol) break;
        prev_ll = ll;

        BKTParams next;
        next.pL0 = clamp01(acc.init_l / acc.n_seq, opt.clamp_eps);
        next.pT = clamp01(acc.trans_den > 0 ? acc.trans_num / acc.trans_den : p.pT, opt.clamp_eps);
        next.pS = clamp01(acc.slip_den > 0 ? acc.slip_num / acc.slip_den : p.pS, opt.clamp_eps);
        next.pG = clamp01(acc.guess_den > 0 ? acc.guess_num / acc.guess_den : p.pG, opt.clamp_eps);
        p = next;
    }
    return p;
}

}  // namespace detail

// Exhaustive search over an opt.grid_step lattice restricted to pG + pS < 1.
inline BKTParams fit_grid(const std::vector<std::vector<int>>& seqs, const FitOptions& opt) {
    if (seqs.empty()) fail(ErrorKind::insufficient_data, "no sequences to fit");
    BKTParams best;
    double best_ll = -std::numeric_limits<double>::infinity();
    const double step = opt.grid_step;
    for (double l0 = step; l0 < 1.0; l0 += step) {
        for (double t = step; t < 1.0; t += step) {
            for (double s = step; s < 1.0; s += step) {
                for (double g = step; g + s < 1.0; g += step) {
                    BKTParams p{l0, t, s, g};
                    const double ll = sequences_log_likelihood(p, seqs);
                    if (ll > best_ll) {
                        best_ll = ll;
                        best = p;
                    }
                }
            }
        }
    }
    return best;
}

// EM from several deterministic starts; the best identifiable solution wins.
// Falls back to the constrained grid if every start leaves the pG + pS < 1
// region (the label-flipped basin).
inline BKTParams fit(const std::vector<std::vector<int>>& seqs, FitOptions opt = {},
                     std::vector<double>* ll_trace = nullptr) {
    bool any = false;
    for (const auto& s : seqs) any = any || !s.empty();
    if (!any) fail(ErrorKind::insufficient_data, "no observations to fit");

    if (opt.method == FitMethod::grid) return fit_grid(seqs, opt);

    static const BKTParams starts[] = {
        {0.5, 0.2, 0.1, 0.1},
        {0.3, 0.1, 0.2, 0.2},
        {0.7, 0.3, 0.05, 0.3},
        {0.2, 0.25, 0.15, 0.1},
    };
    BKTParams best;
    double best_ll = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (const auto& start : starts) {
        std::vector<double> trace;
        BKTParams p = detail::run_em(seqs, start, opt, &trace);
        if (!p.identifiable()) continue;
        const double ll = sequences_log_likelihood(p, seqs);
        if (ll > best_ll) {
            best_ll = ll;
            best = p;
            found = true;
            if (ll_trace) *ll_trace = trace;
        }
    }
    if (!found) return fit_grid(seqs, opt);
    return best;
}

// ---------------------------------------------------------------------
//  Per-KC tables
// ---------------------------------------------------------------------

struct BKTTable {
    std::map<int, BKTParams> per_kc;
    BKTParams fallback;  // pooled fit, used for KCs unseen in training

    const BKTParams& params_for(int kc) const {
        auto it = per_kc.find(kc);
        return it == per_kc.end() ? fallback : it->second;
    }
};

// Groups each KC's responses (in temporal order per subsequence) and fits
// them independently; the fallback is fit on everything pooled.
inline BKTTable fit_per_kc(const std::map<int, std::vector<std::vector<int>>>& grouped,
                           FitOptions opt = {}) {
    BKTTable table;
    std::vector<std::vector<int>> all;
    for (const auto& [kc, seqs] : grouped) {
        table.per_kc[kc] = fit(seqs, opt);
        all.insert(all.end(), seqs.begin(), seqs.end());
    }
    if (all.empty()) fail(ErrorKind::insufficient_data, "no data for any KC");
    table.fallback = fit(all, opt);
    return table;
}

inline nlohmann::json to_json(const BKTParams& p) {
    return {{"pL0", p.pL0}, {"pT", p.pT}, {"pS", p.pS}, {"pG", p.pG}, {"pF", BKTParams::pF}};
}

inline BKTParams params_from_json(const nlohmann::json& j) {
    BKTParams p;
    p.pL0 = j.at("pL0").get<double>();
    p.pT = j.at("pT").get<double>();
    p.pS = j.at("pS").get<double>();
    p.pG = j.at("pG").get<double>();
    if (!p.valid()) fail(ErrorKind::schema, "BKT parameters outside [0,1]");
    return p;
}

inline nlohmann::json to_json(const BKTTable& t) {
    nlohmann::json per;
    for (const auto& [kc, p] : t.per_kc) per[std::to_string(kc)] = to_json(p);
    return {{"per_kc", per}, {"fallback", to_json(t.fallback)}};
}

inline BKTTable table_from_json(const nlohmann::json& j) {
    BKTTable t;
    for (auto it = j.at("per_kc").begin(); it != j.at("per_kc").end(); ++it) {
        t.per_kc[std::stoi(it.key())] = params_from_json(it.value());
    }
    t.fallback = params_from_json(j.at("fallback"));
    return t;
}

// Per-KC response streams: one HMM observation sequence per (subsequence,
// KC) pair, in temporal order, repeats included.
inline std::map<int, std::vector<std::vector<int>>> group_by_kc(
    const std::vector<InteractionSequence>& seqs) {
    std::map<int, std::vector<std::vector<int>>> grouped;
    for (const auto& seq : seqs) {
        std::unordered_map<int, std::vector<int>> local;
        const std::size_t real = seq.real_length();
        for (std::size_t t = 0; t < real; ++t) {
            const int y = seq.responses[t];
            if (y != 0 && y != 1) continue;
            local[seq.concepts[t]].push_back(y);
        }
        for (auto& [kc, responses] : local) grouped[kc].push_back(std::move(responses));
    }
    return grouped;
}

// ---------------------------------------------------------------------
//  Baseline predictor
// ---------------------------------------------------------------------

class BKTPredictor final : public StudentModel {
public:
    explicit BKTPredictor(BKTTable table) : table_(std::move(table)) {}

    ModelKind kind() const override { return ModelKind::bkt; }
    const BKTTable& table() const { return table_; }

    void predict_sequence(const InteractionSequence& seq, std::vector<std::size_t>& positions,
                          std::vector<double>& probs) const override {
        positions.clear();
        probs.clear();
        std::unordered_map<int, double> mastery;
        const std::size_t real = seq.real_length();
        for (std::size_t t = 0; t < real; ++t) {
            const int kc = seq.concepts[t];
            const auto& p = table_.params_for(kc);
            auto it = mastery.emplace(kc, p.pL0).first;
            if (seq.selectmask.empty() || seq.selectmask[t] == 1) {
                positions.push_back(t);
                probs.push_back(predict_correct(p, it->second));
            }
            const int y = seq.responses[t];
            if (y == 0 || y == 1) it->second = posterior_update(p, it->second, y);
        }
    }

    double predict_at(const InteractionSequence& seq, const std::vector<double>& responses,
                      std::size_t t) const override {
        if (t >= seq.length() || t > responses.size()) {
            fail(ErrorKind::contract, "predict_at position out of range");
        }
        std::unordered_map<int, double> mastery;
        for (std::size_t u = 0; u < t; ++u) {
            const int kc = seq.concepts[u];
            const auto& p = table_.params_for(kc);
            auto it = mastery.emplace(kc, p.pL0).first;
            const double r = responses[u];
            if (r != 0.0 && r != 1.0) {
                fail(ErrorKind::config, "the BKT filter consumes only 0/1 responses");
            }
            it->second = posterior_update(p, it->second, static_cast<int>(r));
        }
        const int kc = seq.concepts[t];
        const auto& p = table_.params_for(kc);
        auto it = mastery.emplace(kc, p.pL0).first;
        return predict_correct(p, it->second);
    }

    std::vector<double> predict_suffix_frozen(const InteractionSequence& seq,
                                              std::size_t prefix_len) const override {
        if (prefix_len == 0) fail(ErrorKind::protocol, "empty known prefix");
        const std::size_t real = seq.real_length();
        if (prefix_len > real) fail(ErrorKind::contract, "prefix exceeds sequence length");
        std::unordered_map<int, double> mastery;
        for (std::size_t u = 0; u < prefix_len; ++u) {
            const int kc = seq.concepts[u];
            const auto& p = table_.params_for(kc);
            auto it = mastery.emplace(kc, p.pL0).first;
            const int y = seq.responses[u];
            if (y != 0 && y != 1) fail(ErrorKind::data, "prefix response must be 0/1");
            it->second = posterior_update(p, it->second, y);
        }
        std::vector<double> out;
        out.reserve(real - prefix_len);
        for (std::size_t s = prefix_len; s < real; ++s) {
            const int kc = seq.concepts[s];
            const auto& p = table_.params_for(kc);
            const double m = mastery.count(kc) ? mastery.at(kc) : p.pL0;
            out.push_back(predict_correct(p, m));
        }
        return out;
    }

    nlohmann::json checkpoint() const override {
        return {{"format_version", kCheckpointVersion},
                {"kind", "bkt"},
                {"table", to_json(table_)}};
    }

    static std::unique_ptr<BKTPredictor> from_checkpoint(const nlohmann::json& j) {
        if (j.at("kind").get<std::string>() != "bkt") {
            fail(ErrorKind::schema, "checkpoint kind is not bkt");
        }
        return std::make_unique<BKTPredictor>(table_from_json(j.at("table")));
    }

private:
    BKTTable table_;
};

}  // namespace kt::bkt
