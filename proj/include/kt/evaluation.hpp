#pragma once

// Metrics and the challenge test protocol.
//
// AUC is the Mann-Whitney statistic (concordant + half the ties over
// positive*negative pairs), computed from a sort. The doubled numerator is
// kept as an integer so the result is bit-identical to naive pair counting.
//
// Test-time filling runs in two modes: non-accumulative (state frozen after
// the known prefix, every suffix position predicted from it) and accumulative
// (left to right, each prediction binarized and fed back as the response
// input for later steps; a flag switches DKT/AKT to raw-probability
// feedback).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "kt/csv.hpp"
#include "kt/data.hpp"
#include "kt/dkt.hpp"
#include "kt/errors.hpp"
#include "kt/model.hpp"

namespace kt::eval {

// ---------------------------------------------------------------------
//  Metrics
// ---------------------------------------------------------------------

// Doubled Mann-Whitney numerator: 2 per concordant (positive above negative)
// pair plus 1 per tied pair.
inline std::uint64_t auc_numerator2(const std::vector<double>& scores,
                                    const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::uint64_t num2 = 0;
    std::uint64_t neg_below = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        std::uint64_t pos_tied = 0, neg_tied = 0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? pos_tied : neg_tied)++;
            ++j;
        }
        num2 += pos_tied * (2 * neg_below + neg_tied);
        neg_below += neg_tied;
        i = j;
    }
    return num2;
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) fail(ErrorKind::dimension, "auc inputs disagree in length");
    std::uint64_t pos = 0, neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) fail(ErrorKind::contract, "auc labels must be 0 or 1");
        (y == 1 ? pos : neg)++;
    }
    if (pos == 0 || neg == 0) {
        fail(ErrorKind::evaluation, "AUC undefined: only one class present");
    }
    return static_cast<double>(auc_numerator2(scores, labels)) /
           (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5) {
    if (scores.empty() || scores.size() != labels.size()) {
        fail(ErrorKind::contract, "accuracy needs nonempty, equal-length inputs");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int pred = scores[i] >= threshold ? 1 : 0;
        hits += (pred == labels[i]);
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------
//  Test protocol
// ---------------------------------------------------------------------

enum class PredictionMode { accumulative, non_accumulative };

inline const char* to_string(PredictionMode m) {
    return m == PredictionMode::accumulative ? "accumulative" : "non_accumulative";
}
inline PredictionMode mode_from_string(const std::string& s) {
    if (s == "accumulative") return PredictionMode::accumulative;
    if (s == "non-accumulative" || s == "non_accumulative") return PredictionMode::non_accumulative;
    fail(ErrorKind::config, "unknown prediction mode '" + s + "'");
}

struct EvalOptions {
    PredictionMode mode = PredictionMode::non_accumulative;
    bool prob_feedback = false;   // DKT/AKT only: feed raw probabilities back
    bool question_level = false;  // also score with is_repeat groups fused
};

struct SequenceFills {
    std::size_t prefix_len = 0;
    std::vector<double> probs;  // one per suffix position
    std::vector<int> binary;
};

inline SequenceFills predict_sequence_fills(const StudentModel& model,
                                            const InteractionSequence& seq,
                                            const EvalOptions& opt) {
    SequenceFills out;
    out.prefix_len = seq.known_prefix();
    if (out.prefix_len == 0) fail(ErrorKind::protocol, "test sequence has an empty known prefix");
    const std::size_t real = seq.real_length();
    if (opt.prob_feedback && model.kind() == ModelKind::bkt) {
        fail(ErrorKind::config, "probability feedback is a DKT/AKT option");
    }
    if (opt.mode == PredictionMode::non_accumulative) {
        out.probs = model.predict_suffix_frozen(seq, out.prefix_len);
    } else {
        std::vector<double> responses(real, 0.0);
        for (std::size_t t = 0; t < out.prefix_len; ++t) {
            responses[t] = static_cast<double>(seq.responses[t]);
        }
        for (std::size_t s = out.prefix_len; s < real; ++s) {
            const double p = model.predict_at(seq, responses, s);
            out.probs.push_back(p);
            responses[s] = opt.prob_feedback ? p : static_cast<double>(dkt::binarize(p));
        }
    }
    out.binary.reserve(out.probs.size());
    for (double p : out.probs) out.binary.push_back(dkt::binarize(p));
    return out;
}

inline std::vector<SequenceFills> predict_fills(const StudentModel& model,
                                                const std::vector<InteractionSequence>& tests,
                                                const EvalOptions& opt) {
    std::vector<SequenceFills> out;
    out.reserve(tests.size());
    for (const auto& seq : tests) out.push_back(predict_sequence_fills(model, seq, opt));
    return out;
}

// ---------------------------------------------------------------------
//  Reports
// ---------------------------------------------------------------------

struct EvalReport {
    std::string mode;
    std::size_t scored = 0;
    double auc_value = 0.0;
    double accuracy_value = 0.0;
    double macro_auc = 0.0;        // mean of per-sequence AUCs where defined
    std::size_t macro_sequences = 0;
    bool has_question_level = false;
    double auc_question = 0.0;
    double accuracy_question = 0.0;
    std::map<int, double> per_fold_auc;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"mode", mode},
                            {"scored", scored},
                            {"auc", auc_value},
                            {"accuracy", accuracy_value},
                            {"macro_auc", macro_auc},
                            {"macro_sequences", macro_sequences}};
        if (has_question_level) {
            j["question_level"] = {{"auc", auc_question}, {"accuracy", accuracy_question}};
        }
        if (!per_fold_auc.empty()) {
            nlohmann::json folds;
            for (const auto& [fold, v] : per_fold_auc) folds[std::to_string(fold)] = v;
            j["per_fold_auc"] = folds;
        }
        return j;
    }
};

// Scores test fills against known true suffix responses (synth ground truth
// or any fully-labeled copy of the test file).
inline EvalReport evaluate_test(const StudentModel& model,
                                const std::vector<InteractionSequence>& tests,
                                const std::vector<std::vector<int>>& true_suffixes,
                                const EvalOptions& opt) {
    if (tests.size() != true_suffixes.size()) {
        fail(ErrorKind::dimension, "one true suffix list per test sequence required");
    }
    auto fills = predict_fills(model, tests, opt);

    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;
    std::vector<double> q_scores;
    std::vector<int> q_labels;
    double macro_sum = 0.0;
    std::size_t macro_n = 0;

    for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto& seq = tests[i];
        const auto& fill = fills[i];
        const auto& truth = true_suffixes[i];
        if (truth.size() != fill.probs.size()) {
            fail(ErrorKind::dimension, "true suffix length mismatch at sequence " +
                                           std::to_string(i));
        }
        for (std::size_t s = 0; s < truth.size(); ++s) {
            pooled_scores.push_back(fill.probs[s]);
            pooled_labels.push_back(truth[s]);
        }
        bool has0 = false, has1 = false;
        for (int y : truth) (y == 1 ? has1 : has0) = true;
        if (has0 && has1) {
            macro_sum += auc(std::vector<double>(fill.probs.begin(), fill.probs.end()),
                             truth);
            ++macro_n;
        }
        if (opt.question_level && !seq.is_repeat.empty()) {
            std::size_t s = 0;
            while (s < truth.size()) {
                std::size_t e = s + 1;
                while (e < truth.size() &&
                       seq.is_repeat[fill.prefix_len + e] == 1) {
                    ++e;
                }
                double mean_p = 0.0;
                for (std::size_t u = s; u < e; ++u) mean_p += fill.probs[u];
                q_scores.push_back(mean_p / static_cast<double>(e - s));
                q_labels.push_back(truth[s]);
                s = e;
            }
        }
    }

    EvalReport report;
    report.mode = to_string(opt.mode);
    report.scored = pooled_scores.size();
    report.auc_value = auc(pooled_scores, pooled_labels);
    report.accuracy_value = accuracy(pooled_scores, pooled_labels);
    if (macro_n > 0) {
        report.macro_auc = macro_sum / static_cast<double>(macro_n);
        report.macro_sequences = macro_n;
    }
    if (opt.question_level && !q_scores.empty()) {
        report.has_question_level = true;
        report.auc_question = auc(q_scores, q_labels);
        report.accuracy_question = accuracy(q_scores, q_labels);
    }
    return report;
}

// Next-step validation scoring over training-style subsequences.
inline EvalReport evaluate_validation(const StudentModel& model,
                                      const std::vector<InteractionSequence>& seqs) {
    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> per_fold;
    std::vector<std::size_t> positions;
    std::vector<double> probs;
    for (const auto& seq : seqs) {
        model.predict_sequence(seq, positions, probs);
        for (std::size_t i = 0; i < positions.size(); ++i) {
            const int y = seq.responses[positions[i]];
            if (y != 0 && y != 1) continue;
            pooled_scores.push_back(probs[i]);
            pooled_labels.push_back(y);
            if (seq.fold >= 0) {
                per_fold[seq.fold].first.push_back(probs[i]);
                per_fold[seq.fold].second.push_back(y);
            }
        }
    }
    EvalReport report;
    report.mode = "validation";
    report.scored = pooled_scores.size();
    report.auc_value = auc(pooled_scores, pooled_labels);
    report.accuracy_value = accuracy(pooled_scores, pooled_labels);
    for (const auto& [fold, sl] : per_fold) {
        bool has0 = false, has1 = false;
        for (int y : sl.second) (y == 1 ? has1 : has0) = true;
        if (has0 && has1) report.per_fold_auc[fold] = auc(sl.first, sl.second);
    }
    return report;
}

// ---------------------------------------------------------------------
//  Submission writer
// ---------------------------------------------------------------------

namespace detail_sub {

inline std::string format_prob(double p) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", p);
    return buf;
}

}  // namespace detail_sub

// Rewrites the test CSV with -1 responses replaced by predicted
// probabilities and a trailing responses_binarized column; every other
// column passes through byte for byte.
inline void write_submission(const std::string& input_path,
                             const std::vector<SequenceFills>& fills,
                             const std::string& output_path) {
    std::ifstream in(input_path);
    if (!in) fail(ErrorKind::data, "cannot open " + input_path);
    std::ofstream out(output_path);
    if (!out) fail(ErrorKind::data, "cannot write " + output_path);

    std::string line;
    std::size_t lineno = 0;
    std::size_t responses_col = std::string::npos;
    std::size_t row_index = 0;
    bool header_done = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto raw = csv_split_raw(line, lineno);
        if (!header_done) {
            for (std::size_t i = 0; i < raw.size(); ++i) {
                if (csv_decode_raw(raw[i]) == "responses") responses_col = i;
            }
            if (responses_col == std::string::npos) {
                fail(ErrorKind::schema, input_path + ": no responses column");
            }
            out << line << ",responses_binarized\n";
            header_done = true;
            continue;
        }
        if (row_index >= fills.size()) {
            fail(ErrorKind::completeness, "more test rows than fills (row " +
                                              std::to_string(row_index + 1) + ")");
        }
        const auto& fill = fills[row_index];
        auto responses = parse_int_list<int>(csv_decode_raw(raw[responses_col]), lineno,
                                             "responses");
        std::vector<std::string> resp_out;
        std::vector<std::string> binar_out;
        std::size_t suffix_i = 0;
        for (std::size_t t = 0; t < responses.size(); ++t) {
            if (responses[t] == -1) {
                if (suffix_i >= fill.probs.size()) {
                    fail(ErrorKind::completeness, "line " + std::to_string(lineno) +
                                                      ": missing fill for position " +
                                                      std::to_string(t));
                }
                resp_out.push_back(detail_sub::format_prob(fill.probs[suffix_i]));
                binar_out.push_back(std::to_string(fill.binary[suffix_i]));
                ++suffix_i;
            } else {
                resp_out.push_back(std::to_string(responses[t]));
                binar_out.push_back(std::to_string(responses[t]));
            }
        }
        if (suffix_i != fill.probs.size()) {
            fail(ErrorKind::completeness, "line " + std::to_string(lineno) +
                                              ": fill count does not match -1 positions");
        }
        std::string resp_field;
        std::string binar_field;
        for (std::size_t t = 0; t < resp_out.size(); ++t) {
            if (t) {
                resp_field.push_back(',');
                binar_field.push_back(',');
            }
            resp_field += resp_out[t];
            binar_field += binar_out[t];
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (i) out << ',';
            out << (i == responses_col ? csv_encode_field(resp_field) : raw[i]);
        }
        out << ',' << csv_encode_field(binar_field) << '\n';
        ++row_index;
    }
    if (row_index != fills.size()) {
        fail(ErrorKind::completeness, "fills for " + std::to_string(fills.size()) +
                                          " sequences but file has " + std::to_string(row_index) +
                                          " rows");
    }
}

}  // namespace kt::eval
