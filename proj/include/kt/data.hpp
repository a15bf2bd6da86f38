#pragma once

// Challenge file formats and transforms.
//
// train_valid_sequences.csv: header + one row per (sub)sequence with columns
//   fold, uid, questions, concepts, responses, timestamps, selectmasks,
//   is_repeat. List-valued cells are comma-joined integers inside one field.
//   Rows are KC-expanded and padded to a fixed window (200); selectmask is 1
//   on real positions and -1 on the padded tail; padded slots carry -1 in the
//   other list columns as well.
// pykt_test.csv: header + uid, questions, concepts, responses, timestamps
//   [, is_repeat]. Responses are 0/1 on the known prefix and -1 on the
//   to-be-predicted suffix. An is_repeat column means the rows are already
//   KC-expanded.
// keyid2idx.json: {"questions": {...}, "concepts": {...}, "uid": {...}},
//   each section mapping original id strings onto internal indices 0..n-1.
// questions.json: {"questions": {"<q>": {"content": [...], "answer": [...],
//   "kcs": [...]}}, "kcs": {"<k>": {"route": [...]}}}.

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kt/csv.hpp"
#include "kt/errors.hpp"

namespace kt {

inline constexpr int kPad = -1;
inline constexpr std::size_t kWindow = 200;

// ---------------------------------------------------------------------
//  Types
// ---------------------------------------------------------------------

struct IdMaps {
    std::unordered_map<std::string, int> question_map;
    std::unordered_map<std::string, int> kc_map;
    std::unordered_map<std::string, int> user_map;

    std::size_t num_questions() const { return question_map.size(); }
    std::size_t num_kcs() const { return kc_map.size(); }
    std::size_t num_users() const { return user_map.size(); }
};

struct InteractionSequence {
    long long uid = -1;
    int fold = -1;  // -1 when absent (test sequences)
    std::vector<int> questions;
    std::vector<int> concepts;
    std::vector<int> responses;      // 0/1, or -1 (padding or unknown)
    std::vector<long long> timestamps;
    std::vector<int> selectmask;     // 1 real, -1 padding; all 1 when column absent
    std::vector<int> is_repeat;

    std::size_t length() const { return questions.size(); }

    // Count of real (unpadded) positions; padding is always a suffix. An
    // absent selectmask column means every position is real.
    std::size_t real_length() const {
        if (selectmask.empty()) return length();
        std::size_t n = 0;
        while (n < selectmask.size() && selectmask[n] == 1) ++n;
        return n;
    }

    // Index of the first -1 response among real positions (the known-prefix
    // length of a test sequence).
    std::size_t known_prefix() const {
        std::size_t n = 0;
        const std::size_t real = real_length();
        while (n < real && responses[n] != -1) ++n;
        return n;
    }
};

struct QuestionInfo {
    std::vector<long long> content_tokens;
    std::vector<long long> answer_tokens;
    std::vector<int> kcs;
};

struct QuestionBank {
    std::vector<QuestionInfo> questions;                    // by internal question index
    std::map<int, std::vector<long long>> kc_routes;        // by internal KC index
};

struct ParseWarning {
    std::size_t line = 0;
    std::string message;
};

struct ParseReport {
    std::size_t rows = 0;
    std::size_t sequences = 0;
    std::vector<ParseWarning> warnings;

    void warn(std::size_t line, std::string msg) { warnings.push_back({line, std::move(msg)}); }
};

// ---------------------------------------------------------------------
//  keyid2idx.json
// ---------------------------------------------------------------------

namespace detail {

inline std::unordered_map<std::string, int> parse_id_section(const nlohmann::json& j,
                                                             const char* section) {
    if (!j.is_object()) {
        fail(ErrorKind::schema, std::string("keyid2idx section '") + section + "' is not an object");
    }
    std::unordered_map<std::string, int> out;
    std::vector<char> used(j.size(), 0);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_number_integer()) {
            fail(ErrorKind::schema, std::string("non-integer index in section '") + section + "'");
        }
        const long long idx = it.value().get<long long>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= j.size()) {
            fail(ErrorKind::corrupt_mapping,
                 std::string("section '") + section + "': index " + std::to_string(idx) +
                     " outside 0.." + std::to_string(j.size() ? j.size() - 1 : 0));
        }
        if (used[static_cast<std::size_t>(idx)]) {
            fail(ErrorKind::corrupt_mapping, std::string("section '") + section +
                                                 "': internal index " + std::to_string(idx) +
                                                 " assigned twice");
        }
        used[static_cast<std::size_t>(idx)] = 1;
        out.emplace(it.key(), static_cast<int>(idx));
    }
    // every index used exactly once and none out of range => bijection onto 0..n-1
    return out;
}

}  // namespace detail

inline IdMaps parse_keyid2idx(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::data, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, path + ": " + e.what());
    }
    for (const char* section : {"questions", "concepts", "uid"}) {
        if (!j.contains(section)) {
            fail(ErrorKind::schema, path + ": missing section '" + section + "'");
        }
    }
    IdMaps maps;
    maps.question_map = detail::parse_id_section(j["questions"], "questions");
    maps.kc_map = detail::parse_id_section(j["concepts"], "concepts");
    maps.user_map = detail::parse_id_section(j["uid"], "uid");
    return maps;
}

// ---------------------------------------------------------------------
//  Sequence validation
// ---------------------------------------------------------------------

namespace detail {

inline void check_parallel_lengths(const InteractionSequence& s, std::size_t line) {
    const std::size_t n = s.questions.size();
    const bool ok = s.concepts.size() == n && s.responses.size() == n &&
                    s.timestamps.size() == n &&
                    (s.selectmask.empty() || s.selectmask.size() == n) &&
                    (s.is_repeat.empty() || s.is_repeat.size() == n);
    if (!ok) {
        fail(ErrorKind::parse, "line " + std::to_string(line) +
                                   ": parallel list fields disagree in length");
    }
}

inline void check_common_invariants(const InteractionSequence& s, std::size_t line) {
    const std::size_t real = s.selectmask.empty() ? s.length() : s.real_length();
    if (!s.selectmask.empty()) {
        for (std::size_t t = 0; t < s.length(); ++t) {
            const int m = s.selectmask[t];
            if (m != 1 && m != -1) {
                fail(ErrorKind::schema,
                     "line " + std::to_string(line) + ": selectmask value must be 1 or -1");
            }
            if (t >= real && m == 1) {
                fail(ErrorKind::schema,
                     "line " + std::to_string(line) + ": selectmask padding is not a suffix");
            }
        }
    }
    long long prev_ts = std::numeric_limits<long long>::min();
    for (std::size_t t = 0; t < real; ++t) {
        if (s.questions[t] < 0 || s.concepts[t] < 0) {
            fail(ErrorKind::schema,
                 "line " + std::to_string(line) + ": negative question/concept index at position " +
                     std::to_string(t));
        }
        if (s.timestamps[t] < prev_ts) {
            fail(ErrorKind::schema,
                 "line " + std::to_string(line) + ": timestamps decrease at position " +
                     std::to_string(t));
        }
        prev_ts = s.timestamps[t];
        if (!s.is_repeat.empty()) {
            const int r = s.is_repeat[t];
            if (r != 0 && r != 1) {
                fail(ErrorKind::schema,
                     "line " + std::to_string(line) + ": is_repeat value must be 0 or 1");
            }
            // t == 0 with is_repeat 1 is a question group continued from the
            // previous chunk of the same student; accepted.
            if (r == 1 && t > 0 && s.questions[t] != s.questions[t - 1]) {
                fail(ErrorKind::data,
                     "line " + std::to_string(line) + ": is_repeat set but question changes at " +
                         std::to_string(t));
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------
//  train_valid_sequences.csv
// ---------------------------------------------------------------------

namespace detail {

inline std::unordered_map<std::string, std::size_t> index_header(
    const std::vector<std::string>& header, const std::vector<std::string>& required,
    ParseReport& report, const std::vector<std::string>& known_optional = {}) {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
    for (const auto& col : required) {
        if (!idx.count(col)) fail(ErrorKind::schema, "missing required column '" + col + "'");
    }
    for (const auto& col : header) {
        const bool req = std::find(required.begin(), required.end(), col) != required.end();
        const bool opt =
            std::find(known_optional.begin(), known_optional.end(), col) != known_optional.end();
        if (!req && !opt) report.warn(1, "ignoring unknown column '" + col + "'");
    }
    return idx;
}

}  // namespace detail

inline std::vector<InteractionSequence> parse_train_valid(const std::string& path,
                                                          ParseReport* report_out = nullptr) {
    ParseReport report;
    auto rows = read_csv(path);
    if (rows.empty()) fail(ErrorKind::schema, path + ": empty file");
    static const std::vector<std::string> required = {"fold",       "uid",        "questions",
                                                      "concepts",   "responses",  "timestamps",
                                                      "selectmasks", "is_repeat"};
    auto idx = detail::index_header(rows[0].fields, required, report);

    std::vector<InteractionSequence> out;
    std::optional<std::size_t> window;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::size_t line = row.line;
        if (row.fields.size() != rows[0].fields.size()) {
            fail(ErrorKind::parse, "line " + std::to_string(line) + ": expected " +
                                       std::to_string(rows[0].fields.size()) + " fields, got " +
                                       std::to_string(row.fields.size()));
        }
        InteractionSequence s;
        s.fold = parse_int<int>(row.fields[idx.at("fold")], line, "fold");
        if (s.fold < 0 || s.fold > 4) {
            fail(ErrorKind::schema,
                 "line " + std::to_string(line) + ": fold " + std::to_string(s.fold) +
                     " outside 0..4");
        }
        s.uid = parse_int<long long>(row.fields[idx.at("uid")], line, "uid");
        s.questions = parse_int_list<int>(row.fields[idx.at("questions")], line, "questions");
        s.concepts = parse_int_list<int>(row.fields[idx.at("concepts")], line, "concepts");
        s.responses = parse_int_list<int>(row.fields[idx.at("responses")], line, "responses");
        s.timestamps =
            parse_int_list<long long>(row.fields[idx.at("timestamps")], line, "timestamps");
        s.selectmask = parse_int_list<int>(row.fields[idx.at("selectmasks")], line, "selectmasks");
        s.is_repeat = parse_int_list<int>(row.fields[idx.at("is_repeat")], line, "is_repeat");
        detail::check_parallel_lengths(s, line);
        detail::check_common_invariants(s, line);
        for (std::size_t t = 0; t < s.real_length(); ++t) {
            if (s.responses[t] != 0 && s.responses[t] != 1) {
                fail(ErrorKind::schema, "line " + std::to_string(line) +
                                            ": training response must be 0 or 1 at position " +
                                            std::to_string(t));
            }
        }
        if (!window) {
            window = s.length();
            if (*window != kWindow) {
                report.warn(line, "sequence window is " + std::to_string(*window) +
                                      ", challenge files use " + std::to_string(kWindow));
            }
        } else if (s.length() != *window) {
            fail(ErrorKind::schema,
                 "line " + std::to_string(line) + ": inconsistent padded length " +
                     std::to_string(s.length()) + " (file window is " + std::to_string(*window) +
                     ")");
        }
        ++report.rows;
        out.push_back(std::move(s));
    }
    report.sequences = out.size();
    if (report_out) *report_out = std::move(report);
    return out;
}

// ---------------------------------------------------------------------
//  pykt_test.csv
// ---------------------------------------------------------------------

inline std::vector<InteractionSequence> parse_test(const std::string& path,
                                                   ParseReport* report_out = nullptr) {
    ParseReport report;
    auto rows = read_csv(path);
    if (rows.empty()) fail(ErrorKind::schema, path + ": empty file");
    static const std::vector<std::string> required = {"uid", "questions", "concepts", "responses",
                                                      "timestamps"};
    static const std::vector<std::string> optional = {"is_repeat"};
    auto idx = detail::index_header(rows[0].fields, required, report, optional);
    const bool expanded = idx.count("is_repeat") > 0;

    std::vector<InteractionSequence> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::size_t line = row.line;
        if (row.fields.size() != rows[0].fields.size()) {
            fail(ErrorKind::parse, "line " + std::to_string(line) + ": expected " +
                                       std::to_string(rows[0].fields.size()) + " fields, got " +
                                       std::to_string(row.fields.size()));
        }
        InteractionSequence s;
        s.uid = parse_int<long long>(row.fields[idx.at("uid")], line, "uid");
        s.questions = parse_int_list<int>(row.fields[idx.at("questions")], line, "questions");
        s.concepts = parse_int_list<int>(row.fields[idx.at("concepts")], line, "concepts");
        s.responses = parse_int_list<int>(row.fields[idx.at("responses")], line, "responses");
        s.timestamps =
            parse_int_list<long long>(row.fields[idx.at("timestamps")], line, "timestamps");
        if (expanded) {
            s.is_repeat = parse_int_list<int>(row.fields[idx.at("is_repeat")], line, "is_repeat");
        }
        detail::check_parallel_lengths(s, line);
        detail::check_common_invariants(s, line);

        // known prefix of 0/1 responses, then a -1 suffix; no interleaving
        bool seen_unknown = false;
        for (std::size_t t = 0; t < s.length(); ++t) {
            const int y = s.responses[t];
            if (y == -1) {
                seen_unknown = true;
            } else if (y == 0 || y == 1) {
                if (seen_unknown) {
                    fail(ErrorKind::protocol,
                         "line " + std::to_string(line) +
                             ": known response after a -1 placeholder at position " +
                             std::to_string(t));
                }
            } else {
                fail(ErrorKind::schema, "line " + std::to_string(line) +
                                            ": test response must be 0, 1 or -1");
            }
        }
        if (!seen_unknown) report.warn(line, "test sequence has no -1 responses to predict");
        if (s.known_prefix() == 0) report.warn(line, "test sequence has an empty known prefix");
        ++report.rows;
        out.push_back(std::move(s));
    }
    report.sequences = out.size();
    if (report_out) *report_out = std::move(report);
    return out;
}

// ---------------------------------------------------------------------
//  questions.json
// ---------------------------------------------------------------------

inline QuestionBank parse_questions(const std::string& path, const IdMaps* maps = nullptr) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::data, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, path + ": " + e.what());
    }
    if (!j.contains("questions") || !j["questions"].is_object()) {
        fail(ErrorKind::schema, path + ": missing 'questions' object");
    }
    QuestionBank bank;
    const auto& qs = j["questions"];
    bank.questions.resize(qs.size());
    for (auto it = qs.begin(); it != qs.end(); ++it) {
        const long long qi = parse_int<long long>(it.key(), 0, "question key");
        if (qi < 0 || static_cast<std::size_t>(qi) >= qs.size()) {
            fail(ErrorKind::schema, path + ": question index " + it.key() + " out of range");
        }
        QuestionInfo info;
        const auto& val = it.value();
        if (val.contains("content")) info.content_tokens = val["content"].get<std::vector<long long>>();
        if (val.contains("answer")) info.answer_tokens = val["answer"].get<std::vector<long long>>();
        if (!val.contains("kcs") || !val["kcs"].is_array() || val["kcs"].empty()) {
            fail(ErrorKind::data, path + ": question " + it.key() + " lists no KCs");
        }
        info.kcs = val["kcs"].get<std::vector<int>>();
        for (int kc : info.kcs) {
            if (kc < 0) fail(ErrorKind::schema, path + ": negative KC index");
            if (maps && static_cast<std::size_t>(kc) >= maps->num_kcs()) {
                fail(ErrorKind::data, path + ": question " + it.key() + " references KC " +
                                          std::to_string(kc) + " outside the id mapping");
            }
        }
        bank.questions[static_cast<std::size_t>(qi)] = std::move(info);
    }
    if (j.contains("kcs") && j["kcs"].is_object()) {
        for (auto it = j["kcs"].begin(); it != j["kcs"].end(); ++it) {
            const int ki = parse_int<int>(it.key(), 0, "kc key");
            if (it.value().contains("route")) {
                bank.kc_routes[ki] = it.value()["route"].get<std::vector<long long>>();
            }
        }
    }
    return bank;
}

// ---------------------------------------------------------------------
//  Transforms
// ---------------------------------------------------------------------

// One question-level position becomes one row per KC, all sharing the
// question's response and timestamp; is_repeat marks rows 2..k of a group.
inline InteractionSequence expand_to_kc_level(const InteractionSequence& seq,
                                              const QuestionBank& bank) {
    InteractionSequence out;
    out.uid = seq.uid;
    out.fold = seq.fold;
    for (std::size_t t = 0; t < seq.length(); ++t) {
        const int q = seq.questions[t];
        if (q < 0 || static_cast<std::size_t>(q) >= bank.questions.size()) {
            fail(ErrorKind::data, "question index " + std::to_string(q) + " outside the bank");
        }
        const auto& kcs = bank.questions[static_cast<std::size_t>(q)].kcs;
        if (kcs.empty()) fail(ErrorKind::data, "question " + std::to_string(q) + " has no KCs");
        for (std::size_t i = 0; i < kcs.size(); ++i) {
            out.questions.push_back(q);
            out.concepts.push_back(kcs[i]);
            out.responses.push_back(seq.responses[t]);
            out.timestamps.push_back(seq.timestamps[t]);
            out.is_repeat.push_back(i == 0 ? 0 : 1);
        }
    }
    return out;
}

// Consecutive non-overlapping chunks of at most `window` positions, each
// right-padded to `window`. Concatenating the unpadded parts reproduces the
// input exactly.
inline std::vector<InteractionSequence> truncate_and_pad(const InteractionSequence& seq,
                                                         std::size_t window = kWindow) {
    if (window == 0) fail(ErrorKind::config, "window must be at least 1");
    std::vector<InteractionSequence> out;
    const std::size_t n = seq.length();
    for (std::size_t start = 0; start < n; start += window) {
        const std::size_t len = std::min(window, n - start);
        InteractionSequence chunk;
        chunk.uid = seq.uid;
        chunk.fold = seq.fold;
        chunk.questions.assign(seq.questions.begin() + start, seq.questions.begin() + start + len);
        chunk.concepts.assign(seq.concepts.begin() + start, seq.concepts.begin() + start + len);
        chunk.responses.assign(seq.responses.begin() + start, seq.responses.begin() + start + len);
        chunk.timestamps.assign(seq.timestamps.begin() + start,
                                seq.timestamps.begin() + start + len);
        if (!seq.is_repeat.empty()) {
            chunk.is_repeat.assign(seq.is_repeat.begin() + start,
                                   seq.is_repeat.begin() + start + len);
        } else {
            chunk.is_repeat.assign(len, 0);
        }
        chunk.selectmask.assign(len, 1);
        chunk.questions.resize(window, kPad);
        chunk.concepts.resize(window, kPad);
        chunk.responses.resize(window, kPad);
        chunk.timestamps.resize(window, kPad);
        chunk.is_repeat.resize(window, 0);
        chunk.selectmask.resize(window, -1);
        out.push_back(std::move(chunk));
    }
    return out;
}

// ---------------------------------------------------------------------
//  Statistics
// ---------------------------------------------------------------------

struct DatasetStats {
    std::size_t students = 0;
    std::size_t questions = 0;
    std::size_t kcs = 0;
    std::size_t interactions = 0;  // question-level: real positions with is_repeat == 0
    double mean_sequence_length = 0.0;
    double positive_rate = 0.0;

    nlohmann::json to_json() const {
        return {{"students", students},
                {"questions", questions},
                {"kcs", kcs},
                {"interactions", interactions},
                {"mean_sequence_length", mean_sequence_length},
                {"positive_rate", positive_rate}};
    }
};

// Question/KC/user counts come from the id mapping when provided (the
// challenge's official numbers); otherwise distinct values in the data.
inline DatasetStats dataset_stats(const std::vector<InteractionSequence>& seqs,
                                  const IdMaps* maps = nullptr) {
    DatasetStats st;
    std::unordered_map<long long, char> users;
    std::unordered_map<int, char> questions, kcs;
    std::size_t positives = 0;
    for (const auto& s : seqs) {
        users.emplace(s.uid, 1);
        const std::size_t real = s.selectmask.empty() ? s.length() : s.real_length();
        for (std::size_t t = 0; t < real; ++t) {
            questions.emplace(s.questions[t], 1);
            kcs.emplace(s.concepts[t], 1);
            const bool head = s.is_repeat.empty() || s.is_repeat[t] == 0;
            if (!head) continue;
            ++st.interactions;
            if (s.responses[t] == 1) ++positives;
        }
    }
    st.students = users.size();
    st.questions = maps ? maps->num_questions() : questions.size();
    st.kcs = maps ? maps->num_kcs() : kcs.size();
    if (maps && maps->num_users() > 0) st.students = std::max(st.students, maps->num_users());
    if (st.students > 0) {
        st.mean_sequence_length =
            static_cast<double>(st.interactions) / static_cast<double>(st.students);
    }
    if (st.interactions > 0) {
        st.positive_rate = static_cast<double>(positives) / static_cast<double>(st.interactions);
    }
    return st;
}

// ---------------------------------------------------------------------
//  Writers (the synth module and the submission writer share these)
// ---------------------------------------------------------------------

namespace detail {

template <class Int>
inline std::string join_ints(const std::vector<Int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace detail

inline void write_train_valid(const std::string& path,
                              const std::vector<InteractionSequence>& seqs) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::data, "cannot write " + path);
    out << "fold,uid,questions,concepts,responses,timestamps,selectmasks,is_repeat\n";
    for (const auto& s : seqs) {
        std::vector<std::string> fields = {
            std::to_string(s.fold),
            std::to_string(s.uid),
            detail::join_ints(s.questions),
            detail::join_ints(s.concepts),
            detail::join_ints(s.responses),
            detail::join_ints(s.timestamps),
            detail::join_ints(s.selectmask),
            detail::join_ints(s.is_repeat),
        };
        out << csv_join(fields) << '\n';
    }
}

inline void write_test(const std::string& path, const std::vector<InteractionSequence>& seqs) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::data, "cannot write " + path);
    out << "uid,questions,concepts,responses,timestamps,is_repeat\n";
    for (const auto& s : seqs) {
        std::vector<std::string> fields = {
            std::to_string(s.uid),
            detail::join_ints(s.questions),
            detail::join_ints(s.concepts),
            detail::join_ints(s.responses),
            detail::join_ints(s.timestamps),
            detail::join_ints(s.is_repeat),
        };
        out << csv_join(fields) << '\n';
    }
}

}  // namespace kt
