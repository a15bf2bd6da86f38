#pragma once

// Small RFC-4180-style CSV layer. List-valued cells in the challenge files
// are comma-joined integers inside one field, so those fields arrive quoted;
// the reader unquotes them and the writer re-quotes anything containing a
// comma, quote, or newline.

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

#include "kt/errors.hpp"

namespace kt {

struct CsvRow {
    std::size_t line = 0;  // 1-based line of the record start
    std::vector<std::string> fields;
};

namespace detail {

inline bool csv_split(const std::string& record, std::vector<std::string>& out, std::size_t line) {
    out.clear();
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < record.size(); ++i) {
        const char c = record[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < record.size() && record[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) fail(ErrorKind::parse, "unterminated quote at line " + std::to_string(line));
    out.push_back(std::move(cur));
    return true;
}

}  // namespace detail

// Reads all records. Quoted fields may not span lines (the challenge files
// never need that).
inline std::vector<CsvRow> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::data, "cannot open " + path);
    std::vector<CsvRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        CsvRow row;
        row.line = lineno;
        detail::csv_split(line, row.fields, lineno);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string csv_encode_field(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string csv_join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_encode_field(fields[i]);
    }
    return out;
}

// Splits a physical CSV line into raw (still-quoted) field spellings. Used
// where untouched columns must round-trip byte for byte.
inline std::vector<std::string> csv_split_raw(const std::string& record, std::size_t line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < record.size(); ++i) {
        const char c = record[i];
        if (c == '"') {
            quoted = !quoted;
            cur.push_back(c);
        } else if (c == ',' && !quoted) {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) fail(ErrorKind::parse, "unterminated quote at line " + std::to_string(line));
    out.push_back(std::move(cur));
    return out;
}

inline std::string csv_decode_raw(const std::string& raw) {
    std::string out;
    bool quoted = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char c = raw[i];
        if (c == '"') {
            if (quoted && i + 1 < raw.size() && raw[i + 1] == '"') {
                out.push_back('"');
                ++i;
            } else {
                quoted = !quoted;
            }
        } else {
            out.push_back(c);
        }
    }
    return out;
}

template <class Int>
inline Int parse_int(const std::string& s, std::size_t line, const char* what) {
    Int v{};
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc{} || res.ptr != e) {
        fail(ErrorKind::parse, std::string("line ") + std::to_string(line) + ": bad " + what +
                                   " value '" + s + "'");
    }
    return v;
}

// Comma-separated integers inside one decoded cell.
template <class Int>
inline std::vector<Int> parse_int_list(const std::string& cell, std::size_t line, const char* what) {
    std::vector<Int> out;
    if (cell.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = cell.find(',', start);
        const std::string tok = cell.substr(start, pos == std::string::npos ? pos : pos - start);
        out.push_back(parse_int<Int>(tok, line, what));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace kt
