#pragma once

#include <stdexcept>
#include <string>

namespace kt {

enum class ErrorKind {
    dimension,
    schema,
    parse,
    protocol,
    config,
    numeric,
    data,
    contract,
    empty_support,
    insufficient_data,
    degenerate_evidence,
    completeness,
    evaluation,
    corrupt_mapping,
    no_signal,
    index,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::schema: return "schema";
        case ErrorKind::parse: return "parse";
        case ErrorKind::protocol: return "protocol";
        case ErrorKind::config: return "config";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::data: return "data";
        case ErrorKind::contract: return "contract";
        case ErrorKind::empty_support: return "empty-support";
        case ErrorKind::insufficient_data: return "insufficient-data";
        case ErrorKind::degenerate_evidence: return "degenerate-evidence";
        case ErrorKind::completeness: return "completeness";
        case ErrorKind::evaluation: return "evaluation";
        case ErrorKind::corrupt_mapping: return "corrupt-mapping";
        case ErrorKind::no_signal: return "no-signal";
        case ErrorKind::index: return "index";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

}  // namespace kt
