#pragma once

#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "kt/akt.hpp"
#include "kt/bkt.hpp"
#include "kt/dkt.hpp"
#include "kt/model.hpp"

namespace kt {

inline std::unique_ptr<StudentModel> load_checkpoint(const nlohmann::json& j) {
    if (!j.contains("kind")) fail(ErrorKind::schema, "checkpoint has no model-kind tag");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "bkt") return bkt::BKTPredictor::from_checkpoint(j);
    if (kind == "dkt") return dkt::DKTModel::from_checkpoint(j);
    if (kind == "akt") return akt::AKTModel::from_checkpoint(j);
    fail(ErrorKind::schema, "unknown checkpoint kind '" + kind + "'");
}

inline std::unique_ptr<StudentModel> load_checkpoint_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::data, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, path + ": " + e.what());
    }
    return load_checkpoint(j);
}

inline void save_checkpoint_file(const StudentModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::data, "cannot write " + path);
    out << model.checkpoint().dump() << '\n';
}

}  // namespace kt
