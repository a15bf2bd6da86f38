#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include "kt/data.hpp"

namespace fixtures {

inline std::filesystem::path scratch_dir() {
    static const std::filesystem::path dir = [] {
        auto d = std::filesystem::temp_directory_path() / "kt_tests";
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

inline std::string write_file(const std::string& name, const std::string& content) {
    static std::atomic<int> counter{0};
    auto path = scratch_dir() / (std::to_string(counter++) + "_" + name);
    std::ofstream out(path);
    out << content;
    out.close();
    return path.string();
}

// A padded training row in challenge layout. `len` real interactions.
inline kt::InteractionSequence padded_seq(long long uid, int fold, std::size_t len,
                                          std::size_t window = kt::kWindow) {
    kt::InteractionSequence s;
    s.uid = uid;
    s.fold = fold;
    for (std::size_t t = 0; t < len; ++t) {
        s.questions.push_back(static_cast<int>(t % 5));
        s.concepts.push_back(static_cast<int>(t % 3));
        s.responses.push_back(static_cast<int>(t % 2));
        s.timestamps.push_back(1000 + 60000LL * static_cast<long long>(t));
        s.selectmask.push_back(1);
        s.is_repeat.push_back(0);
    }
    s.questions.resize(window, kt::kPad);
    s.concepts.resize(window, kt::kPad);
    s.responses.resize(window, kt::kPad);
    s.timestamps.resize(window, kt::kPad);
    s.is_repeat.resize(window, 0);
    s.selectmask.resize(window, -1);
    return s;
}

}  // namespace fixtures
