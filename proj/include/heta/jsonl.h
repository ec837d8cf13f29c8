#pragma once

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "heta/error.h"

namespace heta {

// Line-delimited JSON with per-line schema_version checking. Parse failures
// report the 1-based line number.
inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("jsonl write: cannot open " + path);
    for (const nlohmann::json& r : rows) f << r.dump() << "\n";
    if (!f) throw IoError("jsonl write: write failed for " + path);
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path, int expect_version) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("jsonl read: cannot open " + path);
    std::vector<nlohmann::json> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": malformed record: " +
                          e.what());
        }
        int ver = j.value("schema_version", -1);
        if (ver != expect_version)
            throw IoError(path + ":" + std::to_string(lineno) + ": schema_version " +
                          std::to_string(ver) + " not supported (expected " +
                          std::to_string(expect_version) + ")");
        rows.push_back(std::move(j));
    }
    return rows;
}

}  // namespace heta
