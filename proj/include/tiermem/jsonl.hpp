#pragma once

#include "tiermem/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tiermem::jsonl {

using nlohmann::json;

// One JSON object per line. Blank lines are not tolerated: a snapshot is
// written by us and any deviation means corruption.
inline std::vector<json> parse_lines(std::istream& in) {
    std::vector<json> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded())
            throw CorruptRecordError("unparseable JSONL record", line_no);
        records.push_back(std::move(j));
    }
    return records;
}

inline std::vector<json> read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open " + path);
    return parse_lines(in);
}

inline void write_file(const std::string& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path);
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out) throw StorageError("write failed for " + path);
}

inline void append_line(const std::string& path, const json& record) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw StorageError("cannot append to " + path);
    out << record.dump() << '\n';
    if (!out) throw StorageError("append failed for " + path);
}

inline std::string dump_lines(const std::vector<json>& records) {
    std::ostringstream os;
    for (const auto& r : records) os << r.dump() << '\n';
    return os.str();
}

} // namespace tiermem::jsonl
