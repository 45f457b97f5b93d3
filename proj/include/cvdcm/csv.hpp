#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cvdcm/common.hpp"

namespace cvdcm::csv {

// Minimal CSV handling for the project's own file formats. Fields never
// contain commas or quotes, so a plain split suffices.

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("malformed number '" + s + "' in " + context);
    }
}

inline long parse_long(const std::string& s, const std::string& context) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError("malformed integer '" + s + "' in " + context);
    return v;
}

// Reads all rows, checks the header verbatim, returns data rows as fields.
inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       const std::string& expected_header) {
    std::ifstream in(path);
    require(in.good(), "cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "empty file " + path);
    require(strip_cr(line) == expected_header,
            "bad header in " + path + ": expected '" + expected_header + "', got '" + strip_cr(line) + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        rows.push_back(split(line));
    }
    return rows;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write " + path);
    out << content;
    require(out.good(), "write failed for " + path);
}

}  // namespace cvdcm::csv
