#pragma once

// CSV conventions shared by the metric writers: comma separated, header row,
// floats at 9 significant digits, absent values as empty fields, no locale.

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tokenrelay::csv {

inline std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string format(std::optional<double> v) { return v ? format(*v) : std::string(); }

/// Parse a CSV body into rows of string cells. No quoting is used by any of
/// the writers, so a plain split suffices.
inline std::vector<std::vector<std::string>> parse(const std::string& body) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream ss(body);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline std::optional<double> parse_cell(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    return std::stod(cell);
}

}  // namespace tokenrelay::csv
