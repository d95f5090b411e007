#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "terata/errors.hpp"

namespace terata {

// Deliberately minimal: the cohort format has no quoting, so fields must not
// contain commas or newlines. Trailing \r from CRLF input is stripped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.emplace_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline CsvTable read_csv(std::string_view text) {
    CsvTable table;
    std::size_t pos = 0;
    bool first = true;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string_view line =
            nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            if (nl == std::string_view::npos) break;
            continue;
        }
        auto fields = split_csv_line(line);
        if (first) {
            table.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != table.header.size())
                throw ParseError("csv row " + std::to_string(table.rows.size() + 1) + " has " +
                                 std::to_string(fields.size()) + " fields, expected " +
                                 std::to_string(table.header.size()));
            table.rows.push_back(std::move(fields));
        }
    }
    if (first) throw ParseError("csv input is empty");
    return table;
}

inline void append_csv_row(std::string& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i].find(',') != std::string::npos || fields[i].find('\n') != std::string::npos)
            throw ValidationError("csv field contains a separator: " + fields[i]);
        if (i) out.push_back(',');
        out += fields[i];
    }
    out.push_back('\n');
}

inline std::string write_csv(const CsvTable& table) {
    std::string out;
    append_csv_row(out, table.header);
    for (const auto& row : table.rows) append_csv_row(out, row);
    return out;
}

}  // namespace terata
