#pragma once

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mldebug/types.hpp"

namespace mldebug {

struct LoadedCsv {
    ContaminatedPool pool;
    std::vector<std::string> feature_names;  // empty when header = false
    std::string label_name;
    Index label_index = -1;
};

namespace detail {

// RFC-4180-style field split: quoted fields, doubled-quote escapes.
inline std::vector<std::string> split_csv_line(const std::string& line, long row) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            if (!cur.empty())
                throw ParseError("unexpected quote inside field", row,
                                 static_cast<long>(fields.size()));
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", row,
                                 static_cast<long>(fields.size()));
    fields.push_back(cur);
    return fields;
}

inline double parse_cell(const std::string& s, long row, long col) {
    const char* begin = s.c_str();
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(begin, &end);
    // trailing spaces tolerated, anything else is not a number
    while (end && *end == ' ') ++end;
    if (end == begin || (end && *end != '\0') || errno == ERANGE)
        throw NonNumericCell("cell is not numeric: '" + s + "'", row, col);
    return v;
}

inline std::string trim_cr(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    return s;
}

}  // namespace detail

/// Loads a numeric CSV. With header = true the label column is matched by
/// name; without a header it must be a 0-based column index. Feature
/// columns keep their file order.
inline LoadedCsv load_csv(const std::string& path, const std::string& label_column,
                          bool header) {
    std::ifstream file(path);
    if (!file.is_open()) throw Error("load_csv: cannot open " + path);

    LoadedCsv out;
    std::string line;
    long row = 0;
    std::vector<std::string> names;
    Index ncols = -1;

    if (header) {
        if (!std::getline(file, line))
            throw ParseError("empty file", 0, 0);
        names = detail::split_csv_line(detail::trim_cr(line), row);
        ncols = static_cast<Index>(names.size());
        ++row;
        for (Index j = 0; j < ncols; ++j)
            if (names[static_cast<size_t>(j)] == label_column) out.label_index = j;
        if (out.label_index < 0)
            throw MissingLabelColumn("label column '" + label_column + "' not found");
        out.label_name = label_column;
    }

    std::vector<std::vector<double>> rows;
    while (std::getline(file, line)) {
        std::string clean = detail::trim_cr(line);
        if (clean.empty()) {
            ++row;
            continue;
        }
        std::vector<std::string> fields = detail::split_csv_line(clean, row);
        if (ncols < 0) {
            ncols = static_cast<Index>(fields.size());
            char* end = nullptr;
            long idx = std::strtol(label_column.c_str(), &end, 10);
            if (end == label_column.c_str() || *end != '\0' || idx < 0 || idx >= ncols)
                throw MissingLabelColumn(
                    "without a header the label column must be a valid 0-based index");
            out.label_index = idx;
            out.label_name = label_column;
        }
        if (static_cast<Index>(fields.size()) != ncols)
            throw ParseError("row has " + std::to_string(fields.size()) +
                                 " fields, expected " + std::to_string(ncols),
                             row, 0);
        std::vector<double> vals(fields.size());
        for (size_t j = 0; j < fields.size(); ++j)
            vals[j] = detail::parse_cell(fields[j], row, static_cast<long>(j));
        rows.push_back(std::move(vals));
        ++row;
    }
    if (rows.empty()) throw ParseError("no data rows", row, 0);
    if (ncols < 2) throw Error("load_csv: need at least one feature column");

    const Index n = static_cast<Index>(rows.size());
    const Index p = ncols - 1;
    out.pool.X.resize(n, p);
    out.pool.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        Index c = 0;
        for (Index j = 0; j < ncols; ++j) {
            double v = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (j == out.label_index)
                out.pool.y[i] = v;
            else
                out.pool.X(i, c++) = v;
        }
    }
    if (header) {
        for (Index j = 0; j < ncols; ++j)
            if (j != out.label_index)
                out.feature_names.push_back(names[static_cast<size_t>(j)]);
    }
    out.pool.validate();
    return out;
}

}  // namespace mldebug
