#pragma once

// Tab-separated input and output. Tables have a header row and row ids in
// the first column; "NA" marks a missing value.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "linear_model.hpp"

namespace rebayes::io {

struct Table {
    std::string corner;
    std::vector<std::string> columns;
    std::vector<std::string> row_ids;
    Eigen::MatrixXd values;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

inline double parse_cell(const std::string& cell, const std::string& where) {
    if (cell == "NA" || cell == "NaN" || cell == "nan") return std::nan("");
    if (cell.empty()) throw DataError(where + ": empty field");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw DataError(where + ": cannot parse '" + cell + "' as a number");
    return v;
}

}  // namespace detail

inline Table parse_table(std::istream& in, const std::string& name) {
    Table t;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_tabs(line);
        if (t.columns.empty() && rows.empty() && t.corner.empty() && line_no == 1) {
            if (fields.size() < 2) throw DataError(name + ":1: header needs an id column and at least one data column");
            t.corner = fields.front();
            t.columns.assign(fields.begin() + 1, fields.end());
            continue;
        }
        if (t.columns.empty()) throw DataError(name + ": missing header row");
        if (fields.size() != t.columns.size() + 1)
            throw DataError(name + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.columns.size() + 1) +
                            " fields, found " + std::to_string(fields.size()));
        t.row_ids.push_back(fields.front());
        std::vector<double> row(t.columns.size());
        for (std::size_t j = 0; j < row.size(); ++j)
            row[j] = detail::parse_cell(fields[j + 1],
                                        name + ":" + std::to_string(line_no) + ":" + std::to_string(j + 2));
        rows.push_back(std::move(row));
    }
    if (t.columns.empty()) throw DataError(name + ": file is empty");
    t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.columns.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return t;
}

inline Table read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return parse_table(in, path.string());
}

/// Expression matrix: genes in rows, samples in columns.
inline ExpressionSet read_expression(const std::filesystem::path& path) {
    Table t = read_table(path);
    ExpressionSet e;
    e.values = std::move(t.values);
    e.gene_ids = std::move(t.row_ids);
    e.sample_ids = std::move(t.columns);
    return e;
}

/// Design matrix: samples in rows (in expression-column order), one column
/// per coefficient. Missing values are not allowed.
inline DesignMatrix read_design(const std::filesystem::path& path) {
    Table t = read_table(path);
    if (!t.values.allFinite()) throw DataError(path.string() + ": design matrix has missing or non-finite entries");
    DesignMatrix d;
    d.X = std::move(t.values);
    d.column_names = std::move(t.columns);
    return d;
}

/// Formats a number with 6 significant digits; NaN as NA, infinities as
/// Inf and -Inf.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Writes content to path through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw DataError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

/// Simple TSV builder with fixed numeric formatting.
class TsvWriter {
public:
    explicit TsvWriter(const std::vector<std::string>& header) { row_strings(header); }

    void row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << '\t';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    template <typename... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> v;
        (v.push_back(cell(cells)), ...);
        row_strings(v);
    }

    std::string str() const { return out_.str(); }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return format_number(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }

    std::ostringstream out_;
};

}  // namespace rebayes::io
