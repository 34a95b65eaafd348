#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "v2sim/core/errors.hpp"

namespace v2sim::io {

/// Shortest round-trip decimal form; identical bits always give identical text.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

using Cell = std::variant<double, long long, std::string>;

inline std::string format_cell(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
    if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
    return std::get<std::string>(c);
}

/// Comma-separated table with a mandatory header row and LF line endings.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<Cell> row) {
        if (row.size() != header_.size()) throw DomainError("csv: row width differs from header");
        rows_.push_back(std::move(row));
    }

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<Cell>>& rows() const { return rows_; }
    std::size_t row_count() const { return rows_.size(); }

    std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < header_.size(); ++i) {
            if (i) out += ',';
            out += header_[i];
        }
        out += '\n';
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (i) out += ',';
                out += format_cell(r[i]);
            }
            out += '\n';
        }
        return out;
    }

    void write(const std::filesystem::path& p) const {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + p.string());
        const auto s = str();
        f.write(s.data(), static_cast<std::streamsize>(s.size()));
        if (!f) throw std::runtime_error("write failed for " + p.string());
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<Cell>> rows_;
};

/// Numeric CSV reader: header row required, '#' lines skipped. Returns columns by header order.
struct NumericCsv {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    const std::vector<double>& column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return columns[i];
        throw ValidationError(std::string(name), "column missing from CSV");
    }
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline NumericCsv read_numeric_csv(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ValidationError(p.string(), "cannot open input file");
    NumericCsv out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = t.find(',', start);
            cells.push_back(trim(t.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (out.header.empty()) {
            for (auto c : cells) out.header.emplace_back(c);
            out.columns.resize(out.header.size());
            continue;
        }
        if (cells.size() != out.header.size())
            throw ValidationError(p.string() + ":" + std::to_string(lineno), "row width differs from header");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
            if (ec != std::errc{} || ptr != cells[i].data() + cells[i].size())
                throw ValidationError(p.string() + ":" + std::to_string(lineno), "not a number: " + std::string(cells[i]));
            out.columns[i].push_back(v);
        }
    }
    if (out.header.empty()) throw ValidationError(p.string(), "empty CSV");
    return out;
}

/// Header plus raw cell text, for files mixing numbers and labels.
struct TextCsv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ValidationError(std::string(name), "column missing from CSV");
    }
};

inline TextCsv read_text_csv(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ValidationError(p.string(), "cannot open input file");
    TextCsv out;
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cells.emplace_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (out.header.empty()) out.header = std::move(cells);
        else out.rows.push_back(std::move(cells));
    }
    if (out.header.empty()) throw ValidationError(p.string(), "empty CSV");
    return out;
}

} // namespace v2sim::io
