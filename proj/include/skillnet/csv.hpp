#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skillnet/errors.hpp"

namespace skillnet::csv {

using Row = std::vector<std::string>;

struct Table {
    Row header;
    std::vector<Row> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw LookupError("csv: no column '" + name + "'");
    }
};

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string format_row(const Row& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) line += ',';
        line += quote(row[i]);
    }
    return line;
}

inline std::string format_table(const Table& t) {
    std::string out = format_row(t.header) + "\n";
    for (const auto& r : t.rows) out += format_row(r) + "\n";
    return out;
}

// RFC 4180 subset: quoted fields may contain commas, quotes and newlines.
inline Table parse_table(const std::string& text) {
    std::vector<Row> records;
    Row current;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
            any = true;
        } else if (c == ',') {
            current.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                current.push_back(std::move(field));
                records.push_back(std::move(current));
            }
            current.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (in_quotes) throw ContractError("csv: unterminated quoted field");
    if (any || !field.empty()) {
        current.push_back(std::move(field));
        records.push_back(std::move(current));
    }
    Table t;
    if (records.empty()) return t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size()) {
            throw ShapeError("csv: row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                             " fields, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LookupError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot write '" + path + "'");
    out << content;
    if (!out) throw StateError("write failed for '" + path + "'");
}

inline Table read_table(const std::string& path) { return parse_table(read_file(path)); }
inline void write_table(const std::string& path, const Table& t) { write_file(path, format_table(t)); }

}  // namespace skillnet::csv
