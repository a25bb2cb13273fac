#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "uplift/common.hpp"

namespace uplift::csv {

// In-memory CSV: header row plus string cells. Quoting follows RFC 4180
// (double quotes, "" escapes); the delimiter is configurable.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    fail("missing column '", name, "'");
  }

  std::optional<std::size_t> find_column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }
};

namespace detail {

// Splits one physical line. Returns false if the line ends inside a quoted
// field (caller joins with the next line).
inline bool split_line(const std::string& line, char delim, std::vector<std::string>& out,
                       bool continue_quoted, std::string& pending) {
  std::string field = continue_quoted ? std::move(pending) : std::string{};
  bool in_quotes = continue_quoted;
  std::size_t i = 0;
  if (continue_quoted) field += '\n';
  while (i < line.size()) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
    ++i;
  }
  if (in_quotes) {
    pending = std::move(field);
    return false;
  }
  out.push_back(std::move(field));
  return true;
}

}  // namespace detail

inline Table read_file(const std::string& path, char delim = ',') {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file '", path, "'");
  Table table;
  std::string line;
  std::string pending;
  std::vector<std::string> fields;
  bool continuing = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!continuing) fields.clear();
    if (!detail::split_line(line, delim, fields, continuing, pending)) {
      continuing = true;
      continue;
    }
    continuing = false;
    if (table.header.empty()) {
      if (fields.empty()) fail("empty header in '", path, "'");
      table.header = fields;
    } else {
      if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
      if (fields.size() != table.header.size()) {
        fail("'", path, "' line ", line_no, ": expected ", table.header.size(),
             " fields, got ", fields.size());
      }
      table.rows.push_back(fields);
    }
  }
  if (continuing) fail("'", path, "': unterminated quoted field");
  if (table.header.empty()) fail("'", path, "' is empty");
  return table;
}

inline std::string quote_if_needed(const std::string& s, char delim) {
  bool needs = s.find(delim) != std::string::npos || s.find('"') != std::string::npos ||
               s.find('\n') != std::string::npos;
  if (!needs) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += "\"\"";
    else q += c;
  }
  q += '"';
  return q;
}

inline void write_file(const Table& table, const std::string& path, char delim = ',') {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file '", path, "'");
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << delim;
      out << quote_if_needed(row[i], delim);
    }
    out << '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) write_row(row);
  if (!out) fail("I/O failure writing '", path, "'");
}

// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

// Strict double parse: the whole cell must be consumed.
inline std::optional<double> parse_double(const std::string& cell) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  if (begin == end) return std::nullopt;
  double value = 0.0;
  auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc{} || res.ptr != end) return std::nullopt;
  return value;
}

}  // namespace uplift::csv
