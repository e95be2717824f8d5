#pragma once
// Minimal CSV reader/writer. Handles quoted fields with embedded commas,
// quotes and newlines; always reads/writes a header row.

#include <string>
#include <vector>

#include "amilpath/common.hpp"

namespace amilpath {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_column(const std::string& name) const {
    int c = column(name);
    require(c >= 0, "missing CSV column '", name, "'");
    return c;
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;

  auto end_field = [&] {
    row.push_back(field);
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    if (t.header.empty())
      t.header = row;
    else
      t.rows.push_back(row);
    row.clear();
    row_started = false;
  };

  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
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
    switch (c) {
      case '"':
        in_quotes = true;
        row_started = true;
        break;
      case ',':
        end_field();
        row_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_started || !field.empty() || !row.empty()) end_row();
        break;
      default:
        field += c;
        row_started = true;
    }
  }
  if (row_started || !field.empty() || !row.empty()) end_row();
  require(!in_quotes, "unterminated quote in CSV input");
  for (const auto& r : t.rows)
    require(r.size() == t.header.size(), "CSV row has ", r.size(),
            " fields, header has ", t.header.size());
  return t;
}

inline CsvTable read_csv(const fs::path& path) {
  return parse_csv(read_text_file(path));
}

inline std::string csv_escape(const std::string& s) {
  bool needs = s.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_csv(const CsvTable& t) {
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(row[i]);
    }
    out += '\n';
  };
  emit_row(t.header);
  for (const auto& r : t.rows) emit_row(r);
  return out;
}

inline void write_csv(const fs::path& path, const CsvTable& t) {
  write_text_file(path, format_csv(t));
}

}  // namespace amilpath
