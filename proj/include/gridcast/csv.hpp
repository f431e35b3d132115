#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace gridcast::csv {

/// Splits one RFC 4180 record. Quoted fields may contain commas and doubled
/// quotes; embedded newlines are not supported.
inline std::optional<std::vector<std::string>> split(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      if (!field.empty() || was_quoted) return std::nullopt;
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      if (was_quoted) return std::nullopt;
      field.push_back(ch);
    }
  }
  if (quoted) return std::nullopt;
  fields.push_back(std::move(field));
  return fields;
}

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

/// Reads the header line, skipping an optional `# format_version=N` marker
/// that must equal `supported` when present.
inline std::string read_header(std::istream& in, int supported, std::string_view what) {
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    if (line.rfind("#", 0) == 0) {
      const auto pos = line.find("format_version");
      if (pos != std::string::npos) {
        const auto eq = line.find_first_of("=:", pos);
        require(eq != std::string::npos, what, ": malformed format_version marker");
        int version = -1;
        try {
          version = std::stoi(line.substr(eq + 1));
        } catch (const std::exception&) {
        }
        require(version == supported, what, ": unsupported format_version in '", line, "'");
      }
      continue;
    }
    return line;
  }
  fail(what, ": missing header line");
}

}  // namespace gridcast::csv
