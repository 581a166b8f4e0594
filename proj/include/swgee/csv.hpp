#pragma once

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "swgee/errors.hpp"

namespace swgee::csv {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Split one CSV record. Handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(trim(field));
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw Error(errc::schema, "missing required column '" + name + "'");
    return static_cast<int>(it - header.begin());
  }
};

/// Read a whole CSV stream: header row required, blank lines skipped.
inline Table read(std::istream& in) {
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_record(line);
    if (!have_header) {
      for (auto& f : fields) {
        std::transform(f.begin(), f.end(), f.begin(),
                       [](unsigned char c) { return std::tolower(c); });
      }
      t.header = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != t.header.size())
        throw Error(errc::schema,
                    "row has " + std::to_string(fields.size()) +
                        " fields, header has " +
                        std::to_string(t.header.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  if (!have_header) throw Error(errc::input, "empty input: no header row");
  if (t.rows.empty()) throw Error(errc::input, "empty input: no data rows");
  return t;
}

inline void write_field(std::ostream& os, const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    os << s;
    return;
  }
  os << '"';
  for (char c : s) {
    if (c == '"') os << '"';
    os << c;
  }
  os << '"';
}

/// Parse helpers; all reject trailing junk.

inline long long parse_int(const std::string& s, const char* what) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw Error(errc::schema, std::string(what) + ": not an integer: '" + s + "'");
  }
  if (pos != s.size())
    throw Error(errc::schema, std::string(what) + ": not an integer: '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s, const char* what) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw Error(errc::schema, std::string(what) + ": not a number: '" + s + "'");
  }
  if (pos != s.size())
    throw Error(errc::schema, std::string(what) + ": not a number: '" + s + "'");
  return v;
}

}  // namespace swgee::csv
