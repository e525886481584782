// Small CSV writer/reader. Files carry '#'-prefixed metadata rows before a
// single header row; fields are comma-separated UTF-8 with no quoting (none
// of our payloads contain commas).
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qbarrier/errors.hpp"

namespace qb {

// Shortest round-trip formatting: floats at 9 significant digits, doubles 17.
inline std::string fmt_f32(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

inline std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path) {
    if (!f_) throw ConfigError("CsvWriter: cannot open " + path);
  }

  void metadata(const std::string& line) { f_ << "# " << line << "\n"; }

  void header(const std::vector<std::string>& cols) {
    for (size_t i = 0; i < cols.size(); ++i) f_ << (i ? "," : "") << cols[i];
    f_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) f_ << (i ? "," : "") << cells[i];
    f_ << "\n";
  }

  void flush() { f_.flush(); }

 private:
  std::ofstream f_;
};

struct CsvFile {
  std::vector<std::string> metadata;  // '#' lines, prefix stripped
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw ConfigError("CSV: missing column " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvFile read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("read_csv: cannot open " + path);
  CsvFile out;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string m = line.substr(1);
      if (!m.empty() && m[0] == ' ') m = m.substr(1);
      out.metadata.push_back(m);
      continue;
    }
    if (!have_header) {
      out.header = split_csv_line(line);
      have_header = true;
    } else {
      out.rows.push_back(split_csv_line(line));
    }
  }
  return out;
}

}  // namespace qb
