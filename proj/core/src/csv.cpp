#include "lungsim/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

#include "lungsim/errors.hpp"

namespace lungsim::csv {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

static std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  Table t;
  t.path = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (t.header.empty()) {
      for (auto& f : split(stripped)) t.header.push_back(trim(f));
      continue;
    }
    Row r;
    r.line = lineno;
    for (auto& f : split(stripped)) r.fields.push_back(trim(f));
    if (r.fields.size() != t.header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(r.fields.size()));
    t.rows.push_back(std::move(r));
  }
  if (t.header.empty()) throw ParseError(path + ": empty file (no header row)");
  return t;
}

Table read_table(const std::string& path, const std::vector<std::string>& expected) {
  Table t = read_table(path);
  if (t.header != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) want += ',';
      want += expected[i];
    }
    throw ParseError(path + ":1: unexpected header (expected '" + want + "')");
  }
  return t;
}

double parse_double(const Table& t, const Row& r, int col, const std::string& field_name) {
  const std::string& s = r.fields[static_cast<std::size_t>(col)];
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ParseError(t.path + ":" + std::to_string(r.line) + ": field '" + field_name +
                     "': cannot parse '" + s + "' as a number");
  return v;
}

long parse_long(const Table& t, const Row& r, int col, const std::string& field_name) {
  const std::string& s = r.fields[static_cast<std::size_t>(col)];
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ParseError(t.path + ":" + std::to_string(r.line) + ": field '" + field_name +
                     "': cannot parse '" + s + "' as an integer");
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace lungsim::csv
