#pragma once

#include <optional>
#include <string>
#include <vector>

namespace lungsim::csv {

struct Row {
  std::vector<std::string> fields;
  int line = 0;  // 1-based line number in the source file
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;
  std::string path;

  int column(const std::string& name) const;  // -1 if absent
};

// Reads a comma-separated file with a mandatory header row. Blank lines are
// skipped. Throws ParseError with file/line context on malformed input.
Table read_table(const std::string& path);

// Same, but requires the header to match `expected` exactly.
Table read_table(const std::string& path, const std::vector<std::string>& expected);

double parse_double(const Table& t, const Row& r, int col, const std::string& field_name);
long parse_long(const Table& t, const Row& r, int col, const std::string& field_name);

// Shortest round-trip-exact representation of a double.
std::string format_double(double v);

std::vector<std::string> split(const std::string& line, char sep = ',');

}  // namespace lungsim::csv
