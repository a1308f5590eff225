#include "lungsim/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "lungsim/csv.hpp"
#include "lungsim/errors.hpp"

namespace lungsim {

static std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Config Config::from_string(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    c.entries_[key] = value;
  }
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void Config::set_double(const std::string& key, double value) {
  entries_[key] = csv::format_double(value);
}

void Config::merge(const Config& overrides) {
  for (const auto& [k, v] : overrides.entries_) entries_[k] = v;
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

static double to_double(const std::string& key, const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as a number");
  return v;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : to_double(key, it->second);
}

long Config::get_long(const std::string& key, long fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  long v = 0;
  const std::string& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as an integer");
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& s = it->second;
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as a boolean");
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  auto it = entries_.find(key);
  std::vector<double> out;
  if (it == entries_.end() || trim(it->second).empty()) return out;
  for (const auto& part : csv::split(it->second))
    out.push_back(to_double(key, trim(part)));
  return out;
}

std::string Config::require_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing required config key '" + key + "'");
  return it->second;
}

double Config::require_double(const std::string& key) const {
  return to_double(key, require_string(key));
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void Config::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << serialize();
}

}  // namespace lungsim
