#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lungsim {

// Flat key = value configuration. Later assignments win, so precedence is
// implemented by merge order: defaults, then file, then CLI overrides.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text, const std::string& origin = "<string>");

  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void merge(const Config& overrides);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;  // empty if absent

  std::string require_string(const std::string& key) const;
  double require_double(const std::string& key) const;

  std::string serialize() const;  // sorted key = value lines
  void write(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace lungsim
