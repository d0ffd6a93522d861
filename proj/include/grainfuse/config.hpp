#pragma once

// Experiment configuration: "key = value" lines, '#' comments, CLI overrides.
// Every lookup records the value actually used so a run can write back the
// fully resolved configuration.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace grainfuse {

class Config {
 public:
  Config() = default;
  /// Throws ConfigError on unreadable files or malformed lines.
  static Config parse_file(const std::filesystem::path& path);
  static Config parse_text(const std::string& text);

  /// Adds or replaces a key ("key=value" overrides from the command line).
  void set(const std::string& key, const std::string& value);
  void set_override(const std::string& assignment);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws ConfigError naming the key when absent.
  std::string require_string(const std::string& key) const;
  std::int64_t require_int(const std::string& key) const;

  /// Keys read so far with the values used (defaults included).
  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  const std::map<std::string, std::string>& values() const { return values_; }
  /// Explicit values merged with resolved defaults, in key order.
  std::string dump() const;
  void write(const std::filesystem::path& path) const;

 private:
  const std::string* find(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
};

}  // namespace grainfuse
