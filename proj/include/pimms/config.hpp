#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pimms {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// UTF-8 `key=value` lines; blank lines and `#` comments are ignored.
/// Typed getters record which keys were read so unknown keys can be
/// reported by name.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(std::string_view text, std::string source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);
  static KeyValueConfig from_map(std::map<std::string, std::string> values, std::string source);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(std::string_view key) const { return values_.count(std::string(key)) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);

  /// Throws ConfigError naming the first key no getter asked for.
  void reject_unknown() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  [[noreturn]] void bad_value(const std::string& key, const std::string& expected) const;

  std::string source_;
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

}  // namespace pimms
