#include "pimms/config.hpp"

#include <charconv>

#include "pimms/io.hpp"

namespace pimms {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string source) {
  KeyValueConfig cfg;
  cfg.source_ = std::move(source);
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": empty key");
    cfg.values_[key] = std::string(trim(line.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse(text, path.string());
}

KeyValueConfig KeyValueConfig::from_map(std::map<std::string, std::string> values, std::string source) {
  KeyValueConfig cfg;
  cfg.source_ = std::move(source);
  cfg.values_ = std::move(values);
  return cfg;
}

void KeyValueConfig::bad_value(const std::string& key, const std::string& expected) const {
  throw ConfigError(source_ + ": key '" + key + "' has value '" + values_.at(key) + "', expected " + expected);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t idx = 0;
    double v = std::stod(it->second, &idx);
    if (idx != it->second.size()) bad_value(key, "a real number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, "a real number");
  }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_value(key, "a non-negative integer");
  return v;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

void KeyValueConfig::reject_unknown() const {
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) throw ConfigError(source_ + ": unknown config key '" + k + "'");
}

}  // namespace pimms
