#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ctds/error.hpp"

namespace ctds {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Flat `key = value` run description. `#` starts a comment; a key may repeat
// (e.g. one `covariate =` line per covariate). Relative paths resolve against
// the directory of the config file.
class RunConfig {
 public:
  static RunConfig parse(std::istream& in, const std::string& source = "config", std::filesystem::path base = {}) {
    RunConfig c;
    c.source_ = source;
    c.base_ = std::move(base);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(detail::concat(source, ":", lineno, ": expected 'key = value', got '", line, "'"));
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(detail::concat(source, ":", lineno, ": empty key"));
      c.entries_[key].push_back(value);
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(detail::concat("cannot open config file '", path, "'"));
    return parse(in, path, std::filesystem::path(path).parent_path());
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { entries_[key] = {value}; }

  std::string get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(detail::concat(source_, ": missing required key '", key, "'"));
    if (it->second.size() > 1) throw ConfigError(detail::concat(source_, ": key '", key, "' given more than once"));
    return it->second.front();
  }
  std::string get(const std::string& key, const std::string& fallback) const { return has(key) ? get(key) : fallback; }

  std::vector<std::string> get_all(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? std::vector<std::string>{} : it->second;
  }

  double get_double(const std::string& key) const { return to_double(key, get(key)); }
  double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

  long long get_int(const std::string& key) const {
    const auto v = get(key);
    std::size_t used = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &used);
    } catch (...) {
      used = 0;
    }
    if (used == 0 || used != v.size())
      throw ConfigError(detail::concat(source_, ": key '", key, "' expects an integer, got '", v, "'"));
    return out;
  }
  long long get_int(const std::string& key, long long fallback) const { return has(key) ? get_int(key) : fallback; }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(detail::concat(source_, ": key '", key, "' expects true/false, got '", v, "'"));
  }

  // Path value resolved against the config file's directory; checked for existence if asked.
  std::string get_path(const std::string& key, bool must_exist = true) const { return resolve(get(key), must_exist); }

  std::string resolve(const std::string& p, bool must_exist = true) const {
    std::filesystem::path path(p);
    if (path.is_relative() && !base_.empty()) path = base_ / path;
    if (must_exist && !std::filesystem::exists(path))
      throw ConfigError(detail::concat(source_, ": file '", path.string(), "' does not exist"));
    return path.string();
  }

  const std::string& source() const { return source_; }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

 private:
  double to_double(const std::string& key, const std::string& v) const {
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (...) {
      used = 0;
    }
    if (used == 0 || used != v.size())
      throw ConfigError(detail::concat(source_, ": key '", key, "' expects a number, got '", v, "'"));
    return out;
  }

  std::string source_;
  std::filesystem::path base_;
  std::map<std::string, std::vector<std::string>> entries_;
};

}  // namespace ctds
