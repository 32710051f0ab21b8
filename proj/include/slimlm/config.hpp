#pragma once

// Flat `key = value` configuration: one pair per line, `#` starts a
// comment, blank lines ignored, no sections. Later assignments override
// earlier ones.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace slimlm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    std::string origin;  // "file:line" or "--flag"
  };

  static KeyValueConfig parse(std::string_view text, std::string_view source = "config") {
    KeyValueConfig cfg;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) {
        if (eol == text.size()) break;
        continue;
      }
      const std::string where = std::string(source) + ":" + std::to_string(lineno);
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string_view key = trim(line.substr(0, eq));
      const std::string_view value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (key.find_first_of(" \t") != std::string_view::npos)
        throw ConfigError(where + ": key contains whitespace");
      cfg.set(std::string(key), std::string(value), where);
      if (eol == text.size()) break;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, std::string value, std::string origin = "set") {
    entries_[key] = Entry{std::move(value), std::move(origin)};
  }
  void merge(const KeyValueConfig& overrides) {
    for (const auto& [k, e] : overrides.entries_) entries_[k] = e;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  std::string require_string(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end() || it->second.value.empty())
      throw ConfigError("missing required key '" + key + "'");
    return it->second.value;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::uint64_t v = 0;
    const auto& s = it->second.value;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail(it->second, key, "an unsigned integer");
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const auto& s = it->second.value;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail(it->second, key, "a number");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const auto& s = it->second.value;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(it->second, key, "a boolean");
    return fallback;
  }

  // Sorted `key = value` lines.
  std::string text() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  [[noreturn]] static void fail(const Entry& e, const std::string& key, const char* what) {
    throw ConfigError(e.origin + ": value '" + e.value + "' for '" + key + "' is not " + what);
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace slimlm
