#pragma once

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbp {

/// Bad configuration input: unknown or missing key, malformed value, range violation.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat "key = value" text. '#' starts a comment; keys may contain dots.
class KeyValues {
 public:
  struct Entry {
    std::string value;
    int line = 0;  // 0 for values set programmatically (flags)
  };

  KeyValues() = default;

  static KeyValues parse(std::istream& is, const std::string& source) {
    KeyValues kv;
    kv.source_ = source;
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
      ++line;
      auto hash = raw.find('#');
      if (hash != std::string::npos) raw.erase(hash);
      std::string s = trim(raw);
      if (s.empty()) continue;
      auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line) + ": expected 'key = value'");
      std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(line) + ": empty key");
      if (kv.entries_.count(key))
        throw ConfigError(source + ":" + std::to_string(line) + ": duplicate key '" + key + "' (first set on line " +
                          std::to_string(kv.entries_[key].line) + ")");
      kv.entries_[key] = {value, line};
      kv.order_.push_back(key);
    }
    return kv;
  }

  static KeyValues parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse(is, path);
  }

  static KeyValues parse_string(const std::string& text, const std::string& source = "<string>") {
    std::istringstream is(text);
    return parse(is, source);
  }

  void set(const std::string& key, const std::string& value) {
    if (!entries_.count(key)) order_.push_back(key);
    entries_[key] = {value, 0};
  }

  [[nodiscard]] bool has(const std::string& key) const { return entries_.count(key) != 0; }

  [[nodiscard]] std::string where(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.line == 0) return "key '" + key + "'";
    return source_ + ":" + std::to_string(it->second.line) + ": key '" + key + "'";
  }

  [[nodiscard]] const std::string& raw(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError((source_.empty() ? "" : source_ + ": ") + "missing required key '" + key + "'");
    used_.insert(key);
    return it->second.value;
  }

  [[nodiscard]] std::string get_string(const std::string& key) const { return raw(key); }
  [[nodiscard]] std::string get_string(const std::string& key, const std::string& def) const {
    return has(key) ? raw(key) : def;
  }

  [[nodiscard]] double get_double(const std::string& key) const {
    const std::string& v = raw(key);
    return to_double(v, key);
  }
  [[nodiscard]] double get_double(const std::string& key, double def) const { return has(key) ? get_double(key) : def; }

  [[nodiscard]] long long get_int(const std::string& key) const {
    const std::string& v = raw(key);
    char* end = nullptr;
    errno = 0;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0') throw ConfigError(where(key) + ": expected an integer, got '" + v + "'");
    return x;
  }
  [[nodiscard]] long long get_int(const std::string& key, long long def) const { return has(key) ? get_int(key) : def; }

  [[nodiscard]] bool get_bool(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string& v = raw(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where(key) + ": expected a boolean, got '" + v + "'");
  }

  [[nodiscard]] std::vector<double> get_list(const std::string& key, std::vector<double> def = {}) const {
    if (!has(key)) return def;
    const std::string& v = raw(key);
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), key));
    return out;
  }

  /// Keys never read through an accessor, in file order.
  [[nodiscard]] std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& k : order_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  void require_all_used() const {
    auto u = unused();
    if (!u.empty()) throw ConfigError(where(u.front()) + ": unknown key");
  }

  /// Copy of the entries whose key starts with `prefix`, with the prefix removed.
  [[nodiscard]] KeyValues section(const std::string& prefix) const {
    KeyValues kv;
    kv.source_ = source_;
    for (const auto& k : order_) {
      if (k.rfind(prefix, 0) == 0) {
        used_.insert(k);
        kv.entries_[k.substr(prefix.size())] = entries_.at(k);
        kv.order_.push_back(k.substr(prefix.size()));
      }
    }
    return kv;
  }

  [[nodiscard]] const std::vector<std::string>& keys() const { return order_; }
  [[nodiscard]] const std::string& source() const { return source_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  double to_double(const std::string& v, const std::string& key) const {
    char* end = nullptr;
    errno = 0;
    double x = std::strtod(v.c_str(), &end);
    if (errno != 0 || end == v.c_str() || *end != '\0') throw ConfigError(where(key) + ": expected a number, got '" + v + "'");
    return x;
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

}  // namespace sbp
