#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofl {

/// Flat `key = value` configuration file. Lines starting with '#' and blank
/// lines are ignored; whitespace around keys and values is trimmed.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("Config: cannot open " + path);
    return from_stream(is);
  }

  static Config from_stream(std::istream& is) {
    Config cfg;
    std::string line;
    while (std::getline(is, line)) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos) throw std::runtime_error("Config: expected 'key = value' in line: " + line);
      cfg.kv_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stod(it->second);
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoi(it->second);
  }

  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_doubles(it->second);
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<int> out;
    for (double v : parse_doubles(it->second)) out.push_back(static_cast<int>(v));
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key, std::vector<std::string> fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
  }

 private:
  static std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(std::stod(t));
    }
    return out;
  }

  std::map<std::string, std::string> kv_;
};

/// Parse a grid spec like "16x16" into per-axis point counts.
inline std::vector<int> parse_grid_spec(const std::string& spec) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t x = spec.find('x', pos);
    if (x == std::string::npos) x = spec.size();
    out.push_back(std::stoi(spec.substr(pos, x - pos)));
    pos = x + 1;
  }
  if (out.empty()) throw std::invalid_argument("parse_grid_spec: empty spec");
  return out;
}

}  // namespace ofl
