#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/io.hpp"

namespace dsa {

// Flat `key = value` text with [section] headers; '#' and ';' start comments.
class Config {
 public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line, section = "run";
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      auto cut = line.find_first_of("#;");
      if (cut != std::string::npos) line.erase(cut);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) throw UsageError("config line " + std::to_string(ln) + ": bad section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError("config line " + std::to_string(ln) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw UsageError("config line " + std::to_string(ln) + ": empty key");
      if (c.data_[section].count(key)) throw UsageError("config key '" + section + "." + key + "' given twice");
      c.data_[section][key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::filesystem::path& p) {
    if (!std::filesystem::is_regular_file(p)) throw UsageError("config file not found: " + p.string());
    return parse(io::read_text(p));
  }

  bool has(const std::string& s, const std::string& k) const {
    auto it = data_.find(s);
    return it != data_.end() && it->second.count(k);
  }

  std::string text(const std::string& s, const std::string& k) const {
    if (!has(s, k)) throw UsageError("missing required config key '" + s + "." + k + "'");
    used_.insert(s + "." + k);
    return data_.at(s).at(k);
  }
  std::string text(const std::string& s, const std::string& k, const std::string& def) const {
    return has(s, k) ? text(s, k) : def;
  }

  double number(const std::string& s, const std::string& k, double def, double lo, double hi) const {
    if (!has(s, k)) return def;
    double v = 0;
    if (!io::parse_double(text(s, k), v) || !std::isfinite(v))
      throw UsageError("config key '" + s + "." + k + "' is not a number");
    if (v < lo || v > hi)
      throw UsageError("config key '" + s + "." + k + "' = " + io::fmt(v) + " outside [" + io::fmt(lo) + ", " + io::fmt(hi) + "]");
    return v;
  }

  long integer(const std::string& s, const std::string& k, long def, long lo, long hi) const {
    double v = number(s, k, static_cast<double>(def), static_cast<double>(lo), static_cast<double>(hi));
    if (v != std::floor(v)) throw UsageError("config key '" + s + "." + k + "' must be an integer");
    return static_cast<long>(v);
  }

  bool flag(const std::string& s, const std::string& k, bool def) const {
    if (!has(s, k)) return def;
    std::string v = text(s, k);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key '" + s + "." + k + "' must be true or false");
  }

  void set(const std::string& s, const std::string& k, const std::string& v) { data_[s][k] = v; }
  void erase(const std::string& s, const std::string& k) {
    auto it = data_.find(s);
    if (it != data_.end()) it->second.erase(k);
  }
  void touch(const std::string& s, const std::string& k) const { used_.insert(s + "." + k); }

  std::vector<std::string> keys(const std::string& s) const {
    std::vector<std::string> out;
    auto it = data_.find(s);
    if (it != data_.end())
      for (const auto& kv : it->second) out.push_back(kv.first);
    return out;
  }

  // Every key in the listed sections must have been read.
  void reject_unused(const std::vector<std::string>& sections) const {
    for (const auto& s : sections) {
      auto it = data_.find(s);
      if (it == data_.end()) continue;
      for (const auto& kv : it->second)
        if (!used_.count(s + "." + kv.first)) throw UsageError("unknown config key '" + s + "." + kv.first + "'");
    }
  }

  // Sections and keys in sorted order.
  std::string dump() const {
    std::ostringstream o;
    bool first = true;
    for (const auto& [s, kv] : data_) {
      if (kv.empty()) continue;
      if (!first) o << '\n';
      first = false;
      o << '[' << s << "]\n";
      for (const auto& [k, v] : kv) o << k << " = " << v << '\n';
    }
    return o.str();
  }

 private:
  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::map<std::string, std::string>> data_;
  mutable std::set<std::string> used_;
};

}  // namespace dsa
