#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "magpose/errors.hpp"

namespace magpose {

// Flat `key = value` text files: blank lines and #-comments ignored.
// Insertion order is preserved on write for diff-friendly output.
class KvFile {
 public:
  void set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it == index_.end()) {
      index_[key] = items_.size();
      items_.push_back({key, value});
    } else {
      items_[it->second].second = value;
    }
  }

  void set_double(const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    set(key, buf);
  }

  void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }

  void set_doubles(const std::string& key, const std::vector<double>& vs) {
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < vs.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", vs[i]);
      if (i) out += ' ';
      out += buf;
    }
    set(key, out);
  }

  bool has(const std::string& key) const { return index_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw ParseError("missing key: " + key);
    return items_[it->second].second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto it = index_.find(key);
    return it == index_.end() ? fallback : items_[it->second].second;
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw ParseError("bad numeric value for " + key + ": " + s);
    return v;
  }

  long long get_int(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw ParseError("bad integer value for " + key + ": " + s);
    return v;
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::istringstream is(get(key));
    std::vector<double> out;
    double v;
    while (is >> v) out.push_back(v);
    if (!is.eof()) throw ParseError("bad numeric list for " + key);
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& items() const {
    return items_;
  }

  void write(std::ostream& os, const std::string& format_line) const {
    os << format_line << "\n";
    for (const auto& [k, v] : items_) os << k << " = " << v << "\n";
  }

  static KvFile read(std::istream& is, const std::string& expected_format_line) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty key=value file");
    if (line != expected_format_line)
      throw VersionMismatch("unsupported format line '" + line + "', expected '" +
                            expected_format_line + "'");
    KvFile kv;
    int line_no = 1;
    while (std::getline(is, line)) {
      ++line_no;
      std::string t = line;
      trim(t);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
      std::string k = t.substr(0, eq), v = t.substr(eq + 1);
      trim(k);
      trim(v);
      if (k.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty key");
      kv.set(k, v);
    }
    return kv;
  }

  static KvFile read_file(const std::string& path, const std::string& format_line) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path);
    return read(is, format_line);
  }

  void write_file(const std::string& path, const std::string& format_line) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    write(os, format_line);
  }

  static void trim(std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace magpose
