#include "cli/runconfig.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "whitenseq/errors.hpp"

namespace whitenseq::cli {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::pair<std::string, std::string> split_assignment(const std::string& text,
                                                     const std::string& where) {
  const std::size_t eq = text.find('=');
  if (eq == std::string::npos) {
    throw ConfigError(where + ": expected 'key = value', got '" + text + "'");
  }
  const std::string key = trim(text.substr(0, eq));
  const std::string value = trim(text.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key in '" + text + "'");
  return {key, value};
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto [key, value] =
        split_assignment(text, path + ": line " + std::to_string(line_no));
    config.values_[key] = value;
  }
  return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void RunConfig::merge_overrides(const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const auto [key, value] = split_assignment(item, "--set");
    values_[key] = value;
  }
}

void RunConfig::reject_unknown(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      std::string valid;
      for (const std::string& k : known) {
        if (!valid.empty()) valid += ", ";
        valid += k;
      }
      throw ConfigError("unknown config key '" + key + "' (known keys: " + valid + ")");
    }
  }
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string RunConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
  return it->second;
}

std::string RunConfig::get_string(const std::string& key,
                                  const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string text = get_string(key);
  char* end = nullptr;
  const long long v = std::strtoll(text.c_str(), &end, 10);
  if (end == text.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
  }
  return v;
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string text = get_string(key);
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
  }
  return v;
}

std::uint64_t RunConfig::get_seed(const std::string& key) const {
  const long long v = get_int(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key + " = " + value + "\n";
  }
  return out;
}

std::vector<std::size_t> parse_k_list(const std::string& spec) {
  std::vector<std::size_t> ks;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::string item =
        spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (item.empty()) throw ConfigError("empty entry in K list '" + spec + "'");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (end == item.c_str() || *end != '\0' || v == 0) {
      throw ConfigError("bad K value '" + item + "' in '" + spec + "'");
    }
    ks.push_back(static_cast<std::size_t>(v));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return ks;
}

}  // namespace whitenseq::cli
