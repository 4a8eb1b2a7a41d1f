#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace whitenseq::cli {

// Flat "key = value" settings with '#' comments. Values stay strings
// until a typed getter parses them; every run echoes resolved_text()
// into its output directory so runs are self-describing.
class RunConfig {
 public:
  RunConfig() = default;
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // Applies "key=value" command-line overrides on top of file values.
  void merge_overrides(const std::vector<std::string>& overrides);
  // Throws ConfigError when a key outside `known` is present.
  void reject_unknown(const std::vector<std::string>& known) const;

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_seed(const std::string& key) const;  // required, non-negative

  std::string resolved_text() const;

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::size_t> parse_k_list(const std::string& spec);

}  // namespace whitenseq::cli
