#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace nima {

/// Flat `key = value` configuration. '#' starts a comment; blank lines are
/// ignored; a key may appear once.
class KeyValueConfig {
public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::vector<std::string> keys() const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  /// Throws ConfigError naming every key that is neither in `known` nor starts
  /// with one of `prefixes`.
  void reject_unknown(const std::set<std::string>& known, const std::vector<std::string>& prefixes = {}) const;

private:
  std::string where(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origin_;
};

}  // namespace nima
