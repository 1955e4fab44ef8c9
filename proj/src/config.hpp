#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dafe {

/// Flat dotted-key configuration. Keys come from a fixed registry; unknown
/// keys and malformed values are config errors. Text format: one
/// `key = value` per line, `#` starts a comment.
class Config {
 public:
  static Config defaults();
  static Config load(const std::string& path);
  static Config parse(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  std::uint64_t seed() const;  // DAFE_SEED environment override applies here

  /// Cross-field checks (margin ordering, list lengths, enums).
  void validate() const;

  /// Deterministic `key = value` dump, sorted by key.
  std::string snapshot() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dafe
