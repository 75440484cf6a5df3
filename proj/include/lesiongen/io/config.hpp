#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lesiongen {

enum class KeyType { Int, UInt, Double, Bool, String };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

/// Every recognised key, in documentation order.
const std::vector<KeySpec>& config_schema();

/// Flat `key = value` configuration. Lines starting with '#' are comments.
/// Unknown keys and values that do not parse as the key's type are errors.
/// Values are stored canonically, so parse(serialize(c)) == c.
class Config {
 public:
  Config();  // all defaults

  void set(const std::string& key, const std::string& value);
  bool is_default(const std::string& key) const;

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  /// Applies `text` on top of the current values. `source` prefixes errors.
  void merge_text(const std::string& text, const std::string& source);
  /// Config file or run manifest (its `config.` lines).
  void merge_file(const std::filesystem::path& path);

  std::string serialize() const;
  const std::map<std::string, std::string>& values() const { return values_; }
  bool operator==(const Config& other) const = default;

 private:
  const KeySpec& spec(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

}  // namespace lesiongen
