// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace zsc {

/// Flat key=value run configuration with a fixed schema. Unknown keys and
/// unparsable values are rejected up front, before any stage runs.
class RunConfig {
 public:
  enum class Type { Int, Real, Str, IntList };

  struct KeyInfo {
    Type type;
    std::string default_value;
    std::string help;
  };

  static const std::map<std::string, KeyInfo>& schema();
  static RunConfig defaults();
  /// Parse `key = value` lines ('#' comments); then apply overrides ("k=v").
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {});
  static RunConfig from_text(const std::string& text,
                             const std::vector<std::string>& overrides = {});

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);  // "key=value"

  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  uint64_t seed() const { return static_cast<uint64_t>(get_int("seed")); }

  /// FNV-1a over the canonical "key=value" lines of keys matching any of the
  /// prefixes (all keys when empty). Values are re-serialized from their
  /// parsed form, so equivalent spellings hash identically.
  uint64_t hash(const std::vector<std::string>& prefixes = {}) const;
  static std::string hash_hex(uint64_t h);

  std::string dump() const;  // canonical key=value text

 private:
  std::map<std::string, std::string> values_;  // canonical serialized values
};

/// Key prefixes that feed each trainable module's checkpoint hash. Sweeping
/// an evaluation-only knob must not invalidate training checkpoints.
std::vector<std::string> module_hash_prefixes(const std::string& module);

}  // namespace zsc
