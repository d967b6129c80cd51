#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace fairtranslate {

// Plain-text structured config: `[section]` headers with `key = value` lines,
// `#` comments. CLI flags override file values; every command writes the
// resolved config next to its outputs so a run can be reproduced from it.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig from_file(const std::string& path);

  void set(const std::string& section, const std::string& key, const std::string& value);
  bool has(const std::string& section, const std::string& key) const;

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;

  std::string serialize() const;
  void write(const std::string& path) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::optional<std::string> lookup(const std::string& section, const std::string& key) const;
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace fairtranslate
