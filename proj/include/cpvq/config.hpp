// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cpvq {

/// Flat `key = value` settings. Lines starting with '#' and blank lines are
/// ignored. Only keys listed in `known_config_keys()` are accepted.
class Config {
 public:
  Config();  // every key at its default

  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& raw(const std::string& key) const;

  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;

  /// Every key and value in sorted order, one `key = value` line each.
  std::string dump() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;
  std::string_view help;
};

const std::vector<ConfigKey>& known_config_keys();

}  // namespace cpvq
