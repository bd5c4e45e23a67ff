// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace uniqseg::toml {

/// Minimal TOML subset: [sections], bare keys, strings, integers, floats,
/// booleans and flat arrays of those; # comments. Enough for run configs
/// while keeping them diffable and commentable.
struct Value {
  std::variant<std::string, std::int64_t, double, bool, std::vector<Value>> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_float() const { return std::holds_alternative<double>(v); }
  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_array() const { return std::holds_alternative<std::vector<Value>>(v); }

  const std::string& as_string() const { return std::get<std::string>(v); }
  std::int64_t as_int() const { return std::get<std::int64_t>(v); }
  /// Accepts integer literals where a float is expected.
  double as_float() const { return is_int() ? static_cast<double>(as_int()) : std::get<double>(v); }
  bool as_bool() const { return std::get<bool>(v); }
  const std::vector<Value>& as_array() const { return std::get<std::vector<Value>>(v); }
};

using Section = std::map<std::string, Value>;
using Table = std::map<std::string, Section>;

/// Throws ConfigError with a line number on any syntax problem.
Table parse(const std::string& text);

Table parse_file(const std::string& path);

}  // namespace uniqseg::toml
