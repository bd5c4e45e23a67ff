// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/toml_lite.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "uniqseg/errors.hpp"

namespace uniqseg::toml {
namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw ConfigError("toml line " + std::to_string(line) + ": " + what);
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

struct Cursor {
  std::string_view s;
  std::size_t pos = 0;
  int line;

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  bool done() {
    skip_ws();
    return pos >= s.size() || s[pos] == '#';
  }
  char peek() { return s[pos]; }
};

Value parse_value(Cursor& c);

Value parse_scalar(Cursor& c) {
  c.skip_ws();
  if (c.pos >= c.s.size()) fail(c.line, "expected a value");
  char ch = c.s[c.pos];
  if (ch == '"') {
    ++c.pos;
    std::string out;
    while (c.pos < c.s.size() && c.s[c.pos] != '"') {
      if (c.s[c.pos] == '\\' && c.pos + 1 < c.s.size()) {
        ++c.pos;
        switch (c.s[c.pos]) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default: fail(c.line, "unsupported escape");
        }
        ++c.pos;
      } else {
        out.push_back(c.s[c.pos++]);
      }
    }
    if (c.pos >= c.s.size()) fail(c.line, "unterminated string");
    ++c.pos;
    return Value{out};
  }
  if (c.s.compare(c.pos, 4, "true") == 0 &&
      (c.pos + 4 == c.s.size() || !bare_key_char(c.s[c.pos + 4]))) {
    c.pos += 4;
    return Value{true};
  }
  if (c.s.compare(c.pos, 5, "false") == 0 &&
      (c.pos + 5 == c.s.size() || !bare_key_char(c.s[c.pos + 5]))) {
    c.pos += 5;
    return Value{false};
  }
  // Number: integer or float.
  std::size_t start = c.pos;
  bool is_float = false;
  if (c.s[c.pos] == '+' || c.s[c.pos] == '-') ++c.pos;
  while (c.pos < c.s.size() &&
         (std::isdigit(static_cast<unsigned char>(c.s[c.pos])) || c.s[c.pos] == '.' ||
          c.s[c.pos] == 'e' || c.s[c.pos] == 'E' || c.s[c.pos] == '+' || c.s[c.pos] == '-' ||
          c.s[c.pos] == '_')) {
    if (c.s[c.pos] == '.' || c.s[c.pos] == 'e' || c.s[c.pos] == 'E') is_float = true;
    ++c.pos;
  }
  if (c.pos == start) fail(c.line, "expected a value");
  std::string text(c.s.substr(start, c.pos - start));
  std::erase(text, '_');
  try {
    if (is_float) return Value{std::stod(text)};
    return Value{static_cast<std::int64_t>(std::stoll(text))};
  } catch (const std::exception&) {
    fail(c.line, "bad number: " + text);
  }
}

Value parse_value(Cursor& c) {
  c.skip_ws();
  if (c.pos < c.s.size() && c.s[c.pos] == '[') {
    ++c.pos;
    std::vector<Value> items;
    c.skip_ws();
    if (c.pos < c.s.size() && c.s[c.pos] == ']') {
      ++c.pos;
      return Value{items};
    }
    while (true) {
      items.push_back(parse_scalar(c));
      c.skip_ws();
      if (c.pos >= c.s.size()) fail(c.line, "unterminated array");
      if (c.s[c.pos] == ',') {
        ++c.pos;
        continue;
      }
      if (c.s[c.pos] == ']') {
        ++c.pos;
        return Value{items};
      }
      fail(c.line, "expected ',' or ']' in array");
    }
  }
  return parse_scalar(c);
}

}  // namespace

Table parse(const std::string& text) {
  Table table;
  std::string current = "";
  table[""];  // root section
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = strip(raw);
    if (line.empty() || line.front() == '#') continue;

    if (line.front() == '[') {
      auto close = line.find(']');
      if (close == std::string_view::npos) fail(lineno, "unterminated section header");
      std::string_view name = strip(line.substr(1, close - 1));
      if (name.empty()) fail(lineno, "empty section name");
      for (char ch : name)
        if (!bare_key_char(ch)) fail(lineno, "bad section name");
      std::string_view rest = strip(line.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') fail(lineno, "trailing content after section");
      current = std::string(name);
      table[current];
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(lineno, "expected key = value");
    std::string_view key = strip(line.substr(0, eq));
    if (key.empty()) fail(lineno, "empty key");
    for (char ch : key)
      if (!bare_key_char(ch)) fail(lineno, "bad key: " + std::string(key));

    Cursor c{line.substr(eq + 1), 0, lineno};
    Value v = parse_value(c);
    if (!c.done()) fail(lineno, "trailing content after value");
    auto [it, inserted] = table[current].emplace(std::string(key), std::move(v));
    if (!inserted) fail(lineno, "duplicate key: " + std::string(key));
  }
  return table;
}

Table parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("toml: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace uniqseg::toml
