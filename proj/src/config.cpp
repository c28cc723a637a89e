#include "popgrid/config.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "popgrid/error.hpp"

namespace popgrid {

namespace {

class LineParser {
 public:
  LineParser(std::string_view text, std::size_t line_no) : s_(text), line_(line_no) {}

  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  bool at_end() {
    skip_ws();
    return i_ == s_.size() || s_[i_] == '#';
  }
  bool consume(char c) {
    skip_ws();
    if (i_ < s_.size() && s_[i_] == c) {
      ++i_;
      return true;
    }
    return false;
  }
  std::string key() {
    skip_ws();
    const std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == '-')) ++i_;
    if (i_ == start) fail("expected a bare key");
    return std::string(s_.substr(start, i_ - start));
  }

  nlohmann::json value() {
    skip_ws();
    if (i_ == s_.size()) fail("missing value");
    const char c = s_[i_];
    if (c == '"') return string_value();
    if (c == '[') return array_value();
    if (s_.substr(i_, 4) == "true") {
      i_ += 4;
      return true;
    }
    if (s_.substr(i_, 5) == "false") {
      i_ += 5;
      return false;
    }
    return number_value();
  }

  [[noreturn]] void fail(std::string_view what) const {
    throw Error(ErrorCode::kParse, fmt::format("config line {}: {}", line_, what));
  }

 private:
  nlohmann::json string_value() {
    ++i_;
    std::string out;
    while (i_ < s_.size() && s_[i_] != '"') {
      char c = s_[i_++];
      if (c == '\\') {
        if (i_ == s_.size()) fail("dangling escape");
        const char e = s_[i_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(fmt::format("unsupported escape '\\{}'", e));
        }
      }
      out.push_back(c);
    }
    if (i_ == s_.size()) fail("unterminated string");
    ++i_;
    return out;
  }

  nlohmann::json array_value() {
    ++i_;
    auto arr = nlohmann::json::array();
    if (consume(']')) return arr;
    for (;;) {
      arr.push_back(value());
      if (consume(']')) return arr;
      if (!consume(',')) fail("expected ',' or ']' in array");
      if (consume(']')) return arr;  // trailing comma
    }
  }

  nlohmann::json number_value() {
    const std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.' ||
                              s_[i_] == '+' || s_[i_] == '-' || s_[i_] == '_')) {
      ++i_;
    }
    std::string tok;
    for (char c : s_.substr(start, i_ - start)) {
      if (c != '_') tok.push_back(c);
    }
    if (tok.empty()) fail("expected a value");
    const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* last = tok.data() + tok.size();
    if (tok.find_first_of(".eE") == std::string::npos) {
      long long v = 0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec == std::errc() && p == last) return v;
    } else {
      double v = 0.0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec == std::errc() && p == last) return v;
    }
    fail(fmt::format("invalid value '{}'", tok));
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t i_ = 0;
};

}  // namespace

nlohmann::json parse_config(std::string_view text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    LineParser p(line, line_no);
    if (p.at_end()) continue;
    if (p.consume('[')) {
      const std::string name = p.key();
      if (!p.consume(']')) p.fail("expected ']' after table name");
      if (!p.at_end()) p.fail("trailing characters after table header");
      if (root.contains(name)) p.fail(fmt::format("table '{}' defined twice", name));
      root[name] = nlohmann::json::object();
      table = &root[name];
      continue;
    }
    const std::string key = p.key();
    if (!p.consume('=')) p.fail("expected '=' after key");
    auto value = p.value();
    if (!p.at_end()) p.fail("trailing characters after value");
    if (table->contains(key)) p.fail(fmt::format("key '{}' defined twice", key));
    (*table)[key] = std::move(value);
  }
  return root;
}

nlohmann::json load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace popgrid
