#pragma once

// Shared error types and small text helpers used across the library.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace outan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad inputs: violated preconditions, malformed files, out-of-range values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Operation rejected by the emulated device state (unpowered, faulted).
class StateError : public Error {
 public:
  using Error::Error;
};

// Queries with no finite answer for the current load model (open/short).
class ModelError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kPi = 3.14159265358979323846;

// Shortest round-trip decimal form; keeps file output byte-stable.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string to_hex4(uint16_t word) {
  static const char digits[] = "0123456789ABCDEF";
  std::string s(4, '0');
  for (int i = 3; i >= 0; --i) {
    s[i] = digits[word & 0xF];
    word >>= 4;
  }
  return s;
}

inline uint16_t parse_hex4(std::string_view text) {
  if (text.size() != 4) throw ValidationError("hex word must be 4 digits: '" + std::string(text) + "'");
  uint16_t word = 0;
  for (char c : text) {
    word <<= 4;
    if (c >= '0' && c <= '9') word |= uint16_t(c - '0');
    else if (c >= 'a' && c <= 'f') word |= uint16_t(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') word |= uint16_t(c - 'A' + 10);
    else throw ValidationError("invalid hex digit in '" + std::string(text) + "'");
  }
  return word;
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  size_t begin = 0;
  while (true) {
    size_t comma = line.find(',', begin);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(begin));
      break;
    }
    fields.emplace_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ValidationError("invalid number: '" + std::string(s) + "'");
  return v;
}

inline long parse_long(std::string_view s) {
  s = trim(s);
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ValidationError("invalid integer: '" + std::string(s) + "'");
  return v;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out.write(content.data(), std::streamsize(content.size()));
  if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace outan
