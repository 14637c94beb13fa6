#pragma once

#include <charconv>
#include <string>

namespace dmdno {

/// Locale-independent text with 17 significant digits, enough to
/// round-trip any double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace dmdno
