#pragma once

#include <charconv>
#include <string>

namespace splitsense {

// Shortest text that round-trips the double; locale independent.
inline std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace splitsense
