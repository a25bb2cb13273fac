#pragma once

#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace uplift {

// All recoverable failures in the library throw Error with a message that
// names the offending input (file, row, column, tensor, ...).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void append_parts(std::ostringstream&) {}

template <typename T, typename... Rest>
void append_parts(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  append_parts(os, rest...);
}

}  // namespace detail

template <typename... Parts>
std::string concat(const Parts&... parts) {
  std::ostringstream os;
  detail::append_parts(os, parts...);
  return os.str();
}

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  throw Error(concat(parts...));
}

// Non-fatal diagnostics (degenerate-but-legal inputs). Goes to stderr so
// library return values stay clean.
template <typename... Parts>
void warn(const Parts&... parts) {
  std::cerr << "[uplift] warning: " << concat(parts...) << "\n";
}

}  // namespace uplift
