#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace tseg {

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

// Precondition / argument validation. Messages should name the offending
// value or dimension.
inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

enum class Mode { train, eval };

}  // namespace tseg
