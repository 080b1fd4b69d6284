#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace csdp {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  format_into(os, rest...);
}
}  // namespace detail

/// Divergence during optimisation (NaN/inf loss); distinct from config or
/// input errors so callers can map it to a dedicated exit code.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw Error(os.str());
}

template <typename... Args>
[[noreturn]] void fail_numeric(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw NumericError(os.str());
}

template <typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

}  // namespace csdp
