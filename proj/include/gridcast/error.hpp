#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace gridcast {

/// Raised for rejected inputs and violated preconditions. The message is the
/// diagnostic shown to the user.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
[[noreturn]] void fail(const Args&... parts) {
  std::ostringstream oss;
  (oss << ... << parts);
  throw Error(oss.str());
}

template <typename... Args>
void require(bool condition, const Args&... parts) {
  if (!condition) fail(parts...);
}

}  // namespace gridcast
