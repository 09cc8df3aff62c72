#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scoreid {

enum class ErrorKind {
  Io,
  Format,
  Argument,
  Data,
  Numerical,
  Alignment,
  Fit,
  Layout,
  Score,
  Training,
  Identification,
  Config,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a category so the CLI can
// print a one-line diagnostic and map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace scoreid
