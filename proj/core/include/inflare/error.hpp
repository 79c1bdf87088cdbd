#pragma once

#include <stdexcept>
#include <string>

namespace inflare {

// Precondition violated by the caller (bad shape, out-of-range parameter, ...).
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf or otherwise lost numerical meaning.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}
}  // namespace detail

}  // namespace inflare
