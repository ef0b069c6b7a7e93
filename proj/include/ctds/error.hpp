#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace ctds {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside an operation's domain (bad index, empty mask, off-grid point...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Overflow, non-finite intermediates, singular systems.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Iterative procedure stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  oss.precision(10);
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

}  // namespace ctds
