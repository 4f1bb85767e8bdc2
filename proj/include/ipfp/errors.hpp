#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace ipfp {

namespace detail {
inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace detail

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Two containers that must agree in length do not; carries both lengths.
struct DimensionError : Error {
  std::size_t expected;
  std::size_t got;
  DimensionError(const std::string& what, std::size_t expected_, std::size_t got_)
      : Error(what + " (expected " + std::to_string(expected_) + ", got " +
              std::to_string(got_) + ")"),
        expected(expected_),
        got(got_) {}
};

// Weights not strictly positive or not summing to one.
struct MeasureError : Error {
  using Error::Error;
};

// Zero span, containment between subspaces, or other basis defects.
struct SubspaceError : Error {
  using Error::Error;
};

// Degenerate assembled sum operator (entire spectrum below tolerance).
struct OperatorError : Error {
  using Error::Error;
};

// Moment targets incompatible with the kernel of the sum operator.
struct TargetError : Error {
  using Error::Error;
};

// Inner or outer iteration failed: no convergence, stalled line search,
// or iterates left the trust region ("unbounded iterates").
struct SolveError : Error {
  using Error::Error;
};

// Malformed instance/trace files; message names the offending field.
struct SchemaError : Error {
  using Error::Error;
};

}  // namespace ipfp
