#pragma once

#include <stdexcept>
#include <string>

namespace lungsim {

// Bad user-facing configuration (invalid parameter values, inconsistent
// options). CLI maps this to its own exit code.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file. Message carries file/line/field context.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure in the time integrator or a nonlinear solve.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lungsim
