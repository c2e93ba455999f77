#pragma once

#include <stdexcept>
#include <string>

namespace busctl {

/// Invalid static configuration: corridor, bounds, coefficients, scenario fields.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside an operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite network output or loss.
class NumericalFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulation invariant broke (e.g. non-positive headway after enforcement).
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace busctl
