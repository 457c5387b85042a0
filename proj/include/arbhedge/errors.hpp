#pragma once

#include <stdexcept>
#include <string>

namespace arbhedge {

// Bad user input: unknown model, malformed config, invalid parameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The model itself is inadmissible at some point (no MPR, non-finite coefficients).
class ModelError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Evaluation requested outside the support region of a model.
class SupportError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A numerical procedure failed or produced inconsistent results.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace arbhedge
