#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace dcat {

// Raised for malformed input rows; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated preconditions on arguments (dimension mismatch, disallowed question, ...).
class ContractError : public std::logic_error {
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace dcat
