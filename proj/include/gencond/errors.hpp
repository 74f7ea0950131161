#pragma once

#include <stdexcept>
#include <string>

namespace gencond {

/// Tensor or configuration widths that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller supplied an out-of-range or inconsistent argument.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dataset or checkpoint files are missing, truncated or fail validation.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset contents violate a declared invariant (e.g. label out of range).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown or malformed configuration key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss term became non-finite during optimization.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace gencond
