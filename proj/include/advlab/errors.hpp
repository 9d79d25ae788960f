#pragma once

#include <stdexcept>
#include <string>

namespace advlab {

// Base of every error thrown by the library. `kind()` is a stable tag the CLI
// uses to pick an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Dimension mismatch between a model, a sample or a matrix.
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

// Out-of-range parameter (T <= 0, k > min(H, W), ...).
struct ParameterError : Error {
  explicit ParameterError(const std::string& w) : Error("parameter", w) {}
};

// Non-finite loss during training.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

// Iterative numeric routine failed to converge.
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};

// Malformed input file.
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error("parse", w) {}
};

// Invalid experiment / detector configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

// Persisted document carries an unsupported schema_version.
struct MigrationError : Error {
  explicit MigrationError(const std::string& w) : Error("migration", w) {}
};

// ROC AUC requested on a single-class score set.
struct UndefinedAucError : Error {
  explicit UndefinedAucError(const std::string& w) : Error("undefined-auc", w) {}
};

}  // namespace advlab
