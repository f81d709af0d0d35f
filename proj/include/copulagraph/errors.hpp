#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace copulagraph {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Factorization failures, non-finite values, scan overflows.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what,
                          std::optional<std::size_t> pivot = std::nullopt)
      : Error(what), pivot_(pivot) {}

  std::optional<std::size_t> pivot() const { return pivot_; }

 private:
  std::optional<std::size_t> pivot_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

// Raised by training when an epoch fails numerically.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// Dataset and checkpoint parsing failures; line is 1-based, 0 when not applicable.
class LoadError : public Error {
 public:
  LoadError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        file_(file),
        line_(line) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace copulagraph
