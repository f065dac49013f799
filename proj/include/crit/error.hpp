#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crit {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A request exceeds a configured budget (e.g. exact Jacobian size).
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (CIFAR-10 binary, network file).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Configuration parse/validation failure with a line/field diagnostic.
class ConfigError : public Error {
 public:
  ConfigError(std::size_t line, std::string field, const std::string& message)
      : Error(format(line, field, message)), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(std::size_t line, const std::string& field, const std::string& message) {
    std::string out = "config";
    if (line > 0) out += ":" + std::to_string(line);
    if (!field.empty()) out += " [" + field + "]";
    return out + ": " + message;
  }

  std::size_t line_ = 0;
  std::string field_;
};

}  // namespace crit
