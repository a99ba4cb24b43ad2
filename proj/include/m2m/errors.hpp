#pragma once

#include <stdexcept>
#include <string>

namespace m2m {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class SpecError : public Error { using Error::Error; };
class MapError : public Error { using Error::Error; };
class DegenerateLossError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class IoError : public DataError { using DataError::DataError; };

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key_path, const std::string& what)
      : Error(key_path.empty() ? what : key_path + ": " + what), key_path_(key_path) {}
  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

// Numeric failures.
class ConvergenceError : public Error { using Error::Error; };
class OverlapError : public Error { using Error::Error; };
class RegistrationError : public Error { using Error::Error; };
class GradCheckError : public Error { using Error::Error; };

/// 0 success, 2 config error, 3 data error, 4 numeric failure, 1 anything else.
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SpecError*>(&e) ||
      dynamic_cast<const ParameterError*>(&e))
    return 2;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e))
    return 3;
  if (dynamic_cast<const ConvergenceError*>(&e) || dynamic_cast<const OverlapError*>(&e) ||
      dynamic_cast<const RegistrationError*>(&e) || dynamic_cast<const GradCheckError*>(&e) ||
      dynamic_cast<const MapError*>(&e) || dynamic_cast<const DegenerateLossError*>(&e))
    return 4;
  return 1;
}

}  // namespace m2m
