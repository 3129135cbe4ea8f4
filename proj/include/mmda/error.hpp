#pragma once

#include <stdexcept>
#include <string>

namespace mmda {

// Numeric codes surface on the command line as "MMDA-E<code>: <message>".
enum class ErrorCode : int {
  kValidation = 1,
  kShape = 2,
  kNumeric = 3,
  kIo = 4,
  kConfig = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int numeric_code() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what)
      : Error(ErrorCode::kValidation, what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorCode::kShape, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what)
      : Error(ErrorCode::kNumeric, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what)
      : Error(ErrorCode::kConfig, what) {}
};

}  // namespace mmda
