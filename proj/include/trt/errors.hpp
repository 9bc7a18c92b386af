#pragma once

#include <stdexcept>
#include <string>

namespace trt {

// Error families map one-to-one onto CLI exit codes (see cli.hpp).
enum class ErrorKind { usage, format, io, contract, dimension };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::dimension, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

// All on-disk format problems. Subclasses name the precise failure.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};

class LengthError : public FormatError {
 public:
  explicit LengthError(const std::string& what) : FormatError(what) {}
};

class UnsupportedError : public FormatError {
 public:
  explicit UnsupportedError(const std::string& what) : FormatError(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace trt
