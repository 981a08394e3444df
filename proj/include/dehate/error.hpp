#pragma once

#include <stdexcept>
#include <string>

namespace dehate {

/// Base class for every failure raised by the toolkit. The CLI maps any
/// `Error` to the "data error" exit code.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
  public:
    using Error::Error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

class TruncationError : public FormatError {
  public:
    using FormatError::FormatError;
};

class IoError : public Error {
  public:
    IoError(std::string const& what, std::string path)
        : Error(what + ": " + path), path_(std::move(path)) {}

    std::string const& path() const noexcept { return path_; }

  private:
    std::string path_;
};

class DomainError : public Error {
  public:
    using Error::Error;
};

class MetadataError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class ValidationError : public Error {
  public:
    using Error::Error;
};

class NumericError : public Error {
  public:
    using Error::Error;
};

} // namespace dehate
