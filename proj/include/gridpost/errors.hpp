#pragma once

#include <stdexcept>
#include <string>

namespace gridpost {

/// Base of all library errors. exit_code() is the CLI contract:
/// 0 ok, 2 config, 3 I/O, 4 bundle mismatch, 5 data pairing.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, long layer) : Error(what), layer_(layer) {}
  long layer() const { return layer_; }

 private:
  long layer_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  long long offset() const { return offset_; }
  int exit_code() const override { return 3; }

 private:
  long long offset_;
};

class BundleError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 5; }
};

class PairingError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 5; }
};

}  // namespace gridpost
