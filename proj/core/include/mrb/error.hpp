#pragma once

#include <stdexcept>
#include <string>

namespace mrb {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A non-finite value was produced or consumed, or a domain precondition failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration or argument outside its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable on-disk artifact.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kCorrupt, kIo };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace mrb
