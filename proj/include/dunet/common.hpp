#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dunet {

// Error hierarchy. Every failure surfaced to callers derives from Error so the
// CLI can map it onto a machine-readable JSON payload.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Dimension mismatch; names the offending axis ("batch", "channels", ...).
class ShapeError : public Error {
 public:
  ShapeError(std::string axis, const std::string& msg)
      : Error("shape", msg), axis_(std::move(axis)) {}
  const std::string& axis() const { return axis_; }

 private:
  std::string axis_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// NaN/Inf detected in a forward or backward buffer.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

// Malformed text input; carries a 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line = -1)
      : Error("parse", line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace dunet
