// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace icvl {

enum class ErrorKind {
  kShape,
  kConfig,
  kData,
  kNumeric,
  kTransport,
  kProtocol,
  kParse,
  kIo,
};

const char* to_string(ErrorKind kind);

/// Base class for every error raised by the toolkit. The kind lets callers
/// (the CLI in particular) map failures onto exit codes without string
/// matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(ErrorKind::kProtocol, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

/// Raised when model output text holds no parseable candidate.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string raw_text)
      : Error(ErrorKind::kParse, what), raw_text_(std::move(raw_text)) {}

  const std::string& raw_text() const noexcept { return raw_text_; }

 private:
  std::string raw_text_;
};

}  // namespace icvl
