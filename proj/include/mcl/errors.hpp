#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mcl {

/// Raised when a caller breaks an operation's precondition (shape, layout, range).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration file or flag is malformed or inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or parameter went non-finite during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Base for every failure while reading dataset files.
class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& file, std::uint64_t offset, const std::string& what)
      : std::runtime_error(file + " @" + std::to_string(offset) + ": " + what),
        file_(file),
        offset_(offset) {}

  const std::string& file() const noexcept { return file_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

class BadMagicError : public IngestError {
 public:
  using IngestError::IngestError;
};

class TruncatedFileError : public IngestError {
 public:
  using IngestError::IngestError;
};

class CountMismatchError : public IngestError {
 public:
  using IngestError::IngestError;
};

/// CSV parse failure; offset() holds the 1-based line number.
class ParseError : public IngestError {
 public:
  using IngestError::IngestError;
};

class EmptyBufferError : public std::logic_error {
 public:
  EmptyBufferError() : std::logic_error("replay buffer is empty") {}
};

class IncompleteMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw ContractError(what);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace detail
}  // namespace mcl
