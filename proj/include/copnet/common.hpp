#pragma once

#include <stdexcept>
#include <string>

namespace copnet {

// Base class for all library errors. Subclasses distinguish caller mistakes
// (shape/index/config) from environment failures (io/format) so the CLI can
// map them to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes do not satisfy an operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

// An index (answer id, expert id, ...) is out of range.
struct IndexError : Error {
  using Error::Error;
};

// A precondition other than shape/index was violated.
struct ContractError : Error {
  using Error::Error;
};

// An invalid configuration value or combination.
struct ConfigError : Error {
  using Error::Error;
};

// Dataset generation or validation failure.
struct DataError : Error {
  using Error::Error;
};

// Malformed input file; message carries the line number where applicable.
struct ParseError : Error {
  using Error::Error;
};

// Bad magic/version or corrupt structure in a binary file.
struct FormatError : Error {
  using Error::Error;
};

// Failure inside the training loop (non-finite gradient, ...).
struct TrainError : Error {
  using Error::Error;
};

// Filesystem-level failure (cannot open/write/rename).
struct IoError : Error {
  using Error::Error;
};

}  // namespace copnet
