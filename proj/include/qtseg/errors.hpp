#pragma once

#include <stdexcept>
#include <string>

namespace qtseg {

// Error taxonomy. Every failure the engine can diagnose is thrown as one of
// these; the CLI maps each class to a distinct process exit code.

// Malformed or inconsistent tensor shapes (rank, dims, channel mismatches).
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model/run configuration (bad JSON, out-of-range hyperparameters).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values produced by a kernel, or numerically impossible requests.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem / image / checkpoint read-write failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse (calling backward on a non-scalar, reading absent gradients...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qtseg
