// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tcdfern {

// Each category maps to a distinct message prefix and exit code in the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

/// Non-finite or out-of-range values in otherwise well-formed data.
class DataIntegrityError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "data-integrity"; }
};

/// Shape or dimension mismatch between operands.
class StructuralError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "structural"; }
};

/// An input file or directory does not exist or cannot be opened.
class MissingFileError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "missing-file"; }
};

/// A file failed validation (magic, version, truncation, checksum).
class CorruptFileError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "corrupt"; }
};

/// A file is valid but was produced for a different configuration.
class IncompatibleError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "incompatible"; }
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

/// Training produced a non-finite loss or state.
class DivergenceError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "divergence"; }
};

}  // namespace tcdfern
