// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sga {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// A softmax row in which every entry is masked.
class DegenerateRowError : public NumericalError {
 public:
  DegenerateRowError(const std::string& what, std::size_t row)
      : NumericalError(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class SequenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IncompleteGridError : public Error {
 public:
  using Error::Error;
};

class DecodingError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : NumericalError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sga
