// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace orchard {

enum class ErrorKind {
  kValidation,   // bad input: arguments, schemas, malformed files
  kComputation,  // numerical failure, e.g. a solve that did not converge
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error(ErrorKind::kValidation, message) {}
};

/// Thrown when an iterative solver cannot produce a usable estimate.
class NonConvergentError : public Error {
 public:
  explicit NonConvergentError(const std::string& message)
      : Error(ErrorKind::kComputation, message) {}
};

}  // namespace orchard
