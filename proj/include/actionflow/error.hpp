#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace actionflow {

enum class ErrorCode {
  NotFound,
  MalformedBundle,
  InvalidDepth,
  DegenerateObject,
  NumericalBlowup,
  InvalidArgument,
  ShapeError,
  InvalidAlpha,
  GeneratorError,
  IncompatibleSnapshot,
  ProtocolError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable error kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by physics_step when an object leaves the finite range.
class NumericalBlowup : public Error {
 public:
  NumericalBlowup(std::size_t object_index, const std::string& what)
      : Error(ErrorCode::NumericalBlowup, what), object_index_(object_index) {}

  std::size_t object_index() const noexcept { return object_index_; }

 private:
  std::size_t object_index_;
};

}  // namespace actionflow
