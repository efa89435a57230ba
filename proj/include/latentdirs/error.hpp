#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latentdirs {

enum class ErrorKind {
  Validation,
  DegenerateColumn,
  Index,
  Unsupported,
  ShapeMismatch,
  NonFinite,
  InsufficientData,
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace latentdirs
