#pragma once

#include <stdexcept>
#include <string>

namespace mflqj {

enum class ErrorKind {
  ShapeMismatch,
  AsymmetricWeight,
  GridMismatch,
  SigmaSingular,
  NonFiniteState,
  RSingular,
  ParseError,
  IoError,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::AsymmetricWeight: return "AsymmetricWeight";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::SigmaSingular: return "SigmaSingular";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::RSingular: return "RSingular";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when Sigma_0 or Sigma_1 is (numerically) singular.
class SigmaSingularError : public Error {
 public:
  SigmaSingularError(double t, int which, double cond)
      : Error(ErrorKind::SigmaSingular,
              "Sigma_" + std::to_string(which) + " at t=" + std::to_string(t) +
                  " has condition number " + std::to_string(cond)),
        t_(t), which_(which), cond_(cond) {}

  [[nodiscard]] double time() const noexcept { return t_; }
  [[nodiscard]] int which() const noexcept { return which_; }
  [[nodiscard]] double condition() const noexcept { return cond_; }

 private:
  double t_;
  int which_;
  double cond_;
};

}  // namespace mflqj
