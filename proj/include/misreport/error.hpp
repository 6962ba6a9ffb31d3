#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace misreport {

enum class ErrorKind {
  Schema,
  Validation,
  Role,
  Size,
  Shape,
  Parameter,
  Convergence,
  EmptyStratum,
  ZeroDenominator,
  Infeasible,
  Spec,
  Usage,
  Matrix,
  BootstrapDegenerate,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Role: return "role";
    case ErrorKind::Size: return "size";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::EmptyStratum: return "empty-stratum";
    case ErrorKind::ZeroDenominator: return "zero-denominator";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Matrix: return "matrix";
    case ErrorKind::BootstrapDegenerate: return "bootstrap-degenerate";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library. `kind()` lets callers (the sweep
/// runner in particular) classify failures without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Error carrying the offending denominator (CMRE's delta', NMRE's tau').
class ZeroDenominatorError : public Error {
 public:
  ZeroDenominatorError(const std::string& message, double denominator)
      : Error(ErrorKind::ZeroDenominator, message), denominator_(denominator) {}

  double denominator() const noexcept { return denominator_; }

 private:
  double denominator_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double violation)
      : Error(ErrorKind::Convergence, message), violation_(violation) {}

  /// Largest KKT violation at the point the solver gave up.
  double violation() const noexcept { return violation_; }

 private:
  double violation_;
};

class InfeasibleTargetError : public Error {
 public:
  InfeasibleTargetError(const std::string& message, double target_mr, double p1)
      : Error(ErrorKind::Infeasible, message), target_mr_(target_mr), p1_(p1) {}

  double target_mr() const noexcept { return target_mr_; }
  double p1() const noexcept { return p1_; }

 private:
  double target_mr_;
  double p1_;
};

}  // namespace misreport
