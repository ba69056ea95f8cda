#pragma once

#include <stdexcept>
#include <string>

namespace modeqfi {

/// Classifies every failure the library reports. The CLI maps these onto exit codes.
enum class ErrorKind {
  InvalidDimension,
  ShapeError,
  UnphysicalState,
  DecompositionError,
  DomainError,
  SingularSld,
  SingularTerm,
  InternalInconsistency,
  NumericalRank,
  UndefinedSensingMode,
  InputError,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDimension: return "invalid-dimension";
    case ErrorKind::ShapeError: return "shape-error";
    case ErrorKind::UnphysicalState: return "unphysical-state";
    case ErrorKind::DecompositionError: return "decomposition-error";
    case ErrorKind::DomainError: return "domain-error";
    case ErrorKind::SingularSld: return "singular-sld";
    case ErrorKind::SingularTerm: return "singular-term";
    case ErrorKind::InternalInconsistency: return "internal-inconsistency";
    case ErrorKind::NumericalRank: return "numerical-rank";
    case ErrorKind::UndefinedSensingMode: return "undefined-sensing-mode";
    case ErrorKind::InputError: return "input-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by `sld`/`qfi` when a term has a vanishing denominator but a nonzero numerator.
class SingularSldError : public Error {
 public:
  SingularSldError(int j, int k, int l, double numerator, double denominator)
      : Error(ErrorKind::SingularSld,
              "term (j=" + std::to_string(j) + ", k=" + std::to_string(k) + ", l=" + std::to_string(l) +
                  ") has denominator " + std::to_string(denominator) + " with coefficient " +
                  std::to_string(numerator)),
        j_(j), k_(k), l_(l) {}

  int j() const noexcept { return j_; }
  int k() const noexcept { return k_; }
  int l() const noexcept { return l_; }

 private:
  int j_, k_, l_;
};

/// Decomposition failure carrying the residual that exceeded tolerance.
class DecompositionError : public Error {
 public:
  DecompositionError(const std::string& what, double residual)
      : Error(ErrorKind::DecompositionError, what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace modeqfi
