#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace invmono {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Malformed or inconsistent caller input (dimension mismatch, empty data, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A structural property the caller promised does not hold (monotonicity,
/// group invariance, Lipschitz bound).
class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical solver stopped without certifying optimality.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class UnsupportedKernel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two samples whose joint laws differ; `row` is the first row of the
/// reference sample without a partner.
class LawMismatch : public std::runtime_error {
 public:
  LawMismatch(const std::string& what, std::size_t row)
      : std::runtime_error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Real number or +infinity. Infinity is a symbolic state, never a large
/// float, so that indicator functions and infeasible programs compose.
class Extended {
 public:
  constexpr Extended() = default;
  constexpr Extended(double v) : value_(v) {}  // NOLINT(implicit)

  static constexpr Extended infinity() {
    Extended e;
    e.infinite_ = true;
    return e;
  }

  constexpr bool is_finite() const { return !infinite_; }
  constexpr bool is_infinite() const { return infinite_; }

  double value() const {
    if (infinite_) throw std::logic_error("value() of +infinity");
    return value_;
  }
  /// Finite value or the IEEE infinity, for reporting only.
  double as_double() const {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }

  friend constexpr bool operator==(const Extended& a, const Extended& b) {
    if (a.infinite_ || b.infinite_) return a.infinite_ == b.infinite_;
    return a.value_ == b.value_;
  }
  friend constexpr std::partial_ordering operator<=>(const Extended& a,
                                                     const Extended& b) {
    if (a.infinite_ && b.infinite_) return std::partial_ordering::equivalent;
    if (a.infinite_) return std::partial_ordering::greater;
    if (b.infinite_) return std::partial_ordering::less;
    return a.value_ <=> b.value_;
  }
  friend Extended operator+(const Extended& a, const Extended& b) {
    if (a.infinite_ || b.infinite_) return infinity();
    return a.value_ + b.value_;
  }
  friend std::ostream& operator<<(std::ostream& os, const Extended& e) {
    if (e.infinite_) return os << "+inf";
    return os << e.value_;
  }

 private:
  double value_ = 0.0;
  bool infinite_ = false;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

inline void require_finite(const Vector& v, const std::string& what) {
  if (!v.allFinite()) throw InputError(what + ": non-finite entry");
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw InputError(what + ": non-finite entry");
}

inline Vector make_vector(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

}  // namespace invmono
