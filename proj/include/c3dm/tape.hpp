/*
 * c3dm - canonical 3D deformer maps on synthetic deformable categories.
 *
 * Copyright 2026 The c3dm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Scalar reverse-mode differentiation.
//
// Every arithmetic operation on a non-constant Var appends one node to the
// calling thread's tape, holding at most two parent indices and the local
// partial derivatives. A reverse sweep over the node list yields adjoints
// for all nodes at once. Var is registered with Eigen as a real scalar, so
// fixed-size Eigen expressions templated on the scalar type differentiate
// without change.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace c3dm::nn {

class Tape {
 public:
  struct Node {
    std::int32_t lhs;
    std::int32_t rhs;
    double d_lhs;
    double d_rhs;
  };

  std::int32_t leaf() { return push({-1, -1, 0.0, 0.0}); }
  std::int32_t unary(std::int32_t a, double da) { return push({a, -1, da, 0.0}); }
  std::int32_t binary(std::int32_t a, double da, std::int32_t b, double db) {
    return push({a, b, da, db});
  }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Adjoints of every node with respect to node `output`, seeded with `seed`.
  [[nodiscard]] std::vector<double> adjoints(std::int32_t output, double seed = 1.0) const;

 private:
  std::int32_t push(const Node& n) {
    nodes_.push_back(n);
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }
  std::vector<Node> nodes_;
};

/// The tape of the calling thread.
Tape& tape();

/// Clears the thread's tape on entry and on exit.
class TapeScope {
 public:
  TapeScope() { tape().clear(); }
  ~TapeScope() { tape().clear(); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: constants convert implicitly
  Var(int v) : value_(static_cast<double>(v)) {}  // NOLINT
  Var(long v) : value_(static_cast<double>(v)) {}  // NOLINT

  /// A new independent variable recorded on the tape.
  static Var leaf(double v) { return Var(v, tape().leaf()); }

  [[nodiscard]] double value() const noexcept { return value_; }
  [[nodiscard]] std::int32_t index() const noexcept { return index_; }
  [[nodiscard]] bool is_constant() const noexcept { return index_ < 0; }

  static Var unary(double v, const Var& a, double da) {
    if (a.is_constant()) return Var(v);
    return Var(v, tape().unary(a.index_, da));
  }
  static Var binary(double v, const Var& a, double da, const Var& b, double db) {
    if (a.is_constant()) return unary(v, b, db);
    if (b.is_constant()) return Var(v, tape().unary(a.index_, da));
    return Var(v, tape().binary(a.index_, da, b.index_, db));
  }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var operator+(const Var& a, const Var& b) {
    return binary(a.value_ + b.value_, a, 1.0, b, 1.0);
  }
  friend Var operator-(const Var& a, const Var& b) {
    return binary(a.value_ - b.value_, a, 1.0, b, -1.0);
  }
  friend Var operator*(const Var& a, const Var& b) {
    return binary(a.value_ * b.value_, a, b.value_, b, a.value_);
  }
  friend Var operator/(const Var& a, const Var& b) {
    const double q = a.value_ / b.value_;
    return binary(q, a, 1.0 / b.value_, b, -q / b.value_);
  }
  friend Var operator-(const Var& a) { return unary(-a.value_, a, -1.0); }
  friend Var operator+(const Var& a) { return a; }

  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }
  friend bool operator<=(const Var& a, const Var& b) { return a.value_ <= b.value_; }
  friend bool operator>=(const Var& a, const Var& b) { return a.value_ >= b.value_; }
  friend bool operator==(const Var& a, const Var& b) { return a.value_ == b.value_; }
  friend bool operator!=(const Var& a, const Var& b) { return a.value_ != b.value_; }

 private:
  Var(double v, std::int32_t idx) : value_(v), index_(idx) {}

  double value_ = 0.0;
  std::int32_t index_ = -1;
};

inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.value());
  return Var::unary(s, a, 0.5 / s);
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return Var::unary(e, a, e);
}
inline Var log(const Var& a) { return Var::unary(std::log(a.value()), a, 1.0 / a.value()); }
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.value());
  return Var::unary(t, a, 1.0 - t * t);
}
inline Var sin(const Var& a) { return Var::unary(std::sin(a.value()), a, std::cos(a.value())); }
inline Var cos(const Var& a) { return Var::unary(std::cos(a.value()), a, -std::sin(a.value())); }
inline Var abs(const Var& a) { return Var::unary(std::abs(a.value()), a, a.value() < 0 ? -1.0 : 1.0); }
inline Var pow(const Var& a, double p) {
  return Var::unary(std::pow(a.value(), p), a, p * std::pow(a.value(), p - 1.0));
}
inline Var atan2(const Var& y, const Var& x) {
  const double r2 = x.value() * x.value() + y.value() * y.value();
  return Var::binary(std::atan2(y.value(), x.value()), y, x.value() / r2, x, -y.value() / r2);
}
inline Var max(const Var& a, const Var& b) { return a.value() >= b.value() ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.value() <= b.value() ? a : b; }
inline bool isfinite(const Var& a) { return std::isfinite(a.value()); }
inline bool isnan(const Var& a) { return std::isnan(a.value()); }
inline bool isinf(const Var& a) { return std::isinf(a.value()); }

/// Value of a scalar that is either double or Var.
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

template <typename Derived>
auto values_of(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return m.unaryExpr([](const Scalar& s) { return value_of(s); });
}

/// Loss value together with its gradient with respect to a set of registered
/// tape variables, in registration order.
struct GradientBundle {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// Reverse sweep from `loss` seeded with `seed`.
GradientBundle backward(const Var& loss, std::span<const Var> registered, double seed = 1.0);

/// Fresh tape leaves holding the entries of `x`.
template <int Rows, int Cols>
Eigen::Matrix<Var, Rows, Cols> make_leaves(const Eigen::Matrix<double, Rows, Cols>& x) {
  Eigen::Matrix<Var, Rows, Cols> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = Var::leaf(x(i));
  return out;
}

}  // namespace c3dm::nn

namespace Eigen {

template <>
struct NumTraits<c3dm::nn::Var> : GenericNumTraits<double> {
  using Real = c3dm::nn::Var;
  using NonInteger = c3dm::nn::Var;
  using Nested = c3dm::nn::Var;
  using Literal = c3dm::nn::Var;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3
  };
  static inline Real epsilon() { return NumTraits<double>::epsilon(); }
  static inline Real dummy_precision() { return NumTraits<double>::dummy_precision(); }
  static inline Real highest() { return NumTraits<double>::highest(); }
  static inline Real lowest() { return NumTraits<double>::lowest(); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<c3dm::nn::Var, double, BinaryOp> {
  using ReturnType = c3dm::nn::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, c3dm::nn::Var, BinaryOp> {
  using ReturnType = c3dm::nn::Var;
};

}  // namespace Eigen
