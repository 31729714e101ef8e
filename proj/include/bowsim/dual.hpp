#pragma once

#include <Eigen/Core>
#include <cmath>
#include <ostream>

namespace bowsim::ad {

/// Forward-mode pair: primal value and tangent. Usable as an Eigen scalar.
template <typename T>
struct Dual {
  T val{};
  T eps{};

  constexpr Dual() = default;
  constexpr Dual(T v) : val(v) {}  // NOLINT: implicit lift of constants
  constexpr Dual(T v, T e) : val(v), eps(e) {}

  Dual& operator+=(const Dual& o) {
    val += o.val;
    eps += o.eps;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    eps -= o.eps;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    eps = eps * o.val + val * o.eps;
    val *= o.val;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.val;
    eps = (eps - val * inv * o.eps) * inv;
    val *= inv;
    return *this;
  }
};

template <typename T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T> Dual<T> operator-(const Dual<T>& a) { return {-a.val, -a.eps}; }
template <typename T> Dual<T> operator+(const Dual<T>& a) { return a; }

template <typename T> Dual<T> operator+(Dual<T> a, T b) { a.val += b; return a; }
template <typename T> Dual<T> operator+(T b, Dual<T> a) { a.val += b; return a; }
template <typename T> Dual<T> operator-(Dual<T> a, T b) { a.val -= b; return a; }
template <typename T> Dual<T> operator-(T b, const Dual<T>& a) { return {b - a.val, -a.eps}; }
template <typename T> Dual<T> operator*(const Dual<T>& a, T b) { return {a.val * b, a.eps * b}; }
template <typename T> Dual<T> operator*(T b, const Dual<T>& a) { return {a.val * b, a.eps * b}; }
template <typename T> Dual<T> operator/(const Dual<T>& a, T b) { return {a.val / b, a.eps / b}; }

template <typename T> bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.val == b.val && a.eps == b.eps; }
template <typename T> bool operator!=(const Dual<T>& a, const Dual<T>& b) { return !(a == b); }
template <typename T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.val < b.val; }
template <typename T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.val > b.val; }
template <typename T> bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.val <= b.val; }
template <typename T> bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.val >= b.val; }

template <typename T> Dual<T> sin(const Dual<T>& a) {
  using std::cos, std::sin;
  return {sin(a.val), cos(a.val) * a.eps};
}
template <typename T> Dual<T> cos(const Dual<T>& a) {
  using std::cos, std::sin;
  return {cos(a.val), -sin(a.val) * a.eps};
}
template <typename T> Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T e = exp(a.val);
  return {e, e * a.eps};
}
template <typename T> Dual<T> tanh(const Dual<T>& a) {
  using std::tanh;
  const T y = tanh(a.val);
  return {y, (T(1) - y * y) * a.eps};
}
template <typename T> Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.val);
  return {s, a.eps / (T(2) * s)};
}
template <typename T> Dual<T> abs(const Dual<T>& a) {
  return a.val < T(0) ? -a : a;
}
template <typename T> bool isfinite(const Dual<T>& a) {
  using std::isfinite;
  return isfinite(a.val) && isfinite(a.eps);
}

template <typename T> std::ostream& operator<<(std::ostream& os, const Dual<T>& a) {
  return os << '(' << a.val << " + " << a.eps << "e)";
}

/// Primal part of a double or a Dual (recursively).
inline double primal(double x) { return x; }
template <typename T> double primal(const Dual<T>& x) { return primal(x.val); }

}  // namespace bowsim::ad

namespace Eigen {

template <typename T>
struct NumTraits<bowsim::ad::Dual<T>> : NumTraits<T> {
  using Real = bowsim::ad::Dual<T>;
  using NonInteger = Real;
  using Nested = Real;
  using Literal = Real;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2 * NumTraits<T>::ReadCost,
    AddCost = 2 * NumTraits<T>::AddCost,
    MulCost = 3 * NumTraits<T>::MulCost + NumTraits<T>::AddCost,
  };
  static Real epsilon() { return Real(NumTraits<T>::epsilon()); }
  static Real dummy_precision() { return Real(NumTraits<T>::dummy_precision()); }
  static Real highest() { return Real(NumTraits<T>::highest()); }
  static Real lowest() { return Real(NumTraits<T>::lowest()); }
  static int digits10() { return NumTraits<T>::digits10(); }
};

}  // namespace Eigen
