#pragma once

// Reverse-mode tape over dense matrices.
//
// Nodes are evaluated eagerly when recorded; backward() replays the record in
// reverse. The tape is templated on the scalar so the same recording code runs
// in double (gradients) and in Dual<double> (forward-over-reverse Hessian-vector
// products: parameter leaves carry the direction v as their tangent and the
// reverse sweep then yields H v in the tangent parts of the adjoints).

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "bowsim/dual.hpp"
#include "bowsim/errors.hpp"

namespace bowsim::ad {

enum class Op : std::uint8_t {
  Leaf,
  Affine,   // X W (+ row-broadcast bias)
  LinComb,  // alpha A + beta B + gamma
  Product,  // elementwise A .* B
  Tanh,
  Sin,
  Cos,
  Exp,
  Square,
  Sum,   // all entries -> 1x1
  Mean,  // all entries / count -> 1x1
  Gather,  // rows of A selected by an index list
};

enum class Summation { Sequential, Pairwise };

template <typename S>
class Tape;

/// Handle to a recorded node.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename S>
class Tape {
 public:
  using Scalar = S;
  using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  explicit Tape(Summation summation = Summation::Sequential) : summation_(summation) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Matrix value) { return push(Node{Op::Leaf}, std::move(value), false); }

  /// Differentiable leaf bound to parameter block `block`.
  Var<S> parameter(int block, Matrix value) {
    Node n{Op::Leaf};
    n.block = block;
    return push(n, std::move(value), true);
  }

  Var<S> affine(Var<S> x, Var<S> w, std::optional<Var<S>> bias = std::nullopt) {
    check(x);
    check(w);
    const Matrix& X = value(x.id);
    const Matrix& W = value(w.id);
    if (X.cols() != W.rows()) throw ShapeError("affine: inner dimensions differ");
    Matrix Y(X.rows(), W.cols());
    Y.noalias() = X * W;
    Node n{Op::Affine, x.id, w.id};
    bool grad = needs_grad(x.id) || needs_grad(w.id);
    if (bias) {
      check(*bias);
      const Matrix& b = value(bias->id);
      if (b.rows() != 1 || b.cols() != W.cols()) throw ShapeError("affine: bias must be 1 x out");
      Y.rowwise() += b.row(0);
      n.c = bias->id;
      grad = grad || needs_grad(bias->id);
    }
    return push(n, std::move(Y), grad);
  }

  Var<S> lincomb(Var<S> a, double alpha, std::optional<Var<S>> b, double beta, double gamma) {
    check(a);
    Matrix Y = value(a.id) * S(alpha);
    Node n{Op::LinComb, a.id};
    n.alpha = alpha;
    n.beta = beta;
    n.gamma = gamma;
    bool grad = needs_grad(a.id);
    if (b) {
      check(*b);
      if (value(b->id).rows() != Y.rows() || value(b->id).cols() != Y.cols()) {
        throw ShapeError("lincomb: operand shapes differ");
      }
      Y += value(b->id) * S(beta);
      n.b = b->id;
      grad = grad || needs_grad(b->id);
    }
    if (gamma != 0.0) Y.array() += S(gamma);
    return push(n, std::move(Y), grad);
  }

  Var<S> product(Var<S> a, Var<S> b) {
    check(a);
    check(b);
    const Matrix& A = value(a.id);
    const Matrix& B = value(b.id);
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("product: operand shapes differ");
    Matrix Y = A.cwiseProduct(B);
    return push(Node{Op::Product, a.id, b.id}, std::move(Y), needs_grad(a.id) || needs_grad(b.id));
  }

  Var<S> tanh(Var<S> a) {
    if constexpr (std::is_same_v<S, double>) {
      check(a);
      return push(Node{Op::Tanh, a.id}, fast_tanh(value(a.id)), needs_grad(a.id));
    } else {
      return unary(Op::Tanh, a, [](const S& x) { using std::tanh; return tanh(x); });
    }
  }
  Var<S> sin(Var<S> a) { return unary(Op::Sin, a, [](const S& x) { using std::sin; return sin(x); }); }
  Var<S> cos(Var<S> a) { return unary(Op::Cos, a, [](const S& x) { using std::cos; return cos(x); }); }
  Var<S> exp(Var<S> a) { return unary(Op::Exp, a, [](const S& x) { using std::exp; return exp(x); }); }
  Var<S> square(Var<S> a) { return unary(Op::Square, a, [](const S& x) { return x * x; }); }

  Var<S> sum(Var<S> a) {
    check(a);
    Matrix Y(1, 1);
    Y(0, 0) = reduce(value(a.id));
    return push(Node{Op::Sum, a.id}, std::move(Y), needs_grad(a.id));
  }

  /// Y.row(i) = A.row(rows[i]); rows may repeat.
  Var<S> gather_rows(Var<S> a, std::vector<Eigen::Index> rows) {
    check(a);
    const Matrix& A = value(a.id);
    Matrix Y(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= A.rows()) throw ShapeError("gather_rows: index out of range");
      Y.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
    }
    Node n{Op::Gather, a.id};
    n.aux = static_cast<int>(row_lists_.size());
    row_lists_.push_back(std::move(rows));
    return push(n, std::move(Y), needs_grad(a.id));
  }

  Var<S> mean(Var<S> a) {
    check(a);
    const Matrix& A = value(a.id);
    if (A.size() == 0) throw ShapeError("mean of an empty matrix");
    Matrix Y(1, 1);
    Y(0, 0) = reduce(A) / S(static_cast<double>(A.size()));
    return push(Node{Op::Mean, a.id}, std::move(Y), needs_grad(a.id));
  }

  const Matrix& value(int id) const { return values_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  Summation summation() const { return summation_; }

  /// Reverse sweep seeded at the scalar `output`. Result is indexed by parameter
  /// block; blocks the output does not depend on come back empty.
  std::vector<Matrix> backward(Var<S> output) const {
    check(output);
    if (value(output.id).size() != 1) throw ShapeError("backward: output must be a 1x1 scalar");
    std::vector<Matrix> adj(nodes_.size());
    adj[static_cast<std::size_t>(output.id)] = Matrix::Constant(1, 1, S(1.0));
    int max_block = -1;
    for (const Node& n : nodes_) max_block = std::max(max_block, n.block);
    std::vector<Matrix> grads(static_cast<std::size_t>(max_block + 1));

    for (int i = output.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      Matrix& G = adj[static_cast<std::size_t>(i)];
      if (G.size() == 0 || !grad_[static_cast<std::size_t>(i)]) continue;
      switch (n.op) {
        case Op::Leaf:
          if (n.block >= 0) accumulate(grads[static_cast<std::size_t>(n.block)], G);
          break;
        case Op::Affine: {
          const Matrix& X = value(n.a);
          const Matrix& W = value(n.b);
          if (needs_grad(n.a)) accumulate_product(adj[idx(n.a)], G, W.transpose());
          if (needs_grad(n.b)) accumulate_product(adj[idx(n.b)], X.transpose(), G);
          if (n.c >= 0 && needs_grad(n.c)) accumulate(adj[idx(n.c)], G.colwise().sum());
          break;
        }
        case Op::LinComb:
          if (needs_grad(n.a)) accumulate(adj[idx(n.a)], G * S(n.alpha));
          if (n.b >= 0 && needs_grad(n.b)) accumulate(adj[idx(n.b)], G * S(n.beta));
          break;
        case Op::Product:
          if (needs_grad(n.a)) accumulate(adj[idx(n.a)], G.cwiseProduct(value(n.b)));
          if (needs_grad(n.b)) accumulate(adj[idx(n.b)], G.cwiseProduct(value(n.a)));
          break;
        case Op::Tanh: {
          const Matrix& Y = value(i);
          accumulate(adj[idx(n.a)], (G.array() * (S(1.0) - Y.array() * Y.array())).matrix());
          break;
        }
        case Op::Sin:
          accumulate(adj[idx(n.a)],
                     Matrix(G.cwiseProduct(value(n.a).unaryExpr([](const S& x) { using std::cos; return cos(x); }))));
          break;
        case Op::Cos:
          accumulate(adj[idx(n.a)],
                     Matrix(-G.cwiseProduct(value(n.a).unaryExpr([](const S& x) { using std::sin; return sin(x); }))));
          break;
        case Op::Exp:
          accumulate(adj[idx(n.a)], G.cwiseProduct(value(i)));
          break;
        case Op::Square:
          accumulate(adj[idx(n.a)], G.cwiseProduct(value(n.a)) * S(2.0));
          break;
        case Op::Sum: {
          const Matrix& A = value(n.a);
          accumulate(adj[idx(n.a)], Matrix::Constant(A.rows(), A.cols(), G(0, 0)));
          break;
        }
        case Op::Mean: {
          const Matrix& A = value(n.a);
          const S g = G(0, 0) / S(static_cast<double>(A.size()));
          accumulate(adj[idx(n.a)], Matrix::Constant(A.rows(), A.cols(), g));
          break;
        }
        case Op::Gather: {
          const Matrix& A = value(n.a);
          Matrix& target = adj[idx(n.a)];
          if (target.size() == 0) target = Matrix::Zero(A.rows(), A.cols());
          const auto& rows = row_lists_[idx(n.aux)];
          for (std::size_t r = 0; r < rows.size(); ++r) target.row(rows[r]) += G.row(static_cast<Eigen::Index>(r));
          break;
        }
      }
      // Every consumer of node i has been visited; release its adjoint.
      G.resize(0, 0);
    }
    return grads;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    int c = -1;
    int block = -1;
    int aux = -1;
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
  };

  static std::size_t idx(int id) { return static_cast<std::size_t>(id); }

  void check(const Var<S>& v) const {
    if (v.tape != this || v.id < 0 || idx(v.id) >= nodes_.size()) {
      throw ShapeError("variable does not belong to this tape");
    }
  }

  bool needs_grad(int id) const { return grad_[idx(id)]; }

  Var<S> push(Node n, Matrix value, bool grad) {
    nodes_.push_back(n);
    values_.push_back(std::move(value));
    grad_.push_back(grad);
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  template <typename F>
  Var<S> unary(Op op, Var<S> a, F&& f) {
    check(a);
    Matrix Y = value(a.id).unaryExpr(std::forward<F>(f));
    return push(Node{op, a.id}, std::move(Y), needs_grad(a.id));
  }

  template <typename E>
  static void accumulate(Matrix& target, const E& contribution) {
    if (target.size() == 0) {
      target = contribution;
    } else {
      target += contribution;
    }
  }

  template <typename A, typename B>
  static void accumulate_product(Matrix& target, const A& a, const B& b) {
    if (target.size() == 0) {
      target.resize(a.rows(), b.cols());
      target.noalias() = a * b;
    } else {
      target.noalias() += a * b;
    }
  }

  // tanh(x) = sign(x) (1 - 2 / (exp(2|x|) + 1)); vectorizes through exp and
  // is exact at 0 and in saturation. Absolute error stays at round-off level.
  template <typename M>
  static M fast_tanh(const M& X) {
    M Y(X.rows(), X.cols());
    const auto ax = X.array().abs();
    Y.array() = 1.0 - 2.0 / ((2.0 * ax).exp() + 1.0);
    Y.array() = (X.array() < 0.0).select(-Y.array(), Y.array());
    return Y;
  }

  S reduce(const Matrix& A) const {
    if (summation_ == Summation::Pairwise) return pairwise(A.data(), A.size());
    S acc(0.0);
    for (Eigen::Index k = 0; k < A.size(); ++k) acc += A.data()[k];
    return acc;
  }

  static S pairwise(const S* data, Eigen::Index n) {
    if (n <= 8) {
      S acc(0.0);
      for (Eigen::Index k = 0; k < n; ++k) acc += data[k];
      return acc;
    }
    const Eigen::Index half = n / 2;
    return pairwise(data, half) + pairwise(data + half, n - half);
  }

  Summation summation_;
  std::vector<Node> nodes_;
  std::vector<Matrix> values_;
  std::vector<bool> grad_;
  std::vector<std::vector<Eigen::Index>> row_lists_;
};

// Free-function spelling of the primitives.

template <typename S>
Var<S> affine(Var<S> x, Var<S> w, Var<S> b) { return x.tape->affine(x, w, b); }
template <typename S>
Var<S> matmul(Var<S> x, Var<S> w) { return x.tape->affine(x, w); }
template <typename S>
Var<S> cwise_product(Var<S> a, Var<S> b) { return a.tape->product(a, b); }
template <typename S>
Var<S> tanh(Var<S> a) { return a.tape->tanh(a); }
template <typename S>
Var<S> sin(Var<S> a) { return a.tape->sin(a); }
template <typename S>
Var<S> cos(Var<S> a) { return a.tape->cos(a); }
template <typename S>
Var<S> exp(Var<S> a) { return a.tape->exp(a); }
template <typename S>
Var<S> square(Var<S> a) { return a.tape->square(a); }
template <typename S>
Var<S> sum(Var<S> a) { return a.tape->sum(a); }
template <typename S>
Var<S> mean(Var<S> a) { return a.tape->mean(a); }
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<Eigen::Index> rows) { return a.tape->gather_rows(a, std::move(rows)); }

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return a.tape->lincomb(a, 1.0, b, 1.0, 0.0); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return a.tape->lincomb(a, 1.0, b, -1.0, 0.0); }
template <typename S>
Var<S> operator-(Var<S> a) { return a.tape->lincomb(a, -1.0, std::nullopt, 0.0, 0.0); }
template <typename S>
Var<S> operator*(double alpha, Var<S> a) { return a.tape->lincomb(a, alpha, std::nullopt, 0.0, 0.0); }
template <typename S>
Var<S> operator*(Var<S> a, double alpha) { return alpha * a; }
template <typename S>
Var<S> operator+(Var<S> a, double gamma) { return a.tape->lincomb(a, 1.0, std::nullopt, 0.0, gamma); }
template <typename S>
Var<S> operator+(double gamma, Var<S> a) { return a + gamma; }
template <typename S>
Var<S> operator-(Var<S> a, double gamma) { return a + (-gamma); }
template <typename S>
Var<S> operator-(double gamma, Var<S> a) { return a.tape->lincomb(a, -1.0, std::nullopt, 0.0, gamma); }

/// Scalar value of a 1x1 node as double (primal part for Dual tapes).
template <typename S>
double scalar_value(Var<S> v) {
  if (v.value().size() != 1) throw ShapeError("scalar_value: node is not 1x1");
  return primal(v.value()(0, 0));
}

extern template class Tape<double>;
extern template class Tape<Dual<double>>;

}  // namespace bowsim::ad
