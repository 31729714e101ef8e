#include "doctest.h"

#include <cmath>
#include <random>

#include "bowsim/autodiff.hpp"
#include "bowsim/errors.hpp"
#include "bowsim/nets.hpp"
#include "support/quadratic_loss.hpp"
#include "support/random_graph.hpp"

using namespace bowsim;
using bowsim::testing::central_difference_gradient;
using bowsim::testing::max_relative_error;

namespace {

void fill_normal(ParamVector& p, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()[i] = n(rng);
}

// 2 -> 5 -> 3 -> 1 tanh network: 15 + 18 + 4 = 37 parameters.
struct SmallNetLoss {
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;

  template <typename S>
  ad::Var<S> operator()(ad::Tape<S>& tape, std::span<const ad::Var<S>> w) const {
    const auto X = tape.constant(x.cast<S>());
    const auto h1 = ad::tanh(ad::affine(X, w[0], w[1]));
    const auto h2 = ad::tanh(ad::affine(h1, w[2], w[3]));
    const auto out = ad::affine(h2, w[4], w[5]);
    return ad::mean(ad::square(out - tape.constant(y.cast<S>())));
  }
};

ParamVector small_net_params() {
  ParamVector p;
  p.add_block("W1", 2, 5);
  p.add_block("b1", 1, 5);
  p.add_block("W2", 5, 3);
  p.add_block("b2", 1, 3);
  p.add_block("W3", 3, 1);
  p.add_block("b3", 1, 1);
  fill_normal(p, 11, 0.8);
  return p;
}

SmallNetLoss small_net_loss() {
  SmallNetLoss f;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  f.x.resize(16, 2);
  f.y.resize(16, 1);
  for (Eigen::Index i = 0; i < f.x.size(); ++i) f.x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < f.y.size(); ++i) f.y.data()[i] = n(rng);
  return f;
}

struct HalfNormSquared {
  template <typename S>
  ad::Var<S> operator()(ad::Tape<S>&, std::span<const ad::Var<S>> w) const {
    ad::Var<S> total = ad::sum(ad::square(w[0]));
    for (std::size_t b = 1; b < w.size(); ++b) total = total + ad::sum(ad::square(w[b]));
    return 0.5 * total;
  }
};

// 0.5 theta^T A theta with theta stored as a 1 x n row.
using Quadratic = testing::QuadraticLoss;

// Physics-style loss on a small PINN: (q_t - w p)^2 + (p_t + w q)^2 averaged.
struct PinnResidualLoss {
  const PinnModel* model;
  Eigen::VectorXd t;
  double omega;

  template <typename S>
  ad::Var<S> operator()(ad::Tape<S>& tape, std::span<const ad::Var<S>> w) const {
    const auto s = record_pinn(tape, *model, w, t, true);
    const auto r1 = *s.q_t - omega * s.p;
    const auto r2 = *s.p_t + omega * s.q;
    return ad::mean(ad::square(r1)) + ad::mean(ad::square(r2));
  }
};

}  // namespace

TEST_CASE("gradient of half squared norm is the parameter vector") {
  ParamVector p;
  p.add_block("a", 3, 2);
  p.add_block("b", 1, 4);
  fill_normal(p, 3);
  const ParamVector g = ad::grad(HalfNormSquared{}, p);
  CHECK(g.flat() == p.flat());
  CHECK(ad::evaluate(HalfNormSquared{}, p) == doctest::Approx(0.5 * p.flat().squaredNorm()).epsilon(1e-15));
}

TEST_CASE("37-parameter tanh network gradient matches central differences") {
  const ParamVector p = small_net_params();
  REQUIRE(p.size() == 37);
  const SmallNetLoss f = small_net_loss();
  const ParamVector g = ad::grad(f, p);
  const Eigen::VectorXd fd = central_difference_gradient(f, p, 1e-6);
  CHECK(max_relative_error(fd, g.flat()) < 1e-6);
}

TEST_CASE("blocks that do not reach the loss get an exactly zero gradient") {
  ParamVector p = small_net_params();
  p.add_block("dead", 4, 4);
  p.block(p.num_blocks() - 1).setConstant(3.0);
  const SmallNetLoss f = small_net_loss();
  const ParamVector g = ad::grad(f, p);
  CHECK(g.segment(p.num_blocks() - 1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.segment(0).norm() > 0.0);
}

TEST_CASE("random primitive graphs: reverse mode matches central differences") {
  std::mt19937_64 rng(2024);
  int worst_index = -1;
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const auto graph = bowsim::testing::RandomGraph::generate(rng, 3 + k % 10);
    const ParamVector g = ad::grad(graph, graph.params());
    const Eigen::VectorXd fd = central_difference_gradient(graph, graph.params(), 1e-6);
    const double err =
        bowsim::testing::fd_relative_error(fd, g.flat(), ad::evaluate(graph, graph.params()), 1e-6);
    if (err > worst) {
      worst = err;
      worst_index = k;
    }
    // The trailing block is never used.
    CHECK(g.segment(graph.params().num_blocks() - 1).cwiseAbs().maxCoeff() == 0.0);
  }
  INFO("worst graph " << worst_index);
  CHECK(worst < 1e-5);
}

TEST_CASE("input derivative of sin(w t) and of a constant") {
  const double w = 2.0 * M_PI * 100.0;
  for (double t : {0.0, 1e-3, 2.7e-3, 0.01}) {
    const double d = ad::input_derivative([&](ad::Dual<double> x) { return sin(w * x); }, t);
    CHECK(d == doctest::Approx(w * std::cos(w * t)).epsilon(1e-14));
  }
  CHECK(ad::input_derivative([](ad::Dual<double>) { return ad::Dual<double>(4.2); }, 0.3) == 0.0);
}

TEST_CASE("HVP of half squared norm is the direction") {
  ParamVector p;
  p.add_block("a", 4, 3);
  fill_normal(p, 5);
  ParamVector v = p.zeros_like();
  fill_normal(v, 6);
  const ParamVector hv = ad::hvp(HalfNormSquared{}, p, v);
  CHECK((hv.flat() - v.flat()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("HVP of a quadratic form equals A v") {
  const int n = 20;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = normal(rng);
  Quadratic f{M * M.transpose() / n + Eigen::MatrixXd::Identity(n, n)};
  ParamVector p;
  p.add_block("theta", 1, n);
  fill_normal(p, 8);
  ParamVector v = p.zeros_like();
  fill_normal(v, 9);
  const ParamVector hv = ad::hvp(f, p, v);
  const Eigen::VectorXd expected = f.A * v.flat();
  CHECK((hv.flat() - expected).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((ad::grad(f, p).flat() - f.A * p.flat()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("HVP is symmetric and linear in the direction") {
  const ParamVector p = small_net_params();
  const SmallNetLoss f = small_net_loss();
  ParamVector u = p.zeros_like(), v = p.zeros_like();
  fill_normal(u, 21);
  fill_normal(v, 22);
  const ParamVector hu = ad::hvp(f, p, u);
  const ParamVector hv = ad::hvp(f, p, v);
  const double uhv = dot(u, hv), vhu = dot(v, hu);
  CHECK(std::abs(uhv - vhu) <= 1e-12 * std::max(1.0, std::abs(uhv)));

  const double a = 1.7, b = -0.4;
  const ParamVector combo = p.with_values(a * u.flat() + b * v.flat());
  const ParamVector hc = ad::hvp(f, p, combo);
  const Eigen::VectorXd expected = a * hu.flat() + b * hv.flat();
  CHECK((hc.flat() - expected).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
}

TEST_CASE("HVP on a PINN residual loss matches differences of gradients") {
  NetArch arch;
  arch.width = 8;
  arch.depth = 2;
  arch.rff_size = 4;
  const PinnModel model = PinnModel::create(arch, 0.01, 0.2, 99);
  PinnResidualLoss f{&model, Eigen::VectorXd::LinSpaced(12, 0.0, 0.01), 2.0 * M_PI * 100.0};
  const ParamVector& p = model.params;
  ParamVector v = p.zeros_like();
  fill_normal(v, 31);
  v.flat() /= v.flat().norm();

  const ParamVector hv = ad::hvp(f, p, v);
  const double h = 1e-5;
  const ParamVector g_up = ad::grad(f, p.with_values(p.flat() + h * v.flat()));
  const ParamVector g_dn = ad::grad(f, p.with_values(p.flat() - h * v.flat()));
  const Eigen::VectorXd fd = (g_up.flat() - g_dn.flat()) / (2.0 * h);
  CHECK((fd - hv.flat()).norm() / hv.flat().norm() < 1e-4);
}

TEST_CASE("gradients and HVPs are bitwise repeatable") {
  const ParamVector p = small_net_params();
  const SmallNetLoss f = small_net_loss();
  ParamVector v = p.zeros_like();
  fill_normal(v, 41);
  CHECK(ad::grad(f, p).flat() == ad::grad(f, p).flat());
  CHECK(ad::hvp(f, p, v).flat() == ad::hvp(f, p, v).flat());
}

TEST_CASE("pairwise summation agrees with sequential to round-off") {
  ad::Tape<double> seq;
  ad::Tape<double> pair(ad::Summation::Pairwise);
  Eigen::MatrixXd x(1000, 3);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const double a = ad::scalar_value(ad::sum(seq.constant(x)));
  const double b = ad::scalar_value(ad::sum(pair.constant(x)));
  CHECK(std::abs(a - b) < 1e-11);
}

TEST_CASE("non-scalar loss and mismatched directions are rejected") {
  ParamVector p;
  p.add_block("a", 2, 2);
  const auto not_scalar = [](auto&, auto leaves) { return leaves[0]; };
  CHECK_THROWS_AS(ad::grad(not_scalar, p), ShapeError);
  ParamVector wrong;
  wrong.add_block("a", 4, 1);
  CHECK_THROWS_AS(ad::hvp(HalfNormSquared{}, p, wrong), ShapeError);
}
