#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>
#include <sstream>

#include "bowsim/errors.hpp"
#include "bowsim/spectra.hpp"
#include "support/quadratic_loss.hpp"

using namespace bowsim;
using testing::QuadraticLoss;

namespace {

Eigen::MatrixXd random_symmetric(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = normal(rng);
  return 0.5 * (M + M.transpose());
}

ParamVector row_params(int n, std::uint64_t seed) {
  ParamVector p;
  p.add_block("theta", 1, n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()[i] = normal(rng);
  return p;
}

double integral(const SpectralDensity& d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i + 1 < d.grid.size(); ++i) {
    s += 0.5 * (d.density[i] + d.density[i + 1]) * (d.grid[i + 1] - d.grid[i]);
  }
  return s;
}

}  // namespace

TEST_CASE("top eigenpairs of a diagonal quadratic") {
  const int n = 30;
  Eigen::VectorXd diag = Eigen::VectorXd::Ones(n);
  diag[7] = 5.0;
  diag[3] = 2.0;
  diag[12] = 0.5;
  const QuadraticLoss f{diag.asDiagonal().toDenseMatrix()};
  const HessianOperator H = hessian_operator(f, row_params(n, 1));
  const auto pairs = top_eigenpairs(H, 2);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].value == doctest::Approx(5.0).epsilon(1e-10));
  CHECK(pairs[1].value == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(std::abs(pairs[0].vector[7]) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::abs(pairs[1].vector[3]) == doctest::Approx(1.0).epsilon(1e-8));
  for (const auto& p : pairs) {
    CHECK(p.vector.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.residual <= 1e-6 * std::abs(p.value));
  }
}

TEST_CASE("Lanczos matches a dense eigendecomposition") {
  const Eigen::MatrixXd A = random_symmetric(200, 2);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const auto pairs = top_eigenpairs(matrix_operator(A), 4);
  for (int i = 0; i < 4; ++i) {
    const double exact = es.eigenvalues()[199 - i];
    CHECK(std::abs(pairs[static_cast<std::size_t>(i)].value - exact) <= 1e-6 * std::abs(exact));
    if (i > 0) CHECK(pairs[static_cast<std::size_t>(i)].value <= pairs[static_cast<std::size_t>(i - 1)].value);
    CHECK(std::abs(pairs[static_cast<std::size_t>(i)].vector.dot(es.eigenvectors().col(199 - i))) ==
          doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("converged eigenvalues do not depend on the start vector") {
  const Eigen::MatrixXd A = random_symmetric(120, 3);
  LanczosOptions a, b;
  b.seed = 99;
  const auto pa = top_eigenpairs(matrix_operator(A), 3, a);
  const auto pb = top_eigenpairs(matrix_operator(A), 3, b);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(pa[i].value - pb[i].value) <= 1e-8 * std::abs(pa[i].value));
}

TEST_CASE("repeated eigenvalues are found through restarts") {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(200);
  diag.head(20).setConstant(10.0);
  const auto pairs = top_eigenpairs(matrix_operator(diag.asDiagonal().toDenseMatrix()), 2);
  CHECK(pairs[0].value == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(pairs[1].value == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(pairs[0].vector.dot(pairs[1].vector)) < 1e-8);
}

TEST_CASE("extreme eigenvalues") {
  const Eigen::MatrixXd A = random_symmetric(80, 4);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const EigenvalueRange r = extreme_eigenvalues(matrix_operator(A));
  CHECK(r.min == doctest::Approx(es.eigenvalues()[0]).epsilon(1e-6));
  CHECK(r.max == doctest::Approx(es.eigenvalues()[79]).epsilon(1e-6));
}

TEST_CASE("Lanczos argument and convergence errors") {
  const HessianOperator H = matrix_operator(random_symmetric(50, 5));
  CHECK_THROWS_AS(top_eigenpairs(H, 0), ConfigError);
  CHECK_THROWS_AS(top_eigenpairs(H, 11), ConfigError);
  LanczosOptions tight;
  tight.max_iterations = 3;
  CHECK_THROWS_AS(top_eigenpairs(H, 2, tight), SpectralError);
}

TEST_CASE("dense Hessian from products") {
  const Eigen::MatrixXd A = random_symmetric(25, 6);
  const QuadraticLoss f{A};
  const Eigen::MatrixXd H = dense_hessian(hessian_operator(f, row_params(25, 7)));
  CHECK((H - A).cwiseAbs().maxCoeff() < 1e-10);
  HessianOperator big{[](const Eigen::VectorXd& v) { return v; }, 2001};
  CHECK_THROWS_AS(dense_hessian(big), SpectralError);
}

TEST_CASE("SLQ density of the identity") {
  const HessianOperator I{[](const Eigen::VectorXd& v) { return v; }, 60};
  const SpectralDensity d = spectrum_density(I);
  CHECK(d.truncated_probes == d.probes);
  CHECK(d.mass(1.0 - 1e-9, 1.0 + 1e-9) == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::Index peak = 0;
  d.density.maxCoeff(&peak);
  CHECK(d.grid[peak] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integral(d) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("SLQ cluster masses") {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(200);
  diag.tail(20).setConstant(10.0);
  const SpectralDensity d = spectrum_density(matrix_operator(diag.asDiagonal().toDenseMatrix()));
  CHECK(d.range.min == doctest::Approx(0.0));
  CHECK(d.range.max == doctest::Approx(10.0).epsilon(1e-10));
  const double low = d.mass(-0.5, 0.5);
  const double high = d.mass(9.5, 10.5);
  CHECK(low == doctest::Approx(0.9).epsilon(0.05));
  CHECK(high == doctest::Approx(0.1).epsilon(0.05));
  CHECK((d.density.array() >= 0.0).all());
  CHECK(integral(d) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("SLQ on a spread spectrum matches a dense histogram") {
  const Eigen::MatrixXd A = random_symmetric(200, 8);
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues();
  SlqOptions o;
  o.probes = 32;
  const SpectralDensity d = spectrum_density(matrix_operator(A), o);
  CHECK(d.depth == 100);
  const double split = 0.0;
  const double dense_low = static_cast<double>((ev.array() < split).count()) / 200.0;
  CHECK(std::abs(d.mass(-1e9, split) - dense_low) < 0.05);
  CHECK(integral(d) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(d.grid[0] < ev[0]);
  CHECK(d.grid[d.grid.size() - 1] > ev[199]);
}

TEST_CASE("SLQ argument checks and determinism") {
  const HessianOperator H = matrix_operator(random_symmetric(40, 9));
  SlqOptions o;
  o.depth = 5;
  CHECK_THROWS_AS(spectrum_density(H, o), ConfigError);
  o = SlqOptions{};
  o.probes = 0;
  CHECK_THROWS_AS(spectrum_density(H, o), ConfigError);
  const SpectralDensity a = spectrum_density(H);
  const SpectralDensity b = spectrum_density(H);
  CHECK((a.density.array() == b.density.array()).all());
}

TEST_CASE("layer-wise normalization") {
  ParamVector p;
  p.add_block("W", 3, 4);
  p.add_block("b", 1, 4);
  p.add_block("c", 1, 2);
  p.flat().setLinSpaced(p.size(), -1.0, 2.0);
  ParamVector d = random_direction(p, 3);
  d.segment(2).setZero();
  const ParamVector n = normalize_layerwise(d, p);
  for (int b = 0; b < 2; ++b) {
    CHECK(n.segment(b).norm() == doctest::Approx(p.segment(b).norm()).epsilon(1e-14));
    const double cosine = n.segment(b).dot(d.segment(b)) / (n.segment(b).norm() * d.segment(b).norm());
    CHECK(cosine == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(n.segment(2).isZero(0.0));
  ParamVector other;
  other.add_block("x", 2, 2);
  CHECK_THROWS_AS(normalize_layerwise(other, p), ShapeError);
}

TEST_CASE("landscape of a quadratic is the closed-form paraboloid") {
  const int n = 12;
  const Eigen::MatrixXd A = random_symmetric(n, 10) + 5.0 * Eigen::MatrixXd::Identity(n, n);
  const QuadraticLoss f{A};
  const ParamVector theta = row_params(n, 11);
  const LandscapeGrid g =
      landscape(loss_evaluator(f), theta, random_direction(theta, 1), random_direction(theta, 2), 21);
  REQUIRE(g.loss.rows() == 21);
  CHECK(g.alpha[0] == -0.5);
  CHECK(g.alpha[20] == 0.5);
  CHECK(g.alpha[10] == 0.0);
  CHECK(g.loss(10, 10) == ad::evaluate(f, theta));

  const Eigen::VectorXd t = theta.flat(), e1 = g.dir1.flat(), e2 = g.dir2.flat();
  const Eigen::VectorXd grad = A * t;
  double worst = 0.0;
  for (int i = 0; i < 21; ++i) {
    for (int j = 0; j < 21; ++j) {
      const double a = g.alpha[i], b = g.beta[j];
      const double closed = f.value(t) + a * grad.dot(e1) + b * grad.dot(e2) +
                            0.5 * (a * a * e1.dot(A * e1) + 2.0 * a * b * e1.dot(A * e2) + b * b * e2.dot(A * e2));
      worst = std::max(worst, std::abs(g.loss(i, j) - closed));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("landscape threading and validation") {
  const QuadraticLoss f{random_symmetric(6, 12)};
  const ParamVector theta = row_params(6, 13);
  const auto e1 = random_direction(theta, 3), e2 = random_direction(theta, 4);
  const LandscapeGrid one = landscape(loss_evaluator(f), theta, e1, e2, 7, 1);
  const LandscapeGrid three = landscape(loss_evaluator(f), theta, e1, e2, 7, 3);
  CHECK((one.loss.array() == three.loss.array()).all());
  CHECK_THROWS_AS(landscape(loss_evaluator(f), theta, e1, e2, 8), ConfigError);
  CHECK_THROWS_AS(landscape(loss_evaluator(f), theta, e1, e2, 1), ConfigError);
}

TEST_CASE("spectra CSV exports") {
  const SpectralDensity d = spectrum_density(matrix_operator(random_symmetric(20, 14)));
  std::ostringstream a;
  write_density_csv(a, d);
  CHECK(a.str().rfind("eigenvalue,density\n", 0) == 0);

  const QuadraticLoss f{Eigen::MatrixXd::Identity(3, 3)};
  const ParamVector theta = row_params(3, 15);
  const LandscapeGrid g =
      landscape(loss_evaluator(f), theta, random_direction(theta, 1), random_direction(theta, 2), 3);
  std::ostringstream b;
  write_landscape_csv(b, g);
  CHECK(b.str().rfind("alpha\\beta,-0.5,0,0.5\n-0.5,", 0) == 0);
}
