#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "bowsim/autodiff.hpp"
#include "bowsim/params.hpp"

namespace bowsim {

/// Symmetric linear operator v -> H v on flat parameter vectors.
struct HessianOperator {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;
  Eigen::Index dim = 0;
};

/// Hessian of `loss` at `params` through forward-over-reverse products.
template <ad::TapeLoss F>
HessianOperator hessian_operator(F loss, ParamVector params) {
  const Eigen::Index n = params.size();
  return {[loss = std::move(loss), params = std::move(params)](const Eigen::VectorXd& v) {
            return ad::hvp(loss, params, params.with_values(v)).flat();
          },
          n};
}

/// Operator backed by an explicit symmetric matrix.
HessianOperator matrix_operator(Eigen::MatrixXd A);

/// Dense Hessian from n products with unit vectors, symmetrized. Refuses n > 2000.
Eigen::MatrixXd dense_hessian(const HessianOperator& H);

struct EigenPair {
  double value = 0.0;
  Eigen::VectorXd vector;  ///< unit norm
  double residual = 0.0;   ///< ||H v - value v||
};

struct LanczosOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;  ///< relative residual per returned pair
  std::uint64_t seed = 0;
};

/// Largest k eigenpairs (k <= 10), descending, by Lanczos with full reorthogonalization.
std::vector<EigenPair> top_eigenpairs(const HessianOperator& H, int k, const LanczosOptions& options = {});

struct EigenvalueRange {
  double min = 0.0;
  double max = 0.0;
};

/// Smallest and largest eigenvalues to the same residual tolerance.
EigenvalueRange extreme_eigenvalues(const HessianOperator& H, const LanczosOptions& options = {});

struct SlqOptions {
  int probes = 8;          ///< n_v
  int depth = 100;         ///< m
  double bandwidth = 0.0;  ///< Gaussian sigma; 0 picks (lambda_max - lambda_min) / 200
  int grid_points = 1001;
  std::uint64_t seed = 0;
  LanczosOptions range{};
};

struct SpectralDensity {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;
  std::vector<Eigen::VectorXd> nodes;    ///< Ritz values per probe
  std::vector<Eigen::VectorXd> weights;  ///< quadrature weights per probe, summing to 1
  EigenvalueRange range;
  double bandwidth = 0.0;
  int probes = 0;
  int depth = 0;
  int truncated_probes = 0;  ///< probes whose Krylov space closed before `depth` steps

  /// Quadrature mass of eigenvalues in [lo, hi], from the unsmoothed nodes.
  double mass(double lo, double hi) const;
};

/// Stochastic Lanczos quadrature with Rademacher probes and Gaussian smoothing.
SpectralDensity spectrum_density(const HessianOperator& H, const SlqOptions& options = {});

struct HessianSpectrum {
  std::vector<EigenPair> top;
  SpectralDensity density;
};

/// Function of the parameters, evaluated once per landscape cell.
using LossEvaluator = std::function<double(const ParamVector&)>;

template <ad::TapeLoss F>
LossEvaluator loss_evaluator(F loss) {
  return [loss = std::move(loss)](const ParamVector& p) { return ad::evaluate(loss, p); };
}

struct LandscapeGrid {
  Eigen::VectorXd alpha;  ///< rows of `loss`
  Eigen::VectorXd beta;   ///< columns of `loss`
  Eigen::MatrixXd loss;
  ParamVector dir1, dir2;  ///< normalized directions
};

/// Gaussian direction shaped like `params`.
ParamVector random_direction(const ParamVector& params, std::uint64_t seed);

/// Rescales each block of `direction` to the Frobenius norm of the matching
/// block of `params`; zero blocks stay zero.
ParamVector normalize_layerwise(const ParamVector& direction, const ParamVector& params);

/// Loss over theta + alpha e1 + beta e2 on an odd grid_n x grid_n grid over [-0.5, 0.5]^2.
/// The centre cell is evaluated at theta itself.
LandscapeGrid landscape(const LossEvaluator& loss, const ParamVector& params, const ParamVector& e1,
                        const ParamVector& e2, int grid_n, int threads = 1);

/// `eigenvalue,density`
void write_density_csv(std::ostream& out, const SpectralDensity& density);
/// First row `alpha\beta,b_0,...`, then one row per alpha.
void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid);

}  // namespace bowsim
