#include "bowsim/spectra.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include "bowsim/errors.hpp"

namespace bowsim {

HessianOperator matrix_operator(Eigen::MatrixXd A) {
  if (A.rows() != A.cols()) throw ShapeError("matrix_operator: matrix must be square");
  const Eigen::Index n = A.rows();
  return {[A = std::move(A)](const Eigen::VectorXd& v) -> Eigen::VectorXd { return A * v; }, n};
}

Eigen::MatrixXd dense_hessian(const HessianOperator& H) {
  if (H.dim > 2000) throw SpectralError(fmt::format("dense Hessian refused for {} > 2000 parameters", H.dim));
  Eigen::MatrixXd out(H.dim, H.dim);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(H.dim);
  for (Eigen::Index i = 0; i < H.dim; ++i) {
    e[i] = 1.0;
    out.col(i) = H.apply(e);
    e[i] = 0.0;
  }
  return 0.5 * (out + out.transpose());
}

namespace {

Eigen::VectorXd gaussian_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

// Lanczos basis with full reorthogonalization. After a breakdown the basis is
// either extended with a fresh random vector (restartable) or closed.
class Krylov {
 public:
  Krylov(const HessianOperator& H, const Eigen::VectorXd& start, int capacity, std::mt19937_64* restart_rng)
      : H_(H), restart_rng_(restart_rng) {
    if (H.dim < 1) throw SpectralError("Lanczos: operator has no dimension");
    capacity_ = std::min<Eigen::Index>(capacity, H.dim);
    V_.resize(H.dim, capacity_ + 1);
    const double norm = start.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw SpectralError("Lanczos: invalid start vector");
    V_.col(0) = start / norm;
  }

  int size() const { return static_cast<int>(alpha_.size()); }
  bool closed() const { return closed_; }
  bool full() const { return size() >= capacity_; }
  double last_beta() const { return closed_ || beta_.empty() ? 0.0 : beta_.back(); }
  int breakdowns() const { return breakdowns_; }
  /// The newest basis vector came from a restart and has not been explored yet.
  bool just_restarted() const { return restarted_; }
  auto basis() const { return V_.leftCols(size()); }

  void step() {
    const int j = size();
    Eigen::VectorXd w = H_.apply(V_.col(j));
    if (!w.allFinite()) throw SpectralError("Lanczos: Hessian-vector product is not finite");
    const double a = V_.col(j).dot(w);
    alpha_.push_back(a);
    scale_ = std::max(scale_, std::abs(a));
    w -= a * V_.col(j);
    if (j > 0) w -= beta_.back() * V_.col(j - 1);
    orthogonalize(w, j + 1);
    double b = w.norm();
    restarted_ = false;
    if (size() >= H_.dim) {
      closed_ = true;
      return;
    }
    if (b <= 1e-12 * std::max(scale_, std::numeric_limits<double>::min())) {
      ++breakdowns_;
      if (!restart_rng_ || !restart(w, j + 1)) {
        closed_ = true;
        return;
      }
      restarted_ = true;
      b = 0.0;
    } else {
      scale_ = std::max(scale_, b);
      w /= b;
    }
    beta_.push_back(b);
    V_.col(j + 1) = w;
  }

  // Eigen-decomposition of the tridiagonal projection; values ascending.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz() const {
    const int k = size();
    Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha_.data(), k);
    Eigen::VectorXd sub(std::max(k - 1, 0));
    for (int i = 0; i + 1 < k; ++i) sub[i] = beta_[static_cast<std::size_t>(i)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) throw SpectralError("Lanczos: tridiagonal eigensolver failed");
    return es;
  }

 private:
  void orthogonalize(Eigen::VectorXd& w, int cols) const {
    for (int pass = 0; pass < 2; ++pass) w -= V_.leftCols(cols) * (V_.leftCols(cols).transpose() * w);
  }

  bool restart(Eigen::VectorXd& w, int cols) {
    w = gaussian_vector(H_.dim, *restart_rng_);
    const double before = w.norm();
    orthogonalize(w, cols);
    const double after = w.norm();
    if (!(after > 1e-8 * before)) return false;
    w /= after;
    return true;
  }

  const HessianOperator& H_;
  std::mt19937_64* restart_rng_;
  Eigen::Index capacity_ = 0;
  Eigen::MatrixXd V_;
  std::vector<double> alpha_, beta_;
  double scale_ = 0.0;
  bool closed_ = false;
  int breakdowns_ = 0;
  bool restarted_ = false;
};

// Runs Lanczos until the Ritz pairs picked by `select` pass the residual test.
// `select` maps the ascending Ritz values to the indices wanted, in output order.
template <typename Select>
std::vector<EigenPair> converge_pairs(const HessianOperator& H, const LanczosOptions& options, int needed,
                                      Select&& select, const char* what) {
  if (options.max_iterations < 1) throw ConfigError("Lanczos: max iterations must be >= 1");
  if (!(options.tolerance > 0.0)) throw ConfigError("Lanczos: tolerance must be positive");
  std::mt19937_64 rng(options.seed);
  Krylov krylov(H, gaussian_vector(H.dim, rng), options.max_iterations, &rng);
  int next_check = needed;
  std::vector<double> best_residuals;
  while (true) {
    krylov.step();
    const bool last = krylov.closed() || krylov.full();
    if (krylov.size() < needed) {
      if (last) break;
      continue;
    }
    // Right after a restart the spectrum seen so far is exact but may miss copies
    // of repeated eigenvalues.
    if (!last && (krylov.size() < next_check || krylov.just_restarted())) continue;
    next_check = krylov.size() + std::max(1, krylov.size() / 10);

    const auto es = krylov.ritz();
    const Eigen::VectorXd& theta = es.eigenvalues();
    const double floor = 1e-10 * theta.cwiseAbs().maxCoeff();
    const std::vector<Eigen::Index> idx = select(theta);
    const Eigen::Index k = theta.size();
    bool estimated = true;
    for (Eigen::Index i : idx) {
      const double estimate = std::abs(krylov.last_beta() * es.eigenvectors()(k - 1, i));
      if (estimate > 0.5 * options.tolerance * std::max(std::abs(theta[i]), floor)) estimated = false;
    }
    if (!estimated && !last) continue;

    std::vector<EigenPair> pairs;
    best_residuals.clear();
    bool ok = true;
    for (Eigen::Index i : idx) {
      EigenPair p;
      p.value = theta[i];
      p.vector = krylov.basis() * es.eigenvectors().col(i);
      p.vector.normalize();
      p.residual = (H.apply(p.vector) - p.value * p.vector).norm();
      best_residuals.push_back(p.residual);
      if (p.residual > options.tolerance * std::max(std::abs(p.value), floor)) ok = false;
      pairs.push_back(std::move(p));
    }
    if (ok) return pairs;
    if (last) break;
  }
  std::string residuals;
  for (double r : best_residuals) residuals += fmt::format(" {:.3e}", r);
  throw SpectralError(fmt::format("{}: Lanczos did not converge in {} iterations; residuals{}", what,
                                  options.max_iterations, residuals));
}

}  // namespace

std::vector<EigenPair> top_eigenpairs(const HessianOperator& H, int k, const LanczosOptions& options) {
  if (k < 1 || k > 10) throw ConfigError("top_eigenpairs: k must be in [1, 10]");
  if (k > H.dim) throw ConfigError("top_eigenpairs: k exceeds the parameter count");
  return converge_pairs(
      H, options, k,
      [k](const Eigen::VectorXd& theta) {
        std::vector<Eigen::Index> idx;
        for (int i = 0; i < k; ++i) idx.push_back(theta.size() - 1 - i);
        return idx;
      },
      "top_eigenpairs");
}

EigenvalueRange extreme_eigenvalues(const HessianOperator& H, const LanczosOptions& options) {
  if (H.dim == 1) {
    const double v = H.apply(Eigen::VectorXd::Ones(1))[0];
    return {v, v};
  }
  const auto pairs = converge_pairs(
      H, options, 2,
      [](const Eigen::VectorXd& theta) { return std::vector<Eigen::Index>{0, theta.size() - 1}; },
      "extreme_eigenvalues");
  return {pairs[0].value, pairs[1].value};
}

double SpectralDensity::mass(double lo, double hi) const {
  double total = 0.0;
  for (std::size_t p = 0; p < nodes.size(); ++p) {
    for (Eigen::Index i = 0; i < nodes[p].size(); ++i) {
      if (nodes[p][i] >= lo && nodes[p][i] <= hi) total += weights[p][i];
    }
  }
  return nodes.empty() ? 0.0 : total / static_cast<double>(nodes.size());
}

SpectralDensity spectrum_density(const HessianOperator& H, const SlqOptions& options) {
  if (options.probes < 1) throw ConfigError("spectrum_density: probe count n_v must be >= 1");
  if (options.depth < 10) throw ConfigError("spectrum_density: Lanczos depth m must be >= 10");
  if (options.grid_points < 2) throw ConfigError("spectrum_density: grid needs at least two points");
  if (options.bandwidth < 0.0) throw ConfigError("spectrum_density: bandwidth must be >= 0");

  SpectralDensity out;
  out.probes = options.probes;
  out.depth = static_cast<int>(std::min<Eigen::Index>(options.depth, H.dim));
  out.range = extreme_eigenvalues(H, options.range);

  std::mt19937_64 rng(options.seed);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(H.dim));
  double lo = out.range.min;
  double hi = out.range.max;
  for (int probe = 0; probe < options.probes; ++probe) {
    Eigen::VectorXd v(H.dim);
    for (Eigen::Index i = 0; i < H.dim; ++i) v[i] = (rng() & 1u) ? inv_sqrt_n : -inv_sqrt_n;
    // A closed Krylov space is invariant, so the shorter quadrature is exact for this probe.
    Krylov krylov(H, v, out.depth, nullptr);
    while (!krylov.closed() && !krylov.full()) krylov.step();
    if (krylov.size() < out.depth) ++out.truncated_probes;
    const auto es = krylov.ritz();
    out.nodes.push_back(es.eigenvalues());
    out.weights.push_back(es.eigenvectors().row(0).transpose().cwiseAbs2());
    lo = std::min(lo, es.eigenvalues().minCoeff());
    hi = std::max(hi, es.eigenvalues().maxCoeff());
  }

  double sigma = options.bandwidth > 0.0 ? options.bandwidth : (hi - lo) / 200.0;
  sigma = std::max(sigma, 1e-6 * std::max({1.0, std::abs(lo), std::abs(hi)}));
  out.bandwidth = sigma;
  out.grid = Eigen::VectorXd::LinSpaced(options.grid_points, lo - 5.0 * sigma, hi + 5.0 * sigma);
  out.density = Eigen::VectorXd::Zero(options.grid_points);
  const double norm = 1.0 / (static_cast<double>(options.probes) * sigma * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t p = 0; p < out.nodes.size(); ++p) {
    for (Eigen::Index i = 0; i < out.nodes[p].size(); ++i) {
      const double w = out.weights[p][i];
      const double c = out.nodes[p][i];
      out.density.array() += norm * w * (-0.5 * ((out.grid.array() - c) / sigma).square()).exp();
    }
  }
  return out;
}

ParamVector random_direction(const ParamVector& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return params.with_values(gaussian_vector(params.size(), rng));
}

ParamVector normalize_layerwise(const ParamVector& direction, const ParamVector& params) {
  if (!direction.same_layout(params)) throw ShapeError("normalize_layerwise: direction shape differs from parameters");
  ParamVector out = direction;
  for (int b = 0; b < params.num_blocks(); ++b) {
    const double dn = direction.segment(b).norm();
    if (dn == 0.0) continue;
    out.segment(b) *= params.segment(b).norm() / dn;
  }
  return out;
}

LandscapeGrid landscape(const LossEvaluator& loss, const ParamVector& params, const ParamVector& e1,
                        const ParamVector& e2, int grid_n, int threads) {
  if (grid_n < 3 || grid_n % 2 == 0) throw ConfigError("landscape: grid size must be odd and >= 3");
  if (threads < 1) throw ConfigError("landscape: thread count must be >= 1");
  LandscapeGrid g;
  g.dir1 = normalize_layerwise(e1, params);
  g.dir2 = normalize_layerwise(e2, params);
  // (i - c) / (n - 1) hits 0 and +-0.5 exactly.
  const int c = (grid_n - 1) / 2;
  g.alpha.resize(grid_n);
  for (int i = 0; i < grid_n; ++i) g.alpha[i] = static_cast<double>(i - c) / static_cast<double>(grid_n - 1);
  g.beta = g.alpha;
  g.loss.resize(grid_n, grid_n);

  auto cell = [&](int i, int j) {
    if (i == c && j == c) return loss(params);
    ParamVector p = params;
    p.flat() += g.alpha[i] * g.dir1.flat() + g.beta[j] * g.dir2.flat();
    return loss(p);
  };
  const int workers = std::min(threads, grid_n);
  if (workers == 1) {
    for (int i = 0; i < grid_n; ++i) {
      for (int j = 0; j < grid_n; ++j) g.loss(i, j) = cell(i, j);
    }
    return g;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < grid_n; i += workers) {
          for (int j = 0; j < grid_n; ++j) g.loss(i, j) = cell(i, j);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return g;
}

void write_density_csv(std::ostream& out, const SpectralDensity& density) {
  out << "eigenvalue,density\n";
  for (Eigen::Index i = 0; i < density.grid.size(); ++i) {
    out << fmt::format("{:.17g},{:.17g}\n", density.grid[i], density.density[i]);
  }
}

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid) {
  out << "alpha\\beta";
  for (Eigen::Index j = 0; j < grid.beta.size(); ++j) out << fmt::format(",{:.17g}", grid.beta[j]);
  out << '\n';
  for (Eigen::Index i = 0; i < grid.alpha.size(); ++i) {
    out << fmt::format("{:.17g}", grid.alpha[i]);
    for (Eigen::Index j = 0; j < grid.beta.size(); ++j) out << fmt::format(",{:.17g}", grid.loss(i, j));
    out << '\n';
  }
}

}  // namespace bowsim
