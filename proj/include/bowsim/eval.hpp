#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bowsim/fdm.hpp"
#include "bowsim/friction.hpp"
#include "bowsim/nets.hpp"

namespace bowsim {

/// Defaults: NMSE normalized by reference energy, NCC without mean removal.
struct MetricConvention {
  bool nmse_by_variance = false;
  bool ncc_centered = false;
};

/// ||pred - ref||^2 / ||ref||^2 (or / ||ref - mean(ref)||^2).
double nmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, const MetricConvention& convention = {});
/// 100 <pred, ref> / (||pred|| ||ref||), in percent.
double ncc(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, const MetricConvention& convention = {});

struct TestCase {
  InitialCondition ic;
  double t_max = 0.0;
};

struct TestSet {
  std::vector<TestCase> cases;
  double scale_pq = 0.0;
  long rejected = 0;  ///< draws that left the range
};

struct TestSetOptions {
  int count = 100;
  double t_max = 0.05;
  double scale_pq = 0.35;
  double filter_rate = 44100.0;  ///< FDM rate used by the range filter
  std::uint64_t seed = 0;
  long max_draws = 0;  ///< 0 means 1000 * count
};

/// Uniform ICs in [-s, s]^2, redrawn until the FDM solution stays inside [-s, s] for p and q.
TestSet make_testset(const OscillatorConfig& config, const TestSetOptions& options);

struct CaseMetrics {
  TestCase test;
  double nmse_p = 0.0, nmse_q = 0.0;
  double ncc_p = 0.0, ncc_q = 0.0;
  bool failed = false;
  std::string error;
};

struct MetricReport {
  std::vector<CaseMetrics> cases;
  double nmse_p = 0.0, nmse_q = 0.0;  ///< means over cases that did not fail
  double ncc_p = 0.0, ncc_q = 0.0;
  int failed = 0;
  MetricConvention convention;
  double reference_rate = 0.0;
  double output_rate = 0.0;
};

/// Predicted states at times t for one initial condition.
using Predictor = std::function<StateBatch(const Eigen::VectorXd& t, const InitialCondition& ic)>;

struct EvalOptions {
  double reference_rate = kReferenceRate;  ///< FDM reference
  double output_rate = 44100.0;            ///< comparison grid; must divide the reference rate
  MetricConvention convention;
  int threads = 1;
};

/// Per-case metrics against the FDM reference on the output-rate grid over [0, t_max].
MetricReport evaluate_testset(const Predictor& predict, const OscillatorConfig& config, const TestSet& set,
                              const EvalOptions& options = {});
/// DeepONet predictions chained over windows of length s^t.
MetricReport evaluate_testset(const DeepOnetModel& model, const OscillatorConfig& config, const TestSet& set,
                              const EvalOptions& options = {});

/// Metrics of one predicted trajectory against a reference sampled on the same grid.
CaseMetrics compare_states(const StateBatch& pred, const Eigen::VectorXd& p_ref, const Eigen::VectorXd& q_ref,
                           const MetricConvention& convention = {});

/// Reference samples decimated from `traj` onto the grid n / rate, n = 0..floor(t_max rate).
struct ReferenceSamples {
  Eigen::VectorXd t, p, q;
};
ReferenceSamples decimate(const Trajectory& traj, double rate, double t_max);

struct PhaseSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  PhaseLabel label = PhaseLabel::Stick;
};

/// Maximal runs of equal phase labels; segments tile [t_0, t_last].
std::vector<PhaseSegment> stick_slip_segments(const Trajectory& traj, const OscillatorConfig& config);

/// Fraction of samples inside the nonlinear (stick) region.
double stick_fraction(const Trajectory& traj, const OscillatorConfig& config);

struct ResidualEntry {
  std::string name;
  Eigen::VectorXd r1, r2;
};

struct DistributionStats {
  double median = 0.0, q25 = 0.0, q75 = 0.0, iqr = 0.0, max = 0.0;
};

/// Statistics of |x| with linear-interpolated quantiles.
DistributionStats abs_stats(const Eigen::VectorXd& x);

struct ResidualSummary {
  std::string name;
  DistributionStats r1, r2;
};

std::vector<ResidualSummary> residual_compare(const std::vector<ResidualEntry>& entries);

/// JSON with per-case values, means, failure count and the metric conventions.
void write_metric_report_json(std::ostream& out, const MetricReport& report);

}  // namespace bowsim
