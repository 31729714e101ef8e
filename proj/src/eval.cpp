#include "bowsim/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <ostream>
#include <random>
#include <thread>

#include "bowsim/errors.hpp"
#include "json.hpp"

namespace bowsim {

namespace {

void check_lengths(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, const char* what) {
  if (pred.size() != ref.size()) {
    throw ShapeError(fmt::format("{}: prediction has {} samples, reference {}", what, pred.size(), ref.size()));
  }
  if (ref.size() == 0) throw ShapeError(fmt::format("{}: empty series", what));
}

}  // namespace

double nmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, const MetricConvention& convention) {
  check_lengths(pred, ref, "nmse");
  const double denom =
      convention.nmse_by_variance ? (ref.array() - ref.mean()).matrix().squaredNorm() : ref.squaredNorm();
  if (!(denom > 0.0)) throw MetricError("nmse: reference has zero norm");
  return (pred - ref).squaredNorm() / denom;
}

double ncc(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, const MetricConvention& convention) {
  check_lengths(pred, ref, "ncc");
  Eigen::VectorXd a = pred, b = ref;
  if (convention.ncc_centered) {
    a.array() -= a.mean();
    b.array() -= b.mean();
  }
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw MetricError("ncc: zero-norm series");
  return std::clamp(100.0 * a.dot(b) / (na * nb), -100.0, 100.0);
}

TestSet make_testset(const OscillatorConfig& config, const TestSetOptions& options) {
  config.validate();
  if (options.count < 1) throw ConfigError("test set needs at least one case");
  if (!(options.t_max > 0.0)) throw ConfigError("test set t_max must be positive");
  if (!(options.scale_pq > 0.0)) throw ConfigError("test set range s^{p,q} must be positive");
  const long max_draws = options.max_draws > 0 ? options.max_draws : 1000L * options.count;
  TestSet set;
  set.scale_pq = options.scale_pq;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u(-options.scale_pq, options.scale_pq);
  long draws = 0;
  while (static_cast<int>(set.cases.size()) < options.count) {
    if (draws++ >= max_draws) {
      throw ConfigError(fmt::format("test set: only {} of {} cases stayed in range after {} draws", set.cases.size(),
                                    options.count, max_draws));
    }
    const double p0 = u(rng);
    const double q0 = u(rng);
    bool inside = false;
    try {
      const Trajectory traj = simulate(config, {p0, q0}, options.filter_rate, options.t_max);
      inside = traj.p.cwiseAbs().maxCoeff() <= options.scale_pq && traj.q.cwiseAbs().maxCoeff() <= options.scale_pq;
    } catch (const SolverError&) {
      inside = false;
    }
    if (!inside) {
      ++set.rejected;
      continue;
    }
    set.cases.push_back({{p0, q0}, options.t_max});
  }
  return set;
}

ReferenceSamples decimate(const Trajectory& traj, double rate, double t_max) {
  if (!(rate > 0.0)) throw ConfigError("decimate: rate must be positive");
  const double ratio = traj.sample_rate / rate;
  const auto step = static_cast<Eigen::Index>(std::llround(ratio));
  if (step < 1 || std::abs(ratio - static_cast<double>(step)) > 1e-9 * ratio) {
    throw ConfigError(fmt::format("output rate {} Hz does not divide the reference rate {} Hz", rate,
                                  traj.sample_rate));
  }
  const auto count = static_cast<Eigen::Index>(std::floor(t_max * rate * (1.0 + 1e-12))) + 1;
  if ((count - 1) * step >= traj.size()) throw ShapeError("decimate: trajectory shorter than t_max");
  ReferenceSamples s;
  s.t.resize(count);
  s.p.resize(count);
  s.q.resize(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    s.t[i] = traj.time(i * step);
    s.p[i] = traj.p[i * step];
    s.q[i] = traj.q[i * step];
  }
  return s;
}

CaseMetrics compare_states(const StateBatch& pred, const Eigen::VectorXd& p_ref, const Eigen::VectorXd& q_ref,
                           const MetricConvention& convention) {
  CaseMetrics m;
  m.nmse_p = nmse(pred.p, p_ref, convention);
  m.nmse_q = nmse(pred.q, q_ref, convention);
  m.ncc_p = ncc(pred.p, p_ref, convention);
  m.ncc_q = ncc(pred.q, q_ref, convention);
  return m;
}

MetricReport evaluate_testset(const Predictor& predict, const OscillatorConfig& config, const TestSet& set,
                              const EvalOptions& options) {
  if (set.cases.empty()) throw ConfigError("evaluate_testset: empty test set");
  if (options.threads < 1) throw ConfigError("evaluate_testset: thread count must be >= 1");
  MetricReport report;
  report.convention = options.convention;
  report.reference_rate = options.reference_rate;
  report.output_rate = options.output_rate;
  report.cases.resize(set.cases.size());

  auto run_case = [&](std::size_t i) {
    CaseMetrics& out = report.cases[i];
    const TestCase& tc = set.cases[i];
    try {
      const Trajectory traj = simulate(config, tc.ic, options.reference_rate, tc.t_max);
      const ReferenceSamples ref = decimate(traj, options.output_rate, tc.t_max);
      out = compare_states(predict(ref.t, tc.ic), ref.p, ref.q, options.convention);
    } catch (const SolverError& e) {
      out.failed = true;
      out.error = e.what();
    }
    out.test = tc;
  };

  const std::size_t n = set.cases.size();
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.threads), n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run_case(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < n; i = next++) run_case(i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  int ok = 0;
  for (const CaseMetrics& c : report.cases) {
    if (c.failed) {
      ++report.failed;
      continue;
    }
    ++ok;
    report.nmse_p += c.nmse_p;
    report.nmse_q += c.nmse_q;
    report.ncc_p += c.ncc_p;
    report.ncc_q += c.ncc_q;
  }
  if (ok == 0) throw MetricError("evaluate_testset: every case failed");
  report.nmse_p /= ok;
  report.nmse_q /= ok;
  report.ncc_p /= ok;
  report.ncc_q /= ok;
  return report;
}

MetricReport evaluate_testset(const DeepOnetModel& model, const OscillatorConfig& config, const TestSet& set,
                              const EvalOptions& options) {
  const Predictor predict = [&model](const Eigen::VectorXd& t, const InitialCondition& ic) {
    return deeponet_rollout(model, t, ic.p0, ic.q0);
  };
  return evaluate_testset(predict, config, set, options);
}

std::vector<PhaseSegment> stick_slip_segments(const Trajectory& traj, const OscillatorConfig& config) {
  if (traj.size() == 0) throw ShapeError("stick_slip_segments: empty trajectory");
  std::vector<PhaseSegment> out;
  PhaseLabel current = classify_phase(traj.p[0] - config.v_bow, config.friction);
  double start = traj.time(0);
  for (Eigen::Index n = 1; n < traj.size(); ++n) {
    const PhaseLabel label = classify_phase(traj.p[n] - config.v_bow, config.friction);
    if (label == current) continue;
    out.push_back({start, traj.time(n), current});
    current = label;
    start = traj.time(n);
  }
  out.push_back({start, traj.time(traj.size() - 1), current});
  return out;
}

double stick_fraction(const Trajectory& traj, const OscillatorConfig& config) {
  if (traj.size() == 0) throw ShapeError("stick_fraction: empty trajectory");
  Eigen::Index stick = 0;
  for (Eigen::Index n = 0; n < traj.size(); ++n) {
    if (classify_phase(traj.p[n] - config.v_bow, config.friction) == PhaseLabel::Stick) ++stick;
  }
  return static_cast<double>(stick) / static_cast<double>(traj.size());
}

DistributionStats abs_stats(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw ShapeError("abs_stats: empty series");
  std::vector<double> v(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) v[static_cast<std::size_t>(i)] = std::abs(x[i]);
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  DistributionStats s;
  s.median = quantile(0.5);
  s.q25 = quantile(0.25);
  s.q75 = quantile(0.75);
  s.iqr = s.q75 - s.q25;
  s.max = v.back();
  return s;
}

std::vector<ResidualSummary> residual_compare(const std::vector<ResidualEntry>& entries) {
  if (entries.empty()) throw ConfigError("residual_compare: no entries");
  std::vector<ResidualSummary> out;
  for (const ResidualEntry& e : entries) out.push_back({e.name, abs_stats(e.r1), abs_stats(e.r2)});
  return out;
}

void write_metric_report_json(std::ostream& out, const MetricReport& report) {
  nlohmann::ordered_json j;
  j["convention"] = {{"nmse", report.convention.nmse_by_variance ? "variance" : "energy"},
                     {"ncc", report.convention.ncc_centered ? "centered" : "uncentered"}};
  j["reference_rate"] = report.reference_rate;
  j["output_rate"] = report.output_rate;
  j["mean"] = {{"nmse_p", report.nmse_p}, {"nmse_q", report.nmse_q}, {"ncc_p", report.ncc_p}, {"ncc_q", report.ncc_q}};
  j["failed"] = report.failed;
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (const CaseMetrics& c : report.cases) {
    nlohmann::ordered_json row;
    row["p0"] = c.test.ic.p0;
    row["q0"] = c.test.ic.q0;
    row["t_max"] = c.test.t_max;
    if (c.failed) {
      row["failed"] = true;
      row["error"] = c.error;
    } else {
      row["nmse_p"] = c.nmse_p;
      row["nmse_q"] = c.nmse_q;
      row["ncc_p"] = c.ncc_p;
      row["ncc_q"] = c.ncc_q;
    }
    cases.push_back(std::move(row));
  }
  j["cases"] = std::move(cases);
  out << j.dump(2) << '\n';
}

}  // namespace bowsim
