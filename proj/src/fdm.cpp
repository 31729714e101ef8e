#include "bowsim/fdm.hpp"

#include <fmt/format.h>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "bowsim/errors.hpp"

namespace bowsim {

void OscillatorConfig::validate() const {
  if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("natural frequency f must be positive");
  if (!(force >= 0.0) || !std::isfinite(force)) throw ConfigError("bow force F_B must be >= 0");
  if (!std::isfinite(v_bow)) throw ConfigError("bow velocity v_B must be finite");
  friction.validate();
}

Eigen::VectorXd Trajectory::times() const {
  Eigen::VectorXd t(size());
  for (Eigen::Index n = 0; n < size(); ++n) t[n] = time(n);
  return t;
}

Eigen::VectorXd Trajectory::eta(const OscillatorConfig& config) const {
  return (p.array() - config.v_bow).matrix();
}

Eigen::VectorXd Trajectory::displacement(const OscillatorConfig& config) const {
  return q / config.omega();
}

namespace {

// Midpoint update written in the increment delta = (p_n + p_{n+1}) / 2 - p_n:
//   g(delta) = 2 delta + dt w q_n + dt^2 w^2 (p_n + delta) / 2 + dt F_B phi(p_n + delta - v_B) = 0
// The increment is O(dt), so its round-off stays far below the state's.
struct MidpointEquation {
  double p;
  double dt_w;
  double dt_w_q;
  double force_dt;
  double v_bow;
  FrictionParams friction;

  double value(double delta) const {
    return 2.0 * delta + dt_w_q + 0.5 * dt_w * dt_w * (p + delta) + force_dt * phi(p + delta - v_bow, friction);
  }
  double slope(double delta) const {
    return 2.0 + 0.5 * dt_w * dt_w + force_dt * dphi_deta(p + delta - v_bow, friction);
  }
};

bool bisect(const MidpointEquation& g, double half_width, double tol, double& delta) {
  double lo = -half_width;
  double hi = half_width;
  double glo = g.value(lo);
  double ghi = g.value(hi);
  for (int k = 0; k < 64 && glo * ghi > 0.0; ++k) {
    half_width *= 2.0;
    lo = -half_width;
    hi = half_width;
    glo = g.value(lo);
    ghi = g.value(hi);
  }
  if (glo * ghi > 0.0) return false;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g.value(mid);
    if (std::abs(gm) <= tol || mid == lo || mid == hi) {
      delta = mid;
      return true;
    }
    if ((gm < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return false;
}

}  // namespace

StepResult step(const OscillatorConfig& config, const PhaseState& state, double dt,
                const NewtonOptions& options) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time step must be positive");
  const double dt_w = dt * config.omega();
  const MidpointEquation g{state.p, dt_w, dt_w * state.q, dt * config.force, config.v_bow, config.friction};

  // Initial guess: midpoint relative velocity equal to the current one (delta = 0).
  StepResult result;
  double delta = 0.0;
  bool converged = false;
  for (int it = 0; it <= options.max_iterations; ++it) {
    const double gv = g.value(delta);
    if (!std::isfinite(gv)) break;
    if (std::abs(gv) <= options.tolerance) {
      converged = true;
      result.newton_iterations = it;
      break;
    }
    const double slope = g.slope(delta);
    if (!(slope > 0.0) || !std::isfinite(slope)) break;
    delta -= gv / slope;
  }
  if (!converged) {
    // Bracket of width 4 v_B around the initial guess, widened until it brackets.
    const double half_width = config.v_bow != 0.0 ? 2.0 * std::abs(config.v_bow) : 0.5;
    delta = 0.0;
    if (!bisect(g, half_width, options.tolerance, delta)) throw SolverError("midpoint solve failed to converge");
    result.used_bisection = true;
    result.newton_iterations = options.max_iterations;
  }

  result.state.p = state.p + 2.0 * delta;
  result.state.q = state.q + dt_w * (state.p + delta);
  return result;
}

namespace {

Trajectory integrate(const OscillatorConfig& config, const PhaseState& start, double t0,
                     double sample_rate, double duration, const NewtonOptions& options) {
  config.validate();
  if (!(sample_rate >= 40.0 * config.f)) {
    throw ConfigError(fmt::format("sample rate {} Hz is below 40 f = {} Hz", sample_rate, 40.0 * config.f));
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) throw ConfigError("duration must be positive");

  // Guard floor() against products like 0.0025 * 4.41e6 landing one ulp below an integer.
  const auto steps = static_cast<Eigen::Index>(std::floor(duration * sample_rate * (1.0 + 1e-12)));
  Trajectory traj;
  traj.sample_rate = sample_rate;
  traj.t0 = t0;
  traj.p.resize(steps + 1);
  traj.q.resize(steps + 1);
  traj.p[0] = start.p;
  traj.q[0] = start.q;
  const double dt = 1.0 / sample_rate;
  PhaseState state = start;
  for (Eigen::Index n = 0; n < steps; ++n) {
    try {
      state = step(config, state, dt, options).state;
    } catch (const SolverError&) {
      throw SolverError(fmt::format("midpoint solve failed at step {} (t = {:.9g} s)", n, t0 + n * dt));
    }
    traj.p[n + 1] = state.p;
    traj.q[n + 1] = state.q;
  }
  return traj;
}

}  // namespace

Trajectory simulate(const OscillatorConfig& config, const InitialCondition& ic, double sample_rate,
                    double duration, const NewtonOptions& options) {
  if (!std::isfinite(ic.p0) || !std::isfinite(ic.q0)) throw ConfigError("initial condition must be finite");
  return integrate(config, {ic.p0, ic.q0}, 0.0, sample_rate, duration, options);
}

Trajectory simulate_from(const OscillatorConfig& config, const Trajectory& previous, double duration,
                         const NewtonOptions& options) {
  if (previous.size() == 0) throw ShapeError("cannot continue an empty trajectory");
  const Eigen::Index last = previous.size() - 1;
  return integrate(config, {previous.p[last], previous.q[last]}, previous.time(last), previous.sample_rate,
                   duration, options);
}

namespace {

Eigen::VectorXd time_derivative(const Eigen::VectorXd& x, double dt) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd d(n);
  d[0] = (x[1] - x[0]) / dt;
  d[n - 1] = (x[n - 1] - x[n - 2]) / dt;
  for (Eigen::Index i = 1; i + 1 < n; ++i) d[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
  return d;
}

}  // namespace

OdeResiduals residuals(const Trajectory& traj, const OscillatorConfig& config) {
  if (traj.size() < 3) throw ShapeError("residuals need at least 3 samples");
  if (traj.q.size() != traj.p.size()) throw ShapeError("p and q lengths differ");
  const double w = config.omega();
  const Eigen::VectorXd p_t = time_derivative(traj.p, traj.dt());
  const Eigen::VectorXd q_t = time_derivative(traj.q, traj.dt());
  OdeResiduals r;
  r.r1 = q_t - w * traj.p;
  r.r2.resize(traj.size());
  for (Eigen::Index n = 0; n < traj.size(); ++n) {
    r.r2[n] = p_t[n] + w * traj.q[n] + config.force * phi(traj.p[n] - config.v_bow, config.friction);
  }
  return r;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const OscillatorConfig& config) {
  out << "t,p,q,eta\n";
  for (Eigen::Index n = 0; n < traj.size(); ++n) {
    out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", traj.time(n), traj.p[n], traj.q[n],
                       traj.p[n] - config.v_bow);
  }
}

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,p,q", 0) != 0) {
    throw ConfigError("trajectory CSV must start with header t,p,q,eta");
  }
  std::vector<double> t, p, q;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    double values[3];
    for (double& v : values) {
      if (!std::getline(row, cell, ',')) throw ConfigError(fmt::format("trajectory CSV line {}: too few columns", line_no));
      v = std::stod(cell);
    }
    t.push_back(values[0]);
    p.push_back(values[1]);
    q.push_back(values[2]);
  }
  if (t.size() < 2) throw ConfigError("trajectory CSV needs at least two rows");
  Trajectory traj;
  traj.t0 = t.front();
  // Rates in this project are integral Hz; undo decimal round-off in the time column.
  traj.sample_rate = std::round(static_cast<double>(t.size() - 1) / (t.back() - t.front()));
  traj.p = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  traj.q = Eigen::Map<Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  return traj;
}

}  // namespace bowsim
