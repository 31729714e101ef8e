#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <iosfwd>
#include <numbers>
#include <string>

#include "bowsim/friction.hpp"

namespace bowsim {

/// Reference sampling rate for ground-truth runs (4410 kHz).
inline constexpr double kReferenceRate = 4'410'000.0;
/// Audio sampling rate.
inline constexpr double kAudioRate = 44'100.0;

/// Physical parameters of one bowed mass-spring scenario.
struct OscillatorConfig {
  double f = 100.0;      ///< natural frequency [Hz]
  double force = 10.0;   ///< mass-normalized bow force F_B [m/s^2]
  double v_bow = 0.2;    ///< bow velocity v_B [m/s]
  FrictionParams friction{};

  double omega() const { return 2.0 * std::numbers::pi * f; }
  void validate() const;
};

struct InitialCondition {
  double p0 = 0.0;
  double q0 = 0.0;
};

/// Uniformly sampled (p, q) series starting at t0.
struct Trajectory {
  double sample_rate = kReferenceRate;
  double t0 = 0.0;
  Eigen::VectorXd p;
  Eigen::VectorXd q;

  Eigen::Index size() const { return p.size(); }
  double dt() const { return 1.0 / sample_rate; }
  double time(Eigen::Index n) const { return t0 + static_cast<double>(n) / sample_rate; }
  Eigen::VectorXd times() const;
  /// eta_n = p_n - v_B
  Eigen::VectorXd eta(const OscillatorConfig& config) const;
  /// u_n = q_n / omega
  Eigen::VectorXd displacement(const OscillatorConfig& config) const;
};

struct PhaseState {
  double p = 0.0;
  double q = 0.0;
};

struct StepResult {
  PhaseState state;
  int newton_iterations = 0;
  bool used_bisection = false;
};

struct NewtonOptions {
  double tolerance = 1e-12;
  int max_iterations = 50;
};

/// One implicit-midpoint step of q_t = w p, p_t = -w q - F_B phi(p - v_B).
/// The midpoint velocity is found by scalar Newton on eta with a bisection fallback.
StepResult step(const OscillatorConfig& config, const PhaseState& state, double dt,
                const NewtonOptions& options = {});

/// Integrates from ic over [0, duration] at the given rate; floor(duration * rate) + 1 samples.
Trajectory simulate(const OscillatorConfig& config, const InitialCondition& ic, double sample_rate,
                    double duration, const NewtonOptions& options = {});

/// Continues a run from its last sample; the result starts at that sample.
Trajectory simulate_from(const OscillatorConfig& config, const Trajectory& previous, double duration,
                         const NewtonOptions& options = {});

struct OdeResiduals {
  Eigen::VectorXd r1;  ///< q_t - w p
  Eigen::VectorXd r2;  ///< p_t + w q + F_B phi(eta)
};

/// Pointwise residuals with central differences (one-sided at the ends).
OdeResiduals residuals(const Trajectory& traj, const OscillatorConfig& config);

/// CSV with header t,p,q,eta and 17 significant digits.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const OscillatorConfig& config);
Trajectory read_trajectory_csv(std::istream& in);

}  // namespace bowsim
