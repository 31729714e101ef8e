#pragma once

#include <string_view>

namespace bowsim {

/// Shape parameter of the soft static friction characteristic.
struct FrictionParams {
  double a = 100.0;

  /// Throws ConfigError unless a > 0 and finite.
  void validate() const;
};

enum class PhaseLabel { Stick, Slip };

std::string_view to_string(PhaseLabel label);

/// phi(eta) = sqrt(2a) * eta * exp(-a eta^2 + 1/2). Odd, peak magnitude 1 at eta = +-1/sqrt(2a).
double phi(double eta, const FrictionParams& params);

/// d phi / d eta = sqrt(2a) * exp(-a eta^2 + 1/2) * (1 - 2a eta^2).
double dphi_deta(double eta, const FrictionParams& params);

/// Half-width of the highly nonlinear region: the positive local minimizer
/// of d phi / d eta, sqrt(3 / (2a)).
double nonlinear_boundary(const FrictionParams& params);

/// Stick inside the nonlinear region (|eta| <= boundary), Slip outside.
PhaseLabel classify_phase(double eta, const FrictionParams& params);

}  // namespace bowsim
