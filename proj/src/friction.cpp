#include "bowsim/friction.hpp"

#include <cmath>
#include <string>

#include "bowsim/errors.hpp"

namespace bowsim {

namespace {

void require_finite(double eta, const char* what) {
  if (!std::isfinite(eta)) {
    throw DomainError(std::string(what) + ": relative velocity must be finite");
  }
}

}  // namespace

void FrictionParams::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw ConfigError("friction parameter a must be positive and finite, got " + std::to_string(a));
  }
}

std::string_view to_string(PhaseLabel label) {
  return label == PhaseLabel::Stick ? "stick" : "slip";
}

double phi(double eta, const FrictionParams& params) {
  params.validate();
  require_finite(eta, "phi");
  return std::sqrt(2.0 * params.a) * eta * std::exp(-params.a * eta * eta + 0.5);
}

double dphi_deta(double eta, const FrictionParams& params) {
  params.validate();
  require_finite(eta, "dphi_deta");
  const double a = params.a;
  return std::sqrt(2.0 * a) * std::exp(-a * eta * eta + 0.5) * (1.0 - 2.0 * a * eta * eta);
}

double nonlinear_boundary(const FrictionParams& params) {
  params.validate();
  return std::sqrt(3.0 / (2.0 * params.a));
}

PhaseLabel classify_phase(double eta, const FrictionParams& params) {
  require_finite(eta, "classify_phase");
  return std::abs(eta) <= nonlinear_boundary(params) ? PhaseLabel::Stick : PhaseLabel::Slip;
}

}  // namespace bowsim
