#pragma once

#include <concepts>
#include <span>
#include <vector>

#include "bowsim/dual.hpp"
#include "bowsim/params.hpp"
#include "bowsim/tape.hpp"

namespace bowsim::ad {

using HvpScalar = Dual<double>;

template <typename S>
using ParamLeaves = std::vector<Var<S>>;

/// A loss that can be recorded on tapes of both scalar types.
template <typename F>
concept TapeLoss = requires(const F& f, Tape<double>& t1, Tape<HvpScalar>& t2,
                            std::span<const Var<double>> l1, std::span<const Var<HvpScalar>> l2) {
  { f(t1, l1) } -> std::same_as<Var<double>>;
  { f(t2, l2) } -> std::same_as<Var<HvpScalar>>;
};

/// Records one leaf per parameter block.
ParamLeaves<double> bind_parameters(Tape<double>& tape, const ParamVector& params);

/// Records leaves whose tangent parts hold `direction`.
ParamLeaves<HvpScalar> bind_parameters(Tape<HvpScalar>& tape, const ParamVector& params,
                                       const ParamVector& direction);

/// Reverse-mode gradient of a recorded scalar with respect to the blocks of `layout`.
ParamVector gradient(Var<double> loss, const ParamVector& layout);

template <TapeLoss F>
double evaluate(const F& loss_fn, const ParamVector& params) {
  Tape<double> tape;
  const auto leaves = bind_parameters(tape, params);
  return scalar_value(loss_fn(tape, std::span<const Var<double>>(leaves)));
}

template <TapeLoss F>
double value_and_grad(const F& loss_fn, const ParamVector& params, ParamVector& grad) {
  Tape<double> tape;
  const auto leaves = bind_parameters(tape, params);
  const Var<double> loss = loss_fn(tape, std::span<const Var<double>>(leaves));
  grad = gradient(loss, params);
  return scalar_value(loss);
}

template <TapeLoss F>
ParamVector grad(const F& loss_fn, const ParamVector& params) {
  ParamVector g;
  value_and_grad(loss_fn, params, g);
  return g;
}

/// H v by forward-over-reverse: the reverse sweep runs in Dual arithmetic with
/// parameter tangents set to v; the tangent of the gradient is H v.
ParamVector hvp_from_tape(Var<HvpScalar> loss, const ParamVector& layout);

template <TapeLoss F>
ParamVector hvp(const F& loss_fn, const ParamVector& params, const ParamVector& direction) {
  if (!params.same_layout(direction)) throw ShapeError("hvp: direction shape differs from parameters");
  Tape<HvpScalar> tape;
  const auto leaves = bind_parameters(tape, params, direction);
  return hvp_from_tape(loss_fn(tape, std::span<const Var<HvpScalar>>(leaves)), params);
}

/// Forward-mode derivative of a scalar function of time.
template <typename F>
  requires std::invocable<const F&, Dual<double>>
double input_derivative(const F& net_eval, double t) {
  const Dual<double> out = net_eval(Dual<double>(t, 1.0));
  return out.eps;
}

}  // namespace bowsim::ad
