#include "bowsim/autodiff.hpp"

namespace bowsim::ad {

template class Tape<double>;
template class Tape<Dual<double>>;

ParamLeaves<double> bind_parameters(Tape<double>& tape, const ParamVector& params) {
  ParamLeaves<double> leaves;
  leaves.reserve(static_cast<std::size_t>(params.num_blocks()));
  for (int b = 0; b < params.num_blocks(); ++b) leaves.push_back(tape.parameter(b, params.block(b)));
  return leaves;
}

ParamLeaves<HvpScalar> bind_parameters(Tape<HvpScalar>& tape, const ParamVector& params,
                                       const ParamVector& direction) {
  if (!params.same_layout(direction)) throw ShapeError("bind_parameters: direction layout differs");
  ParamLeaves<HvpScalar> leaves;
  leaves.reserve(static_cast<std::size_t>(params.num_blocks()));
  for (int b = 0; b < params.num_blocks(); ++b) {
    const auto value = params.block(b);
    const auto tangent = direction.block(b);
    Tape<HvpScalar>::Matrix m(value.rows(), value.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = HvpScalar(value(i, j), tangent(i, j));
    }
    leaves.push_back(tape.parameter(b, std::move(m)));
  }
  return leaves;
}

ParamVector gradient(Var<double> loss, const ParamVector& layout) {
  const auto adj = loss.tape->backward(loss);
  ParamVector g = layout.zeros_like();
  for (int b = 0; b < layout.num_blocks(); ++b) {
    if (static_cast<std::size_t>(b) < adj.size() && adj[static_cast<std::size_t>(b)].size() != 0) {
      const auto& a = adj[static_cast<std::size_t>(b)];
      if (a.rows() != layout.info(b).rows || a.cols() != layout.info(b).cols) {
        throw ShapeError("gradient: adjoint shape differs from parameter block");
      }
      g.block(b) = a;
    }
  }
  return g;
}

ParamVector hvp_from_tape(Var<HvpScalar> loss, const ParamVector& layout) {
  const auto adj = loss.tape->backward(loss);
  ParamVector hv = layout.zeros_like();
  for (int b = 0; b < layout.num_blocks(); ++b) {
    if (static_cast<std::size_t>(b) < adj.size() && adj[static_cast<std::size_t>(b)].size() != 0) {
      const auto& a = adj[static_cast<std::size_t>(b)];
      auto out = hv.block(b);
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, j) = a(i, j).eps;
      }
    }
  }
  return hv;
}

}  // namespace bowsim::ad
