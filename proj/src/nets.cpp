#include "bowsim/nets.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <numbers>

#include "bowsim/errors.hpp"
#include "json.hpp"

namespace bowsim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

template <typename S>
ad::Var<S> constant(ad::Tape<S>& tape, const Eigen::MatrixXd& m) {
  if constexpr (std::is_same_v<S, double>) {
    return tape.constant(m);
  } else {
    return tape.constant(m.cast<S>());
  }
}

// tanh layer with its time derivative: y = tanh(a), y' = (1 - y^2) .* a'.
template <typename S>
DualVar<S> tanh_layer(ad::Tape<S>& tape, const DualVar<S>& x, ad::Var<S> W, ad::Var<S> b) {
  DualVar<S> out{ad::tanh(tape.affine(x.value, W, b)), std::nullopt};
  if (x.tangent) {
    const ad::Var<S> slope = 1.0 - ad::square(out.value);
    out.tangent = ad::cwise_product(slope, ad::matmul(*x.tangent, W));
  }
  return out;
}

}  // namespace

RffEmbedding RffEmbedding::sample(int input_dim, int encoding_size, double sigma, std::uint64_t seed) {
  if (input_dim <= 0 || encoding_size <= 0) throw ConfigError("RFF dimensions must be positive");
  if (!(sigma > 0.0)) throw ConfigError("RFF scale sigma must be positive");
  RffEmbedding emb;
  emb.sigma = sigma;
  emb.seed = seed;
  emb.B.resize(input_dim, encoding_size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index j = 0; j < emb.B.cols(); ++j) {
    for (Eigen::Index i = 0; i < emb.B.rows(); ++i) emb.B(i, j) = normal(rng);
  }
  return emb;
}

Eigen::MatrixXd rff_embed(const Eigen::MatrixXd& X, const RffEmbedding& emb) {
  if (X.cols() != emb.B.rows()) {
    throw ShapeError(fmt::format("rff_embed: input has {} columns, embedding expects {}", X.cols(), emb.B.rows()));
  }
  const Eigen::MatrixXd Z = kTwoPi * (X * emb.B);
  Eigen::MatrixXd out(X.rows(), 2 * emb.B.cols());
  out.leftCols(emb.B.cols()) = Z.array().cos().matrix();
  out.rightCols(emb.B.cols()) = Z.array().sin().matrix();
  return out;
}

Eigen::MatrixXd rff_embed_tangent(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xdot, const RffEmbedding& emb) {
  if (X.cols() != emb.B.rows() || Xdot.rows() != X.rows() || Xdot.cols() != X.cols()) {
    throw ShapeError("rff_embed_tangent: shape mismatch");
  }
  const Eigen::MatrixXd Z = kTwoPi * (X * emb.B);
  const Eigen::MatrixXd Zdot = kTwoPi * (Xdot * emb.B);
  Eigen::MatrixXd out(X.rows(), 2 * emb.B.cols());
  out.leftCols(emb.B.cols()) = -(Z.array().sin() * Zdot.array()).matrix();
  out.rightCols(emb.B.cols()) = (Z.array().cos() * Zdot.array()).matrix();
  return out;
}

void FcnnShape::validate() const {
  if (input_dim <= 0 || width <= 0 || output_dim <= 0) throw ConfigError("network dimensions must be positive");
  if (depth < 1) throw ConfigError("modified FCNN needs at least one gate layer (L >= 1)");
  if (input_dim != width) {
    throw ConfigError(fmt::format(
        "modified FCNN shares W_Z1 between the input and the first hidden layer, so input width ({}) "
        "must equal the layer width ({})",
        input_dim, width));
  }
}

ModifiedFcnn ModifiedFcnn::declare(ParamVector& params, const std::string& prefix, const FcnnShape& shape) {
  shape.validate();
  ModifiedFcnn net;
  net.shape_ = shape;
  net.first_block_ = params.num_blocks();
  params.add_block(prefix + "W_U", shape.input_dim, shape.width);
  params.add_block(prefix + "b_U", 1, shape.width);
  params.add_block(prefix + "W_V", shape.input_dim, shape.width);
  params.add_block(prefix + "b_V", 1, shape.width);
  for (int k = 1; k <= shape.depth; ++k) {
    params.add_block(fmt::format("{}W_Z{}", prefix, k), shape.width, shape.width);
    params.add_block(fmt::format("{}b_Z{}", prefix, k), 1, shape.width);
  }
  params.add_block(prefix + "W_O", shape.width, shape.output_dim);
  params.add_block(prefix + "b_O", 1, shape.output_dim);
  return net;
}

void ModifiedFcnn::initialize(ParamVector& params, std::mt19937_64& rng) const {
  for (int b = first_block_; b < first_block_ + num_blocks(); ++b) {
    auto block = params.block(b);
    if ((b - first_block_) % 2 == 1) {
      block.setZero();
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(block.rows() + block.cols()));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      for (Eigen::Index i = 0; i < block.rows(); ++i) block(i, j) = uniform(rng);
    }
  }
}

template <typename S>
DualVar<S> ModifiedFcnn::record(ad::Tape<S>& tape, std::span<const ad::Var<S>> leaves, ad::Var<S> X,
                                std::optional<ad::Var<S>> Xdot) const {
  if (static_cast<int>(leaves.size()) < first_block_ + num_blocks()) {
    throw ShapeError("ModifiedFcnn::record: too few parameter leaves");
  }
  if (X.cols() != shape_.input_dim) {
    throw ShapeError(fmt::format("fcnn: feature width {} does not match input dimension {}", X.cols(),
                                 shape_.input_dim));
  }
  auto leaf = [&](int b) { return leaves[static_cast<std::size_t>(b)]; };
  const DualVar<S> x{X, Xdot};
  const DualVar<S> U = tanh_layer(tape, x, leaf(w_u()), leaf(b_u()));
  const DualVar<S> V = tanh_layer(tape, x, leaf(w_v()), leaf(b_v()));
  DualVar<S> H = tanh_layer(tape, x, leaf(w_z(0)), leaf(b_z(0)));

  // H_{k+1} = U + Z .* (V - U)
  const ad::Var<S> D = V.value - U.value;
  std::optional<ad::Var<S>> Ddot;
  if (Xdot) Ddot = *V.tangent - *U.tangent;
  for (int k = 0; k < shape_.depth; ++k) {
    const DualVar<S> Z = tanh_layer(tape, H, leaf(w_z(k)), leaf(b_z(k)));
    DualVar<S> next{U.value + ad::cwise_product(Z.value, D), std::nullopt};
    if (Xdot) {
      next.tangent = *U.tangent + ad::cwise_product(*Z.tangent, D) + ad::cwise_product(Z.value, *Ddot);
    }
    H = next;
  }
  DualVar<S> O{tape.affine(H.value, leaf(w_o()), leaf(b_o())), std::nullopt};
  if (Xdot) O.tangent = ad::matmul(*H.tangent, leaf(w_o()));
  return O;
}

template DualVar<double> ModifiedFcnn::record(ad::Tape<double>&, std::span<const ad::Var<double>>, ad::Var<double>,
                                              std::optional<ad::Var<double>>) const;
template DualVar<ad::HvpScalar> ModifiedFcnn::record(ad::Tape<ad::HvpScalar>&,
                                                     std::span<const ad::Var<ad::HvpScalar>>,
                                                     ad::Var<ad::HvpScalar>,
                                                     std::optional<ad::Var<ad::HvpScalar>>) const;

Eigen::MatrixXd fcnn_forward(const ModifiedFcnn& net, const ParamVector& params, const Eigen::MatrixXd& X) {
  if (X.cols() != net.shape().input_dim) {
    throw ShapeError(fmt::format("fcnn_forward: feature width {} does not match input dimension {}", X.cols(),
                                 net.shape().input_dim));
  }
  ad::Tape<double> tape;
  const auto leaves = ad::bind_parameters(tape, params);
  return net.record<double>(tape, leaves, tape.constant(X), std::nullopt).value.value();
}

// ---------------------------------------------------------------- PINN

PinnModel PinnModel::create(const NetArch& arch, double scale_t, double scale_pq, std::uint64_t seed,
                            double t_start) {
  if (!(scale_t > 0.0) || !(scale_pq > 0.0)) throw ConfigError("scaling factors must be positive");
  PinnModel m;
  m.arch = arch;
  m.arch.output_dim = 1;
  m.scale_t = scale_t;
  m.scale_pq = scale_pq;
  m.t_start = t_start;
  m.rff_p = RffEmbedding::sample(1, arch.rff_size, arch.rff_sigma, seed);
  m.rff_q = RffEmbedding::sample(1, arch.rff_size, arch.rff_sigma, seed + 1);
  const FcnnShape shape{2 * arch.rff_size, arch.width, arch.depth, 1};
  m.head_p = ModifiedFcnn::declare(m.params, "p.", shape);
  m.head_q = ModifiedFcnn::declare(m.params, "q.", shape);
  std::mt19937_64 rng(seed + 2);
  m.head_p.initialize(m.params, rng);
  m.head_q.initialize(m.params, rng);
  return m;
}

template <typename S>
StateVars<S> record_pinn(ad::Tape<S>& tape, const PinnModel& model, std::span<const ad::Var<S>> leaves,
                         const Eigen::VectorXd& t, bool with_time_derivative) {
  const Eigen::MatrixXd tau = (t.array() - model.t_start).matrix() / model.scale_t;
  const Eigen::MatrixXd tau_dot = Eigen::MatrixXd::Constant(t.size(), 1, 1.0 / model.scale_t);

  auto head = [&](const ModifiedFcnn& net, const RffEmbedding& emb) {
    const ad::Var<S> X = constant(tape, rff_embed(tau, emb));
    std::optional<ad::Var<S>> Xdot;
    if (with_time_derivative) Xdot = constant(tape, rff_embed_tangent(tau, tau_dot, emb));
    return net.record<S>(tape, leaves, X, Xdot);
  };
  const DualVar<S> Op = head(model.head_p, model.rff_p);
  const DualVar<S> Oq = head(model.head_q, model.rff_q);
  StateVars<S> out{model.scale_pq * Op.value, model.scale_pq * Oq.value, std::nullopt, std::nullopt};
  if (with_time_derivative) {
    out.p_t = model.scale_pq * *Op.tangent;
    out.q_t = model.scale_pq * *Oq.tangent;
  }
  return out;
}

template StateVars<double> record_pinn(ad::Tape<double>&, const PinnModel&, std::span<const ad::Var<double>>,
                                       const Eigen::VectorXd&, bool);
template StateVars<ad::HvpScalar> record_pinn(ad::Tape<ad::HvpScalar>&, const PinnModel&,
                                              std::span<const ad::Var<ad::HvpScalar>>, const Eigen::VectorXd&, bool);

namespace {

StateBatch to_batch(const StateVars<double>& v) {
  StateBatch out;
  out.p = v.p.value().col(0);
  out.q = v.q.value().col(0);
  if (v.p_t) out.p_t = v.p_t->value().col(0);
  if (v.q_t) out.q_t = v.q_t->value().col(0);
  return out;
}

}  // namespace

StateBatch pinn_eval(const PinnModel& model, const Eigen::VectorXd& t, bool with_time_derivative) {
  const double lo = model.t_start;
  const double hi = model.t_start + model.scale_t;
  const double slack = 1e-12 * model.scale_t;
  if (t.size() > 0 && (t.minCoeff() < lo - slack || t.maxCoeff() > hi + slack)) {
    std::clog << fmt::format("warning: pinn_eval extrapolating outside window [{:.6g}, {:.6g}] s\n", lo, hi);
  }
  ad::Tape<double> tape;
  const auto leaves = ad::bind_parameters(tape, model.params);
  return to_batch(record_pinn<double>(tape, model, leaves, t, with_time_derivative));
}

// ---------------------------------------------------------------- DeepONet

DeepOnetModel DeepOnetModel::create(const NetArch& arch, double scale_t, double scale_pq, std::uint64_t seed) {
  if (!(scale_t > 0.0) || !(scale_pq > 0.0)) throw ConfigError("scaling factors must be positive");
  if (arch.output_dim <= 0 || arch.output_dim % 2 != 0) {
    throw ConfigError(fmt::format("DeepONet output width c_O must be even, got {}", arch.output_dim));
  }
  DeepOnetModel m;
  m.arch = arch;
  m.scale_t = scale_t;
  m.scale_pq = scale_pq;
  m.rff_t = RffEmbedding::sample(1, arch.rff_size, arch.rff_sigma, seed);
  m.rff_ic = RffEmbedding::sample(2, arch.rff_size, arch.rff_sigma, seed + 1);
  const FcnnShape shape{2 * arch.rff_size, arch.width, arch.depth, arch.output_dim};
  m.branch = ModifiedFcnn::declare(m.params, "branch.", shape);
  m.trunk = ModifiedFcnn::declare(m.params, "trunk.", shape);
  std::mt19937_64 rng(seed + 2);
  m.branch.initialize(m.params, rng);
  m.trunk.initialize(m.params, rng);
  return m;
}

namespace {

template <typename S>
StateVars<S> merge_outputs(ad::Tape<S>& tape, const DeepOnetModel& model, const DualVar<S>& b, ad::Var<S> r) {
  const int half = model.arch.output_dim / 2;
  Eigen::MatrixXd sel_p = Eigen::MatrixXd::Zero(model.arch.output_dim, 1);
  Eigen::MatrixXd sel_q = Eigen::MatrixXd::Zero(model.arch.output_dim, 1);
  sel_p.topRows(half).setConstant(model.scale_pq);
  sel_q.bottomRows(half).setConstant(model.scale_pq);
  const ad::Var<S> Sp = constant(tape, sel_p);
  const ad::Var<S> Sq = constant(tape, sel_q);

  const ad::Var<S> merged = ad::cwise_product(b.value, r);
  StateVars<S> out{ad::matmul(merged, Sp), ad::matmul(merged, Sq), std::nullopt, std::nullopt};
  if (b.tangent) {
    const ad::Var<S> merged_dot = ad::cwise_product(*b.tangent, r);
    out.p_t = ad::matmul(merged_dot, Sp);
    out.q_t = ad::matmul(merged_dot, Sq);
  }
  return out;
}

template <typename S>
DualVar<S> record_branch(ad::Tape<S>& tape, const DeepOnetModel& model, std::span<const ad::Var<S>> leaves,
                         const Eigen::VectorXd& t, Eigen::Index rows, bool with_time_derivative) {
  const Eigen::MatrixXd tau = t / model.scale_t;
  const ad::Var<S> X = constant(tape, rff_embed(tau, model.rff_t));
  std::optional<ad::Var<S>> Xdot;
  if (with_time_derivative) {
    const Eigen::MatrixXd tau_dot = Eigen::MatrixXd::Constant(t.size(), 1, 1.0 / model.scale_t);
    Xdot = constant(tape, rff_embed_tangent(tau, tau_dot, model.rff_t));
  }
  DualVar<S> b = model.branch.record<S>(tape, leaves, X, Xdot);
  if (t.size() == 1 && rows != 1) {
    const std::vector<Eigen::Index> first(static_cast<std::size_t>(rows), 0);
    b.value = ad::gather_rows(b.value, first);
    if (b.tangent) b.tangent = ad::gather_rows(*b.tangent, first);
  }
  return b;
}

// Rows that share an initial condition share one trunk evaluation.
template <typename S>
ad::Var<S> record_trunk(ad::Tape<S>& tape, const DeepOnetModel& model, std::span<const ad::Var<S>> leaves,
                        const Eigen::VectorXd& p0, const Eigen::VectorXd& q0) {
  std::map<std::pair<double, double>, Eigen::Index> seen;
  std::vector<Eigen::Index> row_of(static_cast<std::size_t>(p0.size()));
  std::vector<Eigen::Index> unique;
  for (Eigen::Index i = 0; i < p0.size(); ++i) {
    const auto [it, inserted] = seen.try_emplace({p0[i], q0[i]}, static_cast<Eigen::Index>(unique.size()));
    if (inserted) unique.push_back(i);
    row_of[static_cast<std::size_t>(i)] = it->second;
  }
  Eigen::MatrixXd ic(static_cast<Eigen::Index>(unique.size()), 2);
  for (std::size_t k = 0; k < unique.size(); ++k) {
    ic(static_cast<Eigen::Index>(k), 0) = p0[unique[k]] / model.scale_pq;
    ic(static_cast<Eigen::Index>(k), 1) = q0[unique[k]] / model.scale_pq;
  }
  const ad::Var<S> r =
      model.trunk.record<S>(tape, leaves, constant(tape, rff_embed(ic, model.rff_ic)), std::nullopt).value;
  if (unique.size() == row_of.size()) return r;
  return ad::gather_rows(r, std::move(row_of));
}

void check_batch(const Eigen::VectorXd& t, const Eigen::VectorXd& p0, const Eigen::VectorXd& q0) {
  if (q0.size() != p0.size() || (t.size() != p0.size() && t.size() != 1)) {
    throw ShapeError(fmt::format("deeponet: batch sizes differ (t {}, p0 {}, q0 {})", t.size(), p0.size(), q0.size()));
  }
}

}  // namespace

template <typename S>
StateVars<S> record_deeponet(ad::Tape<S>& tape, const DeepOnetModel& model, std::span<const ad::Var<S>> leaves,
                             const Eigen::VectorXd& t, const Eigen::VectorXd& p0, const Eigen::VectorXd& q0,
                             bool with_time_derivative) {
  check_batch(t, p0, q0);
  const DualVar<S> b = record_branch(tape, model, leaves, t, p0.size(), with_time_derivative);
  return merge_outputs(tape, model, b, record_trunk(tape, model, leaves, p0, q0));
}

template <typename S>
DeepOnetRecord<S> record_deeponet_with_initial(ad::Tape<S>& tape, const DeepOnetModel& model,
                                               std::span<const ad::Var<S>> leaves, const Eigen::VectorXd& t,
                                               const Eigen::VectorXd& p0, const Eigen::VectorXd& q0,
                                               bool with_time_derivative) {
  check_batch(t, p0, q0);
  const ad::Var<S> r = record_trunk(tape, model, leaves, p0, q0);
  const DualVar<S> b = record_branch(tape, model, leaves, t, p0.size(), with_time_derivative);
  const DualVar<S> b0 = record_branch(tape, model, leaves, Eigen::VectorXd::Zero(1), p0.size(), false);
  return {merge_outputs(tape, model, b, r), merge_outputs(tape, model, b0, r)};
}

template DeepOnetRecord<double> record_deeponet_with_initial(ad::Tape<double>&, const DeepOnetModel&,
                                                             std::span<const ad::Var<double>>, const Eigen::VectorXd&,
                                                             const Eigen::VectorXd&, const Eigen::VectorXd&, bool);
template DeepOnetRecord<ad::HvpScalar> record_deeponet_with_initial(ad::Tape<ad::HvpScalar>&, const DeepOnetModel&,
                                                                    std::span<const ad::Var<ad::HvpScalar>>,
                                                                    const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                                    const Eigen::VectorXd&, bool);

template StateVars<double> record_deeponet(ad::Tape<double>&, const DeepOnetModel&, std::span<const ad::Var<double>>,
                                           const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                           bool);
template StateVars<ad::HvpScalar> record_deeponet(ad::Tape<ad::HvpScalar>&, const DeepOnetModel&,
                                                  std::span<const ad::Var<ad::HvpScalar>>, const Eigen::VectorXd&,
                                                  const Eigen::VectorXd&, const Eigen::VectorXd&, bool);

StateBatch deeponet_eval(const DeepOnetModel& model, const Eigen::VectorXd& t, const Eigen::VectorXd& p0,
                         const Eigen::VectorXd& q0, bool with_time_derivative) {
  ad::Tape<double> tape;
  const auto leaves = ad::bind_parameters(tape, model.params);
  return to_batch(record_deeponet<double>(tape, model, leaves, t, p0, q0, with_time_derivative));
}

StateBatch deeponet_rollout(const DeepOnetModel& model, const Eigen::VectorXd& t, double p0, double q0) {
  StateBatch out;
  out.p.resize(t.size());
  out.q.resize(t.size());
  if (t.size() == 0) return out;
  if (t.minCoeff() < 0.0) throw DomainError("deeponet_rollout: times must be nonnegative");
  const double window = model.scale_t;
  const auto window_of = [&](double ti) { return static_cast<long>(std::floor(ti / window)); };
  const long last_window = window_of(t.maxCoeff());

  double ic_p = p0;
  double ic_q = q0;
  for (long k = 0; k <= last_window; ++k) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (window_of(t[i]) == k) rows.push_back(i);
    }
    // The right edge of the window is appended to seed the next one.
    Eigen::VectorXd local(static_cast<Eigen::Index>(rows.size()) + 1);
    for (std::size_t j = 0; j < rows.size(); ++j) local[static_cast<Eigen::Index>(j)] = t[rows[j]] - k * window;
    local[local.size() - 1] = window;
    const StateBatch pred = deeponet_eval(model, local, Eigen::VectorXd::Constant(local.size(), ic_p),
                                          Eigen::VectorXd::Constant(local.size(), ic_q));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      out.p[rows[j]] = pred.p[static_cast<Eigen::Index>(j)];
      out.q[rows[j]] = pred.q[static_cast<Eigen::Index>(j)];
    }
    ic_p = pred.p[local.size() - 1];
    ic_q = pred.q[local.size() - 1];
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'B', 'O', 'W', 'S', 'I', 'M', 'C', 'K'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ConfigError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_f64_block(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index k = 0; k < n; ++k) write_u64(out, std::bit_cast<std::uint64_t>(data[k]));
}

void read_f64_block(std::istream& in, double* data, Eigen::Index n) {
  for (Eigen::Index k = 0; k < n; ++k) data[k] = std::bit_cast<double>(read_u64(in));
}

nlohmann::json arch_json(const NetArch& a) {
  return {{"width", a.width},
          {"depth", a.depth},
          {"rff_size", a.rff_size},
          {"rff_sigma", a.rff_sigma},
          {"output_dim", a.output_dim}};
}

NetArch arch_from_json(const nlohmann::json& j) {
  NetArch a;
  a.width = j.at("width").get<int>();
  a.depth = j.at("depth").get<int>();
  a.rff_size = j.at("rff_size").get<int>();
  a.rff_sigma = j.at("rff_sigma").get<double>();
  a.output_dim = j.at("output_dim").get<int>();
  return a;
}

nlohmann::json rff_json(const std::string& name, const RffEmbedding& e) {
  return {{"name", name}, {"rows", e.B.rows()}, {"cols", e.B.cols()}, {"seed", e.seed}, {"sigma", e.sigma}};
}

void write_container(std::ostream& out, nlohmann::json header, const std::vector<const RffEmbedding*>& rffs,
                     const std::vector<std::string>& rff_names, const ParamVector& params) {
  header["format"] = "bowsim-checkpoint";
  header["version"] = 1;
  header["byte_order"] = "little";
  header["storage"] = "column-major";
  nlohmann::json rff = nlohmann::json::array();
  for (std::size_t i = 0; i < rffs.size(); ++i) rff.push_back(rff_json(rff_names[i], *rffs[i]));
  header["rff"] = rff;
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockInfo& b : params.layout()) blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  header["blocks"] = blocks;

  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const RffEmbedding* e : rffs) write_f64_block(out, e->B.data(), e->B.size());
  write_f64_block(out, params.flat().data(), params.size());
  if (!out) throw ExportError("checkpoint: write failed");
}

nlohmann::json read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError("checkpoint: bad magic");
  const std::uint64_t len = read_u64(in);
  if (len > (1u << 26)) throw ConfigError("checkpoint: header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ConfigError("checkpoint: truncated header");
  return nlohmann::json::parse(text);
}

void read_rff(std::istream& in, const nlohmann::json& j, RffEmbedding& e) {
  e.seed = j.at("seed").get<std::uint64_t>();
  e.sigma = j.at("sigma").get<double>();
  e.B.resize(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  read_f64_block(in, e.B.data(), e.B.size());
}

void read_params(std::istream& in, const nlohmann::json& header, ParamVector& params) {
  const auto& blocks = header.at("blocks");
  if (static_cast<int>(blocks.size()) != params.num_blocks()) throw ConfigError("checkpoint: block count mismatch");
  for (int b = 0; b < params.num_blocks(); ++b) {
    const auto& j = blocks[static_cast<std::size_t>(b)];
    if (j.at("rows").get<Eigen::Index>() != params.info(b).rows ||
        j.at("cols").get<Eigen::Index>() != params.info(b).cols) {
      throw ConfigError("checkpoint: block '" + params.info(b).name + "' has unexpected shape");
    }
  }
  read_f64_block(in, params.flat().data(), params.size());
}

}  // namespace

void save_checkpoint(std::ostream& out, const PinnModel& model) {
  nlohmann::json h{{"kind", "pinn"},
                   {"arch", arch_json(model.arch)},
                   {"scale_t", model.scale_t},
                   {"scale_pq", model.scale_pq},
                   {"t_start", model.t_start}};
  write_container(out, h, {&model.rff_p, &model.rff_q}, {"rff_p", "rff_q"}, model.params);
}

void save_checkpoint(std::ostream& out, const DeepOnetModel& model) {
  nlohmann::json h{{"kind", "deeponet"},
                   {"arch", arch_json(model.arch)},
                   {"scale_t", model.scale_t},
                   {"scale_pq", model.scale_pq}};
  write_container(out, h, {&model.rff_t, &model.rff_ic}, {"rff_t", "rff_ic"}, model.params);
}

std::string checkpoint_kind(std::istream& in) { return read_header(in).at("kind").get<std::string>(); }

PinnModel load_pinn_checkpoint(std::istream& in) {
  const nlohmann::json h = read_header(in);
  if (h.at("kind") != "pinn") throw ConfigError("checkpoint: not a PINN checkpoint");
  PinnModel m = PinnModel::create(arch_from_json(h.at("arch")), h.at("scale_t").get<double>(),
                                  h.at("scale_pq").get<double>(), 0, h.at("t_start").get<double>());
  read_rff(in, h.at("rff").at(0), m.rff_p);
  read_rff(in, h.at("rff").at(1), m.rff_q);
  read_params(in, h, m.params);
  return m;
}

DeepOnetModel load_deeponet_checkpoint(std::istream& in) {
  const nlohmann::json h = read_header(in);
  if (h.at("kind") != "deeponet") throw ConfigError("checkpoint: not a DeepONet checkpoint");
  DeepOnetModel m = DeepOnetModel::create(arch_from_json(h.at("arch")), h.at("scale_t").get<double>(),
                                          h.at("scale_pq").get<double>(), 0);
  read_rff(in, h.at("rff").at(0), m.rff_t);
  read_rff(in, h.at("rff").at(1), m.rff_ic);
  read_params(in, h, m.params);
  return m;
}

}  // namespace bowsim
