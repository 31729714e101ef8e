#include "bowsim/train.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bowsim {

std::string loss_term_name(LossTerm term) {
  static const char* names[kNumLossTerms] = {"ODE1", "ODE2", "IC1", "IC2", "ob1", "ob2"};
  return names[static_cast<int>(term)];
}

void LossWeights::validate() const {
  for (LossTerm t : kAllLossTerms) {
    const double w = (*this)[t];
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError(fmt::format("loss weight lambda_{} must be finite and >= 0, got {}", loss_term_name(t), w));
    }
  }
}

template <typename S>
LossValues LossSet<S>::values() const {
  LossValues out;
  for (int i = 0; i < kNumLossTerms; ++i) {
    if (terms[static_cast<std::size_t>(i)]) {
      out.present[static_cast<std::size_t>(i)] = true;
      out.value[static_cast<std::size_t>(i)] = ad::scalar_value(*terms[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

template struct LossSet<double>;
template struct LossSet<ad::HvpScalar>;

double total_loss(const LossValues& losses, const LossWeights& weights) {
  double total = 0.0;
  for (LossTerm t : kAllLossTerms) {
    if (losses.has(t) && weights[t] != 0.0) total += weights[t] * losses[t];
  }
  return total;
}

template <typename S>
ad::Var<S> total_loss(const LossSet<S>& losses, const LossWeights& weights) {
  std::optional<ad::Var<S>> total;
  std::optional<ad::Var<S>> any;
  for (LossTerm t : kAllLossTerms) {
    const auto& term = losses[t];
    if (!term) continue;
    if (!any) any = term;
    if (weights[t] == 0.0) continue;
    if (!total) {
      total = weights[t] * *term;
    } else {
      total = total->tape->lincomb(*total, 1.0, *term, weights[t], 0.0);
    }
  }
  if (total) return *total;
  if (!any) throw ConfigError("total_loss: no loss terms recorded");
  return 0.0 * *any;
}

template ad::Var<double> total_loss(const LossSet<double>&, const LossWeights&);
template ad::Var<ad::HvpScalar> total_loss(const LossSet<ad::HvpScalar>&, const LossWeights&);

// ---------------------------------------------------------------- optimizers

OptimizerState OptimizerState::create(OptimizerKind kind, const ParamVector& params, const AdamConfig& adam,
                                      const SoapConfig& soap) {
  OptimizerState s;
  s.kind = kind;
  s.adam = adam;
  s.soap = soap;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.blocks.resize(static_cast<std::size_t>(params.num_blocks()));
  if (kind == OptimizerKind::Soap) {
    if (soap.refresh_period < 1) throw ConfigError("SOAP refresh period must be >= 1");
    for (int b = 0; b < params.num_blocks(); ++b) {
      const auto& info = params.info(b);
      SoapBlock& blk = s.blocks[static_cast<std::size_t>(b)];
      blk.active = info.rows > 1 && info.cols > 1;
      if (!blk.active) continue;
      blk.L = Eigen::MatrixXd::Zero(info.rows, info.rows);
      blk.R = Eigen::MatrixXd::Zero(info.cols, info.cols);
      blk.QL = Eigen::MatrixXd::Identity(info.rows, info.rows);
      blk.QR = Eigen::MatrixXd::Identity(info.cols, info.cols);
    }
  }
  return s;
}

namespace {

void check_step_shapes(const OptimizerState& state, const ParamVector& params, const ParamVector& grad) {
  if (!params.same_layout(grad) || !params.same_layout(state.m)) {
    throw ShapeError("optimizer: parameter, gradient and moment layouts differ");
  }
}

// Adam update for one flat segment; g, m, v are in the same basis.
template <typename G, typename M, typename V, typename Out>
void adam_moments(const AdamConfig& c, long step, const G& g, M&& m, V&& v, Out&& direction) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  direction = (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
}

bool eigenbasis(const Eigen::MatrixXd& A, double damping, Eigen::MatrixXd& Q) {
  const Eigen::MatrixXd damped = A + damping * Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(damped);
  if (es.info() != Eigen::Success || !es.eigenvectors().allFinite()) return false;
  Q = es.eigenvectors();
  return true;
}

}  // namespace

void adam_step(OptimizerState& state, ParamVector& params, const ParamVector& grad, double lr) {
  check_step_shapes(state, params, grad);
  ++state.step;
  Eigen::VectorXd dir(params.size());
  adam_moments(state.adam, state.step, grad.flat(), state.m.flat(), state.v.flat(), dir);
  params.flat() -= lr * dir;
}

void soap_step(OptimizerState& state, ParamVector& params, const ParamVector& grad, double lr) {
  check_step_shapes(state, params, grad);
  if (state.blocks.size() != static_cast<std::size_t>(params.num_blocks())) {
    throw ShapeError("soap_step: state was created for a different parameter layout");
  }
  ++state.step;
  for (int b = 0; b < params.num_blocks(); ++b) {
    SoapBlock& blk = state.blocks[static_cast<std::size_t>(b)];
    const auto G = grad.block(b);
    if (!blk.active) {
      Eigen::VectorXd dir(G.size());
      adam_moments(state.adam, state.step, grad.segment(b), state.m.segment(b), state.v.segment(b), dir);
      params.segment(b) -= lr * dir;
      continue;
    }
    const Eigen::MatrixXd Gr = blk.QL.transpose() * G * blk.QR;
    Eigen::MatrixXd dir(G.rows(), G.cols());
    adam_moments(state.adam, state.step, Gr, state.m.block(b), state.v.block(b), dir);
    params.block(b) -= lr * (blk.QL * dir * blk.QR.transpose());

    blk.L.noalias() += G * G.transpose();
    blk.R.noalias() += G.transpose() * G;
    if (state.step % state.soap.refresh_period != 0) continue;

    Eigen::MatrixXd QL, QR;
    const bool ok = eigenbasis(blk.L, state.soap.damping, QL) && eigenbasis(blk.R, state.soap.damping, QR);
    if (!ok) {
      std::clog << fmt::format("warning: SOAP eigendecomposition failed for block '{}'; using Adam\n",
                               params.info(b).name);
      // Moments back to the parameter basis, then plain Adam from here on.
      const Eigen::MatrixXd ML = blk.QL, MR = blk.QR;
      state.m.block(b) = ML * state.m.block(b) * MR.transpose();
      state.v.block(b) = ML.cwiseAbs2() * state.v.block(b) * MR.cwiseAbs2().transpose();
      blk.active = false;
      continue;
    }
    const Eigen::MatrixXd ML = QL.transpose() * blk.QL;
    const Eigen::MatrixXd MR = QR.transpose() * blk.QR;
    state.m.block(b) = ML * state.m.block(b) * MR.transpose();
    state.v.block(b) = ML.cwiseAbs2() * state.v.block(b) * MR.cwiseAbs2().transpose();
    blk.QL = std::move(QL);
    blk.QR = std::move(QR);
  }
}

void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad, double lr) {
  if (state.kind == OptimizerKind::Soap) {
    soap_step(state, params, grad, lr);
  } else {
    adam_step(state, params, grad, lr);
  }
}

// ---------------------------------------------------------------- plan

void TrainPlan::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("initial learning rate must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("learning-rate decay rate must be in (0, 1]");
  if (decay_steps < 1) throw ConfigError("learning-rate decay steps must be >= 1");
  if (!(anneal_alpha > 0.0 && anneal_alpha <= 1.0)) throw ConfigError("annealing alpha must be in (0, 1]");
  if (anneal_period < 1) throw ConfigError("annealing period must be >= 1");
  weights.validate();
  if (time_windows < 1) throw ConfigError("time-marching window count M_tm must be >= 1");
  if (causal_chunks < 1) throw ConfigError("causal chunk count M_cau must be >= 1");
  if (causal && !(causal_threshold > 0.0)) throw ConfigError("causal threshold eta_cau must be > 0");
  if (n_ode < 2 * time_windows) throw ConfigError("N_ODE must give at least two collocation points per window");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (dataset_groups < 1 || dataset_per_group < 1) throw ConfigError("dataset counts must be >= 1");
  if (max_iterations < 1) throw ConfigError("max iterations must be >= 1");
  if (!(stop_tolerance >= 0.0) || stop_horizon < 1) throw ConfigError("invalid stopping rule");
  if (log_interval < 1) throw ConfigError("log interval must be >= 1");
}

double lr_schedule(long step, const TrainPlan& plan) {
  if (step < 0) throw DomainError("lr_schedule: step must be >= 0");
  return plan.lr0 * std::pow(plan.decay_rate, static_cast<double>(step) / static_cast<double>(plan.decay_steps));
}

LossWeights anneal_weights(const LossWeights& current,
                           const std::array<std::optional<Eigen::VectorXd>, kNumLossTerms>& grads, double alpha) {
  const auto& ref = grads[static_cast<std::size_t>(LossTerm::Ode1)];
  if (!ref) throw ConfigError("anneal_weights: reference gradient (L_ODE1) missing");
  const double ref_max = ref->cwiseAbs().maxCoeff();
  LossWeights out = current;
  for (LossTerm t : kAllLossTerms) {
    if (t == LossTerm::Ode1) continue;
    const auto& g = grads[static_cast<std::size_t>(t)];
    if (!g || g->size() == 0) continue;
    const double mean_abs = g->cwiseAbs().mean();
    if (!(mean_abs > 0.0) || !std::isfinite(mean_abs)) continue;
    out[t] = (1.0 - alpha) * current[t] + alpha * (ref_max / mean_abs);
  }
  return out;
}

int causal_schedule(double active_ode1, int active_chunks, int total_chunks, double threshold) {
  if (active_chunks < total_chunks && active_ode1 < threshold) return active_chunks + 1;
  return active_chunks;
}

Eigen::VectorXd collocation_grid(double t0, double length, int count) {
  if (count < 2) throw ConfigError("collocation needs at least two points");
  return Eigen::VectorXd::LinSpaced(count, t0, t0 + length);
}

// ---------------------------------------------------------------- losses

namespace {

template <typename S>
ad::Var<S> ode_residual_2(ad::Var<S> p, ad::Var<S> q, ad::Var<S> p_t, const OscillatorConfig& c) {
  const double w = c.omega();
  ad::Var<S> r = p_t + w * q;
  if (c.force == 0.0) return r;
  const double a = c.friction.a;
  const ad::Var<S> eta = p - c.v_bow;
  const ad::Var<S> e = ad::exp(0.5 - a * ad::square(eta));
  return r + (c.force * std::sqrt(2.0 * a)) * ad::cwise_product(eta, e);
}

template <typename S>
ad::Var<S> constant_column(ad::Tape<S>& tape, const Eigen::VectorXd& v) {
  if constexpr (std::is_same_v<S, double>) {
    return tape.constant(v);
  } else {
    return tape.constant(v.cast<S>());
  }
}

}  // namespace

template <typename S>
LossSet<S> ode_losses(const StateVars<S>& s, const OscillatorConfig& config) {
  if (!s.p_t || !s.q_t) throw ConfigError("ode_losses: states were recorded without time derivatives");
  LossSet<S> out;
  const ad::Var<S> r1 = *s.q_t - config.omega() * s.p;
  out[LossTerm::Ode1] = ad::mean(ad::square(r1));
  out[LossTerm::Ode2] = ad::mean(ad::square(ode_residual_2(s.p, s.q, *s.p_t, config)));
  return out;
}

template LossSet<double> ode_losses(const StateVars<double>&, const OscillatorConfig&);
template LossSet<ad::HvpScalar> ode_losses(const StateVars<ad::HvpScalar>&, const OscillatorConfig&);

template <typename S>
LossSet<S> pinn_losses(ad::Tape<S>& tape, const PinnModel& model, std::span<const ad::Var<S>> leaves,
                       const OscillatorConfig& config, const Eigen::VectorXd& t, const InitialCondition& ic) {
  if (t.size() == 0) throw ConfigError("pinn_losses: empty collocation set");
  LossSet<S> out = ode_losses(record_pinn(tape, model, leaves, t, true), config);
  const StateVars<S> s0 = record_pinn(tape, model, leaves, Eigen::VectorXd::Constant(1, model.t_start), false);
  out[LossTerm::Ic1] = ad::mean(ad::square(s0.p - ic.p0));
  out[LossTerm::Ic2] = ad::mean(ad::square(s0.q - ic.q0));
  return out;
}

template LossSet<double> pinn_losses(ad::Tape<double>&, const PinnModel&, std::span<const ad::Var<double>>,
                                     const OscillatorConfig&, const Eigen::VectorXd&, const InitialCondition&);
template LossSet<ad::HvpScalar> pinn_losses(ad::Tape<ad::HvpScalar>&, const PinnModel&,
                                            std::span<const ad::Var<ad::HvpScalar>>, const OscillatorConfig&,
                                            const Eigen::VectorXd&, const InitialCondition&);

LossValues pinn_losses(const PinnModel& model, const OscillatorConfig& config, const Eigen::VectorXd& t,
                       const InitialCondition& ic) {
  ad::Tape<double> tape;
  const auto leaves = ad::bind_parameters(tape, model.params);
  return pinn_losses<double>(tape, model, leaves, config, t, ic).values();
}

template <typename S>
LossSet<S> deeponet_losses(ad::Tape<S>& tape, const DeepOnetModel& model, std::span<const ad::Var<S>> leaves,
                           const OscillatorConfig& config, const Eigen::VectorXd& t, const Eigen::VectorXd& p0,
                           const Eigen::VectorXd& q0, const ObservationSet* observations) {
  if (t.size() == 0) throw ConfigError("deeponet_losses: empty batch");
  const DeepOnetRecord<S> rec = record_deeponet_with_initial(tape, model, leaves, t, p0, q0, true);
  LossSet<S> out = ode_losses(rec.state, config);
  out[LossTerm::Ic1] = ad::mean(ad::square(rec.initial.p - constant_column(tape, p0)));
  out[LossTerm::Ic2] = ad::mean(ad::square(rec.initial.q - constant_column(tape, q0)));
  if (observations) {
    if (observations->size() == 0) throw ConfigError("hybrid training needs a nonempty observation set");
    const StateVars<S> o =
        record_deeponet(tape, model, leaves, observations->t, observations->p0, observations->q0, false);
    out[LossTerm::Ob1] = ad::mean(ad::square(o.p - constant_column(tape, observations->p)));
    out[LossTerm::Ob2] = ad::mean(ad::square(o.q - constant_column(tape, observations->q)));
  }
  return out;
}

template LossSet<double> deeponet_losses(ad::Tape<double>&, const DeepOnetModel&, std::span<const ad::Var<double>>,
                                         const OscillatorConfig&, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                         const Eigen::VectorXd&, const ObservationSet*);
template LossSet<ad::HvpScalar> deeponet_losses(ad::Tape<ad::HvpScalar>&, const DeepOnetModel&,
                                                std::span<const ad::Var<ad::HvpScalar>>, const OscillatorConfig&,
                                                const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                const Eigen::VectorXd&, const ObservationSet*);

// ---------------------------------------------------------------- data

ObservationSet make_observations(const Trajectory& reference, double scale_t, int count) {
  if (count < 1) throw ConfigError("observation count must be >= 1");
  if (reference.size() < 2) throw ConfigError("observation trajectory needs at least two samples");
  if (reference.t0 != 0.0) throw ConfigError("observation trajectory must start at t = 0");
  const double window_samples = scale_t * reference.sample_rate;
  const auto per_window = static_cast<Eigen::Index>(std::llround(window_samples));
  if (per_window < 1 || std::abs(window_samples - static_cast<double>(per_window)) > 1e-6) {
    throw ConfigError(fmt::format("s^t = {} is not a whole number of samples at {} Hz", scale_t,
                                  reference.sample_rate));
  }
  const Eigen::Index last = reference.size() - 1;
  ObservationSet obs;
  obs.t.resize(count);
  obs.p0.resize(count);
  obs.q0.resize(count);
  obs.p.resize(count);
  obs.q.resize(count);
  for (int i = 0; i < count; ++i) {
    const Eigen::Index n = count == 1 ? 0 : (static_cast<Eigen::Index>(i) * last) / (count - 1);
    const Eigen::Index start = (n / per_window) * per_window;
    obs.t[i] = static_cast<double>(n - start) / reference.sample_rate;
    obs.p0[i] = reference.p[start];
    obs.q0[i] = reference.q[start];
    obs.p[i] = reference.p[n];
    obs.q[i] = reference.q[n];
  }
  return obs;
}

DeepOnetDataset build_deeponet_dataset(int groups, int per_group, double scale_t, double scale_pq,
                                       std::uint64_t seed) {
  if (groups < 1 || per_group < 1) throw ConfigError("dataset counts must be >= 1");
  if (!(scale_t > 0.0) || !(scale_pq > 0.0)) throw ConfigError("dataset scales must be positive");
  DeepOnetDataset d;
  d.groups = groups;
  d.per_group = per_group;
  const Eigen::Index rows = static_cast<Eigen::Index>(groups) * per_group;
  d.t.resize(rows);
  d.p0.resize(rows);
  d.q0.resize(rows);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ic(-scale_pq, scale_pq);
  std::uniform_real_distribution<double> time(0.0, scale_t);
  Eigen::Index row = 0;
  for (int g = 0; g < groups; ++g) {
    const double p0 = ic(rng);
    const double q0 = ic(rng);
    for (int k = 0; k < per_group; ++k, ++row) {
      d.t[row] = time(rng);
      d.p0[row] = p0;
      d.q0[row] = q0;
    }
  }
  return d;
}

// ---------------------------------------------------------------- history

void write_loss_history_csv(std::ostream& out, const LossHistory& history) {
  out << "step,lr";
  for (LossTerm t : kAllLossTerms) out << ",L_" << loss_term_name(t);
  for (LossTerm t : kAllLossTerms) out << ",lambda_" << loss_term_name(t);
  out << ",window\n";
  for (const HistoryRow& r : history) {
    out << r.step << fmt::format(",{:.17g}", r.lr);
    for (LossTerm t : kAllLossTerms) {
      out << ',';
      if (r.losses.has(t)) out << fmt::format("{:.17g}", r.losses[t]);
    }
    for (LossTerm t : kAllLossTerms) {
      out << ',';
      if (r.losses.has(t)) out << fmt::format("{:.17g}", r.weights[t]);
    }
    out << ',' << r.window << '\n';
  }
}

// ---------------------------------------------------------------- loop

namespace {

enum class Action { Continue, Stop, ResetStopRule };

// Tape matrices are large and short-lived. Keeping freed blocks on the heap
// instead of returning them to the OS avoids page faults on every step.
void retain_heap_buffers() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

// One optimization run. `build(tape, leaves, step)` records the loss terms for
// this step; `monitor(step, values, converged)` runs before the parameter
// update and may stop, or reset the stopping rule after changing the problem.
template <typename Build, typename Monitor>
long optimize(ParamVector& params, const TrainPlan& plan, LossWeights& weights, int window, LossHistory& history,
              bool& converged, Build&& build, Monitor&& monitor) {
  retain_heap_buffers();
  OptimizerState opt = OptimizerState::create(plan.optimizer, params, plan.adam, plan.soap);
  ParamVector last_finite = params;
  double baseline = 0.0;
  double best = 0.0;
  long baseline_step = 0;
  converged = false;
  long step = 0;
  for (; step < plan.max_iterations; ++step) {
    ad::Tape<double> tape;
    const auto leaves = ad::bind_parameters(tape, params);
    const LossSet<double> terms = build(tape, std::span<const ad::Var<double>>(leaves), step);
    const LossValues values = terms.values();

    if (plan.annealing && step % plan.anneal_period == 0) {
      std::array<std::optional<Eigen::VectorXd>, kNumLossTerms> grads;
      for (LossTerm t : kAllLossTerms) {
        if (terms[t]) grads[static_cast<std::size_t>(t)] = ad::gradient(*terms[t], params).flat();
      }
      weights = anneal_weights(weights, grads, plan.anneal_alpha);
    }

    const ad::Var<double> total = total_loss(terms, weights);
    const double loss = ad::scalar_value(total);
    ParamVector grad = ad::gradient(total, params);
    if (!std::isfinite(loss) || !grad.flat().allFinite()) {
      throw TrainingError(fmt::format("non-finite loss at window {} step {}", window, step), last_finite, step,
                        window);
    }
    last_finite = params;

    const double lr = lr_schedule(step, plan);
    if (step % plan.log_interval == 0) history.push_back({window, step, lr, values, weights});

    if (step == baseline_step) {
      baseline = loss;
      best = loss;
    }
    best = std::min(best, loss);
    bool stop_rule = false;
    if (step - baseline_step >= plan.stop_horizon) {
      stop_rule = baseline - best < plan.stop_tolerance * baseline;
      baseline = best;
      baseline_step = step;
    }

    const Action action = monitor(step, values, stop_rule);
    if (action == Action::Stop) {
      converged = stop_rule;
      break;
    }
    if (action == Action::ResetStopRule) {
      baseline_step = step + 1;
    }
    optimizer_step(opt, params, grad, lr);
  }
  return step;
}

LossWeights initial_weights(const TrainPlan& plan) {
  return plan.annealing ? LossWeights::unit() : plan.weights;
}

}  // namespace

PinnWindowResult train_pinn_window(int window, const TrainPlan& plan, const OscillatorConfig& config,
                                   const InitialCondition& ic, const NetArch& arch, double scale_t,
                                   double scale_pq) {
  plan.validate();
  config.validate();
  if (window < 0 || window >= plan.time_windows) throw ConfigError("window index out of range");
  PinnWindowResult r;
  r.ic = ic;
  const double t0 = window * scale_t;
  r.model = PinnModel::create(arch, scale_t, scale_pq, plan.seed + 16 * static_cast<std::uint64_t>(window), t0);
  r.weights = initial_weights(plan);

  const Eigen::VectorXd grid = collocation_grid(t0, scale_t, plan.n_ode / plan.time_windows);
  const int chunks = plan.causal ? plan.causal_chunks : 1;
  // Number of grid points inside the first k chunks.
  auto prefix = [&](int k) {
    const double edge = t0 + scale_t * static_cast<double>(k) / chunks;
    Eigen::Index n = 0;
    while (n < grid.size() && grid[n] <= edge + 1e-12 * scale_t) ++n;
    return std::max<Eigen::Index>(n, 2);
  };
  r.active_chunks = 1;
  Eigen::VectorXd active = grid.head(prefix(1));
  ParamVector checkpoint = r.model.params;

  auto build = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> leaves, long) {
    return pinn_losses<double>(tape, r.model, leaves, config, active, ic);
  };
  auto monitor = [&](long, const LossValues& values, bool stop_rule) {
    if (plan.causal) {
      const int next = causal_schedule(values[LossTerm::Ode1], r.active_chunks, chunks, plan.causal_threshold);
      if (next != r.active_chunks) {
        checkpoint = r.model.params;
        r.active_chunks = next;
        active = grid.head(prefix(next));
        return Action::ResetStopRule;
      }
    }
    if (!stop_rule) return Action::Continue;
    if (plan.causal && r.active_chunks > 1 &&
        values[LossTerm::Ode1] > plan.causal_bias_factor * plan.causal_threshold) {
      r.model.params = checkpoint;
      --r.active_chunks;
      active = grid.head(prefix(r.active_chunks));
      r.stopped_early = true;
    }
    return Action::Stop;
  };
  r.steps = optimize(r.model.params, plan, r.weights, window, r.history, r.converged, build, monitor);
  r.collocation = active;
  return r;
}

double PinnSolution::t_end() const {
  if (windows.empty()) return 0.0;
  const PinnModel& m = windows.back().model;
  return m.t_start + m.scale_t;
}

StateBatch PinnSolution::eval(const Eigen::VectorXd& t, bool with_time_derivative) const {
  if (windows.empty()) throw ConfigError("PinnSolution::eval: no trained windows");
  StateBatch out;
  out.p.resize(t.size());
  out.q.resize(t.size());
  if (with_time_derivative) {
    out.p_t.resize(t.size());
    out.q_t.resize(t.size());
  }
  const double width = windows.front().model.scale_t;
  const auto last = static_cast<long>(windows.size()) - 1;
  for (long w = 0; w <= last; ++w) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const long k = std::clamp(static_cast<long>(std::floor(t[i] / width)), 0L, last);
      if (k == w) rows.push_back(i);
    }
    if (rows.empty()) continue;
    Eigen::VectorXd local(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) local[static_cast<Eigen::Index>(j)] = t[rows[j]];
    ad::Tape<double> tape;
    const PinnModel& m = windows[static_cast<std::size_t>(w)].model;
    const auto leaves = ad::bind_parameters(tape, m.params);
    const StateVars<double> s = record_pinn<double>(tape, m, leaves, local, with_time_derivative);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out.p[rows[j]] = s.p.value()(jj, 0);
      out.q[rows[j]] = s.q.value()(jj, 0);
      if (with_time_derivative) {
        out.p_t[rows[j]] = s.p_t->value()(jj, 0);
        out.q_t[rows[j]] = s.q_t->value()(jj, 0);
      }
    }
  }
  return out;
}

PinnSolution train_pinn(const TrainPlan& plan, const OscillatorConfig& config, const InitialCondition& ic,
                        const NetArch& arch, double scale_t, double scale_pq) {
  PinnSolution sol;
  InitialCondition window_ic = ic;
  for (int w = 0; w < plan.time_windows; ++w) {
    sol.windows.push_back(train_pinn_window(w, plan, config, window_ic, arch, scale_t, scale_pq));
    const PinnModel& m = sol.windows.back().model;
    ad::Tape<double> tape;
    const auto leaves = ad::bind_parameters(tape, m.params);
    const auto end = record_pinn<double>(tape, m, leaves, Eigen::VectorXd::Constant(1, m.t_start + scale_t), false);
    window_ic = {end.p.value()(0, 0), end.q.value()(0, 0)};
  }
  return sol;
}

DeepOnetResult train_deeponet(const TrainPlan& plan, const OscillatorConfig& config, const DeepOnetDataset& dataset,
                              const NetArch& arch, double scale_t, double scale_pq,
                              const ObservationSet* observations) {
  plan.validate();
  config.validate();
  if (dataset.rows() == 0) throw ConfigError("train_deeponet: empty dataset");
  if (observations && observations->size() == 0) {
    throw ConfigError("hybrid training needs a nonempty observation set");
  }
  DeepOnetResult r;
  r.model = DeepOnetModel::create(arch, scale_t, scale_pq, plan.seed);
  r.weights = initial_weights(plan);

  const Eigen::Index rows = dataset.rows();
  const Eigen::Index batch = std::min<Eigen::Index>(plan.batch_size, rows);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(plan.seed + 7);
  Eigen::Index cursor = rows;  // forces a shuffle on the first step
  Eigen::VectorXd bt(batch), bp(batch), bq(batch);

  auto build = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> leaves, long) {
    if (cursor + batch > rows) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    for (Eigen::Index i = 0; i < batch; ++i) {
      const Eigen::Index k = order[static_cast<std::size_t>(cursor + i)];
      bt[i] = dataset.t[k];
      bp[i] = dataset.p0[k];
      bq[i] = dataset.q0[k];
    }
    cursor += batch;
    return deeponet_losses<double>(tape, r.model, leaves, config, bt, bp, bq, observations);
  };
  auto monitor = [&](long, const LossValues&, bool stop_rule) { return stop_rule ? Action::Stop : Action::Continue; };
  r.steps = optimize(r.model.params, plan, r.weights, 0, r.history, r.converged, build, monitor);
  return r;
}

}  // namespace bowsim
