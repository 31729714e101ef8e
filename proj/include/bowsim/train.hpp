#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bowsim/autodiff.hpp"
#include "bowsim/errors.hpp"
#include "bowsim/fdm.hpp"
#include "bowsim/nets.hpp"

namespace bowsim {

enum class LossTerm : int { Ode1 = 0, Ode2, Ic1, Ic2, Ob1, Ob2 };
inline constexpr int kNumLossTerms = 6;
inline constexpr std::array<LossTerm, kNumLossTerms> kAllLossTerms{LossTerm::Ode1, LossTerm::Ode2, LossTerm::Ic1,
                                                                  LossTerm::Ic2,  LossTerm::Ob1,  LossTerm::Ob2};

/// "ODE1", "ODE2", "IC1", "IC2", "ob1", "ob2".
std::string loss_term_name(LossTerm term);

struct LossWeights {
  std::array<double, kNumLossTerms> lambda{10.0, 10.0, 1e6, 1e6, 1e6, 1e6};

  double& operator[](LossTerm t) { return lambda[static_cast<std::size_t>(t)]; }
  double operator[](LossTerm t) const { return lambda[static_cast<std::size_t>(t)]; }

  /// Manual weights used without annealing.
  static LossWeights manual() { return {}; }
  /// Starting point for annealing.
  static LossWeights unit() { return {{1.0, 1.0, 1.0, 1.0, 1.0, 1.0}}; }

  void validate() const;
};

/// Scalar loss values; absent terms are not part of the objective.
struct LossValues {
  std::array<double, kNumLossTerms> value{};
  std::array<bool, kNumLossTerms> present{};

  double operator[](LossTerm t) const { return value[static_cast<std::size_t>(t)]; }
  bool has(LossTerm t) const { return present[static_cast<std::size_t>(t)]; }
};

/// Recorded loss terms on a tape.
template <typename S>
struct LossSet {
  std::array<std::optional<ad::Var<S>>, kNumLossTerms> terms;

  std::optional<ad::Var<S>>& operator[](LossTerm t) { return terms[static_cast<std::size_t>(t)]; }
  const std::optional<ad::Var<S>>& operator[](LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
  LossValues values() const;
};

/// Weighted sum over present terms, in term order. Terms with zero weight are
/// skipped, so a run with lambda_ob = 0 records the same graph as one without
/// observations.
double total_loss(const LossValues& losses, const LossWeights& weights);
template <typename S>
ad::Var<S> total_loss(const LossSet<S>& losses, const LossWeights& weights);

enum class OptimizerKind { Adam, Soap };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SoapConfig {
  int refresh_period = 10;
  double damping = 1e-6;
};

/// Per-block SOAP state. Only matrix blocks with both dimensions > 1 are preconditioned.
struct SoapBlock {
  bool active = false;
  Eigen::MatrixXd L, R;    ///< accumulated G G^T and G^T G
  Eigen::MatrixXd QL, QR;  ///< current eigenbases
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  AdamConfig adam;
  SoapConfig soap;
  long step = 0;
  ParamVector m;  ///< first moment (rotated basis for active SOAP blocks)
  ParamVector v;  ///< second moment (rotated basis for active SOAP blocks)
  std::vector<SoapBlock> blocks;

  static OptimizerState create(OptimizerKind kind, const ParamVector& params, const AdamConfig& adam = {},
                               const SoapConfig& soap = {});
};

/// Bias-corrected Adam.
void adam_step(OptimizerState& state, ParamVector& params, const ParamVector& grad, double lr);
/// Adam in the eigenbasis of the accumulated Shampoo factors; vectors fall back to Adam.
void soap_step(OptimizerState& state, ParamVector& params, const ParamVector& grad, double lr);
void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad, double lr);

struct TrainPlan {
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam;
  SoapConfig soap;
  double lr0 = 0.003;
  double decay_rate = 0.9;
  long decay_steps = 10000;

  bool annealing = false;
  double anneal_alpha = 0.1;
  long anneal_period = 100;
  LossWeights weights = LossWeights::manual();  ///< ignored for annealed terms, which start at 1

  int time_windows = 1;  ///< M_tm
  bool causal = false;
  int causal_chunks = 1;          ///< M_cau
  double causal_threshold = 0.1;  ///< eta_cau
  double causal_bias_factor = 10.0;

  int n_ode = 1000;  ///< PINN collocation points, split evenly over windows
  int n_ob = 1000;   ///< observation rows in hybrid mode
  int batch_size = 50000;
  int dataset_groups = 10000;
  int dataset_per_group = 1000;

  long max_iterations = 100000;  ///< per window
  double stop_tolerance = 1e-4;
  long stop_horizon = 2000;
  long log_interval = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

double lr_schedule(long step, const TrainPlan& plan);

/// lambda_i <- (1 - alpha) lambda_i + alpha max|grad L_ODE1| / mean|grad L_i| for every
/// present term except the reference. Terms with a zero mean gradient keep their weight.
LossWeights anneal_weights(const LossWeights& current,
                           const std::array<std::optional<Eigen::VectorXd>, kNumLossTerms>& grads, double alpha);

/// Next active chunk count: grows by one once the active-set L_ODE1 drops below the threshold.
int causal_schedule(double active_ode1, int active_chunks, int total_chunks, double threshold);

/// Equispaced times covering [t0, t0 + length].
Eigen::VectorXd collocation_grid(double t0, double length, int count);

/// L_ODE1 and L_ODE2 for recorded states that carry time derivatives.
template <typename S>
LossSet<S> ode_losses(const StateVars<S>& state, const OscillatorConfig& config);

template <typename S>
LossSet<S> pinn_losses(ad::Tape<S>& tape, const PinnModel& model, std::span<const ad::Var<S>> leaves,
                       const OscillatorConfig& config, const Eigen::VectorXd& t, const InitialCondition& ic);
LossValues pinn_losses(const PinnModel& model, const OscillatorConfig& config, const Eigen::VectorXd& t,
                       const InitialCondition& ic);

/// Weighted PINN loss over a fixed collocation set, usable with ad::grad / ad::hvp.
struct PinnLoss {
  const PinnModel* model;
  OscillatorConfig config;
  Eigen::VectorXd t;
  InitialCondition ic;
  LossWeights weights;

  template <typename S>
  ad::Var<S> operator()(ad::Tape<S>& tape, std::span<const ad::Var<S>> leaves) const {
    return total_loss(pinn_losses(tape, *model, leaves, config, t, ic), weights);
  }
};

/// Supervised rows for hybrid training. Times are local to a window of length
/// s^t and (p0, q0) is the reference state at that window's start.
struct ObservationSet {
  Eigen::VectorXd t, p0, q0, p, q;

  Eigen::Index size() const { return t.size(); }
};

/// `count` equispaced samples of a reference trajectory starting at t = 0.
ObservationSet make_observations(const Trajectory& reference, double scale_t, int count);

struct DeepOnetDataset {
  Eigen::VectorXd t, p0, q0;  ///< one row per (IC, t) pair
  int groups = 0;
  int per_group = 0;

  Eigen::Index rows() const { return t.size(); }
};

DeepOnetDataset build_deeponet_dataset(int groups, int per_group, double scale_t, double scale_pq,
                                       std::uint64_t seed);

template <typename S>
LossSet<S> deeponet_losses(ad::Tape<S>& tape, const DeepOnetModel& model, std::span<const ad::Var<S>> leaves,
                           const OscillatorConfig& config, const Eigen::VectorXd& t, const Eigen::VectorXd& p0,
                           const Eigen::VectorXd& q0, const ObservationSet* observations);

struct DeepOnetLoss {
  const DeepOnetModel* model;
  OscillatorConfig config;
  Eigen::VectorXd t, p0, q0;
  const ObservationSet* observations = nullptr;
  LossWeights weights;

  template <typename S>
  ad::Var<S> operator()(ad::Tape<S>& tape, std::span<const ad::Var<S>> leaves) const {
    return total_loss(deeponet_losses(tape, *model, leaves, config, t, p0, q0, observations), weights);
  }
};

struct HistoryRow {
  int window = 0;
  long step = 0;
  double lr = 0.0;
  LossValues losses;
  LossWeights weights;
};
using LossHistory = std::vector<HistoryRow>;

/// Header `step,lr,L_ODE1,...,L_ob2,lambda_ODE1,...,lambda_ob2` (plus `window`); absent terms are empty.
void write_loss_history_csv(std::ostream& out, const LossHistory& history);

/// Raised when the loss or its gradient stops being finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, ParamVector last_finite, long step, int window = 0)
      : Error(what), last_finite_(std::move(last_finite)), step_(step), window_(window) {}

  const ParamVector& last_finite() const { return last_finite_; }
  long step() const { return step_; }
  int window() const { return window_; }

 private:
  ParamVector last_finite_;
  long step_;
  int window_;
};

struct PinnWindowResult {
  PinnModel model;
  LossHistory history;
  LossWeights weights;  ///< final weights
  long steps = 0;
  int active_chunks = 1;
  bool stopped_early = false;  ///< causal training restored a checkpoint
  bool converged = false;
  InitialCondition ic;
  Eigen::VectorXd collocation;  ///< active set at the end
};

PinnWindowResult train_pinn_window(int window, const TrainPlan& plan, const OscillatorConfig& config,
                                   const InitialCondition& ic, const NetArch& arch, double scale_t,
                                   double scale_pq);

/// Time-marched PINN: window i covers [i s^t, (i+1) s^t].
struct PinnSolution {
  std::vector<PinnWindowResult> windows;

  double t_end() const;
  StateBatch eval(const Eigen::VectorXd& t, bool with_time_derivative = false) const;
};

PinnSolution train_pinn(const TrainPlan& plan, const OscillatorConfig& config, const InitialCondition& ic,
                        const NetArch& arch, double scale_t, double scale_pq);

struct DeepOnetResult {
  DeepOnetModel model;
  LossHistory history;
  LossWeights weights;
  long steps = 0;
  bool converged = false;
};

/// Mini-batch training; `observations` switches on the hybrid loss.
DeepOnetResult train_deeponet(const TrainPlan& plan, const OscillatorConfig& config, const DeepOnetDataset& dataset,
                              const NetArch& arch, double scale_t, double scale_pq,
                              const ObservationSet* observations = nullptr);

extern template LossSet<double> ode_losses(const StateVars<double>&, const OscillatorConfig&);
extern template LossSet<ad::HvpScalar> ode_losses(const StateVars<ad::HvpScalar>&, const OscillatorConfig&);
extern template LossSet<double> pinn_losses(ad::Tape<double>&, const PinnModel&, std::span<const ad::Var<double>>,
                                            const OscillatorConfig&, const Eigen::VectorXd&, const InitialCondition&);
extern template LossSet<ad::HvpScalar> pinn_losses(ad::Tape<ad::HvpScalar>&, const PinnModel&,
                                                   std::span<const ad::Var<ad::HvpScalar>>, const OscillatorConfig&,
                                                   const Eigen::VectorXd&, const InitialCondition&);
extern template LossSet<double> deeponet_losses(ad::Tape<double>&, const DeepOnetModel&,
                                                std::span<const ad::Var<double>>, const OscillatorConfig&,
                                                const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                const ObservationSet*);
extern template LossSet<ad::HvpScalar> deeponet_losses(ad::Tape<ad::HvpScalar>&, const DeepOnetModel&,
                                                       std::span<const ad::Var<ad::HvpScalar>>,
                                                       const OscillatorConfig&, const Eigen::VectorXd&,
                                                       const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                       const ObservationSet*);
extern template ad::Var<double> total_loss(const LossSet<double>&, const LossWeights&);
extern template ad::Var<ad::HvpScalar> total_loss(const LossSet<ad::HvpScalar>&, const LossWeights&);

}  // namespace bowsim
