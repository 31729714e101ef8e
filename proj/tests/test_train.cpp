#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "bowsim/errors.hpp"
#include "bowsim/friction.hpp"
#include "bowsim/train.hpp"

using namespace bowsim;

namespace {

NetArch tiny_arch() {
  NetArch a;
  a.width = 8;
  a.depth = 1;
  a.rff_size = 4;
  return a;
}

TrainPlan quick_plan(long iterations) {
  TrainPlan p;
  p.n_ode = 64;
  p.max_iterations = iterations;
  p.stop_horizon = 1000000;
  p.log_interval = 1;
  return p;
}

ParamVector two_block_params() {
  ParamVector p;
  p.add_block("W", 4, 3);
  p.add_block("b", 1, 3);
  return p;
}

ParamVector random_like(const ParamVector& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ParamVector out = layout.zeros_like();
  for (Eigen::Index i = 0; i < out.size(); ++i) out.flat()[i] = n(rng);
  return out;
}

LossValues unit_values(bool with_observations) {
  LossValues v;
  for (LossTerm t : kAllLossTerms) {
    const bool ob = t == LossTerm::Ob1 || t == LossTerm::Ob2;
    v.value[static_cast<std::size_t>(t)] = 1.0;
    v.present[static_cast<std::size_t>(t)] = with_observations || !ob;
  }
  return v;
}

}  // namespace

TEST_CASE("ODE losses vanish on the exact frictionless solution") {
  OscillatorConfig c;
  c.force = 0.0;
  const double w = c.omega();
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(200, 0.0, 0.02);
  const Eigen::VectorXd p = (w * t).array().cos().matrix();
  const Eigen::VectorXd q = (w * t).array().sin().matrix();
  ad::Tape<double> tape;
  StateVars<double> s{tape.constant(p), tape.constant(q), tape.constant(-w * q), tape.constant(w * p)};
  const LossValues v = ode_losses(s, c).values();
  CHECK(v[LossTerm::Ode1] < 1e-12);
  CHECK(v[LossTerm::Ode2] < 1e-12);
  CHECK_FALSE(v.has(LossTerm::Ic1));
}

TEST_CASE("zero model residual is the friction at rest") {
  OscillatorConfig c;
  PinnModel m = PinnModel::create(tiny_arch(), 0.01, 0.2, 3);
  m.params.flat().setZero();
  const Eigen::VectorXd t = collocation_grid(0.0, 0.01, 33);
  const LossValues v = pinn_losses(m, c, t, InitialCondition{});
  const double r = c.force * phi(-c.v_bow, c.friction);
  CHECK(v[LossTerm::Ode1] == 0.0);
  CHECK(v[LossTerm::Ode2] == doctest::Approx(r * r).epsilon(1e-14));
  CHECK(v[LossTerm::Ic1] == 0.0);
  CHECK(v[LossTerm::Ic2] == 0.0);
  CHECK_FALSE(v.has(LossTerm::Ob1));
}

TEST_CASE("total loss weighting") {
  const LossValues physics = unit_values(false);
  CHECK(total_loss(physics, LossWeights::manual()) == 2000020.0);
  CHECK(total_loss(unit_values(true), LossWeights::manual()) == 4000020.0);

  LossWeights zero;
  zero.lambda.fill(0.0);
  CHECK(total_loss(physics, zero) == 0.0);

  LossValues v = physics;
  v.value = {0.3, 1.7, 2e-3, 5e-4, 0.0, 0.0};
  LossWeights a = LossWeights::manual();
  LossWeights b = a;
  for (double& x : b.lambda) x *= 3.0;
  CHECK(total_loss(v, b) == doctest::Approx(3.0 * total_loss(v, a)).epsilon(1e-15));

  // Observation weight zero reproduces the physics-only loss bit for bit.
  LossWeights no_ob = a;
  no_ob[LossTerm::Ob1] = 0.0;
  no_ob[LossTerm::Ob2] = 0.0;
  LossValues with_ob = v;
  with_ob.value[4] = 11.0;
  with_ob.value[5] = 13.0;
  with_ob.present[4] = with_ob.present[5] = true;
  CHECK(total_loss(with_ob, no_ob) == total_loss(v, a));
}

TEST_CASE("hybrid loss with zero observation weight matches physics-only gradient") {
  OscillatorConfig c;
  const DeepOnetModel m = DeepOnetModel::create([] {
    NetArch a = tiny_arch();
    a.output_dim = 4;
    return a;
  }(), 0.01, 0.35, 9);
  const DeepOnetDataset d = build_deeponet_dataset(3, 5, 0.01, 0.35, 1);
  const Trajectory ref = simulate(c, {0.1, -0.05}, 44100.0, 0.02);
  const ObservationSet obs = make_observations(ref, 0.01, 17);

  DeepOnetLoss plain{&m, c, d.t, d.p0, d.q0, nullptr, LossWeights::manual()};
  DeepOnetLoss hybrid = plain;
  hybrid.observations = &obs;
  hybrid.weights[LossTerm::Ob1] = 0.0;
  hybrid.weights[LossTerm::Ob2] = 0.0;
  ParamVector g1, g2;
  const double l1 = ad::value_and_grad(plain, m.params, g1);
  const double l2 = ad::value_and_grad(hybrid, m.params, g2);
  CHECK(l1 == l2);
  CHECK((g1.flat().array() == g2.flat().array()).all());
}

TEST_CASE("annealing fixed points") {
  std::array<std::optional<Eigen::VectorXd>, kNumLossTerms> grads;
  grads[0] = Eigen::VectorXd::Constant(5, 2.0);
  grads[1] = Eigen::VectorXd::Constant(5, 2.0);
  grads[2] = Eigen::VectorXd::Constant(5, 0.2);
  grads[3] = Eigen::VectorXd::Zero(5);
  LossWeights w = LossWeights::unit();
  for (int k = 0; k < 400; ++k) w = anneal_weights(w, grads, 0.1);
  CHECK(w[LossTerm::Ode1] == 1.0);
  CHECK(w[LossTerm::Ode2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[LossTerm::Ic1] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(w[LossTerm::Ic2] == 1.0);  // zero gradient keeps its weight

  const LossWeights one = anneal_weights(LossWeights::unit(), grads, 0.1);
  CHECK(one[LossTerm::Ic1] == doctest::Approx(0.9 + 0.1 * 10.0));

  grads[0].reset();
  CHECK_THROWS_AS(anneal_weights(w, grads, 0.1), ConfigError);
}

TEST_CASE("Adam step sizes") {
  ParamVector p = two_block_params();
  OptimizerState s = OptimizerState::create(OptimizerKind::Adam, p);
  ParamVector g = p.zeros_like();
  g.flat().setOnes();
  adam_step(s, p, g, 0.003);
  CHECK(p.flat()[0] == doctest::Approx(-0.003 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p.flat().maxCoeff() == p.flat().minCoeff());

  ParamVector q = two_block_params();
  OptimizerState s2 = OptimizerState::create(OptimizerKind::Adam, q);
  adam_step(s2, q, q.zeros_like(), 0.003);
  CHECK(q.flat().isZero(0.0));

  ParamVector a = random_like(two_block_params(), 1), b = a;
  OptimizerState sa = OptimizerState::create(OptimizerKind::Adam, a);
  OptimizerState sb = OptimizerState::create(OptimizerKind::Adam, b);
  for (int k = 0; k < 20; ++k) {
    const ParamVector gk = random_like(a, 100 + k);
    adam_step(sa, a, gk, 1e-2);
    adam_step(sb, b, gk, 1e-2);
  }
  CHECK((a.flat().array() == b.flat().array()).all());

  ParamVector wrong;
  wrong.add_block("x", 2, 2);
  CHECK_THROWS_AS(adam_step(sa, a, wrong, 1e-2), ShapeError);
}

TEST_CASE("SOAP first step equals Adam") {
  ParamVector a = random_like(two_block_params(), 2), b = a;
  OptimizerState sa = OptimizerState::create(OptimizerKind::Adam, a);
  OptimizerState sb = OptimizerState::create(OptimizerKind::Soap, b);
  CHECK(sb.blocks[0].active);
  CHECK_FALSE(sb.blocks[1].active);
  const ParamVector g = random_like(a, 3);
  adam_step(sa, a, g, 1e-3);
  soap_step(sb, b, g, 1e-3);
  CHECK((a.flat() - b.flat()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("SOAP on diagonal gradients reduces to Adam") {
  // With G diagonal, both factors stay diagonal and their eigenbases are
  // signed permutations of the identity.
  ParamVector layout;
  layout.add_block("D", 3, 3);
  ParamVector a = layout.zeros_like(), b = layout.zeros_like();
  OptimizerState sa = OptimizerState::create(OptimizerKind::Adam, a);
  OptimizerState sb = OptimizerState::create(OptimizerKind::Soap, b);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int k = 0; k < 35; ++k) {
    ParamVector g = layout.zeros_like();
    for (int i = 0; i < 3; ++i) g.block(0)(i, i) = u(rng) * (i + 1);
    adam_step(sa, a, g, 1e-2);
    soap_step(sb, b, g, 1e-2);
  }
  CHECK((a.flat() - b.flat()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("SOAP eigenbases stay orthogonal") {
  ParamVector p = random_like(two_block_params(), 5);
  OptimizerState s = OptimizerState::create(OptimizerKind::Soap, p);
  for (int k = 0; k < 40; ++k) soap_step(s, p, random_like(p, 200 + k), 1e-3);
  const SoapBlock& blk = s.blocks[0];
  const Eigen::MatrixXd I4 = Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd I3 = Eigen::MatrixXd::Identity(3, 3);
  CHECK((blk.QL.transpose() * blk.QL - I4).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((blk.QR.transpose() * blk.QR - I3).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(p.flat().allFinite());
}

TEST_CASE("optimizers decrease a convex quadratic") {
  for (OptimizerKind kind : {OptimizerKind::Adam, OptimizerKind::Soap}) {
    ParamVector p = random_like(two_block_params(), 6);
    const Eigen::VectorXd scale = Eigen::VectorXd::LinSpaced(p.size(), 1.0, 4.0);
    auto loss = [&](const ParamVector& x) { return 0.5 * x.flat().cwiseProduct(scale).squaredNorm(); };
    OptimizerState s = OptimizerState::create(kind, p);
    const double start = loss(p);
    double prev = start;
    for (int k = 0; k < 1000; ++k) {
      ParamVector g = p.zeros_like();
      g.flat() = p.flat().cwiseProduct(scale).cwiseProduct(scale);
      optimizer_step(s, p, g, 1e-2);
      if (k == 0) CHECK(loss(p) < prev);
      prev = loss(p);
    }
    INFO("optimizer " << static_cast<int>(kind));
    CHECK(prev < 1e-3 * start);
  }
}

TEST_CASE("learning-rate schedule") {
  const TrainPlan plan;
  CHECK(lr_schedule(0, plan) == 0.003);
  CHECK(lr_schedule(10000, plan) == doctest::Approx(0.0027).epsilon(1e-14));
  CHECK(lr_schedule(20000, plan) == doctest::Approx(0.00243).epsilon(1e-14));
  double prev = lr_schedule(0, plan);
  for (long s = 1; s < 50000; s += 997) {
    const double lr = lr_schedule(s, plan);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_schedule(-1, plan), DomainError);
}

TEST_CASE("causal schedule grows one chunk at a time") {
  CHECK(causal_schedule(0.05, 1, 4, 0.1) == 2);
  CHECK(causal_schedule(0.2, 1, 4, 0.1) == 1);
  CHECK(causal_schedule(0.0, 4, 4, 0.1) == 4);
  CHECK(causal_schedule(0.0, 1, 1, 0.1) == 1);
  int k = 1;
  for (int step = 0; step < 10; ++step) {
    const int next = causal_schedule(0.0, k, 5, 0.1);
    CHECK(next - k <= 1);
    k = next;
  }
  CHECK(k == 5);
}

TEST_CASE("collocation grid") {
  const Eigen::VectorXd g = collocation_grid(0.01, 0.01, 11);
  CHECK(g[0] == 0.01);
  CHECK(g[10] == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(g[5] == doctest::Approx(0.015).epsilon(1e-15));
  CHECK_THROWS_AS(collocation_grid(0.0, 1.0, 1), ConfigError);
}

TEST_CASE("DeepONet dataset ranges and determinism") {
  const DeepOnetDataset d = build_deeponet_dataset(20, 30, 0.01, 0.35, 42);
  REQUIRE(d.rows() == 600);
  CHECK(d.t.minCoeff() >= 0.0);
  CHECK(d.t.maxCoeff() <= 0.01);
  CHECK(d.p0.cwiseAbs().maxCoeff() <= 0.35);
  CHECK(d.q0.cwiseAbs().maxCoeff() <= 0.35);
  for (int g = 0; g < 20; ++g) {
    CHECK((d.p0.segment(30 * g, 30).array() == d.p0[30 * g]).all());
    CHECK((d.q0.segment(30 * g, 30).array() == d.q0[30 * g]).all());
  }
  const DeepOnetDataset e = build_deeponet_dataset(20, 30, 0.01, 0.35, 42);
  CHECK((d.t.array() == e.t.array()).all());
  CHECK((d.p0.array() == e.p0.array()).all());
  const DeepOnetDataset f = build_deeponet_dataset(20, 30, 0.01, 0.35, 43);
  CHECK((d.t.array() != f.t.array()).any());
}

TEST_CASE("observations use window-local time and window-start states") {
  OscillatorConfig c;
  const Trajectory ref = simulate(c, {0.0, 0.0}, 4000.0, 0.03);
  const ObservationSet obs = make_observations(ref, 0.01, 31);
  REQUIRE(obs.size() == 31);
  for (Eigen::Index i = 0; i < obs.size(); ++i) {
    CHECK(obs.t[i] >= 0.0);
    CHECK(obs.t[i] < 0.01);
  }
  // Row 11 sits at t = 0.011 s, one millisecond into the second window.
  CHECK(obs.t[11] == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(obs.p0[11] == ref.p[40]);
  CHECK(obs.q0[11] == ref.q[40]);
  CHECK(obs.p[11] == ref.p[44]);
  CHECK_THROWS_AS(make_observations(ref, 0.01, 0), ConfigError);
  CHECK_THROWS_AS(make_observations(ref, 0.00013, 5), ConfigError);
}

TEST_CASE("hybrid training rejects an empty observation set") {
  OscillatorConfig c;
  TrainPlan plan = quick_plan(2);
  plan.batch_size = 8;
  const DeepOnetDataset d = build_deeponet_dataset(2, 4, 0.01, 0.35, 1);
  NetArch a = tiny_arch();
  a.output_dim = 4;
  const ObservationSet empty;
  CHECK_THROWS_AS(train_deeponet(plan, c, d, a, 0.01, 0.35, &empty), ConfigError);
}

TEST_CASE("PINN window training records history with fixed manual weights") {
  OscillatorConfig c;
  TrainPlan plan = quick_plan(30);
  const PinnWindowResult r = train_pinn_window(0, plan, c, {0.0, 0.0}, tiny_arch(), 0.01, 0.2);
  CHECK(r.steps == 30);
  REQUIRE(r.history.size() == 30);
  CHECK(r.history.back().step == 29);
  for (const HistoryRow& row : r.history) {
    CHECK(row.weights.lambda == LossWeights::manual().lambda);
    CHECK(row.losses.has(LossTerm::Ode1));
    CHECK_FALSE(row.losses.has(LossTerm::Ob1));
  }
  CHECK(total_loss(r.history.back().losses, r.weights) < total_loss(r.history.front().losses, r.weights));

  std::ostringstream csv;
  write_loss_history_csv(csv, r.history);
  const std::string text = csv.str();
  CHECK(text.rfind("step,lr,L_ODE1,L_ODE2,L_IC1,L_IC2,L_ob1,L_ob2,lambda_ODE1", 0) == 0);
}

TEST_CASE("annealed training starts from unit weights") {
  OscillatorConfig c;
  TrainPlan plan = quick_plan(3);
  plan.annealing = true;
  plan.anneal_period = 2;
  const PinnWindowResult r = train_pinn_window(0, plan, c, {0.0, 0.0}, tiny_arch(), 0.01, 0.2);
  REQUIRE(r.history.size() == 3);
  CHECK(r.history[0].weights[LossTerm::Ode1] == 1.0);
  CHECK(r.history[0].weights[LossTerm::Ode2] != 1.0);  // updated at step 0 from unit start
  CHECK(r.history[1].weights.lambda == r.history[0].weights.lambda);
}

TEST_CASE("time-marching windows chain their initial conditions") {
  OscillatorConfig c;
  TrainPlan plan = quick_plan(5);
  plan.time_windows = 3;
  plan.n_ode = 60;
  const PinnSolution sol = train_pinn(plan, c, {0.05, -0.02}, tiny_arch(), 0.01, 0.2);
  REQUIRE(sol.windows.size() == 3);
  CHECK(sol.t_end() == doctest::Approx(0.03));
  CHECK(sol.windows[0].ic.p0 == 0.05);
  for (int w = 1; w < 3; ++w) {
    const PinnModel& prev = sol.windows[static_cast<std::size_t>(w - 1)].model;
    const StateBatch edge = pinn_eval(prev, Eigen::VectorXd::Constant(1, 0.01 * w));
    CHECK(sol.windows[static_cast<std::size_t>(w)].ic.p0 == edge.p[0]);
    CHECK(sol.windows[static_cast<std::size_t>(w)].ic.q0 == edge.q[0]);
    CHECK(sol.windows[static_cast<std::size_t>(w)].model.t_start == doctest::Approx(0.01 * w));
  }
  // Each evaluation time is served by the window that contains it.
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(7, 0.0, 0.029);
  const StateBatch all = sol.eval(t);
  const StateBatch mid = pinn_eval(sol.windows[1].model, Eigen::VectorXd::Constant(1, t[3]));
  CHECK(all.p[3] == mid.p[0]);
}

TEST_CASE("causal training activates chunks in order") {
  OscillatorConfig c;
  TrainPlan plan = quick_plan(6);
  plan.causal = true;
  plan.causal_chunks = 4;
  plan.causal_threshold = 1e30;
  const PinnWindowResult all = train_pinn_window(0, plan, c, {0.0, 0.0}, tiny_arch(), 0.01, 0.2);
  CHECK(all.active_chunks == 4);
  CHECK(all.collocation.size() == plan.n_ode);

  plan.causal_threshold = 1e-300;
  const PinnWindowResult first = train_pinn_window(0, plan, c, {0.0, 0.0}, tiny_arch(), 0.01, 0.2);
  CHECK(first.active_chunks == 1);
  CHECK(first.collocation.maxCoeff() <= 0.0025 + 1e-15);
}

TEST_CASE("non-finite loss raises TrainingError with the last finite parameters") {
  OscillatorConfig c;
  TrainPlan plan = quick_plan(20);
  plan.lr0 = 1e200;
  try {
    (void)train_pinn_window(0, plan, c, {0.0, 0.0}, tiny_arch(), 0.01, 0.2);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.last_finite().flat().allFinite());
    CHECK(e.step() >= 1);
  }
}

TEST_CASE("plan validation") {
  TrainPlan p;
  p.lr0 = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = TrainPlan{};
  p.weights[LossTerm::Ic1] = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = TrainPlan{};
  p.n_ode = 3;
  p.time_windows = 2;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK_NOTHROW(TrainPlan{}.validate());
}
