#include "doctest.h"

#include <cmath>
#include <numeric>
#include <sstream>

#include "bowsim/errors.hpp"
#include "bowsim/nets.hpp"

using namespace bowsim;

namespace {

NetArch small_arch(int width = 12, int depth = 2, int output_dim = 1) {
  NetArch a;
  a.width = width;
  a.depth = depth;
  a.rff_size = width / 2;
  a.output_dim = output_dim;
  return a;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("RFF embedding at zero and its range") {
  const RffEmbedding emb = RffEmbedding::sample(2, 7, 1.0, 5);
  const Eigen::MatrixXd z = rff_embed(Eigen::MatrixXd::Zero(3, 2), emb);
  REQUIRE(z.cols() == 14);
  CHECK((z.leftCols(7).array() == 1.0).all());
  CHECK((z.rightCols(7).array() == 0.0).all());
  const Eigen::MatrixXd x = 10.0 * random_matrix(50, 2, 6);
  const Eigen::MatrixXd e = rff_embed(x, emb);
  CHECK(e.cwiseAbs().maxCoeff() <= 1.0);
  // cos^2 + sin^2 = 1 per feature pair
  CHECK(((e.leftCols(7).array().square() + e.rightCols(7).array().square()) - 1.0).abs().maxCoeff() < 1e-14);
}

TEST_CASE("RFF tangent matches central differences") {
  const RffEmbedding emb = RffEmbedding::sample(1, 5, 2.0, 8);
  const Eigen::MatrixXd x = random_matrix(6, 1, 9);
  const Eigen::MatrixXd xdot = Eigen::MatrixXd::Ones(6, 1);
  const double h = 1e-6;
  const Eigen::MatrixXd fd = (rff_embed(x.array() + h, emb) - rff_embed(x.array() - h, emb)) / (2.0 * h);
  const Eigen::MatrixXd an = rff_embed_tangent(x, xdot, emb);
  CHECK((fd - an).cwiseAbs().maxCoeff() < 1e-7 * std::max(1.0, an.cwiseAbs().maxCoeff()));
}

TEST_CASE("RFF matrices are reproducible from the seed") {
  CHECK(RffEmbedding::sample(2, 9, 1.5, 77).B == RffEmbedding::sample(2, 9, 1.5, 77).B);
  CHECK(RffEmbedding::sample(2, 9, 1.5, 77).B != RffEmbedding::sample(2, 9, 1.5, 78).B);
}

TEST_CASE("all-zero weights give zero output") {
  ParamVector params;
  const auto net = ModifiedFcnn::declare(params, "", FcnnShape{8, 8, 3, 2});
  const Eigen::MatrixXd out = fcnn_forward(net, params, random_matrix(5, 8, 1));
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 2);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gates select U when closed and V when saturated open") {
  ParamVector params;
  const auto net = ModifiedFcnn::declare(params, "", FcnnShape{6, 6, 2, 3});
  std::mt19937_64 rng(3);
  net.initialize(params, rng);
  params.block(net.b_u()) = random_matrix(1, 6, 4);
  params.block(net.b_v()) = random_matrix(1, 6, 5);
  params.block(net.b_o()) = random_matrix(1, 3, 6);
  const Eigen::MatrixXd X = random_matrix(10, 6, 7);
  const auto WU = params.block(net.w_u());
  const auto WV = params.block(net.w_v());
  const Eigen::MatrixXd U = ((X * WU).rowwise() + params.block(net.b_u()).row(0)).array().tanh().matrix();
  const Eigen::MatrixXd V = ((X * WV).rowwise() + params.block(net.b_v()).row(0)).array().tanh().matrix();
  const auto readout = [&](const Eigen::MatrixXd& H) -> Eigen::MatrixXd {
    return (H * params.block(net.w_o())).rowwise() + params.block(net.b_o()).row(0);
  };

  for (int k = 0; k < 2; ++k) {
    params.block(net.w_z(k)).setZero();
    params.block(net.b_z(k)).setZero();
  }
  CHECK((fcnn_forward(net, params, X) - readout(U)).cwiseAbs().maxCoeff() < 1e-14);

  for (int k = 0; k < 2; ++k) params.block(net.b_z(k)).setConstant(40.0);  // tanh(40) == 1 in double
  CHECK((fcnn_forward(net, params, X) - readout(V)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("depth-4 width-100 network on a 1000-row batch") {
  ParamVector params;
  const auto net = ModifiedFcnn::declare(params, "", FcnnShape{100, 100, 4, 1});
  std::mt19937_64 rng(11);
  net.initialize(params, rng);
  CHECK(params.num_blocks() == 14);
  CHECK(params.size() == 2 * (100 * 100 + 100) + 4 * (100 * 100 + 100) + 101);
  const Eigen::MatrixXd out = fcnn_forward(net, params, random_matrix(1000, 100, 12));
  CHECK(out.rows() == 1000);
  CHECK(out.cols() == 1);
  CHECK(out.allFinite());
  CHECK(out.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("network output is linear in the readout layer") {
  ParamVector params;
  const auto net = ModifiedFcnn::declare(params, "", FcnnShape{8, 8, 2, 2});
  std::mt19937_64 rng(13);
  net.initialize(params, rng);
  params.block(net.b_o()) = random_matrix(1, 2, 14);
  const Eigen::MatrixXd X = random_matrix(7, 8, 15);
  const Eigen::MatrixXd base = fcnn_forward(net, params, X);
  ParamVector scaled = params;
  scaled.block(net.w_o()) *= -2.5;
  scaled.block(net.b_o()) *= -2.5;
  CHECK((fcnn_forward(net, scaled, X) + 2.5 * base).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("rows are processed independently") {
  ParamVector params;
  const auto net = ModifiedFcnn::declare(params, "", FcnnShape{8, 8, 3, 1});
  std::mt19937_64 rng(16);
  net.initialize(params, rng);
  const Eigen::MatrixXd X = random_matrix(9, 8, 17);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(18));
  Eigen::MatrixXd Xp(9, 8);
  for (int i = 0; i < 9; ++i) Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
  const Eigen::MatrixXd out = fcnn_forward(net, params, X);
  const Eigen::MatrixXd outp = fcnn_forward(net, params, Xp);
  for (int i = 0; i < 9; ++i) CHECK(outp(i, 0) == doctest::Approx(out(perm[static_cast<std::size_t>(i)], 0)).epsilon(1e-14));
}

TEST_CASE("PINN output scales with s_pq and time derivative matches differences") {
  const PinnModel a = PinnModel::create(small_arch(), 0.01, 0.2, 21);
  const PinnModel b = PinnModel::create(small_arch(), 0.01, 0.4, 21);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(17, 0.0, 0.01);
  const StateBatch sa = pinn_eval(a, t, true);
  const StateBatch sb = pinn_eval(b, t, true);
  CHECK(sb.p == 2.0 * sa.p);
  CHECK(sb.q == 2.0 * sa.q);

  const double h = 1e-8;
  const StateBatch up = pinn_eval(a, (t.array() + h).matrix());
  const StateBatch dn = pinn_eval(a, (t.array() - h).matrix());
  const Eigen::VectorXd fd_p = (up.p - dn.p) / (2.0 * h);
  const Eigen::VectorXd fd_q = (up.q - dn.q) / (2.0 * h);
  CHECK((fd_p - sa.p_t).norm() / sa.p_t.norm() < 1e-6);
  CHECK((fd_q - sa.q_t).norm() / sa.q_t.norm() < 1e-6);
}

TEST_CASE("PINN construction is deterministic in the seed") {
  const PinnModel a = PinnModel::create(small_arch(), 0.01, 0.2, 5);
  const PinnModel b = PinnModel::create(small_arch(), 0.01, 0.2, 5);
  const PinnModel c = PinnModel::create(small_arch(), 0.01, 0.2, 6);
  CHECK(a.params.flat() == b.params.flat());
  CHECK(a.rff_p.B == b.rff_p.B);
  CHECK(a.params.flat() != c.params.flat());
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(5, 0.0, 0.01);
  CHECK(pinn_eval(a, t).p == pinn_eval(b, t).p);
}

TEST_CASE("DeepONet with a zeroed trunk readout predicts zero") {
  DeepOnetModel m = DeepOnetModel::create(small_arch(12, 2, 8), 0.01, 0.35, 31);
  m.params.block(m.trunk.w_o()).setZero();
  m.params.block(m.trunk.b_o()).setZero();
  const StateBatch s = deeponet_eval(m, Eigen::VectorXd::LinSpaced(6, 0, 0.01), Eigen::VectorXd::Constant(6, 0.1),
                                     Eigen::VectorXd::Constant(6, -0.2), true);
  CHECK(s.p.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.q.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.p_t.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("DeepONet merge with c_O = 200 splits the outputs in halves") {
  NetArch arch = small_arch(10, 1, 200);
  const DeepOnetModel m = DeepOnetModel::create(arch, 0.01, 0.35, 41);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(4, 0.001, 0.009);
  const Eigen::VectorXd p0 = Eigen::VectorXd::LinSpaced(4, -0.3, 0.3);
  const Eigen::VectorXd q0 = Eigen::VectorXd::LinSpaced(4, 0.2, -0.1);
  const StateBatch s = deeponet_eval(m, t, p0, q0);

  const Eigen::MatrixXd b = fcnn_forward(m.branch, m.params, rff_embed(t / m.scale_t, m.rff_t));
  Eigen::MatrixXd ic(4, 2);
  ic << p0 / m.scale_pq, q0 / m.scale_pq;
  const Eigen::MatrixXd r = fcnn_forward(m.trunk, m.params, rff_embed(ic, m.rff_ic));
  const Eigen::MatrixXd br = b.cwiseProduct(r);
  for (int i = 0; i < 4; ++i) {
    CHECK(s.p[i] == doctest::Approx(m.scale_pq * br.row(i).head(100).sum()).epsilon(1e-12));
    CHECK(s.q[i] == doctest::Approx(m.scale_pq * br.row(i).tail(100).sum()).epsilon(1e-12));
  }
}

TEST_CASE("DeepONet time derivative, scalar time broadcast and rollout") {
  const DeepOnetModel m = DeepOnetModel::create(small_arch(12, 2, 8), 0.01, 0.35, 51);
  const Eigen::VectorXd p0 = Eigen::VectorXd::LinSpaced(5, -0.3, 0.3);
  const Eigen::VectorXd q0 = Eigen::VectorXd::LinSpaced(5, 0.1, -0.2);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(5, 0.0, 0.01);
  const StateBatch s = deeponet_eval(m, t, p0, q0, true);
  const double h = 1e-9;
  const StateBatch up = deeponet_eval(m, (t.array() + h).matrix(), p0, q0);
  const StateBatch dn = deeponet_eval(m, (t.array() - h).matrix(), p0, q0);
  CHECK(((up.p - dn.p) / (2 * h) - s.p_t).norm() / s.p_t.norm() < 1e-5);
  CHECK(((up.q - dn.q) / (2 * h) - s.q_t).norm() / s.q_t.norm() < 1e-5);

  const StateBatch shared = deeponet_eval(m, Eigen::VectorXd::Constant(1, 0.004), p0, q0);
  const StateBatch full = deeponet_eval(m, Eigen::VectorXd::Constant(5, 0.004), p0, q0);
  CHECK((shared.p - full.p).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((shared.q - full.q).cwiseAbs().maxCoeff() < 1e-14);

  const Eigen::VectorXd tr = Eigen::VectorXd::LinSpaced(9, 0.0, 0.024);
  const StateBatch roll = deeponet_rollout(m, tr, 0.1, -0.05);
  const StateBatch w0 = deeponet_eval(m, Eigen::VectorXd::Constant(1, 0.003), Eigen::VectorXd::Constant(1, 0.1),
                                      Eigen::VectorXd::Constant(1, -0.05));
  CHECK(roll.p[1] == doctest::Approx(w0.p[0]).epsilon(1e-13));
  const StateBatch edge = deeponet_eval(m, Eigen::VectorXd::Constant(1, 0.01), Eigen::VectorXd::Constant(1, 0.1),
                                        Eigen::VectorXd::Constant(1, -0.05));
  const StateBatch w1 = deeponet_eval(m, Eigen::VectorXd::Constant(1, 0.012 - 0.01), edge.p, edge.q);
  CHECK(roll.p[4] == doctest::Approx(w1.p[0]).epsilon(1e-12));
  CHECK(roll.q[4] == doctest::Approx(w1.q[0]).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip bit for bit") {
  PinnModel pinn = PinnModel::create(small_arch(), 0.02, 0.2, 61, 0.04);
  std::stringstream buf;
  save_checkpoint(buf, pinn);
  const std::string bytes = buf.str();
  std::istringstream kind_in(bytes);
  CHECK(checkpoint_kind(kind_in) == "pinn");
  std::istringstream in(bytes);
  const PinnModel back = load_pinn_checkpoint(in);
  CHECK(back.params.flat() == pinn.params.flat());
  CHECK(back.rff_p.B == pinn.rff_p.B);
  CHECK(back.rff_q.B == pinn.rff_q.B);
  CHECK(back.t_start == pinn.t_start);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(4, 0.04, 0.06);
  CHECK(pinn_eval(back, t).q == pinn_eval(pinn, t).q);
  std::stringstream again;
  save_checkpoint(again, back);
  CHECK(again.str() == bytes);

  const DeepOnetModel don = DeepOnetModel::create(small_arch(12, 2, 8), 0.01, 0.35, 62);
  std::stringstream dbuf;
  save_checkpoint(dbuf, don);
  const DeepOnetModel dback = load_deeponet_checkpoint(dbuf);
  CHECK(dback.params.flat() == don.params.flat());
  CHECK(dback.rff_ic.B == don.rff_ic.B);

  std::istringstream wrong(bytes);
  CHECK_THROWS_AS(load_deeponet_checkpoint(wrong), ConfigError);
  std::istringstream junk("not a checkpoint at all");
  CHECK_THROWS_AS(load_pinn_checkpoint(junk), ConfigError);
}

TEST_CASE("shape and configuration errors") {
  ParamVector params;
  CHECK_THROWS_AS(ModifiedFcnn::declare(params, "", FcnnShape{6, 8, 2, 1}), ConfigError);
  CHECK_THROWS_AS(ModifiedFcnn::declare(params, "", FcnnShape{8, 8, 0, 1}), ConfigError);
  const auto net = ModifiedFcnn::declare(params, "", FcnnShape{8, 8, 1, 1});
  CHECK_THROWS_AS(fcnn_forward(net, params, Eigen::MatrixXd::Zero(3, 7)), ShapeError);
  CHECK_THROWS_AS(rff_embed(Eigen::MatrixXd::Zero(3, 2), RffEmbedding::sample(1, 4, 1.0, 0)), ShapeError);
  CHECK_THROWS_AS(DeepOnetModel::create(small_arch(12, 2, 7), 0.01, 0.35, 0), ConfigError);
  CHECK_THROWS_AS(PinnModel::create(small_arch(), 0.0, 0.2, 0), ConfigError);
  const DeepOnetModel m = DeepOnetModel::create(small_arch(12, 2, 8), 0.01, 0.35, 1);
  CHECK_THROWS_AS(deeponet_eval(m, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4)),
                  ShapeError);
}

TEST_CASE("shared-trunk recording matches separate evaluations") {
  const DeepOnetModel m = DeepOnetModel::create(small_arch(12, 2, 8), 0.01, 0.35, 71);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(6, 0.0, 0.01);
  const Eigen::VectorXd p0 = Eigen::VectorXd::LinSpaced(6, -0.3, 0.3);
  const Eigen::VectorXd q0 = Eigen::VectorXd::LinSpaced(6, 0.2, -0.1);
  ad::Tape<double> tape;
  const auto leaves = ad::bind_parameters(tape, m.params);
  const auto rec = record_deeponet_with_initial<double>(tape, m, leaves, t, p0, q0, true);
  const StateBatch at_t = deeponet_eval(m, t, p0, q0, true);
  const StateBatch at_0 = deeponet_eval(m, Eigen::VectorXd::Zero(6), p0, q0);
  CHECK((rec.state.p.value().col(0) - at_t.p).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((rec.state.p_t->value().col(0) - at_t.p_t).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((rec.initial.q.value().col(0) - at_0.q).cwiseAbs().maxCoeff() < 1e-14);
}
