#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "bowsim/autodiff.hpp"
#include "bowsim/params.hpp"

namespace bowsim {

/// Frozen random Fourier feature map x -> [cos(2 pi x B), sin(2 pi x B)].
struct RffEmbedding {
  Eigen::MatrixXd B;  ///< input_dim x encoding_size, entries N(0, sigma^2)
  double sigma = 1.0;
  std::uint64_t seed = 0;

  static RffEmbedding sample(int input_dim, int encoding_size, double sigma, std::uint64_t seed);

  int input_dim() const { return static_cast<int>(B.rows()); }
  int encoding_size() const { return static_cast<int>(B.cols()); }
  int output_dim() const { return 2 * encoding_size(); }
};

/// Embeds each row of X (N x input_dim); result is N x 2c.
Eigen::MatrixXd rff_embed(const Eigen::MatrixXd& X, const RffEmbedding& emb);
/// Derivative of rff_embed along a per-row input velocity Xdot.
Eigen::MatrixXd rff_embed_tangent(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xdot, const RffEmbedding& emb);

struct FcnnShape {
  int input_dim = 100;
  int width = 100;   ///< c_U = c_V = c_Z
  int depth = 4;     ///< number of gate layers L
  int output_dim = 1;

  void validate() const;
};

/// A recorded value and, optionally, its derivative with respect to time.
template <typename S>
struct DualVar {
  ad::Var<S> value;
  std::optional<ad::Var<S>> tangent;
};

/// Gated fully connected network:
///   U = tanh(X W_U + b_U), V = tanh(X W_V + b_V), H1 = tanh(X W_Z1 + b_Z1)
///   Z_k = tanh(H_k W_Zk + b_Zk), H_{k+1} = (1 - Z_k) .* U + Z_k .* V,  k = 1..L
///   O = H_{L+1} W_O + b_O
/// W_Z1 acts on both X and H1, so input_dim must equal width.
/// The network owns no storage; it indexes a contiguous run of blocks in a ParamVector.
class ModifiedFcnn {
 public:
  ModifiedFcnn() = default;

  /// Appends this network's blocks to `params` (W_U, b_U, W_V, b_V, (W_Zk, b_Zk)..., W_O, b_O).
  static ModifiedFcnn declare(ParamVector& params, const std::string& prefix, const FcnnShape& shape);

  const FcnnShape& shape() const { return shape_; }
  int first_block() const { return first_block_; }
  int num_blocks() const { return 6 + 2 * shape_.depth; }

  /// Glorot-uniform weights, zero biases.
  void initialize(ParamVector& params, std::mt19937_64& rng) const;

  template <typename S>
  DualVar<S> record(ad::Tape<S>& tape, std::span<const ad::Var<S>> leaves, ad::Var<S> X,
                    std::optional<ad::Var<S>> Xdot) const;

  int w_u() const { return first_block_; }
  int b_u() const { return first_block_ + 1; }
  int w_v() const { return first_block_ + 2; }
  int b_v() const { return first_block_ + 3; }
  int w_z(int k) const { return first_block_ + 4 + 2 * k; }
  int b_z(int k) const { return first_block_ + 5 + 2 * k; }
  int w_o() const { return first_block_ + 4 + 2 * shape_.depth; }
  int b_o() const { return first_block_ + 5 + 2 * shape_.depth; }

 private:
  FcnnShape shape_{};
  int first_block_ = 0;
};

/// Plain forward pass of one network on a feature batch.
Eigen::MatrixXd fcnn_forward(const ModifiedFcnn& net, const ParamVector& params, const Eigen::MatrixXd& X);

struct NetArch {
  int width = 100;
  int depth = 4;
  int rff_size = 50;
  double rff_sigma = 1.0;
  int output_dim = 1;  ///< c_O; 1 for PINN heads, even for DeepONets
};

/// Predicted states at a batch of times, optionally with time derivatives.
struct StateBatch {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
  Eigen::VectorXd p_t;  ///< empty unless requested
  Eigen::VectorXd q_t;
};

template <typename S>
struct StateVars {
  ad::Var<S> p;
  ad::Var<S> q;
  std::optional<ad::Var<S>> p_t;
  std::optional<ad::Var<S>> q_t;
};

/// Two independent heads t -> p and t -> q, each with its own RFF map.
/// Inputs are (t - t_start) / scale_t; outputs are multiplied by scale_pq.
struct PinnModel {
  NetArch arch;
  double scale_t = 0.1;
  double scale_pq = 0.2;
  double t_start = 0.0;
  RffEmbedding rff_p;
  RffEmbedding rff_q;
  ModifiedFcnn head_p;
  ModifiedFcnn head_q;
  ParamVector params;

  static PinnModel create(const NetArch& arch, double scale_t, double scale_pq, std::uint64_t seed,
                          double t_start = 0.0);
};

template <typename S>
StateVars<S> record_pinn(ad::Tape<S>& tape, const PinnModel& model, std::span<const ad::Var<S>> leaves,
                         const Eigen::VectorXd& t, bool with_time_derivative);

/// Evaluates p and q (and optionally dp/dt, dq/dt). Times outside the window
/// [t_start, t_start + scale_t] are allowed and reported once on std::clog.
StateBatch pinn_eval(const PinnModel& model, const Eigen::VectorXd& t, bool with_time_derivative = false);

/// Branch net on embedded t, trunk net on embedded initial condition; the c_O
/// outputs of each are split in halves and merged by dot products into p and q.
struct DeepOnetModel {
  NetArch arch;
  double scale_t = 0.01;
  double scale_pq = 0.35;
  RffEmbedding rff_t;
  RffEmbedding rff_ic;
  ModifiedFcnn branch;
  ModifiedFcnn trunk;
  ParamVector params;

  static DeepOnetModel create(const NetArch& arch, double scale_t, double scale_pq, std::uint64_t seed);
};

/// `t` may hold one entry, which is then shared by every initial condition.
template <typename S>
StateVars<S> record_deeponet(ad::Tape<S>& tape, const DeepOnetModel& model, std::span<const ad::Var<S>> leaves,
                             const Eigen::VectorXd& t, const Eigen::VectorXd& p0, const Eigen::VectorXd& q0,
                             bool with_time_derivative);

/// Predictions at t together with predictions at t = 0 for the same initial
/// conditions; the trunk pass is shared.
template <typename S>
struct DeepOnetRecord {
  StateVars<S> state;
  StateVars<S> initial;
};

template <typename S>
DeepOnetRecord<S> record_deeponet_with_initial(ad::Tape<S>& tape, const DeepOnetModel& model,
                                               std::span<const ad::Var<S>> leaves, const Eigen::VectorXd& t,
                                               const Eigen::VectorXd& p0, const Eigen::VectorXd& q0,
                                               bool with_time_derivative);

StateBatch deeponet_eval(const DeepOnetModel& model, const Eigen::VectorXd& t, const Eigen::VectorXd& p0,
                         const Eigen::VectorXd& q0, bool with_time_derivative = false);

/// Long-horizon prediction by chaining windows of length scale_t: each window
/// starts from the previous window's prediction at its right edge.
StateBatch deeponet_rollout(const DeepOnetModel& model, const Eigen::VectorXd& t, double p0, double q0);

// Checkpoints: 8-byte magic, u64 little-endian header length, JSON header,
// then little-endian f64 blocks (RFF matrices first, then parameters) in
// declaration order, column-major.
void save_checkpoint(std::ostream& out, const PinnModel& model);
void save_checkpoint(std::ostream& out, const DeepOnetModel& model);
PinnModel load_pinn_checkpoint(std::istream& in);
DeepOnetModel load_deeponet_checkpoint(std::istream& in);
/// "pinn" or "deeponet"; leaves the stream position unspecified.
std::string checkpoint_kind(std::istream& in);

extern template DualVar<double> ModifiedFcnn::record(ad::Tape<double>&, std::span<const ad::Var<double>>,
                                                     ad::Var<double>, std::optional<ad::Var<double>>) const;
extern template DualVar<ad::HvpScalar> ModifiedFcnn::record(ad::Tape<ad::HvpScalar>&,
                                                            std::span<const ad::Var<ad::HvpScalar>>,
                                                            ad::Var<ad::HvpScalar>,
                                                            std::optional<ad::Var<ad::HvpScalar>>) const;
extern template StateVars<double> record_pinn(ad::Tape<double>&, const PinnModel&, std::span<const ad::Var<double>>,
                                              const Eigen::VectorXd&, bool);
extern template StateVars<ad::HvpScalar> record_pinn(ad::Tape<ad::HvpScalar>&, const PinnModel&,
                                                     std::span<const ad::Var<ad::HvpScalar>>, const Eigen::VectorXd&,
                                                     bool);
extern template StateVars<double> record_deeponet(ad::Tape<double>&, const DeepOnetModel&,
                                                  std::span<const ad::Var<double>>, const Eigen::VectorXd&,
                                                  const Eigen::VectorXd&, const Eigen::VectorXd&, bool);
extern template StateVars<ad::HvpScalar> record_deeponet(ad::Tape<ad::HvpScalar>&, const DeepOnetModel&,
                                                         std::span<const ad::Var<ad::HvpScalar>>,
                                                         const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                         const Eigen::VectorXd&, bool);
extern template DeepOnetRecord<double> record_deeponet_with_initial(ad::Tape<double>&, const DeepOnetModel&,
                                                                    std::span<const ad::Var<double>>,
                                                                    const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                                    const Eigen::VectorXd&, bool);
extern template DeepOnetRecord<ad::HvpScalar> record_deeponet_with_initial(
    ad::Tape<ad::HvpScalar>&, const DeepOnetModel&, std::span<const ad::Var<ad::HvpScalar>>, const Eigen::VectorXd&,
    const Eigen::VectorXd&, const Eigen::VectorXd&, bool);

}  // namespace bowsim
