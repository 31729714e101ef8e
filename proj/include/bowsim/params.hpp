#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace bowsim {

/// Shape and position of one parameter block inside the flat vector.
struct BlockInfo {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

/// Layer-indexed network parameters with a flat view.
/// Blocks are column-major and laid out back to back in declaration order.
class ParamVector {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

  ParamVector() = default;

  /// Appends a zero-filled block and returns its index.
  int add_block(std::string name, Eigen::Index rows, Eigen::Index cols);

  int num_blocks() const { return static_cast<int>(layout_.size()); }
  Eigen::Index size() const { return flat_.size(); }
  const std::vector<BlockInfo>& layout() const { return layout_; }
  const BlockInfo& info(int block) const { return layout_.at(static_cast<std::size_t>(block)); }

  MatrixMap block(int i);
  ConstMatrixMap block(int i) const;
  Eigen::Map<Eigen::VectorXd> segment(int i);
  Eigen::Map<const Eigen::VectorXd> segment(int i) const;

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }

  /// Same layout, all zeros.
  ParamVector zeros_like() const;
  /// Same layout, given flat contents.
  ParamVector with_values(const Eigen::VectorXd& values) const;
  bool same_layout(const ParamVector& other) const;

  /// Appends all blocks of another vector (names prefixed) and returns the index of the first.
  int append(const ParamVector& other, const std::string& prefix);

 private:
  std::vector<BlockInfo> layout_;
  Eigen::VectorXd flat_;
};

double dot(const ParamVector& a, const ParamVector& b);

}  // namespace bowsim
