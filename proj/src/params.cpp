#include "bowsim/params.hpp"

#include "bowsim/errors.hpp"

namespace bowsim {

int ParamVector::add_block(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) throw ShapeError("parameter block '" + name + "' must be non-empty");
  const Eigen::Index offset = flat_.size();
  layout_.push_back({std::move(name), rows, cols, offset});
  flat_.conservativeResize(offset + rows * cols);
  flat_.tail(rows * cols).setZero();
  return num_blocks() - 1;
}

ParamVector::MatrixMap ParamVector::block(int i) {
  const BlockInfo& b = info(i);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

ParamVector::ConstMatrixMap ParamVector::block(int i) const {
  const BlockInfo& b = info(i);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<Eigen::VectorXd> ParamVector::segment(int i) {
  const BlockInfo& b = info(i);
  return {flat_.data() + b.offset, b.size()};
}

Eigen::Map<const Eigen::VectorXd> ParamVector::segment(int i) const {
  const BlockInfo& b = info(i);
  return {flat_.data() + b.offset, b.size()};
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  out.flat_.setZero();
  return out;
}

ParamVector ParamVector::with_values(const Eigen::VectorXd& values) const {
  if (values.size() != size()) throw ShapeError("flat parameter length mismatch");
  ParamVector out = *this;
  out.flat_ = values;
  return out;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_.size() != other.layout_.size()) return false;
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (layout_[i].rows != other.layout_[i].rows || layout_[i].cols != other.layout_[i].cols) return false;
  }
  return true;
}

int ParamVector::append(const ParamVector& other, const std::string& prefix) {
  const int first = num_blocks();
  for (int i = 0; i < other.num_blocks(); ++i) {
    const BlockInfo& b = other.info(i);
    const int idx = add_block(prefix + b.name, b.rows, b.cols);
    segment(idx) = other.segment(i);
  }
  return first;
}

double dot(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw ShapeError("dot: parameter length mismatch");
  return a.flat().dot(b.flat());
}

}  // namespace bowsim
