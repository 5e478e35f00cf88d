#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace iakd {

// Input/output normalization constants shared by every generator path.
// Per-step displacements (~ v*dt meters) are scaled into O(1) inputs,
// cross-vehicle relative positions (tens of meters) get a smaller scale,
// and the position head emits displacement / kOutputScale.
inline constexpr double kDeltaScale = 0.25;
inline constexpr double kRelScale = 0.05;
inline constexpr double kOutputScale = 4.0;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// The tape and the tape-free forward runner must produce bit-identical
/// values, so both apply activations through these scalar loops rather
/// than Eigen array expressions (whose kernels may differ).
inline void sigmoid_inplace(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sigmoid(v[i]);
}

inline void tanh_inplace(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i]);
}

inline void relu_inplace(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
}

inline Eigen::VectorXd affine_eval(const Eigen::MatrixXd& W, const Eigen::MatrixXd& b, const Eigen::VectorXd& x) {
  Eigen::VectorXd out = W * x;
  out += b.col(0);
  return out;
}

}  // namespace iakd
