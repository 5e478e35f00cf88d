#pragma once

#include <cmath>
#include <stdexcept>

#include "iakd/network.hpp"

namespace iakd {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  TensorSet m;
  TensorSet v;
  long step = 0;

  static AdamState init(const NetworkParameters& p) { return {p.zero_like(), p.zero_like(), 0}; }
};

/// Standard ADAM update with bias correction. Parameters are snapped
/// back onto the float32 grid afterwards so weight files stay lossless.
inline void adam_step(NetworkParameters& params, const TensorSet& grads, AdamState& state,
                      const AdamConfig& cfg = {}) {
  for (const auto& g : grads)
    if (!g.allFinite()) throw std::runtime_error("diverged");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  TensorSet& t = params.mutate();
  for (std::size_t i = 0; i < t.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    const Eigen::MatrixXd mhat = state.m[i] / c1;
    const Eigen::MatrixXd vhat = state.v[i] / c2;
    t[i] -= cfg.lr * (mhat.array() / (vhat.array().sqrt() + cfg.eps)).matrix();
  }
  params.round_to_f32();
}

}  // namespace iakd
