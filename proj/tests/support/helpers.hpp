#pragma once

#include <Eigen/Dense>

#include "iakd/network.hpp"
#include "iakd/predictor.hpp"
#include "iakd/rng.hpp"
#include "iakd/scenario.hpp"

namespace iakd_test {

inline iakd::NetworkParameters random_params(iakd::Role role, const iakd::NetworkDims& d, std::uint64_t seed,
                                             double scale = 0.5) {
  iakd::NetworkParameters p = iakd::NetworkParameters::init(role, d, seed);
  iakd::Rng rng(seed ^ 0xabcdef);
  iakd::TensorSet& t = p.mutate();
  for (auto& m : t)
    for (int c = 0; c < m.cols(); ++c)
      for (int r = 0; r < m.rows(); ++r)
        m(r, c) = static_cast<double>(static_cast<float>(rng.uniform(-scale, scale)));
  return p;
}

/// Forward-moving highway-like windows: ego first, mild lateral noise.
inline iakd::HistorySet random_histories(int n_vehicles, int t_obs, std::uint64_t seed) {
  iakd::Rng rng(seed);
  iakd::HistorySet hs;
  for (int v = 0; v < n_vehicles; ++v) {
    iakd::ObservationHistory h;
    h.id = v;
    h.is_ego = (v == 0);
    h.points.resize(t_obs, 2);
    double x = rng.uniform(-20, 20), y = rng.uniform(-4, 4);
    for (int t = 0; t < t_obs; ++t) {
      x += rng.uniform(2.0, 3.5);
      y += rng.uniform(-0.1, 0.1);
      h.points(t, 0) = x;
      h.points(t, 1) = y;
    }
    hs.push_back(std::move(h));
  }
  return hs;
}

inline Eigen::MatrixX2d straight_candidate(const iakd::HistorySet& hs, int t_plan, double step_x, double step_y) {
  Eigen::MatrixX2d c(t_plan, 2);
  Eigen::Vector2d pos = hs.front().last();
  for (int t = 0; t < t_plan; ++t) {
    pos.x() += step_x;
    pos.y() += step_y;
    c.row(t) = pos;
  }
  return c;
}

/// Predictor emitting one obstacle pinned at a fixed position for every
/// step (plus the substituted ego column).
class ConstantPredictor final : public iakd::Predictor {
 public:
  ConstantPredictor(Eigen::Vector2d obstacle, int n_vehicles) : obstacle_(obstacle), n_vehicles_(n_vehicles) {}
  iakd::PredictionSet predict(const iakd::HistorySet& histories, const iakd::EgoCandidate& cand) const override {
    iakd::PredictionSet p;
    p.ego_index = 0;
    const int T = cand.horizon();
    for (int v = 0; v < n_vehicles_; ++v) {
      p.vehicle_ids.push_back(v);
      Eigen::MatrixX2d m(T, 2);
      for (int t = 0; t < T; ++t) m.row(t) = v == 0 ? Eigen::RowVector2d(cand.points.row(t)) : Eigen::RowVector2d(obstacle_);
      p.positions.push_back(std::move(m));
    }
    (void)histories;
    return p;
  }
  std::string name() const override { return "constant"; }

 private:
  Eigen::Vector2d obstacle_;
  int n_vehicles_;
};

}  // namespace iakd_test
