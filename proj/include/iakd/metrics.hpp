#pragma once

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "iakd/predictor.hpp"

namespace iakd {

/// Displacement-error report in meters.
struct MetricReport {
  double ade = 0.0;
  double fde = 0.0;
  long count = 0;
  int horizon = 0;
};

inline nlohmann::json metric_report_to_json(const MetricReport& m) {
  return nlohmann::json{{"ade", m.ade}, {"fde", m.fde}, {"count", m.count}, {"horizon", m.horizon}};
}

/// Joint variety loss over k candidate predictions:
///   (coeff / |V|) * min_k  sum_i ||Y_i - Yhat_i^(k)||_2
/// where ||.||_2 is the Euclidean norm of the stacked trajectory error
/// and |V| counts every vehicle including the ego. The min is taken over
/// whole samples, not per vehicle.
struct VarietyLossDetail {
  double loss = 0.0;
  int argmin = -1;
  std::vector<double> vehicle_norms;  // per-vehicle norms of the winning sample
};

inline VarietyLossDetail variety_loss_detail(const std::vector<PredictionSet>& preds, const PredictionSet& truth,
                                             double coeff, bool skip_ego = false) {
  if (preds.empty()) throw std::invalid_argument("variety_loss: need k >= 1 candidates");
  const int V = truth.n_vehicles();
  if (V == 0) throw std::invalid_argument("variety_loss: empty vehicle set");
  VarietyLossDetail best;
  best.loss = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const PredictionSet& p = preds[k];
    if (p.n_vehicles() != V || p.horizon() != truth.horizon())
      throw std::invalid_argument("variety_loss: shape mismatch");
    double sum = 0.0;
    std::vector<double> norms(static_cast<std::size_t>(V), 0.0);
    for (int v = 0; v < V; ++v) {
      if (skip_ego && v == truth.ego_index) continue;
      const double n = (p.positions[static_cast<std::size_t>(v)] - truth.positions[static_cast<std::size_t>(v)]).norm();
      norms[static_cast<std::size_t>(v)] = n;
      sum += n;
    }
    if (sum < best.loss) {
      best.loss = sum;
      best.argmin = static_cast<int>(k);
      best.vehicle_norms = std::move(norms);
    }
  }
  best.loss *= coeff / static_cast<double>(V);
  return best;
}

inline double variety_loss(const std::vector<PredictionSet>& preds, const PredictionSet& truth, double coeff) {
  return variety_loss_detail(preds, truth, coeff).loss;
}

/// Accumulates ADE/FDE between a predicted and a reference set over
/// steps 1..horizon; the ego column is excluded (it is an input on the
/// candidate-conditioned paths, substituted rather than predicted).
struct DisplacementAccumulator {
  double ade_sum = 0.0;
  long ade_count = 0;
  double fde_sum = 0.0;
  long fde_count = 0;
  long examples = 0;

  void add(const PredictionSet& pred, const PredictionSet& truth, int horizon) {
    if (pred.n_vehicles() != truth.n_vehicles()) throw std::invalid_argument("ade/fde: vehicle count mismatch");
    if (horizon < 1 || horizon > pred.horizon() || horizon > truth.horizon())
      throw std::invalid_argument("ade/fde: bad horizon");
    for (int v = 0; v < pred.n_vehicles(); ++v) {
      if (v == truth.ego_index) continue;
      for (int t = 0; t < horizon; ++t) {
        const double d = (pred.positions[static_cast<std::size_t>(v)].row(t) -
                          truth.positions[static_cast<std::size_t>(v)].row(t))
                             .norm();
        ade_sum += d;
        ++ade_count;
        if (t == horizon - 1) {
          fde_sum += d;
          ++fde_count;
        }
      }
    }
    ++examples;
  }

  MetricReport report(int horizon) const {
    if (examples == 0) throw std::invalid_argument("ade/fde: empty dataset");
    MetricReport m;
    m.ade = ade_sum / static_cast<double>(ade_count);
    m.fde = fde_sum / static_cast<double>(fde_count);
    m.count = examples;
    m.horizon = horizon;
    return m;
  }
};

}  // namespace iakd
