#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iakd/adam.hpp"
#include "iakd/dataset.hpp"
#include "iakd/metrics.hpp"
#include "iakd/network.hpp"
#include "iakd/predictor.hpp"
#include "iakd/rng.hpp"

namespace iakd {

/// Training knobs. k_var is the number of latent samples fed to the
/// variety loss; k_var_coeff is the scalar weight on that loss.
/// Adversarial training is out of scope, so there is no discriminator
/// and no I_adv switch.
struct TrainConfig {
  Role role = Role::kTeacher;
  int k_var = 1;
  double k_var_coeff = 1.0;
  int epochs = 50;
  int batch_size = 64;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  base.k_var = j.value("k_var", base.k_var);
  base.k_var_coeff = j.value("k_var_coeff", base.k_var_coeff);
  base.epochs = j.value("epochs", base.epochs);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.lr = j.value("lr", base.lr);
  base.seed = j.value("seed", base.seed);
  return base;
}

inline NetworkDims network_dims_from_json(const nlohmann::json& j, NetworkDims base) {
  base.hidden = j.value("hidden", base.hidden);
  base.embed = j.value("embed", base.embed);
  base.mlp = j.value("mlp", base.mlp);
  base.latent = j.value("latent", base.latent);
  return base;
}

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// 80/20 test carve-out, then 90/10 train/validation on the remainder;
/// deterministic in the seed.
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  DatasetSplit s;
  const std::size_t n_test = n / 5;
  const std::size_t n_pool = n - n_test;
  const std::size_t n_val = n_pool / 10;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_test)
      s.test.push_back(idx[i]);
    else if (i < n_test + n_val)
      s.val.push_back(idx[i]);
    else
      s.train.push_back(idx[i]);
  }
  return s;
}

struct TrainResult {
  NetworkParameters params;
  std::vector<EpochLog> log;
  DatasetSplit split;
};

namespace detail {

/// Upstream gradient of the (possibly ego-skipping) variety loss for the
/// winning sample, flattened vehicle-major over the taped outputs.
inline Eigen::VectorXd variety_loss_grad(const PredictionSet& pred, const PredictionSet& truth, double coeff,
                                         const std::vector<double>& norms, bool skip_ego) {
  const int V = truth.n_vehicles();
  const int T = truth.horizon();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(V * T * 2);
  const double w = coeff / static_cast<double>(V);
  for (int v = 0; v < V; ++v) {
    if (skip_ego && v == truth.ego_index) continue;
    const double n = norms[static_cast<std::size_t>(v)];
    if (n < 1e-12) continue;
    const Eigen::MatrixX2d diff =
        pred.positions[static_cast<std::size_t>(v)] - truth.positions[static_cast<std::size_t>(v)];
    for (int t = 0; t < T; ++t) {
      g[v * T * 2 + t * 2] = w * diff(t, 0) / n;
      g[v * T * 2 + t * 2 + 1] = w * diff(t, 1) / n;
    }
  }
  return g;
}

inline void accumulate(TensorSet& acc, const TensorSet& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

inline void scale_tensors(TensorSet& acc, double s) {
  for (auto& m : acc) m *= s;
}

}  // namespace detail

/// Teacher training: free-running recursive rollouts over the full
/// horizon, joint variety loss over k_var latent samples, ADAM updates.
/// Deterministic in cfg.seed. Emits one log row per epoch.
inline TrainResult train_teacher(const std::vector<DistillationRecord>& dataset, const TrainConfig& cfg,
                                 const NetworkDims& dims = teacher_dims()) {
  if (cfg.role != Role::kTeacher) throw std::invalid_argument("train_teacher: cfg.role must be teacher");
  if (cfg.k_var < 1) throw std::invalid_argument("train_teacher: k_var must be >= 1");
  if (dataset.empty()) throw std::invalid_argument("train_teacher: empty dataset");

  TrainResult out;
  out.params = NetworkParameters::init(Role::kTeacher, dims, cfg.seed);
  out.split = split_dataset(dataset.size(), cfg.seed ^ 0x5eed);
  AdamState adam = AdamState::init(out.params);
  const AdamConfig acfg{cfg.lr, 0.9, 0.999, 1e-8};
  Rng shuffle_rng = Rng(cfg.seed).derive(11);
  Rng z_rng = Rng(cfg.seed).derive(12);

  auto example_loss_and_grad = [&](const DistillationRecord& rec, std::uint64_t z_base, TensorSet* grads) {
    const HistorySet hs = rec.history_set();
    const PredictionSet truth = rec.prediction_set();
    const int T = rec.t_plan();
    std::vector<RolloutTape> tapes;
    std::vector<PredictionSet> preds;
    tapes.reserve(static_cast<std::size_t>(cfg.k_var));
    for (int k = 0; k < cfg.k_var; ++k) {
      const Eigen::VectorXd z = sample_latent(dims.latent, z_base + static_cast<std::uint64_t>(k));
      tapes.push_back(teacher_rollout_taped(out.params, hs, std::nullopt, T, z));
      preds.push_back(tapes.back().prediction);
    }
    const VarietyLossDetail d = variety_loss_detail(preds, truth, cfg.k_var_coeff, false);
    if (grads != nullptr) {
      const Eigen::VectorXd g =
          detail::variety_loss_grad(preds[static_cast<std::size_t>(d.argmin)], truth, cfg.k_var_coeff,
                                    d.vehicle_norms, false);
      detail::accumulate(*grads, parameter_gradient(tapes[static_cast<std::size_t>(d.argmin)], g));
    }
    return d.loss;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = out.split.train;
    shuffle_rng.shuffle(order);
    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      TensorSet grads = out.params.zero_like();
      for (std::size_t i = start; i < stop; ++i) {
        const std::uint64_t z_base = z_rng.next_u64();
        train_loss += example_loss_and_grad(dataset[order[i]], z_base, &grads);
        ++seen;
      }
      detail::scale_tensors(grads, 1.0 / static_cast<double>(stop - start));
      adam_step(out.params, grads, adam, acfg);
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(1, seen));

    Rng val_rng = Rng(cfg.seed).derive(13);
    double val_loss = 0.0;
    for (std::size_t i : out.split.val) val_loss += example_loss_and_grad(dataset[i], val_rng.next_u64(), nullptr);
    val_loss /= static_cast<double>(std::max<std::size_t>(1, out.split.val.size()));

    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw std::runtime_error("train_teacher: diverged (non-finite loss)");
    out.log.push_back({epoch, train_loss, val_loss});
  }
  return out;
}

/// Student training: candidate-conditioned one-shot rollouts against the
/// teacher predictions; the ego column carries no loss (it is
/// substituted, not predicted).
inline TrainResult train_student(const std::vector<DistillationRecord>& dataset, const TrainConfig& cfg,
                                 const NetworkDims& dims = student_dims()) {
  if (cfg.role != Role::kStudent) throw std::invalid_argument("train_student: cfg.role must be student");
  if (dataset.empty()) throw std::invalid_argument("train_student: empty dataset");

  TrainResult out;
  out.params = NetworkParameters::init(Role::kStudent, dims, cfg.seed);
  out.split = split_dataset(dataset.size(), cfg.seed ^ 0x5eed);
  AdamState adam = AdamState::init(out.params);
  const AdamConfig acfg{cfg.lr, 0.9, 0.999, 1e-8};
  Rng shuffle_rng = Rng(cfg.seed).derive(21);

  auto example_loss_and_grad = [&](const DistillationRecord& rec, TensorSet* grads) {
    const HistorySet hs = rec.history_set();
    const PredictionSet truth = rec.prediction_set();
    RolloutTape tape = student_rollout_taped(out.params, hs, rec.candidate);
    const VarietyLossDetail d = variety_loss_detail({tape.prediction}, truth, cfg.k_var_coeff, true);
    if (grads != nullptr) {
      const Eigen::VectorXd g =
          detail::variety_loss_grad(tape.prediction, truth, cfg.k_var_coeff, d.vehicle_norms, true);
      detail::accumulate(*grads, parameter_gradient(tape, g));
    }
    return d.loss;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = out.split.train;
    shuffle_rng.shuffle(order);
    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      TensorSet grads = out.params.zero_like();
      for (std::size_t i = start; i < stop; ++i) {
        train_loss += example_loss_and_grad(dataset[order[i]], &grads);
        ++seen;
      }
      detail::scale_tensors(grads, 1.0 / static_cast<double>(stop - start));
      adam_step(out.params, grads, adam, acfg);
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(1, seen));

    double val_loss = 0.0;
    for (std::size_t i : out.split.val) val_loss += example_loss_and_grad(dataset[i], nullptr);
    val_loss /= static_cast<double>(std::max<std::size_t>(1, out.split.val.size()));

    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw std::runtime_error("train_student: diverged (non-finite loss)");
    out.log.push_back({epoch, train_loss, val_loss});
  }
  return out;
}

/// ADE/FDE of a network against the reference column of a record set
/// (teacher output for distillation records, simulation truth for
/// pairs). Candidate-conditioned rollouts for both roles; surrounding
/// vehicles only.
inline MetricReport evaluate_ade_fde(const NetworkParameters& params, const std::vector<DistillationRecord>& records,
                                     int horizon, std::uint64_t latent_seed = 0) {
  if (records.empty()) throw std::invalid_argument("evaluate_ade_fde: empty dataset");
  DisplacementAccumulator acc;
  for (const auto& rec : records) {
    if (horizon > rec.t_plan()) throw std::invalid_argument("evaluate_ade_fde: horizon exceeds record horizon");
    const HistorySet hs = rec.history_set();
    const EgoCandidate cand{rec.candidate};
    const PredictionSet pred = params.role() == Role::kTeacher
                                   ? teacher_rollout(params, hs, cand, latent_seed).prediction
                                   : student_rollout(params, hs, cand).prediction;
    acc.add(pred, rec.prediction_set(), horizon);
  }
  return acc.report(horizon);
}

}  // namespace iakd
