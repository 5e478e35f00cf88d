#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "iakd/dataset.hpp"
#include "iakd/log.hpp"
#include "iakd/metrics.hpp"
#include "iakd/planner.hpp"
#include "iakd/training.hpp"

namespace iakd {

struct DistillOptions {
  PlannerConfig planner;
  CarFollowingParams traffic;
  std::uint64_t latent_seed = 0;
  int min_steps = 9;
  int max_steps = 30;
  unsigned threads = 1;
};

struct DistillScenarioSummary {
  std::uint32_t scenario_id = 0;
  bool success = true;
  std::string error;
  long records = 0;
  int steps = 0;
};

struct DistillOutput {
  std::vector<DistillationRecord> records;
  std::vector<DistillScenarioSummary> scenarios;
  /// Teacher's accepted per-step predictions against the positions the
  /// surrounding vehicles actually took in the episode.
  MetricReport teacher_vs_sim;
};

namespace detail {

struct PerScenarioDistill {
  std::vector<DistillationRecord> records;
  DistillScenarioSummary summary;
  DisplacementAccumulator truth_acc;
};

/// Runs one scenario's episode with the teacher, recording every
/// constraint evaluation. Records are re-evaluated on float32-rounded
/// inputs so that replaying a stored record reproduces the stored
/// prediction bit-for-bit.
inline PerScenarioDistill distill_one_scenario(const Scenario& scenario, std::uint32_t scenario_id,
                                               const NetworkParameters& teacher, const DistillOptions& opt) {
  PerScenarioDistill out;
  out.summary.scenario_id = scenario_id;
  const int steps =
      opt.min_steps +
      static_cast<int>(Rng(scenario.seed).derive(41).uniform_int(
          static_cast<std::uint64_t>(opt.max_steps - opt.min_steps + 1)));
  out.summary.steps = steps;

  TeacherPredictor predictor(teacher, opt.latent_seed);
  EpisodeEvalObserver observer = [&](int step_index, const HistorySet& histories, const Eigen::MatrixX2d& candidate,
                                     const PredictionSet&) {
    DistillationRecord rec;
    rec.scenario_id = scenario_id;
    rec.step_index = static_cast<std::uint32_t>(step_index);
    for (const auto& h : histories) rec.histories.push_back(h.points);
    rec.candidate = candidate;
    rec.prediction.assign(histories.size(), Eigen::MatrixX2d());
    rec.round_to_f32();
    // re-run the teacher on the rounded inputs: the stored prediction
    // must replay exactly from the stored payload
    HistorySet rounded;
    for (std::size_t v = 0; v < histories.size(); ++v) {
      ObservationHistory h = histories[v];
      h.points = rec.histories[v];
      rounded.push_back(std::move(h));
    }
    const RolloutResult rr = teacher_rollout(teacher, rounded, EgoCandidate{rec.candidate}, opt.latent_seed);
    for (std::size_t v = 0; v < histories.size(); ++v) rec.prediction[v] = rr.prediction.positions[v];
    rec.round_to_f32();
    out.records.push_back(std::move(rec));
  };

  const EpisodeResult ep = run_episode(scenario, predictor, opt.planner, steps, opt.traffic, observer);
  out.summary.success = ep.success;
  out.summary.error = ep.error;
  out.summary.records = static_cast<long>(out.records.size());
  if (!ep.success) {
    out.records.clear();  // skip failed scenarios entirely, keep the log entry
    out.summary.records = 0;
    return out;
  }

  // teacher-vs-realized displacement over full-lookahead steps
  const int T = opt.planner.t_plan;
  for (int s = 0; s + T <= static_cast<int>(ep.steps.size()); ++s) {
    const PredictionSet& pred = ep.steps[static_cast<std::size_t>(s)].final_prediction;
    PredictionSet realized = pred;
    for (int v = 0; v < pred.n_vehicles(); ++v) {
      for (int t = 0; t < T; ++t)
        realized.positions[static_cast<std::size_t>(v)].row(t) =
            ep.steps[static_cast<std::size_t>(s + t)].positions_after[static_cast<std::size_t>(v)];
    }
    out.truth_acc.add(pred, realized, T);
  }
  return out;
}

}  // namespace detail

/// Runs the interaction-aware planner with the teacher over every
/// scenario and records one DistillationRecord per constraint
/// evaluation. Scenario failures are skipped and logged, never fatal.
/// Deterministic in (scenarios, weights, options); scenarios may be
/// processed in parallel, records are merged in scenario order.
inline DistillOutput generate_student_dataset(const std::vector<Scenario>& scenarios,
                                              const NetworkParameters& teacher, const DistillOptions& opt) {
  if (teacher.role() != Role::kTeacher) throw std::invalid_argument("generate_student_dataset: teacher weights required");
  std::vector<detail::PerScenarioDistill> per(scenarios.size());
  const unsigned workers = std::max(1u, opt.threads);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= scenarios.size()) break;
      per[i] = detail::distill_one_scenario(scenarios[i], static_cast<std::uint32_t>(i), teacher, opt);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  DistillOutput out;
  DisplacementAccumulator truth;
  for (auto& p : per) {
    for (auto& r : p.records) out.records.push_back(std::move(r));
    out.scenarios.push_back(p.summary);
    truth.ade_sum += p.truth_acc.ade_sum;
    truth.ade_count += p.truth_acc.ade_count;
    truth.fde_sum += p.truth_acc.fde_sum;
    truth.fde_count += p.truth_acc.fde_count;
    truth.examples += p.truth_acc.examples;
  }
  if (truth.examples > 0) out.teacher_vs_sim = truth.report(opt.planner.t_plan);
  long failures = 0;
  for (const auto& s : out.scenarios)
    if (!s.success) ++failures;
  if (failures > 0)
    log::info("distillation: " + std::to_string(failures) + "/" + std::to_string(scenarios.size()) +
              " scenarios skipped");
  return out;
}

/// Teacher-training pairs from generated scenarios: observation windows
/// plus the car-following futures the generator simulated past the
/// observation horizon.
inline std::vector<DistillationRecord> make_training_pairs(const GeneratorConfig& cfg, std::uint64_t seed_base,
                                                           int count) {
  std::vector<DistillationRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const ScenarioWithFuture swf = generate_scenario_with_future(cfg, seed_base + static_cast<std::uint64_t>(i));
    DistillationRecord rec;
    rec.scenario_id = static_cast<std::uint32_t>(i);
    rec.step_index = 0;
    for (const auto& h : swf.scenario.histories) rec.histories.push_back(h.points);
    rec.candidate = swf.future.front();  // ego's true future
    rec.prediction = swf.future;
    rec.round_to_f32();
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace iakd
