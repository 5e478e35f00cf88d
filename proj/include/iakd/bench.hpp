#pragma once

#include <sys/utsname.h>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iakd/digest.hpp"
#include "iakd/distill.hpp"
#include "iakd/planner.hpp"
#include "iakd/stats.hpp"

#ifndef IAKD_VERSION
#define IAKD_VERSION "dev"
#endif

namespace iakd {

struct BenchOptions {
  PlannerConfig planner;
  CarFollowingParams traffic;
  std::uint64_t seed = 0;
  std::uint64_t latent_seed = 0;
  int min_steps = 9;
  int max_steps = 30;
  int inference_reps = 120;   // standalone rollout repetitions (>= 100)
  int inference_groups = 10;  // median of per-group means
};

/// One raw measurement; step/epoch are -1 where not applicable.
struct BenchSample {
  std::string role;
  int n_vehicles = 0;
  std::uint32_t scenario_id = 0;
  int step = -1;
  int epoch = -1;
  std::string metric;
  double value = 0.0;
};

struct BenchRow {
  std::string role;
  int n_vehicles = 0;
  std::string metric;
  SampleStats stats;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<BenchSample> samples;
  nlohmann::json manifest;
};

inline std::uint64_t params_digest(const NetworkParameters& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto d = p.dims();
  const std::uint32_t meta[5] = {static_cast<std::uint32_t>(p.role()), static_cast<std::uint32_t>(d.hidden),
                                 static_cast<std::uint32_t>(d.embed), static_cast<std::uint32_t>(d.mlp),
                                 static_cast<std::uint32_t>(d.latent)};
  h = fnv1a64(meta, sizeof(meta), h);
  for (int id = 0; id < kTensorCount; ++id) {
    const Eigen::MatrixXd& m = p.tensor(id);
    for (int c = 0; c < m.cols(); ++c)
      for (int r = 0; r < m.rows(); ++r) {
        const auto v = static_cast<float>(m(r, c));
        h = fnv1a64(&v, sizeof(v), h);
      }
  }
  return h;
}

inline std::string host_descriptor() {
  utsname u{};
  if (uname(&u) != 0) return "unknown";
  return std::string(u.sysname) + " " + u.release + " " + u.machine;
}

namespace detail {

inline double timed_seconds(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Warm repetitions split into groups; returns the per-group means
/// (the headline statistic is their median).
inline std::vector<double> inference_group_means(const std::function<void()>& rollout, int reps, int groups) {
  for (int i = 0; i < 10; ++i) rollout();  // warm-up
  const int per_group = std::max(1, (reps + groups - 1) / groups);
  std::vector<double> means;
  for (int gq = 0; gq < groups; ++gq) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < per_group; ++i) rollout();
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    means.push_back(elapsed / per_group);
  }
  return means;
}

/// Median of warm per-group means.
inline double measure_inference(const std::function<void()>& rollout, int reps, int groups) {
  std::vector<double> means = inference_group_means(rollout, reps, groups);
  std::sort(means.begin(), means.end());
  return quantile_sorted(means, 0.5);
}

}  // namespace detail

/// Paired benchmark: every scenario is planned end-to-end with both the
/// teacher and the student on identical seeds. Episodes that fail under
/// either network are excluded from the statistics (and counted in the
/// manifest) to keep the pairing exact. Runs sequentially so timing
/// samples see no concurrent load.
inline BenchReport run_paired_bench(const std::vector<Scenario>& scenarios, const NetworkParameters& teacher,
                                    const NetworkParameters& student, const BenchOptions& opt) {
  BenchReport report;
  std::map<int, std::vector<std::size_t>> buckets;  // n surrounding vehicles -> scenario indices
  for (std::size_t i = 0; i < scenarios.size(); ++i) buckets[scenarios[i].n_vehicles() - 1].push_back(i);

  nlohmann::json failures = nlohmann::json::array();
  nlohmann::json bucket_ids = nlohmann::json::object();

  for (const auto& [n_vehicles, idxs] : buckets) {
    std::vector<std::uint32_t> paired_ids;
    for (const std::size_t i : idxs) {
      const Scenario& sc = scenarios[i];
      const int steps = opt.min_steps + static_cast<int>(Rng(sc.seed).derive(41).uniform_int(
                                            static_cast<std::uint64_t>(opt.max_steps - opt.min_steps + 1)));
      const TeacherPredictor tp(teacher, opt.latent_seed);
      const StudentPredictor sp(student);
      const EpisodeResult te = run_episode(sc, tp, opt.planner, steps, opt.traffic);
      const EpisodeResult se = run_episode(sc, sp, opt.planner, steps, opt.traffic);
      if (!te.success || !se.success) {
        failures.push_back({{"scenario", i},
                            {"n_vehicles", n_vehicles},
                            {"teacher_error", te.success ? "" : te.error},
                            {"student_error", se.success ? "" : se.error}});
        continue;
      }
      paired_ids.push_back(static_cast<std::uint32_t>(i));
      auto emit = [&](const char* role, const EpisodeResult& ep) {
        for (std::size_t s = 0; s < ep.steps.size(); ++s) {
          const auto& slog = ep.steps[s];
          report.samples.push_back({role, n_vehicles, static_cast<std::uint32_t>(i), static_cast<int>(s), -1,
                                    "plan_time_s", slog.plan_time});
          report.samples.push_back({role, n_vehicles, static_cast<std::uint32_t>(i), static_cast<int>(s), -1,
                                    "optimal_cost", slog.diag.final_cost});
          for (std::size_t e = 0; e < slog.diag.z_update_times.size(); ++e)
            report.samples.push_back({role, n_vehicles, static_cast<std::uint32_t>(i), static_cast<int>(s),
                                      static_cast<int>(e), "z_update_time_s", slog.diag.z_update_times[e]});
        }
      };
      emit("teacher", te);
      emit("student", se);
    }
    bucket_ids[std::to_string(n_vehicles)] = paired_ids;

    // standalone inference timing on the first scenario of the bucket
    if (!idxs.empty()) {
      const Scenario& sc = scenarios[idxs.front()];
      const Trajectory cv = constant_velocity_extrapolate(sc.ego(), opt.planner.t_plan, sc.dt);
      EgoCandidate cand;
      cand.points.resize(opt.planner.t_plan, 2);
      for (int t = 0; t < opt.planner.t_plan; ++t)
        cand.points.row(t) = Eigen::RowVector2d(cv.states[static_cast<std::size_t>(t)].x,
                                                cv.states[static_cast<std::size_t>(t)].y);
      const std::vector<double> t_means = detail::inference_group_means(
          [&] { teacher_rollout(teacher, sc.histories, cand, opt.latent_seed); }, opt.inference_reps,
          opt.inference_groups);
      const std::vector<double> s_means = detail::inference_group_means(
          [&] { student_rollout(student, sc.histories, cand); }, opt.inference_reps, opt.inference_groups);
      for (std::size_t g = 0; g < t_means.size(); ++g)
        report.samples.push_back({"teacher", n_vehicles, static_cast<std::uint32_t>(idxs.front()), -1,
                                  static_cast<int>(g), "inference_time_s", t_means[g]});
      for (std::size_t g = 0; g < s_means.size(); ++g)
        report.samples.push_back({"student", n_vehicles, static_cast<std::uint32_t>(idxs.front()), -1,
                                  static_cast<int>(g), "inference_time_s", s_means[g]});
    }
  }

  // summary rows
  std::map<std::tuple<std::string, int, std::string>, std::vector<double>> grouped;
  for (const auto& s : report.samples) grouped[{s.role, s.n_vehicles, s.metric}].push_back(s.value);
  for (const auto& [key, values] : grouped) {
    BenchRow row;
    row.role = std::get<0>(key);
    row.n_vehicles = std::get<1>(key);
    row.metric = std::get<2>(key);
    row.stats = summarize(values);
    report.rows.push_back(row);
  }

  report.manifest = {{"tool_version", IAKD_VERSION},
                     {"host", host_descriptor()},
                     {"seed", opt.seed},
                     {"latent_seed", opt.latent_seed},
                     {"planner_config_digest", digest_hex(fnv1a64(planner_config_to_json(opt.planner).dump()))},
                     {"teacher_digest", digest_hex(params_digest(teacher))},
                     {"student_digest", digest_hex(params_digest(student))},
                     {"episode_failures", failures},
                     {"paired_scenarios", bucket_ids},
                     {"inference_reps", opt.inference_reps}};
  return report;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline std::string bench_report_csv(const BenchReport& r) {
  std::ostringstream os;
  os << "role,n_vehicles,metric,count,mean,median,p25,p75,min,max\n";
  os.precision(17);
  for (const auto& row : r.rows)
    os << row.role << ',' << row.n_vehicles << ',' << row.metric << ',' << row.stats.count << ',' << row.stats.mean
       << ',' << row.stats.median << ',' << row.stats.p25 << ',' << row.stats.p75 << ',' << row.stats.min << ','
       << row.stats.max << '\n';
  return os.str();
}

inline std::string bench_samples_csv(const BenchReport& r) {
  std::ostringstream os;
  os << "role,n_vehicles,scenario_id,step,epoch,metric,value\n";
  os.precision(17);
  for (const auto& s : r.samples)
    os << s.role << ',' << s.n_vehicles << ',' << s.scenario_id << ',' << s.step << ',' << s.epoch << ',' << s.metric
       << ',' << s.value << '\n';
  return os.str();
}

inline nlohmann::json bench_report_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"role", row.role},
                    {"n_vehicles", row.n_vehicles},
                    {"metric", row.metric},
                    {"count", row.stats.count},
                    {"mean", row.stats.mean},
                    {"median", row.stats.median},
                    {"p25", row.stats.p25},
                    {"p75", row.stats.p75},
                    {"min", row.stats.min},
                    {"max", row.stats.max}});
  return nlohmann::json{{"rows", rows}, {"manifest", r.manifest}};
}

/// Parses a report CSV back into rows (lossless for the emitted format).
inline std::vector<BenchRow> bench_report_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  if (line != "role,n_vehicles,metric,count,mean,median,p25,p75,min,max")
    throw std::runtime_error("bench csv: unexpected header");
  std::vector<BenchRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    BenchRow row;
    std::getline(ls, row.role, ',');
    std::getline(ls, tok, ',');
    row.n_vehicles = std::stoi(tok);
    std::getline(ls, row.metric, ',');
    std::getline(ls, tok, ',');
    row.stats.count = static_cast<std::size_t>(std::stoull(tok));
    std::getline(ls, tok, ',');
    row.stats.mean = std::stod(tok);
    std::getline(ls, tok, ',');
    row.stats.median = std::stod(tok);
    std::getline(ls, tok, ',');
    row.stats.p25 = std::stod(tok);
    std::getline(ls, tok, ',');
    row.stats.p75 = std::stod(tok);
    std::getline(ls, tok, ',');
    row.stats.min = std::stod(tok);
    std::getline(ls, tok, ',');
    row.stats.max = std::stod(tok);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace iakd
