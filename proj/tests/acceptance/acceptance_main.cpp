// Acceptance suite: runs every release criterion end-to-end and prints
// one PASS/FAIL line per criterion. Exits non-zero if any criterion
// fails. The pipeline stages (teacher training, distillation, student
// training, paired benchmarks) write their artifacts into --work-dir;
// --reuse skips stages whose outputs already exist (development only —
// conformance runs should start from an empty work dir).

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iakd/bench.hpp"
#include "iakd/dataset.hpp"
#include "iakd/distill.hpp"
#include "iakd/metrics.hpp"
#include "iakd/planner.hpp"
#include "iakd/training.hpp"

#include "../support/reference_qp.hpp"

using namespace iakd;
namespace fs = std::filesystem;

namespace {

struct Line {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Line> g_results;

void report(const std::string& name, bool pass, const std::string& detail) {
  g_results.push_back({name, pass, detail});
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

NetworkParameters random_params(Role role, const NetworkDims& d, std::uint64_t seed, double scale = 0.5) {
  NetworkParameters p = NetworkParameters::init(role, d, seed);
  Rng rng(seed ^ 0xabcdef);
  TensorSet& t = p.mutate();
  for (auto& m : t)
    for (int c = 0; c < m.cols(); ++c)
      for (int r = 0; r < m.rows(); ++r)
        m(r, c) = static_cast<double>(static_cast<float>(rng.uniform(-scale, scale)));
  return p;
}

HistorySet random_histories(int n_vehicles, int t_obs, std::uint64_t seed) {
  Rng rng(seed);
  HistorySet hs;
  for (int v = 0; v < n_vehicles; ++v) {
    ObservationHistory h;
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

Eigen::MatrixX2d straight_candidate(const HistorySet& hs, int t_plan, double sx, double sy) {
  Eigen::MatrixX2d c(t_plan, 2);
  Eigen::Vector2d pos = hs.front().last();
  for (int t = 0; t < t_plan; ++t) {
    pos.x() += sx;
    pos.y() += sy;
    c.row(t) = pos;
  }
  return c;
}

class ConstantPredictor final : public Predictor {
 public:
  ConstantPredictor(Eigen::Vector2d obstacle, int n_vehicles) : obstacle_(obstacle), n_(n_vehicles) {}
  PredictionSet predict(const HistorySet&, const EgoCandidate& cand) const override {
    PredictionSet p;
    p.ego_index = 0;
    for (int v = 0; v < n_; ++v) {
      p.vehicle_ids.push_back(v);
      Eigen::MatrixX2d m(cand.horizon(), 2);
      for (int t = 0; t < cand.horizon(); ++t)
        m.row(t) = v == 0 ? Eigen::RowVector2d(cand.points.row(t)) : Eigen::RowVector2d(obstacle_);
      p.positions.push_back(std::move(m));
    }
    return p;
  }
  std::string name() const override { return "constant"; }

 private:
  Eigen::Vector2d obstacle_;
  int n_;
};

PlanInput ego_only_input(const LaneLayout& lanes, int start_lane, int target_lane, double v, int t_obs, double dt) {
  PlanInput in;
  in.lanes = lanes;
  in.target_lane = target_lane;
  in.desired_speed = v;
  ObservationHistory ego;
  ego.id = 0;
  ego.is_ego = true;
  ego.points.resize(t_obs, 2);
  for (int t = 0; t < t_obs; ++t) {
    ego.points(t, 0) = (t - t_obs + 1) * v * dt;
    ego.points(t, 1) = lanes.center_of(start_lane);
  }
  in.histories.push_back(ego);
  in.ego_state = state_from_history(in.histories.front(), dt);
  return in;
}

std::vector<DistillationRecord> mixed_pairs(int per_bucket, std::uint64_t seed0, const std::vector<int>& ns) {
  std::vector<DistillationRecord> all;
  for (std::size_t b = 0; b < ns.size(); ++b) {
    GeneratorConfig g;
    g.n_vehicles = ns[b];
    auto part = make_training_pairs(g, seed0 + 100000 * (b + 1), per_bucket);
    for (auto& r : part) {
      r.scenario_id += 100000u * static_cast<unsigned>(b + 1);
      all.push_back(std::move(r));
    }
  }
  return all;
}

// ---------------------------------------------------------------------------
// criterion 1: structural cost counters
// ---------------------------------------------------------------------------

void criterion_1() {
  const NetworkParameters teacher = random_params(Role::kTeacher, teacher_dims(), 11);
  const NetworkParameters student = random_params(Role::kStudent, student_dims(), 12);
  bool ok = true;
  std::string detail;
  for (int n : {1, 4, 8}) {
    const HistorySet hs = random_histories(n + 1, 8, 100 + static_cast<std::uint64_t>(n));
    const EgoCandidate cand{straight_candidate(hs, 6, 3.0, 0.2)};
    const RolloutResult t = teacher_rollout(teacher, hs, cand, 5);
    const RolloutResult s = student_rollout(student, hs, cand);
    ok = ok && t.counters.encoder_passes == 6 && t.counters.decoder_steps == 6;
    ok = ok && s.counters.encoder_passes == 1 && s.counters.decoder_steps == 6;
    detail += fmt("N=%d teacher(%ld,%ld) student(%ld,%ld) ", n, t.counters.encoder_passes, t.counters.decoder_steps,
                  s.counters.encoder_passes, s.counters.decoder_steps);
  }
  report("criterion 1 structural cost counters", ok, detail + "(expected teacher (6,6), student (1,6))");
}

// ---------------------------------------------------------------------------
// criterion 2: standalone inference speedup
// ---------------------------------------------------------------------------

void criterion_2() {
  const NetworkParameters teacher = random_params(Role::kTeacher, teacher_dims(), 21);
  const NetworkParameters student = random_params(Role::kStudent, student_dims(), 22);
  bool ok = true;
  std::string detail;
  for (int n : {2, 4, 8, 16}) {
    GeneratorConfig g;
    g.n_vehicles = n;
    g.lanes = std::min(5, 2 + n / 4);
    const Scenario sc = generate_scenario(g, 3000 + static_cast<std::uint64_t>(n));
    const Trajectory cv = constant_velocity_extrapolate(sc.ego(), 6, sc.dt);
    EgoCandidate cand;
    cand.points.resize(6, 2);
    for (int t = 0; t < 6; ++t)
      cand.points.row(t) = Eigen::RowVector2d(cv.states[static_cast<std::size_t>(t)].x,
                                              cv.states[static_cast<std::size_t>(t)].y);
    const double tt = detail::measure_inference([&] { teacher_rollout(teacher, sc.histories, cand, 5); }, 120, 10);
    const double st = detail::measure_inference([&] { student_rollout(student, sc.histories, cand); }, 120, 10);
    const double ratio = st / tt;
    ok = ok && ratio <= 1.0 / 3.0;
    detail += fmt("N=%d %.0fus/%.0fus=%.3f ", n, tt * 1e6, st * 1e6, ratio);
  }
  report("criterion 2 inference speedup", ok, detail + "(threshold: student/teacher <= 0.333)");
}

// ---------------------------------------------------------------------------
// criterion 7: gradient correctness (finite differences)
// ---------------------------------------------------------------------------

void criterion_7() {
  double worst_in = 0.0, worst_par = 0.0;
  int cases_in = 0, cases_par = 0;
  std::uint64_t seed = 7000;
  while (cases_in < 50) {
    ++seed;
    const NetworkParameters p = random_params(Role::kTeacher, {8, 4, 6, 2}, seed);
    const HistorySet hs = random_histories(3, 4, seed * 3 + 1);
    const Eigen::VectorXd z = sample_latent(2, seed);
    RolloutTape rt = teacher_rollout_taped(p, hs, std::nullopt, 2, z);
    if (rt.tape->min_relu_margin() < 1e-3 || rt.tape->min_pool_margin() < 1e-3) continue;
    Rng rng(seed);
    const int out_idx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(rt.flat_outputs())));
    const Eigen::VectorXd g = input_gradient(rt, out_idx);
    const double h = 1e-5;
    for (int probe = 0; probe < 6; ++probe) {
      const int fi = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(g.size())));
      const int v = fi / 8, t = (fi % 8) / 2, c = fi % 2;
      HistorySet hp = hs, hm = hs;
      hp[static_cast<std::size_t>(v)].points(t, c) += h;
      hm[static_cast<std::size_t>(v)].points(t, c) -= h;
      const RolloutResult rp = teacher_rollout_free(p, hp, 2, seed);
      const RolloutResult rm = teacher_rollout_free(p, hm, 2, seed);
      const int ov = out_idx / 4, ot = (out_idx % 4) / 2, oc = out_idx % 2;
      const double fd = (rp.prediction.positions[static_cast<std::size_t>(ov)](ot, oc) -
                         rm.prediction.positions[static_cast<std::size_t>(ov)](ot, oc)) /
                        (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(g[fi]), 1e-6});
      worst_in = std::max(worst_in, std::abs(fd - g[fi]) / scale);
    }
    ++cases_in;
  }
  seed = 7500;
  while (cases_par < 50) {
    ++seed;
    const NetworkParameters p = random_params(Role::kStudent, {8, 4, 6, 0}, seed);
    const HistorySet hs = random_histories(3, 4, seed * 7 + 3);
    const Eigen::MatrixX2d cand = straight_candidate(hs, 3, 2.0, -0.2);
    RolloutTape rt = student_rollout_taped(p, hs, cand);
    if (rt.tape->min_relu_margin() < 1e-3 || rt.tape->min_pool_margin() < 1e-3) continue;
    Rng rng(seed);
    Eigen::VectorXd cvec(rt.flat_outputs());
    for (int i = 0; i < cvec.size(); ++i) cvec[i] = rng.uniform(-1, 1);
    const TensorSet grads = parameter_gradient(rt, cvec);
    auto loss_of = [&](const NetworkParameters& q) {
      const RolloutResult r = student_rollout(q, hs, EgoCandidate{cand});
      double acc = 0.0;
      int k = 0;
      for (int v = 0; v < 3; ++v)
        for (int t = 0; t < 3; ++t)
          for (int c = 0; c < 2; ++c) acc += cvec[k++] * r.prediction.positions[static_cast<std::size_t>(v)](t, c);
      return acc;
    };
    const double h = 1e-5;
    for (int probe = 0; probe < 4; ++probe) {
      const int tid = static_cast<int>(rng.uniform_int(kTensorCount));
      const auto& m = p.tensor(tid);
      const int r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m.rows())));
      const int c = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m.cols())));
      NetworkParameters qp = p, qm = p;
      qp.mutate()[static_cast<std::size_t>(tid)](r, c) += h;
      qm.mutate()[static_cast<std::size_t>(tid)](r, c) -= h;
      const double fd = (loss_of(qp) - loss_of(qm)) / (2 * h);
      const double an = grads[static_cast<std::size_t>(tid)](r, c);
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst_par = std::max(worst_par, std::abs(fd - an) / scale);
    }
    ++cases_par;
  }
  const bool ok = worst_in < 1e-4 && worst_par < 1e-4;
  report("criterion 7 gradient correctness", ok,
         fmt("input-grad worst rel err %.2e, param-grad worst rel err %.2e over 50+50 cases (threshold 1e-4)",
             worst_in, worst_par));
}

// ---------------------------------------------------------------------------
// criterion 8: QP blocks vs dense grid + polish oracle
// ---------------------------------------------------------------------------

double control_block_oracle(const std::function<double(const Eigen::VectorXd&)>& f, double lo, double hi) {
  const int T = 3, grid_n = 201;
  Eigen::VectorXd best = Eigen::VectorXd::Constant(T, lo);
  double best_f = std::numeric_limits<double>::infinity();
  Eigen::VectorXd x(T);
  const double step = (hi - lo) / (grid_n - 1);
  for (int i = 0; i < grid_n; ++i) {
    x[0] = lo + i * step;
    for (int j = 0; j < grid_n; ++j) {
      x[1] = lo + j * step;
      for (int k = 0; k < grid_n; ++k) {
        x[2] = lo + k * step;
        const double v = f(x);
        if (v < best_f) {
          best_f = v;
          best = x;
        }
      }
    }
  }
  for (int sweep = 0; sweep < 300; ++sweep) {
    double moved = 0.0;
    for (int i = 0; i < T; ++i) {
      const double h = 1e-3;
      Eigen::VectorXd xp = best, xm = best;
      xp[i] += h;
      xm[i] -= h;
      const double f0 = f(best), fp = f(xp), fm = f(xm);
      const double d2 = (fp - 2 * f0 + fm) / (h * h);
      if (d2 <= 0) continue;
      const double cand = std::clamp(best[i] - (fp - fm) / (2 * h) / d2, lo, hi);
      moved = std::max(moved, std::abs(cand - best[i]));
      best[i] = cand;
    }
    if (moved < 1e-12) break;
  }
  return f(best);
}

void criterion_8() {
  const int T = 3;
  double worst_gap = 0.0, worst_kkt = 0.0;
  bool boxes_ok = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(8000 + seed);
    Trajectory ref;
    ref.dt = 0.3;
    VehicleState s{0, 0, rng.uniform(-0.2, 0.2), rng.uniform(6, 14)};
    ref.states.push_back(s);
    std::vector<ControlInput> ctrl;
    for (int t = 0; t < T; ++t) {
      ctrl.push_back({rng.uniform(-0.2, 0.2), rng.uniform(-1.5, 1.5)});
      s = step_kinematics(s, ctrl.back(), ref.dt, 2.7);
      ref.states.push_back(s);
    }
    const LinearDynamics dyn = linearize_dynamics(ref, ctrl, 2.7);
    const VehicleState z0 = ref.states[0];
    DecisionVariables vars = DecisionVariables::zeros(T);
    for (int t = 0; t < T; ++t) {
      vars.steer[t] = rng.uniform(-0.3, 0.3);
      vars.accel[t] = rng.uniform(-2, 2);
    }
    for (int i = 0; i < 4 * T; ++i) vars.z[i] = rng.uniform(-5, 15);
    CostWeights w;
    w.steer = rng.uniform(0.2, 2.0);
    w.steer_smooth = rng.uniform(0.0, 2.0);
    w.accel = rng.uniform(0.2, 2.0);
    w.accel_smooth = rng.uniform(0.0, 2.0);
    Eigen::VectorXd mu(4 * T);
    for (int i = 0; i < mu.size(); ++i) mu[i] = rng.uniform(-3, 3);
    const double rho = rng.uniform(0.5, 3.0);
    const GoalSpec goal{0.0, 10.0};
    const ControlBounds bounds;

    auto fs_ = [&](const Eigen::VectorXd& x) {
      DecisionVariables v = vars;
      v.steer = x;
      return augmented_lagrangian(v, mu, rho, w, goal, dyn, z0);
    };
    const BoxQpResult rs = solve_steering_qp(vars, dyn, z0, mu, rho, w, bounds);
    worst_gap = std::max(worst_gap, std::abs(fs_(rs.x) - control_block_oracle(fs_, bounds.steer_min, bounds.steer_max)));
    worst_kkt = std::max(worst_kkt, rs.kkt_residual);
    boxes_ok = boxes_ok && rs.x.minCoeff() >= bounds.steer_min - 1e-12 && rs.x.maxCoeff() <= bounds.steer_max + 1e-12;

    auto fa = [&](const Eigen::VectorXd& x) {
      DecisionVariables v = vars;
      v.accel = x;
      return augmented_lagrangian(v, mu, rho, w, goal, dyn, z0);
    };
    const BoxQpResult ra = solve_accel_qp(vars, dyn, z0, mu, rho, w, bounds);
    worst_gap = std::max(worst_gap, std::abs(fa(ra.x) - control_block_oracle(fa, bounds.accel_min, bounds.accel_max)));
    worst_kkt = std::max(worst_kkt, ra.kkt_residual);
    boxes_ok = boxes_ok && ra.x.minCoeff() >= bounds.accel_min - 1e-12 && ra.x.maxCoeff() <= bounds.accel_max + 1e-12;
  }
  const bool ok = worst_gap < 1e-6 && worst_kkt < 1e-8 && boxes_ok;
  report("criterion 8 QP-block correctness", ok,
         fmt("objective gap %.2e (<1e-6), KKT residual %.2e (<1e-8), boxes %s over 20 paired instances", worst_gap,
             worst_kkt, boxes_ok ? "held" : "VIOLATED"));
}

// ---------------------------------------------------------------------------
// criterion 9: degenerate ADMM equivalence (+ stationary optimum)
// ---------------------------------------------------------------------------

void criterion_9() {
  PlannerConfig tight;
  tight.admm.rho = 2.0;
  tight.admm.primal_tol = 1e-6;
  tight.admm.cost_tol = 1e-9;
  tight.admm.max_epochs = 500;
  tight.gd.max_iters = 4000;
  tight.gd.tol = 1e-10;
  const LaneLayout lanes = LaneLayout::straight(3, 3.7);

  const PlanInput change = ego_only_input(lanes, 1, 2, 10.0, tight.t_obs, tight.dt);
  const ConstantPredictor solo({0, 0}, 1);
  const PlanResult r1 = plan_step(change, solo, tight);
  const iakd_test::RefQpResult ref1 = iakd_test::solve_reference_qp(change, tight);
  const double gap1 = std::abs(r1.diag.final_cost - ref1.cost);

  PlanInput far = ego_only_input(lanes, 0, 1, 10.0, tight.t_obs, tight.dt);
  ObservationHistory other = far.histories.front();
  other.id = 1;
  other.is_ego = false;
  other.points.col(0).array() += 45.0;
  far.histories.push_back(other);
  const ConstantPredictor far_pred({1e5, 1e5}, 2);
  const PlanResult r2 = plan_step(far, far_pred, tight);
  PlanInput far_solo = far;
  far_solo.histories.resize(1);
  const iakd_test::RefQpResult ref2 = iakd_test::solve_reference_qp(far_solo, tight);
  const double gap2 = std::abs(r2.diag.final_cost - ref2.cost);

  PlannerConfig dflt;
  const PlanInput stay = ego_only_input(lanes, 1, 1, 11.0, dflt.t_obs, dflt.dt);
  const PlanResult r3 = plan_step(stay, solo, dflt);
  const double max_ctrl = std::max(r3.vars.steer.cwiseAbs().maxCoeff(), r3.vars.accel.cwiseAbs().maxCoeff());

  const bool ok = gap1 < 1e-4 && gap2 < 1e-4 && r3.diag.final_cost < 1e-4 && max_ctrl < 1e-3;
  report("criterion 9 degenerate ADMM equivalence", ok,
         fmt("cost gaps: no-vehicle %.2e, far-obstacle %.2e (<1e-4); stationary J=%.2e (<1e-4), max control %.2e "
             "(<1e-3)",
             gap1, gap2, r3.diag.final_cost, max_ctrl));
}

// ---------------------------------------------------------------------------
// pipeline stages (teacher -> distillation -> student) and criteria 3-6, 10
// ---------------------------------------------------------------------------

struct Pipeline {
  fs::path work;
  bool reuse = false;
  NetworkParameters teacher;
  NetworkParameters student;
  std::vector<DistillationRecord> heldout_records;
  MetricReport teacher_vs_sim;  // on the held-out scenarios
  std::size_t train_records = 0;
  int student_epochs = 0;
};

void stage_teacher(Pipeline& p) {
  const fs::path path = p.work / "teacher.iakd";
  if (p.reuse && fs::exists(path)) {
    p.teacher = NetworkParameters::load(path.string());
    std::printf("[stage] teacher: reused %s\n", path.c_str());
    return;
  }
  const double t0 = now_s();
  auto pairs = mixed_pairs(700, 1, {1, 2, 3, 4, 5});
  TrainConfig tc;
  tc.role = Role::kTeacher;
  tc.k_var = 5;
  tc.k_var_coeff = 1.0;
  tc.epochs = 30;
  tc.batch_size = 32;
  tc.lr = 1e-3;
  tc.seed = 42;
  const TrainResult tr = train_teacher(pairs, tc);
  p.teacher = tr.params;
  p.teacher.save(path.string());
  std::printf("[stage] teacher: %zu pairs, %d epochs, train loss %.4f -> %.4f (val %.4f), %.0f s\n", pairs.size(),
              tc.epochs, tr.log.front().train_loss, tr.log.back().train_loss, tr.log.back().val_loss, now_s() - t0);
  std::fflush(stdout);
}

std::vector<Scenario> distill_scenarios(std::uint64_t base, int per_bucket) {
  std::vector<Scenario> out;
  for (int n : {2, 3, 4, 6}) {
    GeneratorConfig g;
    g.n_vehicles = n;
    g.lanes = std::min(5, 2 + n / 3);
    for (int i = 0; i < per_bucket; ++i)
      out.push_back(generate_scenario(g, base + 1000 * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(i)));
  }
  return out;
}

void stage_distill_and_student(Pipeline& p) {
  const fs::path train_path = p.work / "train.ds";
  const fs::path held_path = p.work / "heldout.ds";
  const fs::path held_manifest = p.work / "heldout.meta.json";
  const fs::path student_path = p.work / "student.iakd";

  DistillOptions opt;
  opt.planner.admm.max_epochs = 12;  // records do not need converged plans
  opt.latent_seed = 7;
  opt.min_steps = 9;
  opt.max_steps = 14;
  opt.threads = 4;

  std::vector<DistillationRecord> train_records;
  if (p.reuse && fs::exists(train_path) && fs::exists(held_path) && fs::exists(held_manifest)) {
    train_records = load_dataset(train_path.string()).second;
    p.heldout_records = load_dataset(held_path.string()).second;
    std::ifstream f(held_manifest);
    nlohmann::json j;
    f >> j;
    p.teacher_vs_sim.ade = j.at("ade").get<double>();
    p.teacher_vs_sim.fde = j.at("fde").get<double>();
    p.teacher_vs_sim.count = j.at("count").get<long>();
    std::printf("[stage] distillation: reused %zu train / %zu held-out records\n", train_records.size(),
                p.heldout_records.size());
  } else {
    const double t0 = now_s();
    const std::vector<Scenario> train_scen = distill_scenarios(50000, 5);
    DistillOutput train_out = generate_student_dataset(train_scen, p.teacher, opt);
    train_records = std::move(train_out.records);
    save_dataset(train_path.string(), {1, 0, opt.latent_seed, DatasetKind::kDistillation}, train_records);

    const std::vector<Scenario> held_scen = distill_scenarios(90000, 2);
    DistillOutput held_out = generate_student_dataset(held_scen, p.teacher, opt);
    p.heldout_records = std::move(held_out.records);
    p.teacher_vs_sim = held_out.teacher_vs_sim;
    save_dataset(held_path.string(), {1, 0, opt.latent_seed, DatasetKind::kDistillation}, p.heldout_records);
    std::ofstream f(held_manifest);
    f << nlohmann::json{{"ade", p.teacher_vs_sim.ade}, {"fde", p.teacher_vs_sim.fde}, {"count", p.teacher_vs_sim.count}}
      << "\n";
    std::printf("[stage] distillation: %zu train / %zu held-out records, teacher-vs-sim ADE %.3f, %.0f s\n",
                train_records.size(), p.heldout_records.size(), p.teacher_vs_sim.ade, now_s() - t0);
  }
  p.train_records = train_records.size();
  std::fflush(stdout);

  if (p.reuse && fs::exists(student_path)) {
    p.student = NetworkParameters::load(student_path.string());
    p.student_epochs = -1;
    std::printf("[stage] student: reused %s\n", student_path.c_str());
    return;
  }
  const double t0 = now_s();
  TrainConfig sc;
  sc.role = Role::kStudent;
  sc.k_var = 1;
  sc.k_var_coeff = 128.0;
  sc.epochs = 30;
  sc.batch_size = 64;
  sc.lr = 1e-3;
  sc.seed = 43;
  const TrainResult sr = train_student(train_records, sc);
  p.student = sr.params;
  p.student_epochs = sc.epochs;
  p.student.save(student_path.string());
  std::printf("[stage] student: %zu records, %d epochs, train loss %.4f -> %.4f, %.0f s\n", train_records.size(),
              sc.epochs, sr.log.front().train_loss, sr.log.back().train_loss, now_s() - t0);
  std::fflush(stdout);
}

void criterion_6(const Pipeline& p) {
  const MetricReport sm = evaluate_ade_fde(p.student, p.heldout_records, 6, 7);
  const bool scale_ok = p.train_records >= 50000 && (p.student_epochs < 0 || p.student_epochs <= 100);
  const bool ok = scale_ok && sm.ade <= 0.30 && sm.fde <= 0.60 && sm.ade <= 2.0 * p.teacher_vs_sim.ade;
  report("criterion 6 distillation fidelity", ok,
         fmt("student-vs-teacher ADE %.3f (<=0.30) FDE %.3f (<=0.60) on %ld held-out records; teacher-vs-sim ADE "
             "%.3f, ratio %.2f (<=2); train records %zu (>=50k)",
             sm.ade, sm.fde, sm.count, p.teacher_vs_sim.ade, sm.ade / std::max(1e-9, p.teacher_vs_sim.ade),
             p.train_records));
}

void interactivity_invariant(const Pipeline& p) {
  GeneratorConfig g;
  g.n_vehicles = 3;
  const Scenario sc = generate_scenario(g, 31415);
  const double v = state_from_history(sc.ego(), sc.dt).speed;
  EgoCandidate left, right;
  left.points.resize(6, 2);
  right.points.resize(6, 2);
  Eigen::Vector2d pl = sc.ego().last(), pr = sc.ego().last();
  for (int t = 0; t < 6; ++t) {
    pl += Eigen::Vector2d(v * sc.dt * 0.95, 0.55);
    pr += Eigen::Vector2d(v * sc.dt * 0.95, -0.55);
    left.points.row(t) = pl;
    right.points.row(t) = pr;
  }
  auto diff_of = [&](const PredictionSet& a, const PredictionSet& b) {
    double d = 0;
    for (int vv = 1; vv < a.n_vehicles(); ++vv)
      d = std::max(d, (a.positions[static_cast<std::size_t>(vv)] - b.positions[static_cast<std::size_t>(vv)])
                          .cwiseAbs()
                          .maxCoeff());
    return d;
  };
  const double dt_ = diff_of(teacher_rollout(p.teacher, sc.histories, left, 0).prediction,
                             teacher_rollout(p.teacher, sc.histories, right, 0).prediction);
  const double ds = diff_of(student_rollout(p.student, sc.histories, left).prediction,
                            student_rollout(p.student, sc.histories, right).prediction);
  report("invariant: interactivity on trained weights", dt_ > 1e-6 && ds > 1e-6,
         fmt("hard-left vs hard-right neighbor shift: teacher %.4f m, student %.4f m (>1e-6)", dt_, ds));
}

void criteria_3_4_5(const Pipeline& p) {
  std::vector<Scenario> scen;
  for (int n : {2, 4, 8}) {
    GeneratorConfig g;
    g.n_vehicles = n;
    g.lanes = std::min(5, 2 + n / 3);
    for (int i = 0; i < 24; ++i)
      scen.push_back(generate_scenario(g, 70000 + 1000 * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(i)));
  }
  BenchOptions opt;
  opt.latent_seed = 7;
  opt.min_steps = 9;
  opt.max_steps = 16;
  const double t0 = now_s();
  const BenchReport br = run_paired_bench(scen, p.teacher, p.student, opt);
  std::printf("[stage] paired bench: %zu samples, %.0f s\n", br.samples.size(), now_s() - t0);

  std::map<std::tuple<std::string, int, std::string>, std::vector<double>> groups;
  for (const auto& s : br.samples) groups[{s.role, s.n_vehicles, s.metric}].push_back(s.value);
  auto median_of = [&](const std::string& role, int n, const std::string& metric) {
    auto it = groups.find({role, n, metric});
    if (it == groups.end() || it->second.empty()) return -1.0;
    std::vector<double> v = it->second;
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
  };

  bool ok3 = true, ok4 = true;
  std::string d3, d4;
  for (int n : {2, 4, 8}) {
    const double zt = median_of("teacher", n, "z_update_time_s");
    const double zs = median_of("student", n, "z_update_time_s");
    const double pt = median_of("teacher", n, "plan_time_s");
    const double ps = median_of("student", n, "plan_time_s");
    if (zt <= 0 || zs <= 0 || pt <= 0 || ps <= 0) {
      ok3 = ok4 = false;
      continue;
    }
    ok3 = ok3 && zs <= zt / 3.0;
    ok4 = ok4 && ps <= pt / 2.5;
    d3 += fmt("N=%d %.1fms/%.1fms=%.3f ", n, zt * 1e3, zs * 1e3, zs / zt);
    d4 += fmt("N=%d %.2fs/%.2fs=%.3f ", n, pt, ps, ps / pt);
  }
  report("criterion 3 Z-update speedup", ok3, d3 + "(median student/teacher <= 0.333 per bucket)");
  report("criterion 4 total planning speedup", ok4, d4 + "(median student/teacher <= 0.4 per bucket)");

  // cost parity on paired per-step costs
  std::map<std::pair<std::uint32_t, int>, double> tcost, scost;
  for (const auto& s : br.samples)
    if (s.metric == "optimal_cost") (s.role == "teacher" ? tcost : scost)[{s.scenario_id, s.step}] = s.value;
  std::vector<double> xs, ys;
  for (const auto& [k, v] : tcost) {
    auto it = scost.find(k);
    if (it != scost.end()) {
      xs.push_back(v);
      ys.push_back(it->second);
    }
  }
  std::set<std::uint32_t> paired_eps;
  for (const auto& [k, v] : tcost)
    if (scost.count(k)) paired_eps.insert(k.first);
  double mt = 0, ms = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mt += xs[i];
    ms += ys[i];
  }
  mt /= static_cast<double>(xs.size());
  ms /= static_cast<double>(ys.size());
  const double rel = std::abs(mt - ms) / std::max(1e-12, mt);
  const double rho = spearman(xs, ys);
  const bool ok5 = paired_eps.size() >= 20 && rel <= 0.10 && rho >= 0.8;
  report("criterion 5 cost parity", ok5,
         fmt("%zu paired episodes (%zu steps): mean cost teacher %.4f vs student %.4f, rel diff %.3f (<=0.10), "
             "Spearman %.3f (>=0.8)",
             paired_eps.size(), xs.size(), mt, ms, rel, rho));
}

void criterion_10(const Pipeline& p) {
  bool ok = true;
  std::string detail;

  // 1) post-hoc feasibility of successful plans, identical predictor and seed
  {
    long plans = 0, feasible = 0;
    PlannerConfig cfg;
    for (int n : {2, 4}) {
      GeneratorConfig g;
      g.n_vehicles = n;
      for (int i = 0; i < 8; ++i) {
        const Scenario sc = generate_scenario(g, 41000 + 100 * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(i));
        for (const bool use_student : {false, true}) {
          std::unique_ptr<Predictor> pred;
          if (use_student)
            pred = std::make_unique<StudentPredictor>(p.student);
          else
            pred = std::make_unique<TeacherPredictor>(p.teacher, 7);
          PlanInput in;
          in.histories = sc.histories;
          in.ego_state = state_from_history(sc.ego(), sc.dt);
          in.lanes = sc.lanes;
          in.target_lane = sc.target_lane;
          in.desired_speed = sc.desired_speed;
          PlanResult r;
          try {
            r = plan_step(in, *pred, cfg);
          } catch (const std::exception&) {
            continue;  // infeasible-start scenarios are not "successful outputs"
          }
          ++plans;
          EgoCandidate cand;
          cand.points.resize(cfg.t_plan, 2);
          for (int t = 0; t < cfg.t_plan; ++t)
            cand.points.row(t) = Eigen::RowVector2d(r.vars.z[4 * t], r.vars.z[4 * t + 1]);
          const PredictionSet recheck = pred->predict(in.histories, cand);
          bool all_pos = true;
          for (int v = 1; v < recheck.n_vehicles(); ++v)
            for (int t = 0; t < cfg.t_plan; ++t) {
              const Eigen::Vector2d ego{r.vars.z[4 * t], r.vars.z[4 * t + 1]};
              const Eigen::Vector2d other = recheck.positions[static_cast<std::size_t>(v)].row(t);
              if (safety_margin(ego, r.vars.z[4 * t + 2], other, cfg.safety) <= 0.0) all_pos = false;
            }
          if (all_pos) ++feasible;
        }
      }
    }
    ok = ok && plans > 0 && feasible == plans;
    detail += fmt("feasibility %ld/%ld; ", feasible, plans);
  }

  // 2) dual update exactness
  {
    Rng rng(4242);
    bool exact = true;
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd mu(24), F(24);
      for (int i = 0; i < 24; ++i) {
        mu[i] = rng.uniform(-5, 5);
        F[i] = rng.uniform(-5, 5);
      }
      const double rho = rng.uniform(0.1, 10.0);
      const Eigen::VectorXd out = dual_update(mu, rho, F);
      for (int i = 0; i < 24; ++i)
        if (out[i] != mu[i] + rho * F[i]) exact = false;
    }
    ok = ok && exact;
    detail += fmt("dual exact %s; ", exact ? "yes" : "NO");
  }

  // 3) variety loss properties
  {
    Rng rng(4343);
    bool props = true;
    for (int trial = 0; trial < 50; ++trial) {
      PredictionSet truth;
      truth.ego_index = 0;
      const int V = 1 + static_cast<int>(rng.uniform_int(4));
      for (int v = 0; v < V; ++v) {
        truth.vehicle_ids.push_back(v);
        Eigen::MatrixX2d m(4, 2);
        for (int t = 0; t < 4; ++t) m.row(t) = Eigen::RowVector2d(rng.uniform(-5, 5), rng.uniform(-5, 5));
        truth.positions.push_back(std::move(m));
      }
      std::vector<PredictionSet> preds;
      for (int k = 0; k < 3; ++k) {
        PredictionSet q = truth;
        for (auto& m : q.positions) m.array() += rng.uniform(-1, 1);
        preds.push_back(std::move(q));
      }
      const double coeff = rng.uniform(0.5, 4.0);
      const double loss = variety_loss(preds, truth, coeff);
      props = props && loss >= 0.0;
      for (const auto& q : preds) {
        double sum = 0;
        for (int v = 0; v < V; ++v)
          sum += (q.positions[static_cast<std::size_t>(v)] - truth.positions[static_cast<std::size_t>(v)]).norm();
        props = props && loss <= coeff / V * sum + 1e-12;
      }
      std::vector<PredictionSet> dup = preds;
      dup.push_back(preds[0]);
      props = props && variety_loss(dup, truth, coeff) == loss;
    }
    ok = ok && props;
    detail += fmt("variety props %s; ", props ? "yes" : "NO");
  }

  // 4) pooling permutation invariance
  {
    Rng rng(4444);
    bool inv = true;
    const NetworkParameters q = random_params(Role::kTeacher, teacher_dims(), 4545);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Eigen::VectorXd> hs;
      std::vector<Eigen::Vector2d> pos;
      for (int v = 0; v < 5; ++v) {
        Eigen::VectorXd h(32);
        for (int i = 0; i < 32; ++i) h[i] = rng.uniform(-1, 1);
        hs.push_back(h);
        pos.emplace_back(rng.uniform(-30, 30), rng.uniform(-6, 6));
      }
      const auto base = pool_hidden(q, hs, pos);
      std::vector<Eigen::VectorXd> hs2 = {hs[0], hs[4], hs[2], hs[1], hs[3]};
      std::vector<Eigen::Vector2d> pos2 = {pos[0], pos[4], pos[2], pos[1], pos[3]};
      const auto perm = pool_hidden(q, hs2, pos2);
      if ((base[0] - perm[0]).cwiseAbs().maxCoeff() != 0.0) inv = false;
    }
    ok = ok && inv;
    detail += fmt("pool invariance %s; ", inv ? "yes" : "NO");
  }

  // 5) byte-exact reproducibility
  {
    GeneratorConfig g;
    g.n_vehicles = 4;
    const bool scen_ok = scenario_to_string(generate_scenario(g, 99)) == scenario_to_string(generate_scenario(g, 99));

    GeneratorConfig g2;
    g2.n_vehicles = 2;
    std::vector<Scenario> dsc;
    for (int i = 0; i < 2; ++i) dsc.push_back(generate_scenario(g2, 777 + static_cast<std::uint64_t>(i)));
    DistillOptions dopt;
    dopt.latent_seed = 5;
    dopt.min_steps = 4;
    dopt.max_steps = 5;
    dopt.planner.admm.max_epochs = 4;
    dopt.planner.gd.max_iters = 15;
    const DistillOutput da = generate_student_dataset(dsc, p.teacher, dopt);
    DistillOptions dopt4 = dopt;
    dopt4.threads = 4;
    const DistillOutput db = generate_student_dataset(dsc, p.teacher, dopt4);
    bool distill_ok = da.records.size() == db.records.size() && !da.records.empty();
    for (std::size_t i = 0; distill_ok && i < da.records.size(); ++i) {
      distill_ok = da.records[i].scenario_id == db.records[i].scenario_id &&
                   da.records[i].step_index == db.records[i].step_index &&
                   da.records[i].candidate == db.records[i].candidate;
      for (std::size_t v = 0; distill_ok && v < da.records[i].prediction.size(); ++v)
        distill_ok = da.records[i].prediction[v] == db.records[i].prediction[v];
    }

    const fs::path wpath = p.work / "roundtrip.iakd";
    p.teacher.save(wpath.string());
    const NetworkParameters back = NetworkParameters::load(wpath.string());
    bool weights_ok = true;
    for (int id = 0; id < kTensorCount; ++id)
      if ((back.tensor(id) - p.teacher.tensor(id)).cwiseAbs().maxCoeff() != 0.0) weights_ok = false;
    const HistorySet hs = random_histories(3, 8, 4646);
    const EgoCandidate cand{straight_candidate(hs, 6, 3.0, 0.1)};
    const RolloutResult ra = teacher_rollout(p.teacher, hs, cand, 3);
    const RolloutResult rb = teacher_rollout(back, hs, cand, 3);
    for (int v = 0; v < 3; ++v)
      if ((ra.prediction.positions[static_cast<std::size_t>(v)] - rb.prediction.positions[static_cast<std::size_t>(v)])
              .cwiseAbs()
              .maxCoeff() != 0.0)
        weights_ok = false;

    ok = ok && scen_ok && distill_ok && weights_ok;
    detail += fmt("reproducibility scenario %s distill %s weights %s", scen_ok ? "yes" : "NO",
                  distill_ok ? "yes" : "NO", weights_ok ? "yes" : "NO");
  }

  report("criterion 10 feasibility and exactness batch", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance-work";
  bool reuse = false;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc)
      work = argv[++i];
    else if (a == "--reuse")
      reuse = true;
    else if (a == "--quick")
      quick = true;
    else {
      std::fprintf(stderr, "usage: %s [--work-dir DIR] [--reuse] [--quick]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);
  const double t0 = now_s();
  if (quick) std::printf("QUICK MODE: reduced scale, not a conformance run\n");

  criterion_1();
  criterion_2();
  criterion_7();
  criterion_8();
  criterion_9();

  Pipeline p;
  p.work = work;
  p.reuse = reuse;
  stage_teacher(p);
  stage_distill_and_student(p);
  criterion_6(p);
  interactivity_invariant(p);
  if (!quick) criteria_3_4_5(p);
  criterion_10(p);

  std::printf("\n==== acceptance summary (%.0f s) ====\n", now_s() - t0);
  bool all = true;
  for (const auto& r : g_results) {
    std::printf("[%s] %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str());
    all = all && r.pass;
  }
  std::printf("%s\n", all ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
