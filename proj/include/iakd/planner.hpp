#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iakd/log.hpp"
#include "iakd/predictor.hpp"
#include "iakd/scenario.hpp"
#include "iakd/vehicle.hpp"

namespace iakd {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct CostWeights {
  double steer = 1.0;          // Phi1 magnitude
  double steer_smooth = 2.5;   // Phi1 first difference
  double accel = 0.2;          // Phi2 magnitude
  double accel_smooth = 0.4;   // Phi2 first difference
  double lane = 0.02;          // Phi3 offset to target centerline
  double speed = 0.08;         // Phi3 speed tracking
  double jerk = 0.2;           // Phi3 second difference on xy
};

struct ControlBounds {
  double steer_min = -0.5;
  double steer_max = 0.5;
  double accel_min = -4.0;
  double accel_max = 3.0;
};

/// Heading-aligned safety ellipse; margin is folded into both semi-axes.
struct SafetyParams {
  double a_len = 6.0;
  double b_lat = 2.2;
  double margin = 0.0;
};

struct AdmmParams {
  double rho = 1.0;
  double primal_tol = 1e-3;
  double cost_tol = 1e-4;
  int max_epochs = 50;
};

struct GdParams {
  double step = 0.1;
  int max_iters = 100;
  double tol = 1e-4;
};

struct PlannerConfig {
  double dt = 0.3;
  int t_plan = 6;
  int t_obs = 8;
  double wheelbase = 2.7;
  ControlBounds bounds;
  CostWeights weights;
  SafetyParams safety;
  AdmmParams admm;
  GdParams gd;
};

inline nlohmann::json planner_config_to_json(const PlannerConfig& c) {
  nlohmann::json j;
  j["dt"] = c.dt;
  j["t_plan"] = c.t_plan;
  j["t_obs"] = c.t_obs;
  j["wheelbase"] = c.wheelbase;
  j["bounds"] = {{"steer", {c.bounds.steer_min, c.bounds.steer_max}},
                 {"accel", {c.bounds.accel_min, c.bounds.accel_max}}};
  j["weights"] = {{"steer", c.weights.steer},       {"steer_smooth", c.weights.steer_smooth},
                  {"accel", c.weights.accel},       {"accel_smooth", c.weights.accel_smooth},
                  {"lane", c.weights.lane},         {"speed", c.weights.speed},
                  {"jerk", c.weights.jerk}};
  j["safety"] = {{"a_len", c.safety.a_len}, {"b_lat", c.safety.b_lat}, {"margin", c.safety.margin}};
  j["admm"] = {{"rho", c.admm.rho},
               {"primal_tol", c.admm.primal_tol},
               {"cost_tol", c.admm.cost_tol},
               {"max_epochs", c.admm.max_epochs}};
  j["gd"] = {{"step", c.gd.step}, {"max_iters", c.gd.max_iters}, {"tol", c.gd.tol}};
  return j;
}

inline PlannerConfig planner_config_from_json(const nlohmann::json& j) {
  PlannerConfig c;
  c.dt = j.value("dt", c.dt);
  c.t_plan = j.value("t_plan", c.t_plan);
  c.t_obs = j.value("t_obs", c.t_obs);
  c.wheelbase = j.value("wheelbase", c.wheelbase);
  if (j.contains("bounds")) {
    const auto& b = j.at("bounds");
    if (b.contains("steer")) {
      c.bounds.steer_min = b.at("steer")[0].get<double>();
      c.bounds.steer_max = b.at("steer")[1].get<double>();
    }
    if (b.contains("accel")) {
      c.bounds.accel_min = b.at("accel")[0].get<double>();
      c.bounds.accel_max = b.at("accel")[1].get<double>();
    }
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.steer = w.value("steer", c.weights.steer);
    c.weights.steer_smooth = w.value("steer_smooth", c.weights.steer_smooth);
    c.weights.accel = w.value("accel", c.weights.accel);
    c.weights.accel_smooth = w.value("accel_smooth", c.weights.accel_smooth);
    c.weights.lane = w.value("lane", c.weights.lane);
    c.weights.speed = w.value("speed", c.weights.speed);
    c.weights.jerk = w.value("jerk", c.weights.jerk);
  }
  if (j.contains("safety")) {
    const auto& s = j.at("safety");
    c.safety.a_len = s.value("a_len", c.safety.a_len);
    c.safety.b_lat = s.value("b_lat", c.safety.b_lat);
    c.safety.margin = s.value("margin", c.safety.margin);
  }
  if (j.contains("admm")) {
    const auto& a = j.at("admm");
    c.admm.rho = a.value("rho", c.admm.rho);
    c.admm.primal_tol = a.value("primal_tol", c.admm.primal_tol);
    c.admm.cost_tol = a.value("cost_tol", c.admm.cost_tol);
    c.admm.max_epochs = a.value("max_epochs", c.admm.max_epochs);
  }
  if (j.contains("gd")) {
    const auto& g = j.at("gd");
    c.gd.step = g.value("step", c.gd.step);
    c.gd.max_iters = g.value("max_iters", c.gd.max_iters);
    c.gd.tol = g.value("tol", c.gd.tol);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

/// Lane/speed objective for Phi3.
struct GoalSpec {
  double target_y = 0.0;
  double desired_speed = 0.0;
};

inline double phi1(const Eigen::VectorXd& steer, const CostWeights& w) {
  double c = w.steer * steer.squaredNorm();
  for (int t = 1; t < steer.size(); ++t) c += w.steer_smooth * (steer[t] - steer[t - 1]) * (steer[t] - steer[t - 1]);
  return c;
}

inline double phi2(const Eigen::VectorXd& accel, const CostWeights& w) {
  double c = w.accel * accel.squaredNorm();
  for (int t = 1; t < accel.size(); ++t) c += w.accel_smooth * (accel[t] - accel[t - 1]) * (accel[t] - accel[t - 1]);
  return c;
}

inline double phi3(const Eigen::VectorXd& z, const VehicleState& z0, const GoalSpec& goal, const CostWeights& w) {
  const int T = static_cast<int>(z.size()) / 4;
  double c = 0.0;
  for (int t = 0; t < T; ++t) {
    const double y = z[4 * t + 1];
    const double v = z[4 * t + 3];
    c += w.lane * (y - goal.target_y) * (y - goal.target_y);
    c += w.speed * (v - goal.desired_speed) * (v - goal.desired_speed);
  }
  // second differences on xy, anchored at the measured position
  auto px = [&](int t) { return t == 0 ? z0.x : z[4 * (t - 1)]; };
  auto py = [&](int t) { return t == 0 ? z0.y : z[4 * (t - 1) + 1]; };
  for (int t = 1; t + 1 <= T; ++t) {
    const double jx = px(t + 1) - 2 * px(t) + px(t - 1);
    const double jy = py(t + 1) - 2 * py(t) + py(t - 1);
    c += w.jerk * (jx * jx + jy * jy);
  }
  return c;
}

inline Eigen::VectorXd phi3_gradient(const Eigen::VectorXd& z, const VehicleState& z0, const GoalSpec& goal,
                                     const CostWeights& w) {
  const int T = static_cast<int>(z.size()) / 4;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
  for (int t = 0; t < T; ++t) {
    g[4 * t + 1] += 2.0 * w.lane * (z[4 * t + 1] - goal.target_y);
    g[4 * t + 3] += 2.0 * w.speed * (z[4 * t + 3] - goal.desired_speed);
  }
  auto px = [&](int t) { return t == 0 ? z0.x : z[4 * (t - 1)]; };
  auto py = [&](int t) { return t == 0 ? z0.y : z[4 * (t - 1) + 1]; };
  for (int t = 1; t + 1 <= T; ++t) {
    const double jx = px(t + 1) - 2 * px(t) + px(t - 1);
    const double jy = py(t + 1) - 2 * py(t) + py(t - 1);
    // d/d q_{t+1}, q_t, q_{t-1} (q_0 is constant)
    g[4 * t] += 2.0 * w.jerk * jx;
    g[4 * t + 1] += 2.0 * w.jerk * jy;
    g[4 * (t - 1)] += -4.0 * w.jerk * jx;
    g[4 * (t - 1) + 1] += -4.0 * w.jerk * jy;
    if (t >= 2) {
      g[4 * (t - 2)] += 2.0 * w.jerk * jx;
      g[4 * (t - 2) + 1] += 2.0 * w.jerk * jy;
    }
  }
  return g;
}

inline double cost_J(const DecisionVariables& vars, const VehicleState& z0, const GoalSpec& goal,
                     const CostWeights& w) {
  return phi1(vars.steer, w) + phi2(vars.accel, w) + phi3(vars.z, z0, goal, w);
}

/// L_rho = Phi1 + Phi2 + Phi3 + mu'F + (rho/2)||F||^2.
inline double augmented_lagrangian(const DecisionVariables& vars, const Eigen::VectorXd& mu, double rho,
                                   const CostWeights& w, const GoalSpec& goal, const LinearDynamics& dyn,
                                   const VehicleState& z0) {
  const Eigen::VectorXd F = residual_F(vars, dyn, z0);
  return cost_J(vars, z0, goal, w) + mu.dot(F) + 0.5 * rho * F.squaredNorm();
}

/// mu' = mu + rho F, elementwise exact.
inline Eigen::VectorXd dual_update(const Eigen::VectorXd& mu, double rho, const Eigen::VectorXd& F) {
  if (mu.size() != F.size()) throw std::invalid_argument("dual_update: dimension mismatch");
  return mu + rho * F;
}

// ---------------------------------------------------------------------------
// Box-constrained QP (steering / acceleration blocks)
// ---------------------------------------------------------------------------

struct BoxQpResult {
  Eigen::VectorXd x;
  double kkt_residual = 0.0;
  int sweeps = 0;
};

inline double box_qp_kkt_residual(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::VectorXd& x,
                                  double lo, double hi) {
  const Eigen::VectorXd grad = H * x + g;
  double kkt = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    double viol;
    if (x[i] <= lo + 1e-14)
      viol = std::max(0.0, -grad[i]);
    else if (x[i] >= hi - 1e-14)
      viol = std::max(0.0, grad[i]);
    else
      viol = std::abs(grad[i]);
    kkt = std::max(kkt, viol);
  }
  return kkt;
}

/// minimize 0.5 x'Hx + g'x  s.t.  lo <= x_i <= hi.
/// Exact unconstrained solve, clip, then cyclic coordinate-Newton
/// refinement until the KKT residual drops below tol.
inline BoxQpResult solve_box_qp(Eigen::MatrixXd H, const Eigen::VectorXd& g, double lo, double hi,
                                double tol = 1e-9, int max_sweeps = 2000) {
  const int n = static_cast<int>(g.size());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
    log::warn("box QP: non-positive-definite Hessian, regularizing with 1e-8 I");
    H += 1e-8 * Eigen::MatrixXd::Identity(n, n);
    ldlt.compute(H);
  }
  BoxQpResult r;
  r.x = ldlt.solve(-g).cwiseMax(lo).cwiseMin(hi);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    r.kkt_residual = box_qp_kkt_residual(H, g, r.x, lo, hi);
    r.sweeps = sweep;
    if (r.kkt_residual <= tol) return r;
    for (int i = 0; i < n; ++i) {
      const double hii = H(i, i);
      if (hii <= 0.0) continue;
      const double rest = H.row(i).dot(r.x) - hii * r.x[i];
      r.x[i] = std::clamp((-g[i] - rest) / hii, lo, hi);
    }
  }
  r.kkt_residual = box_qp_kkt_residual(H, g, r.x, lo, hi);
  return r;
}

namespace detail {

/// Hessian/linear-term assembly for the control blocks. F is affine in
/// the selected control column: F = F0 + G u, with G column t equal to
/// -B_t[:, col] placed in block t.
inline void control_qp_terms(const DecisionVariables& vars, const LinearDynamics& dyn, const VehicleState& z0,
                             const Eigen::VectorXd& mu, double rho, int col, double w_mag, double w_smooth,
                             Eigen::MatrixXd& H, Eigen::VectorXd& g) {
  const int T = vars.horizon();
  DecisionVariables at_zero = vars;
  (col == 0 ? at_zero.steer : at_zero.accel).setZero();
  const Eigen::VectorXd F0 = residual_F(at_zero, dyn, z0);

  Eigen::MatrixXd P = w_mag * Eigen::MatrixXd::Identity(T, T);
  for (int t = 1; t < T; ++t) {
    P(t, t) += w_smooth;
    P(t - 1, t - 1) += w_smooth;
    P(t, t - 1) -= w_smooth;
    P(t - 1, t) -= w_smooth;
  }
  H = 2.0 * P;
  g = Eigen::VectorXd::Zero(T);
  const Eigen::VectorXd muF = mu + rho * F0;
  for (int t = 0; t < T; ++t) {
    const Eigen::Vector4d bcol = dyn.B[static_cast<std::size_t>(t)].col(col);
    H(t, t) += rho * bcol.squaredNorm();
    g[t] = -bcol.dot(muF.segment<4>(4 * t));
  }
}

}  // namespace detail

/// argmin over the steering block of L_rho with the other blocks fixed.
inline BoxQpResult solve_steering_qp(const DecisionVariables& vars, const LinearDynamics& dyn,
                                     const VehicleState& z0, const Eigen::VectorXd& mu, double rho,
                                     const CostWeights& w, const ControlBounds& bounds) {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  detail::control_qp_terms(vars, dyn, z0, mu, rho, 0, w.steer, w.steer_smooth, H, g);
  return solve_box_qp(std::move(H), g, bounds.steer_min, bounds.steer_max);
}

/// argmin over the acceleration block, mirror of the steering update.
inline BoxQpResult solve_accel_qp(const DecisionVariables& vars, const LinearDynamics& dyn, const VehicleState& z0,
                                  const Eigen::VectorXd& mu, double rho, const CostWeights& w,
                                  const ControlBounds& bounds) {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  detail::control_qp_terms(vars, dyn, z0, mu, rho, 1, w.accel, w.accel_smooth, H, g);
  return solve_box_qp(std::move(H), g, bounds.accel_min, bounds.accel_max);
}

// ---------------------------------------------------------------------------
// Safety constraints and the projected-gradient state update
// ---------------------------------------------------------------------------

/// Ellipse margin in the ego heading frame; positive means clear of the
/// predicted vehicle, zero sits on the boundary (treated as infeasible —
/// the constraint is strict).
inline double safety_margin(const Eigen::Vector2d& ego_xy, double ego_heading, const Eigen::Vector2d& other_xy,
                            const SafetyParams& s) {
  const double a = s.a_len + s.margin;
  const double b = s.b_lat + s.margin;
  const double dx = other_xy.x() - ego_xy.x();
  const double dy = other_xy.y() - ego_xy.y();
  const double c = std::cos(ego_heading), sn = std::sin(ego_heading);
  const double dxr = c * dx + sn * dy;
  const double dyr = -sn * dx + c * dy;
  return (dxr / a) * (dxr / a) + (dyr / b) * (dyr / b) - 1.0;
}

/// Observer invoked on every constraint evaluation inside the state
/// update (one teacher/student rollout each); the distillation pipeline
/// records these triples.
using ConstraintEvalObserver =
    std::function<void(const HistorySet&, const Eigen::MatrixX2d& candidate, const PredictionSet&)>;

struct StateUpdateResult {
  Eigen::VectorXd z;
  long predictor_calls = 0;
  int gd_iterations = 0;
  bool restored = false;  // initial point needed feasibility restoration
  double l_start = 0.0;   // L_rho at the (possibly restored) start
  double l_end = 0.0;
  PredictionSet prediction;  // prediction for the accepted candidate
};

namespace detail {

inline EgoCandidate candidate_from_z(const Eigen::VectorXd& z) {
  const int T = static_cast<int>(z.size()) / 4;
  EgoCandidate c;
  c.points.resize(T, 2);
  for (int t = 0; t < T; ++t) {
    c.points(t, 0) = z[4 * t];
    c.points(t, 1) = z[4 * t + 1];
  }
  return c;
}

struct FeasibilityCheck {
  bool feasible = false;
  PredictionSet prediction;
};

inline FeasibilityCheck check_feasible(const Eigen::VectorXd& z, const Predictor& predictor,
                                       const HistorySet& histories, const SafetyParams& safety, long& calls,
                                       const ConstraintEvalObserver& observer) {
  const EgoCandidate cand = candidate_from_z(z);
  FeasibilityCheck out;
  out.prediction = predictor.predict(histories, cand);
  ++calls;
  if (observer) observer(histories, cand.points, out.prediction);
  const int T = cand.horizon();
  out.feasible = true;
  for (int v = 0; v < out.prediction.n_vehicles(); ++v) {
    if (v == out.prediction.ego_index) continue;
    for (int t = 0; t < T; ++t) {
      const Eigen::Vector2d ego{z[4 * t], z[4 * t + 1]};
      const double heading = z[4 * t + 2];
      const Eigen::Vector2d other = out.prediction.positions[static_cast<std::size_t>(v)].row(t);
      if (safety_margin(ego, heading, other, safety) <= 0.0) {
        out.feasible = false;
        return out;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Projected gradient descent on L_rho over Z. Only the quadratic
/// objective is differentiated; the predictor is consulted by value to
/// keep every accepted iterate strictly feasible (backtracking halves
/// the step, at most 20 times, never differentiating the network).
inline StateUpdateResult solve_state_update(const DecisionVariables& vars_in, const Eigen::VectorXd& z_init,
                                            const Eigen::VectorXd& mu, double rho, const CostWeights& w,
                                            const GoalSpec& goal, const LinearDynamics& dyn, const VehicleState& z0,
                                            const Predictor& predictor, const HistorySet& histories,
                                            const SafetyParams& safety, const GdParams& gd,
                                            const Eigen::VectorXd& z_cv_guess,
                                            const ConstraintEvalObserver& observer = nullptr) {
  const int T = static_cast<int>(z_init.size()) / 4;
  DecisionVariables vars = vars_in;
  vars.z = z_init;

  auto l_of = [&](const Eigen::VectorXd& z) {
    DecisionVariables v = vars;
    v.z = z;
    return augmented_lagrangian(v, mu, rho, w, goal, dyn, z0);
  };
  auto grad_of = [&](const Eigen::VectorXd& z) {
    DecisionVariables v = vars;
    v.z = z;
    const Eigen::VectorXd F = residual_F(v, dyn, z0);
    const Eigen::VectorXd muF = mu + rho * F;
    Eigen::VectorXd g = phi3_gradient(z, z0, goal, w);
    for (int s = 1; s <= T; ++s) {
      g.segment<4>(4 * (s - 1)) += muF.segment<4>(4 * (s - 1));
      if (s <= T - 1) g.segment<4>(4 * (s - 1)) -= dyn.A[static_cast<std::size_t>(s)].transpose() * muF.segment<4>(4 * s);
    }
    return g;
  };

  StateUpdateResult out;
  out.z = z_init;

  detail::FeasibilityCheck fc =
      detail::check_feasible(out.z, predictor, histories, safety, out.predictor_calls, observer);
  if (!fc.feasible) {
    // feasibility restoration: shrink toward the constant-velocity guess
    bool recovered = false;
    for (double sfrac : {0.25, 0.5, 0.75, 1.0}) {
      const Eigen::VectorXd zc = (1.0 - sfrac) * z_init + sfrac * z_cv_guess;
      fc = detail::check_feasible(zc, predictor, histories, safety, out.predictor_calls, observer);
      if (fc.feasible) {
        out.z = zc;
        out.restored = true;
        recovered = true;
        break;
      }
    }
    if (!recovered) throw std::runtime_error("infeasible start");
  }
  out.prediction = fc.prediction;

  double l_cur = l_of(out.z);
  out.l_start = l_cur;
  for (int iter = 0; iter < gd.max_iters; ++iter) {
    out.gd_iterations = iter + 1;
    const Eigen::VectorXd g = grad_of(out.z);
    double step = gd.step;
    bool accepted = false;
    Eigen::VectorXd z_next;
    double l_next = 0.0;
    for (int half = 0; half <= 20; ++half) {
      z_next = out.z - step * g;
      l_next = l_of(z_next);
      if (l_next < l_cur) {
        const detail::FeasibilityCheck c =
            detail::check_feasible(z_next, predictor, histories, safety, out.predictor_calls, observer);
        if (c.feasible) {
          accepted = true;
          out.prediction = c.prediction;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double displacement = (z_next - out.z).cwiseAbs().maxCoeff();
    out.z = z_next;
    l_cur = l_next;
    if (displacement < gd.tol) break;
  }
  out.l_end = l_cur;
  return out;
}

// ---------------------------------------------------------------------------
// Full MPC step (Algorithm: ADMM with re-linearization)
// ---------------------------------------------------------------------------

struct PlanInput {
  HistorySet histories;  // current observation windows, ego first
  VehicleState ego_state;
  LaneLayout lanes;
  int target_lane = 0;
  double desired_speed = 0.0;
};

/// Dual state of one receding-horizon solve. rho stays fixed within a
/// solve; the residual history records the primal norm per epoch.
struct AdmmState {
  Eigen::VectorXd mu;
  double rho = 1.0;
  int epochs = 0;
  std::vector<double> residual_history;

  static AdmmState init(int t_plan, double rho) { return {Eigen::VectorXd::Zero(4 * t_plan), rho, 0, {}}; }
};

struct PlanDiagnostics {
  double delta_time = 0.0;
  double alpha_time = 0.0;
  double z_time = 0.0;
  double dual_time = 0.0;
  std::vector<double> z_update_times;  // one entry per ADMM epoch
  int epochs = 0;
  long predictor_calls = 0;
  double final_cost = 0.0;
  double primal_residual = 0.0;
  std::vector<double> residual_history;
  bool feasible = false;
  bool converged = false;
};

struct PlanResult {
  std::vector<ControlInput> controls;
  Trajectory trajectory;  // planned ego states over the horizon
  DecisionVariables vars;
  PlanDiagnostics diag;
  PredictionSet final_prediction;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Trajectory trajectory_from_z(const Eigen::VectorXd& z, double dt) {
  Trajectory traj;
  traj.dt = dt;
  const int T = static_cast<int>(z.size()) / 4;
  for (int t = 0; t < T; ++t)
    traj.states.push_back(VehicleState{z[4 * t], z[4 * t + 1], z[4 * t + 2], z[4 * t + 3]});
  return traj;
}

inline LinearDynamics linearize_about(const Eigen::VectorXd& z, const DecisionVariables& vars,
                                      const VehicleState& z0, double dt, double wheelbase) {
  Trajectory ref;
  ref.dt = dt;
  ref.states.push_back(z0);
  const int T = static_cast<int>(z.size()) / 4;
  std::vector<ControlInput> ctrl;
  for (int t = 0; t < T; ++t) {
    ref.states.push_back(VehicleState{z[4 * t], z[4 * t + 1], z[4 * t + 2], z[4 * t + 3]});
    ctrl.push_back(ControlInput{vars.steer[t], vars.accel[t]});
  }
  return linearize_dynamics(ref, ctrl, wheelbase);
}

}  // namespace detail

/// One receding-horizon solve: constant-velocity initial guess, ADMM
/// epochs (steering QP, acceleration QP, projected-gradient state update
/// with predictor feasibility, dual ascent), re-linearizing the dynamics
/// about the current iterate each epoch. Converged when the primal
/// residual and the cost change both drop below tolerance; otherwise the
/// best feasible iterate is returned flagged non-converged.
inline PlanResult plan_step(const PlanInput& input, const Predictor& predictor, const PlannerConfig& cfg,
                            const ConstraintEvalObserver& observer = nullptr) {
  const int T = cfg.t_plan;
  if (input.histories.empty() || !input.histories.front().is_ego)
    throw std::invalid_argument("plan_step: ego history must come first");

  const GoalSpec goal{input.lanes.center_of(input.target_lane), input.desired_speed};
  const VehicleState z0 = input.ego_state;

  // constant-velocity initial guess
  const Trajectory cv = constant_velocity_extrapolate(input.histories.front(), T, cfg.dt);
  Eigen::VectorXd z_cv(4 * T);
  for (int t = 0; t < T; ++t) {
    z_cv[4 * t] = cv.states[static_cast<std::size_t>(t)].x;
    z_cv[4 * t + 1] = cv.states[static_cast<std::size_t>(t)].y;
    z_cv[4 * t + 2] = cv.states[static_cast<std::size_t>(t)].heading;
    z_cv[4 * t + 3] = cv.states[static_cast<std::size_t>(t)].speed;
  }

  DecisionVariables vars = DecisionVariables::zeros(T);
  vars.z = z_cv;
  AdmmState admm = AdmmState::init(T, cfg.admm.rho);

  PlanResult best;
  PlanDiagnostics diag;
  double best_residual = std::numeric_limits<double>::infinity();
  double prev_cost = std::numeric_limits<double>::infinity();
  PredictionSet last_prediction;

  for (int epoch = 0; epoch < cfg.admm.max_epochs; ++epoch) {
    const LinearDynamics dyn = detail::linearize_about(vars.z, vars, z0, cfg.dt, cfg.wheelbase);

    auto t0 = std::chrono::steady_clock::now();
    vars.steer = solve_steering_qp(vars, dyn, z0, admm.mu, admm.rho, cfg.weights, cfg.bounds).x;
    diag.delta_time += detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    vars.accel = solve_accel_qp(vars, dyn, z0, admm.mu, admm.rho, cfg.weights, cfg.bounds).x;
    diag.alpha_time += detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    StateUpdateResult zres = solve_state_update(vars, vars.z, admm.mu, admm.rho, cfg.weights, goal, dyn, z0,
                                                predictor, input.histories, cfg.safety, cfg.gd, z_cv, observer);
    const double z_elapsed = detail::seconds_since(t0);
    diag.z_time += z_elapsed;
    diag.z_update_times.push_back(z_elapsed);
    diag.predictor_calls += zres.predictor_calls;
    vars.z = zres.z;
    last_prediction = zres.prediction;

    t0 = std::chrono::steady_clock::now();
    const Eigen::VectorXd F = residual_F(vars, dyn, z0);
    admm.mu = dual_update(admm.mu, admm.rho, F);
    diag.dual_time += detail::seconds_since(t0);

    admm.epochs = diag.epochs = epoch + 1;
    const double primal = F.cwiseAbs().maxCoeff();
    admm.residual_history.push_back(primal);
    diag.residual_history.push_back(primal);
    const double cost = cost_J(vars, z0, goal, cfg.weights);

    if (primal < best_residual) {
      best_residual = primal;
      best.vars = vars;
      best.final_prediction = last_prediction;
      best.diag.final_cost = cost;
    }

    if (primal < cfg.admm.primal_tol && std::abs(cost - prev_cost) < cfg.admm.cost_tol) {
      diag.converged = true;
      best.vars = vars;
      best.final_prediction = last_prediction;
      best.diag.final_cost = cost;
      best_residual = primal;
      break;
    }
    prev_cost = cost;
  }

  PlanResult out;
  out.vars = best.vars;
  out.final_prediction = best.final_prediction;
  diag.final_cost = best.diag.final_cost;
  diag.primal_residual = best_residual;
  diag.feasible = true;  // every accepted state iterate is feasible
  out.diag = diag;
  out.trajectory = detail::trajectory_from_z(out.vars.z, cfg.dt);
  for (int t = 0; t < T; ++t) out.controls.push_back(ControlInput{out.vars.steer[t], out.vars.accel[t]});
  if (!diag.converged)
    log::debug("plan_step: not converged after " + std::to_string(diag.epochs) + " epochs, primal residual " +
               std::to_string(best_residual));
  return out;
}

// ---------------------------------------------------------------------------
// Closed-loop episode
// ---------------------------------------------------------------------------

struct EpisodeStepLog {
  ControlInput applied;
  VehicleState ego_after;
  std::vector<Eigen::Vector2d> positions_after;  // all vehicles, ego first
  PlanDiagnostics diag;
  double plan_time = 0.0;
  Trajectory planned;
  PredictionSet final_prediction;
};

struct EpisodeResult {
  bool success = true;
  std::string error;
  std::vector<EpisodeStepLog> steps;
};

/// Observer with episode context, used by the distillation data pipeline.
using EpisodeEvalObserver = std::function<void(int step_index, const HistorySet&, const Eigen::MatrixX2d&,
                                               const PredictionSet&)>;

/// Receding-horizon simulation: plan, apply the first control to the
/// ego, advance the surrounding traffic with the scenario's
/// car-following model, slide every observation window one step.
inline EpisodeResult run_episode(const Scenario& scenario, const Predictor& predictor, const PlannerConfig& cfg,
                                 int steps, const CarFollowingParams& traffic = {},
                                 const EpisodeEvalObserver& observer = nullptr) {
  if (steps < 1) throw std::invalid_argument("run_episode: steps must be >= 1");
  EpisodeResult out;
  HistorySet windows = scenario.histories;
  VehicleState ego = state_from_history(windows.front(), scenario.dt);

  // surrounding agents for the car-following rollforward, derived from
  // the scenario file alone so episodes replay deterministically
  std::vector<AgentState> agents;
  for (std::size_t v = 1; v < windows.size(); ++v) {
    const VehicleState s = state_from_history(windows[v], scenario.dt);
    AgentState a;
    a.id = windows[v].id;
    a.x = s.x;
    a.y = s.y;
    a.v = s.speed;
    a.desired_speed = std::max(1.0, s.speed);
    a.lane = scenario.lanes.nearest_lane(s.y);
    agents.push_back(a);
  }
  Rng traffic_rng = Rng(scenario.seed).derive(40);

  for (int step = 0; step < steps; ++step) {
    PlanInput input{windows, ego, scenario.lanes, scenario.target_lane, scenario.desired_speed};
    EpisodeStepLog slog;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ConstraintEvalObserver step_observer = nullptr;
      if (observer)
        step_observer = [&](const HistorySet& h, const Eigen::MatrixX2d& cand, const PredictionSet& pred) {
          observer(step, h, cand, pred);
        };
      PlanResult plan = plan_step(input, predictor, cfg, step_observer);
      slog.plan_time = detail::seconds_since(t0);
      slog.diag = plan.diag;
      slog.planned = plan.trajectory;
      slog.final_prediction = plan.final_prediction;
      slog.applied = plan.controls.front();
    } catch (const std::exception& e) {
      out.success = false;
      out.error = e.what();
      log::warn(std::string("episode terminated at step ") + std::to_string(step) + ": " + e.what());
      return out;
    }

    ego = step_kinematics(ego, slog.applied, cfg.dt, cfg.wheelbase);
    const LeaderView ego_view{ego.x, ego.y, ego.speed};
    advance_traffic(agents, &ego_view, scenario.lanes, cfg.dt, traffic, traffic_rng);

    slog.ego_after = ego;
    slog.positions_after.push_back({ego.x, ego.y});
    for (const auto& a : agents) slog.positions_after.emplace_back(a.x, a.y);

    // slide the observation windows
    for (std::size_t v = 0; v < windows.size(); ++v) {
      Eigen::MatrixX2d& w = windows[v].points;
      const auto rows = w.rows();
      w.block(0, 0, rows - 1, 2) = w.block(1, 0, rows - 1, 2).eval();
      w.row(rows - 1) = slog.positions_after[v];
    }
    out.steps.push_back(std::move(slog));
  }
  return out;
}

}  // namespace iakd
