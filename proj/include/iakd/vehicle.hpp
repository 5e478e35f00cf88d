#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace iakd {

inline double wrap_angle(double a) {
  // wrap to (-pi, pi]
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

/// Planar vehicle state: position east/north (m), yaw (rad, (-pi, pi]),
/// longitudinal speed (m/s, never negative).
struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;

  Eigen::Vector4d as_vector() const { return {x, y, heading, speed}; }
  static VehicleState from_vector(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(heading) && std::isfinite(speed);
  }
};

/// Front-wheel steering angle (rad) and longitudinal acceleration (m/s^2).
struct ControlInput {
  double steer = 0.0;
  double accel = 0.0;
};

struct Trajectory {
  std::vector<VehicleState> states;
  double dt = 0.0;
};

/// One-step discrete kinematic bicycle update:
///   x' = x + v cos(th) dt,  y' = y + v sin(th) dt,
///   th' = th + (v/L) tan(steer) dt,  v' = max(0, v + a dt).
/// Heading is wrapped back into (-pi, pi].
inline VehicleState step_kinematics(const VehicleState& s, const ControlInput& u, double dt, double wheelbase) {
  if (dt <= 0.0) throw std::invalid_argument("step_kinematics: dt must be > 0");
  if (wheelbase <= 0.0) throw std::invalid_argument("step_kinematics: wheelbase must be > 0");
  if (!s.finite() || !std::isfinite(u.steer) || !std::isfinite(u.accel))
    throw std::invalid_argument("non-finite state");
  VehicleState n;
  n.x = s.x + s.speed * std::cos(s.heading) * dt;
  n.y = s.y + s.speed * std::sin(s.heading) * dt;
  n.heading = wrap_angle(s.heading + s.speed / wheelbase * std::tan(u.steer) * dt);
  n.speed = std::max(0.0, s.speed + u.accel * dt);
  return n;
}

/// Per-step affine models z_{t+1} ~= A_t z_t + B_t u_t + c_t about a
/// reference trajectory, exact at the expansion point.
struct LinearDynamics {
  std::vector<Eigen::Matrix4d> A;
  std::vector<Eigen::Matrix<double, 4, 2>> B;
  std::vector<Eigen::Vector4d> c;
  double dt = 0.0;
  double wheelbase = 0.0;

  int steps() const { return static_cast<int>(A.size()); }
};

/// Analytic Jacobians of step_kinematics at (ref state, ref control).
inline void kinematics_jacobians(const VehicleState& s, const ControlInput& u, double dt, double wheelbase,
                                 Eigen::Matrix4d& A, Eigen::Matrix<double, 4, 2>& B) {
  const double cth = std::cos(s.heading);
  const double sth = std::sin(s.heading);
  const double tan_d = std::tan(u.steer);
  const double sec2 = 1.0 + tan_d * tan_d;
  A.setIdentity();
  A(0, 2) = -s.speed * sth * dt;
  A(0, 3) = cth * dt;
  A(1, 2) = s.speed * cth * dt;
  A(1, 3) = sth * dt;
  A(2, 3) = tan_d / wheelbase * dt;
  B.setZero();
  B(2, 0) = s.speed / wheelbase * sec2 * dt;
  const bool moving = s.speed + u.accel * dt > 0.0;
  A(3, 3) = moving ? 1.0 : 0.0;
  B(3, 1) = moving ? dt : 0.0;
}

/// Linearizes the bicycle update along a reference trajectory. The
/// reference must carry t_plan+1 states and t_plan controls; c_t is the
/// affine remainder, so the model reproduces step_kinematics exactly at
/// the reference point.
inline LinearDynamics linearize_dynamics(const Trajectory& ref_traj, const std::vector<ControlInput>& ref_controls,
                                         double wheelbase) {
  if (ref_traj.states.size() != ref_controls.size() + 1)
    throw std::invalid_argument("linearize_dynamics: reference needs t_plan+1 states and t_plan controls");
  if (ref_traj.dt <= 0.0) throw std::invalid_argument("linearize_dynamics: dt must be > 0");
  LinearDynamics dyn;
  dyn.dt = ref_traj.dt;
  dyn.wheelbase = wheelbase;
  const int T = static_cast<int>(ref_controls.size());
  dyn.A.resize(static_cast<std::size_t>(T));
  dyn.B.resize(static_cast<std::size_t>(T));
  dyn.c.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const VehicleState& zs = ref_traj.states[static_cast<std::size_t>(t)];
    const ControlInput& us = ref_controls[static_cast<std::size_t>(t)];
    kinematics_jacobians(zs, us, ref_traj.dt, wheelbase, dyn.A[static_cast<std::size_t>(t)],
                         dyn.B[static_cast<std::size_t>(t)]);
    const VehicleState next = step_kinematics(zs, us, ref_traj.dt, wheelbase);
    const Eigen::Vector2d uv{us.steer, us.accel};
    dyn.c[static_cast<std::size_t>(t)] = next.as_vector() -
                                         dyn.A[static_cast<std::size_t>(t)] * zs.as_vector() -
                                         dyn.B[static_cast<std::size_t>(t)] * uv;
  }
  return dyn;
}

/// Steering, acceleration and state trajectories over the horizon.
/// z holds t_plan states of 4 entries each (x, y, heading, speed);
/// state t (1-based) occupies z.segment(4*(t-1), 4).
struct DecisionVariables {
  Eigen::VectorXd steer;
  Eigen::VectorXd accel;
  Eigen::VectorXd z;

  static DecisionVariables zeros(int t_plan) {
    DecisionVariables v;
    v.steer = Eigen::VectorXd::Zero(t_plan);
    v.accel = Eigen::VectorXd::Zero(t_plan);
    v.z = Eigen::VectorXd::Zero(4 * t_plan);
    return v;
  }
  int horizon() const { return static_cast<int>(steer.size()); }
  Eigen::Vector4d state(int t) const { return z.segment<4>(4 * (t - 1)); }  // t in 1..t_plan
};

/// Stacked dynamics defect z_{t+1} - (A_t z_t + B_t u_t + c_t) with z_0
/// fixed to the measured state. Length 4*t_plan.
inline Eigen::VectorXd residual_F(const DecisionVariables& vars, const LinearDynamics& dyn, const VehicleState& z0) {
  const int T = vars.horizon();
  if (dyn.steps() != T || vars.accel.size() != T || vars.z.size() != 4 * T)
    throw std::invalid_argument("residual_F: inconsistent dimensions");
  Eigen::VectorXd r(4 * T);
  Eigen::Vector4d prev = z0.as_vector();
  for (int t = 0; t < T; ++t) {
    const Eigen::Vector2d u{vars.steer[t], vars.accel[t]};
    const Eigen::Vector4d zn = vars.z.segment<4>(4 * t);
    r.segment<4>(4 * t) = zn - (dyn.A[static_cast<std::size_t>(t)] * prev +
                                dyn.B[static_cast<std::size_t>(t)] * u + dyn.c[static_cast<std::size_t>(t)]);
    prev = zn;
  }
  return r;
}

/// Rolls the affine model forward from z0 under the given controls,
/// producing decision variables with identically zero residual.
inline DecisionVariables rollout_linear(const LinearDynamics& dyn, const VehicleState& z0,
                                        const Eigen::VectorXd& steer, const Eigen::VectorXd& accel) {
  const int T = dyn.steps();
  if (steer.size() != T || accel.size() != T) throw std::invalid_argument("rollout_linear: control length mismatch");
  DecisionVariables v = DecisionVariables::zeros(T);
  v.steer = steer;
  v.accel = accel;
  Eigen::Vector4d cur = z0.as_vector();
  for (int t = 0; t < T; ++t) {
    const Eigen::Vector2d u{steer[t], accel[t]};
    cur = dyn.A[static_cast<std::size_t>(t)] * cur + dyn.B[static_cast<std::size_t>(t)] * u +
          dyn.c[static_cast<std::size_t>(t)];
    v.z.segment<4>(4 * t) = cur;
  }
  return v;
}

}  // namespace iakd
