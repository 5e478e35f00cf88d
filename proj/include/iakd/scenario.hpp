#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iakd/rng.hpp"
#include "iakd/vehicle.hpp"

namespace iakd {

/// Past xy positions (t_obs rows) of one vehicle.
struct ObservationHistory {
  int id = 0;
  bool is_ego = false;
  Eigen::MatrixX2d points;

  int length() const { return static_cast<int>(points.rows()); }
  Eigen::Vector2d last() const { return points.row(points.rows() - 1); }
};

using HistorySet = std::vector<ObservationHistory>;

struct LaneLayout {
  int count = 0;
  double width = 3.7;
  std::vector<double> centerlines;

  double center_of(int lane) const { return centerlines.at(static_cast<std::size_t>(lane)); }
  /// Lane whose centerline is nearest to the lateral offset y.
  int nearest_lane(double y) const {
    int best = 0;
    for (int i = 1; i < count; ++i)
      if (std::abs(y - centerlines[static_cast<std::size_t>(i)]) <
          std::abs(y - centerlines[static_cast<std::size_t>(best)]))
        best = i;
    return best;
  }
  static LaneLayout straight(int count, double width) {
    LaneLayout l;
    l.count = count;
    l.width = width;
    for (int i = 0; i < count; ++i) l.centerlines.push_back(width * static_cast<double>(i));
    return l;
  }
};

/// One planning scene: ego history first, then surrounding vehicles.
struct Scenario {
  int version = 1;
  std::uint64_t seed = 0;
  double dt = 0.3;
  LaneLayout lanes;
  int target_lane = 0;
  double desired_speed = 0.0;
  HistorySet histories;

  int n_vehicles() const { return static_cast<int>(histories.size()); }
  const ObservationHistory& ego() const { return histories.front(); }
};

// ---------------------------------------------------------------------------
// Car-following model (IDM-style longitudinal response + lane-hold lateral)
// ---------------------------------------------------------------------------

struct CarFollowingParams {
  double accel_max = 1.5;      // m/s^2
  double decel_comfort = 2.0;  // m/s^2
  double min_spacing = 2.0;    // m, standstill gap
  double time_headway = 1.2;   // s
  double car_length = 4.5;     // m
  double lat_gain = 1.2;       // 1/s toward lane centerline
  double accel_noise = 0.25;   // m/s^2, std
  double lat_noise = 0.02;     // m per step, std
};

struct AgentState {
  int id = 0;
  int lane = 0;
  double desired_speed = 0.0;
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
};

/// Candidate leader seen by a following agent.
struct LeaderView {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
};

/// Advances one agent by dt. `leaders` is every other vehicle in the
/// scene (including the ego when it is externally driven).
inline void car_following_step(AgentState& a, const std::vector<LeaderView>& leaders, double lane_center, double dt,
                               const CarFollowingParams& p, Rng& rng) {
  // nearest leader ahead within the lane corridor
  const LeaderView* lead = nullptr;
  for (const auto& o : leaders) {
    if (o.x <= a.x) continue;
    if (std::abs(o.y - a.y) > 2.0) continue;
    if (lead == nullptr || o.x < lead->x) lead = &o;
  }
  double accel = p.accel_max * (1.0 - std::pow(a.v / std::max(0.1, a.desired_speed), 4.0));
  if (lead != nullptr) {
    const double gap = std::max(0.1, lead->x - a.x - p.car_length);
    const double dv = a.v - lead->v;
    const double s_star = p.min_spacing + a.v * p.time_headway +
                          a.v * dv / (2.0 * std::sqrt(p.accel_max * p.decel_comfort));
    accel -= p.accel_max * std::pow(std::max(0.0, s_star) / gap, 2.0);
  }
  accel += rng.normal(0.0, p.accel_noise);
  accel = std::clamp(accel, -2.0 * p.decel_comfort, p.accel_max);
  a.x += a.v * dt + 0.5 * accel * dt * dt;
  a.v = std::max(0.0, a.v + accel * dt);
  a.y += p.lat_gain * (lane_center - a.y) * dt + rng.normal(0.0, p.lat_noise);
}

/// Steps every agent once; `ego` (if non-null) participates as a
/// potential leader but is moved externally.
inline void advance_traffic(std::vector<AgentState>& agents, const LeaderView* ego, const LaneLayout& lanes,
                            double dt, const CarFollowingParams& p, Rng& rng) {
  std::vector<LeaderView> snapshot;
  snapshot.reserve(agents.size() + 1);
  for (const auto& a : agents) snapshot.push_back({a.x, a.y, a.v});
  if (ego != nullptr) snapshot.push_back(*ego);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    std::vector<LeaderView> others;
    others.reserve(snapshot.size() - 1);
    for (std::size_t j = 0; j < snapshot.size(); ++j)
      if (j != i) others.push_back(snapshot[j]);
    car_following_step(agents[i], others, lanes.center_of(agents[i].lane), dt, p, rng);
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenario generator
// ---------------------------------------------------------------------------

struct GeneratorConfig {
  int n_vehicles = 4;  // surrounding vehicles (ego excluded)
  int max_vehicles = 32;
  int lanes = 3;
  double lane_width = 3.7;
  double min_gap = 14.0;     // m, same-lane spacing at t=0
  double ego_adjacent_clear = 10.0;  // m kept free beside the ego in adjacent lanes
  double spawn_back = -55.0;  // m relative to ego
  double spawn_front = 65.0;
  double speed_min = 9.0;
  double speed_max = 13.0;
  double p_lane_change = 0.8;
  int t_obs = 8;
  int t_plan = 6;
  double dt = 0.3;
  CarFollowingParams traffic;
};

struct ScenarioWithFuture {
  Scenario scenario;
  /// Per-vehicle future positions (t_plan rows), same vehicle order as
  /// the scenario; produced by continuing the generating simulation.
  std::vector<Eigen::MatrixX2d> future;
};

/// Deterministic in (cfg, seed): places jittered traffic on a straight
/// multi-lane road, simulates t_obs + t_plan car-following steps, and
/// returns the first t_obs as observation history plus the remainder as
/// the ground-truth future.
inline ScenarioWithFuture generate_scenario_with_future(const GeneratorConfig& cfg, std::uint64_t seed) {
  if (cfg.n_vehicles < 0 || cfg.n_vehicles + 1 > cfg.max_vehicles)
    throw std::invalid_argument("generate_scenario: vehicle count out of range");
  if (cfg.lanes < 2) throw std::invalid_argument("generate_scenario: need at least 2 lanes");
  if (cfg.t_obs < 2) throw std::invalid_argument("generate_scenario: t_obs must be >= 2");

  const double span = cfg.spawn_front - cfg.spawn_back;
  const int per_lane_cap = static_cast<int>(span / cfg.min_gap) + 1;
  if (cfg.n_vehicles + 1 > cfg.lanes * per_lane_cap)
    throw std::invalid_argument("generate_scenario: vehicles don't fit spacing constraints");

  Rng root(seed);
  Rng place = root.derive(1);
  Rng sim = root.derive(2);
  Rng goal = root.derive(3);

  const LaneLayout lanes = LaneLayout::straight(cfg.lanes, cfg.lane_width);

  std::vector<AgentState> agents;
  const int ego_lane = static_cast<int>(place.uniform_int(static_cast<std::uint64_t>(cfg.lanes)));
  AgentState ego;
  ego.id = 0;
  ego.lane = ego_lane;
  ego.x = 0.0;
  ego.y = lanes.center_of(ego_lane);
  ego.desired_speed = place.uniform(cfg.speed_min, cfg.speed_max);
  ego.v = ego.desired_speed;
  agents.push_back(ego);

  for (int i = 0; i < cfg.n_vehicles; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      AgentState a;
      a.id = i + 1;
      a.lane = static_cast<int>(place.uniform_int(static_cast<std::uint64_t>(cfg.lanes)));
      a.x = place.uniform(cfg.spawn_back, cfg.spawn_front);
      a.y = lanes.center_of(a.lane);
      a.desired_speed = place.uniform(cfg.speed_min, cfg.speed_max);
      a.v = a.desired_speed;
      bool ok = true;
      for (const auto& b : agents)
        if (b.lane == a.lane && std::abs(b.x - a.x) < cfg.min_gap) ok = false;
      // keep a merge-plausible pocket next to the ego
      if (std::abs(a.lane - ego_lane) == 1 && std::abs(a.x - 0.0) < cfg.ego_adjacent_clear) ok = false;
      if (ok) {
        agents.push_back(a);
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("generate_scenario: vehicles don't fit spacing constraints");
  }

  // simulate; row k of track v is the position after k steps
  const int total_steps = cfg.t_obs + cfg.t_plan;
  std::vector<Eigen::MatrixX2d> tracks(agents.size(), Eigen::MatrixX2d(total_steps, 2));
  for (std::size_t v = 0; v < agents.size(); ++v) tracks[v].row(0) = Eigen::RowVector2d(agents[v].x, agents[v].y);
  for (int k = 1; k < total_steps; ++k) {
    advance_traffic(agents, nullptr, lanes, cfg.dt, cfg.traffic, sim);
    for (std::size_t v = 0; v < agents.size(); ++v) tracks[v].row(k) = Eigen::RowVector2d(agents[v].x, agents[v].y);
  }

  ScenarioWithFuture out;
  out.scenario.version = 1;
  out.scenario.seed = seed;
  out.scenario.dt = cfg.dt;
  out.scenario.lanes = lanes;
  out.scenario.desired_speed = ego.desired_speed;
  out.scenario.target_lane = ego_lane;
  if (goal.uniform() < cfg.p_lane_change) {
    std::vector<int> adj;
    if (ego_lane > 0) adj.push_back(ego_lane - 1);
    if (ego_lane + 1 < cfg.lanes) adj.push_back(ego_lane + 1);
    out.scenario.target_lane = adj[static_cast<std::size_t>(goal.uniform_int(adj.size()))];
  }
  for (std::size_t v = 0; v < agents.size(); ++v) {
    ObservationHistory h;
    h.id = agents[v].id;
    h.is_ego = (v == 0);
    h.points = tracks[v].topRows(cfg.t_obs);
    out.scenario.histories.push_back(std::move(h));
    out.future.push_back(tracks[v].bottomRows(cfg.t_plan));
  }
  return out;
}

inline Scenario generate_scenario(const GeneratorConfig& cfg, std::uint64_t seed) {
  return generate_scenario_with_future(cfg, seed).scenario;
}

inline nlohmann::json traffic_params_to_json(const CarFollowingParams& p) {
  return nlohmann::json{{"accel_max", p.accel_max},       {"decel_comfort", p.decel_comfort},
                        {"min_spacing", p.min_spacing},   {"time_headway", p.time_headway},
                        {"car_length", p.car_length},     {"lat_gain", p.lat_gain},
                        {"accel_noise", p.accel_noise},   {"lat_noise", p.lat_noise}};
}

inline CarFollowingParams traffic_params_from_json(const nlohmann::json& j) {
  CarFollowingParams p;
  p.accel_max = j.value("accel_max", p.accel_max);
  p.decel_comfort = j.value("decel_comfort", p.decel_comfort);
  p.min_spacing = j.value("min_spacing", p.min_spacing);
  p.time_headway = j.value("time_headway", p.time_headway);
  p.car_length = j.value("car_length", p.car_length);
  p.lat_gain = j.value("lat_gain", p.lat_gain);
  p.accel_noise = j.value("accel_noise", p.accel_noise);
  p.lat_noise = j.value("lat_noise", p.lat_noise);
  return p;
}

inline nlohmann::json generator_config_to_json(const GeneratorConfig& c) {
  return nlohmann::json{{"n_vehicles", c.n_vehicles},
                        {"max_vehicles", c.max_vehicles},
                        {"lanes", c.lanes},
                        {"lane_width", c.lane_width},
                        {"min_gap", c.min_gap},
                        {"ego_adjacent_clear", c.ego_adjacent_clear},
                        {"spawn_back", c.spawn_back},
                        {"spawn_front", c.spawn_front},
                        {"speed_min", c.speed_min},
                        {"speed_max", c.speed_max},
                        {"p_lane_change", c.p_lane_change},
                        {"t_obs", c.t_obs},
                        {"t_plan", c.t_plan},
                        {"dt", c.dt},
                        {"traffic", traffic_params_to_json(c.traffic)}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.n_vehicles = j.value("n_vehicles", c.n_vehicles);
  c.max_vehicles = j.value("max_vehicles", c.max_vehicles);
  c.lanes = j.value("lanes", c.lanes);
  c.lane_width = j.value("lane_width", c.lane_width);
  c.min_gap = j.value("min_gap", c.min_gap);
  c.ego_adjacent_clear = j.value("ego_adjacent_clear", c.ego_adjacent_clear);
  c.spawn_back = j.value("spawn_back", c.spawn_back);
  c.spawn_front = j.value("spawn_front", c.spawn_front);
  c.speed_min = j.value("speed_min", c.speed_min);
  c.speed_max = j.value("speed_max", c.speed_max);
  c.p_lane_change = j.value("p_lane_change", c.p_lane_change);
  c.t_obs = j.value("t_obs", c.t_obs);
  c.t_plan = j.value("t_plan", c.t_plan);
  c.dt = j.value("dt", c.dt);
  if (j.contains("traffic")) c.traffic = traffic_params_from_json(j.at("traffic"));
  return c;
}

// ---------------------------------------------------------------------------
// Constant-velocity extrapolation
// ---------------------------------------------------------------------------

/// Heading and speed are estimated from the last two history points; the
/// extrapolation advances by that fixed displacement each step. Identical
/// last points degrade to holding position.
inline Trajectory constant_velocity_extrapolate(const ObservationHistory& history, int horizon, double dt) {
  if (history.length() < 2) throw std::invalid_argument("constant_velocity_extrapolate: need t_obs >= 2");
  if (horizon < 1) throw std::invalid_argument("constant_velocity_extrapolate: horizon must be >= 1");
  const Eigen::Vector2d last = history.points.row(history.points.rows() - 1);
  const Eigen::Vector2d prev = history.points.row(history.points.rows() - 2);
  const Eigen::Vector2d d = last - prev;
  const double speed = d.norm() / dt;
  const double heading = (d.norm() > 0.0) ? std::atan2(d.y(), d.x()) : 0.0;
  Trajectory traj;
  traj.dt = dt;
  traj.states.reserve(static_cast<std::size_t>(horizon));
  for (int k = 1; k <= horizon; ++k) {
    VehicleState s;
    s.x = last.x() + d.x() * k;
    s.y = last.y() + d.y() * k;
    s.heading = heading;
    s.speed = speed;
    traj.states.push_back(s);
  }
  return traj;
}

/// Current full state implied by a history window (position of the last
/// point, heading/speed from the last displacement).
inline VehicleState state_from_history(const ObservationHistory& history, double dt) {
  if (history.length() < 2) throw std::invalid_argument("state_from_history: need t_obs >= 2");
  const Eigen::Vector2d last = history.points.row(history.points.rows() - 1);
  const Eigen::Vector2d prev = history.points.row(history.points.rows() - 2);
  const Eigen::Vector2d d = last - prev;
  VehicleState s;
  s.x = last.x();
  s.y = last.y();
  s.speed = d.norm() / dt;
  s.heading = (d.norm() > 0.0) ? std::atan2(d.y(), d.x()) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Scenario file format
// ---------------------------------------------------------------------------

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["version"] = s.version;
  j["seed"] = s.seed;
  j["dt"] = s.dt;
  j["lanes"] = {{"count", s.lanes.count}, {"width", s.lanes.width}, {"centerlines", s.lanes.centerlines}};
  j["target_lane"] = s.target_lane;
  j["desired_speed"] = s.desired_speed;
  nlohmann::json vehicles = nlohmann::json::array();
  for (const auto& h : s.histories) {
    nlohmann::json v;
    v["id"] = h.id;
    v["is_ego"] = h.is_ego;
    nlohmann::json pts = nlohmann::json::array();
    for (int r = 0; r < h.points.rows(); ++r) pts.push_back({h.points(r, 0), h.points(r, 1)});
    v["history"] = pts;
    vehicles.push_back(v);
  }
  j["vehicles"] = vehicles;
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  s.version = j.at("version").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.dt = j.at("dt").get<double>();
  s.lanes.count = j.at("lanes").at("count").get<int>();
  s.lanes.width = j.at("lanes").at("width").get<double>();
  s.lanes.centerlines = j.at("lanes").at("centerlines").get<std::vector<double>>();
  s.target_lane = j.at("target_lane").get<int>();
  s.desired_speed = j.at("desired_speed").get<double>();
  if (s.target_lane < 0 || s.target_lane >= s.lanes.count)
    throw std::runtime_error("scenario: target_lane out of range");
  int ego_count = 0;
  std::size_t hist_len = 0;
  for (const auto& v : j.at("vehicles")) {
    ObservationHistory h;
    h.id = v.at("id").get<int>();
    h.is_ego = v.at("is_ego").get<bool>();
    const auto& pts = v.at("history");
    h.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t r = 0; r < pts.size(); ++r) {
      h.points(static_cast<Eigen::Index>(r), 0) = pts[r][0].get<double>();
      h.points(static_cast<Eigen::Index>(r), 1) = pts[r][1].get<double>();
    }
    if (h.is_ego) ++ego_count;
    if (hist_len == 0) hist_len = pts.size();
    if (pts.size() != hist_len) throw std::runtime_error("scenario: ragged history lengths");
    s.histories.push_back(std::move(h));
  }
  if (ego_count != 1) throw std::runtime_error("scenario: expected exactly one ego vehicle");
  if (!s.histories.front().is_ego) throw std::runtime_error("scenario: ego must come first");
  return s;
}

inline std::string scenario_to_string(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << scenario_to_string(s);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open scenario: " + path);
  nlohmann::json j;
  f >> j;
  return scenario_from_json(j);
}

}  // namespace iakd
