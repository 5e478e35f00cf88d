#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iakd/network.hpp"
#include "iakd/nn_ops.hpp"
#include "iakd/scenario.hpp"
#include "iakd/tape.hpp"

namespace iakd {

/// Predicted xy positions per vehicle over the planning horizon, vehicle
/// order identical to the scenario (ego first).
struct PredictionSet {
  std::vector<int> vehicle_ids;
  int ego_index = 0;
  std::vector<Eigen::MatrixX2d> positions;

  int n_vehicles() const { return static_cast<int>(positions.size()); }
  int horizon() const { return positions.empty() ? 0 : static_cast<int>(positions.front().rows()); }
  bool all_finite() const {
    for (const auto& m : positions)
      if (!m.allFinite()) return false;
    return true;
  }
};

struct EgoCandidate {
  Eigen::MatrixX2d points;  // t_plan rows

  int horizon() const { return static_cast<int>(points.rows()); }
};

/// Structural cost counters: one encoder pass = embedding + encoding +
/// pooling of every vehicle window; one decoder step = decoding all
/// vehicles for one future time-step.
struct CallCounters {
  long encoder_passes = 0;
  long decoder_steps = 0;
};

struct RolloutResult {
  PredictionSet prediction;
  CallCounters counters;
};

/// Extracts one vehicle's predicted positions aligned with planning
/// steps 1..t_plan.
inline Eigen::MatrixX2d prediction_to_constraint_points(const PredictionSet& pred, int vehicle_id) {
  for (std::size_t v = 0; v < pred.vehicle_ids.size(); ++v)
    if (pred.vehicle_ids[v] == vehicle_id) return pred.positions[v];
  throw std::invalid_argument("prediction_to_constraint_points: unknown vehicle id");
}

inline nlohmann::json prediction_to_json(const PredictionSet& pred) {
  nlohmann::json vehicles = nlohmann::json::array();
  for (std::size_t v = 0; v < pred.positions.size(); ++v) {
    nlohmann::json pts = nlohmann::json::array();
    for (int r = 0; r < pred.positions[v].rows(); ++r)
      pts.push_back({pred.positions[v](r, 0), pred.positions[v](r, 1)});
    vehicles.push_back({{"id", pred.vehicle_ids[v]}, {"pred", pts}});
  }
  return nlohmann::json{{"vehicles", vehicles}};
}

// ---------------------------------------------------------------------------
// Plain forward path (no tape) — used by the planner and benchmarks.
// Must stay arithmetically identical to the taped path below; the unit
// suite pins bit-equality between the two.
// ---------------------------------------------------------------------------

namespace fwd {

inline void lstm_forward(const Eigen::MatrixXd& W, const Eigen::MatrixXd& b, const Eigen::VectorXd& x,
                         Eigen::VectorXd& h, Eigen::VectorXd& c) {
  const int hd = static_cast<int>(h.size());
  Eigen::VectorXd xc(x.size() + h.size());
  xc << x, h;
  Eigen::VectorXd pre = affine_eval(W, b, xc);
  Eigen::VectorXd gi = pre.segment(0, hd);
  Eigen::VectorXd gf = pre.segment(hd, hd);
  Eigen::VectorXd gg = pre.segment(2 * hd, hd);
  Eigen::VectorXd go = pre.segment(3 * hd, hd);
  sigmoid_inplace(gi);
  sigmoid_inplace(gf);
  tanh_inplace(gg);
  sigmoid_inplace(go);
  c = (gf.array() * c.array()).matrix() + (gi.array() * gg.array()).matrix();
  Eigen::VectorXd ct = c;
  tanh_inplace(ct);
  h = (go.array() * ct.array()).matrix();
}

/// Encoder over one window: t_obs displacement embeddings through the
/// encoder cell; the first window entry has no predecessor and enters as
/// a zero displacement.
inline void encode_window(const NetworkParameters& p, const Eigen::MatrixX2d& window, Eigen::VectorXd& h,
                          Eigen::VectorXd& c) {
  const int hd = p.dims().hidden;
  h = Eigen::VectorXd::Zero(hd);
  c = Eigen::VectorXd::Zero(hd);
  for (int t = 0; t < window.rows(); ++t) {
    Eigen::Vector2d d = t == 0 ? Eigen::Vector2d::Zero().eval()
                               : Eigen::Vector2d(window.row(t) - window.row(t - 1));
    const Eigen::VectorXd e = affine_eval(p.tensor(kEmbedW), p.tensor(kEmbedB), d * kDeltaScale);
    lstm_forward(p.tensor(kEncW), p.tensor(kEncB), e, h, c);
  }
}

/// Max-over-neighbors pooling for vehicle i: embed each relative
/// position, concatenate with that neighbor's hidden state, run the
/// one-hidden-layer ReLU MLP and take the elementwise max. A lone
/// vehicle pools to zero.
inline Eigen::VectorXd pool_one(const NetworkParameters& p, const std::vector<Eigen::VectorXd>& hiddens,
                                const std::vector<Eigen::Vector2d>& positions, std::size_t i) {
  const int hd = p.dims().hidden;
  Eigen::VectorXd pooled;
  bool first = true;
  for (std::size_t j = 0; j < hiddens.size(); ++j) {
    if (j == i) continue;
    const Eigen::Vector2d rel = positions[j] - positions[i];
    const Eigen::VectorXd e = affine_eval(p.tensor(kEmbedW), p.tensor(kEmbedB), rel * kRelScale);
    Eigen::VectorXd cat(hiddens[j].size() + e.size());
    cat << hiddens[j], e;
    Eigen::VectorXd m1 = affine_eval(p.tensor(kPoolW1), p.tensor(kPoolB1), cat);
    relu_inplace(m1);
    Eigen::VectorXd out = affine_eval(p.tensor(kPoolW2), p.tensor(kPoolB2), m1);
    if (first) {
      pooled = out;
      first = false;
    } else {
      for (Eigen::Index k = 0; k < pooled.size(); ++k)
        if (out[k] > pooled[k]) pooled[k] = out[k];
    }
  }
  if (first) pooled = Eigen::VectorXd::Zero(hd);
  return pooled;
}

/// Decoder initial hidden: project concat(final hidden, pooled) and
/// append the latent sample (teacher) or nothing (student, latent = 0).
inline Eigen::VectorXd decoder_init(const NetworkParameters& p, const Eigen::VectorXd& h,
                                    const Eigen::VectorXd& pooled, const Eigen::VectorXd& z) {
  Eigen::VectorXd cat(h.size() + pooled.size());
  cat << h, pooled;
  const Eigen::VectorXd ctx = affine_eval(p.tensor(kDecInitW), p.tensor(kDecInitB), cat);
  if (z.size() == 0) return ctx;
  Eigen::VectorXd out(ctx.size() + z.size());
  out << ctx, z;
  return out;
}

inline Eigen::Vector2d head_out(const NetworkParameters& p, const Eigen::VectorXd& h) {
  return affine_eval(p.tensor(kHeadW), p.tensor(kHeadB), h) * kOutputScale;
}

}  // namespace fwd

// ---------------------------------------------------------------------------
// Spec-level neural ops on plain values
// ---------------------------------------------------------------------------

enum class CellSection { kEncoder, kDecoder };

struct HiddenPair {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

/// One gated-cell update for the selected section.
inline HiddenPair cell_step(const NetworkParameters& p, CellSection section, const Eigen::VectorXd& input,
                            const HiddenPair& state) {
  const TensorId W = section == CellSection::kEncoder ? kEncW : kDecW;
  const TensorId b = section == CellSection::kEncoder ? kEncB : kDecB;
  const int expected_in = section == CellSection::kEncoder ? p.dims().embed : p.decoder_input_dim();
  if (input.size() != expected_in || state.h.size() != p.dims().hidden || state.c.size() != p.dims().hidden)
    throw std::invalid_argument("cell_step: dimension mismatch");
  HiddenPair out{state.h, state.c};
  fwd::lstm_forward(p.tensor(W), p.tensor(b), input, out.h, out.c);
  return out;
}

/// Permutation-invariant pooling for every vehicle at once.
inline std::vector<Eigen::VectorXd> pool_hidden(const NetworkParameters& p,
                                                const std::vector<Eigen::VectorXd>& hiddens,
                                                const std::vector<Eigen::Vector2d>& positions) {
  if (hiddens.empty() || hiddens.size() != positions.size())
    throw std::invalid_argument("pool_hidden: need one hidden per vehicle");
  std::vector<Eigen::VectorXd> out;
  out.reserve(hiddens.size());
  for (std::size_t i = 0; i < hiddens.size(); ++i) out.push_back(fwd::pool_one(p, hiddens, positions, i));
  return out;
}

// ---------------------------------------------------------------------------
// Teacher: recursive one-step generator
// ---------------------------------------------------------------------------

namespace detail {

inline void require_windows(const std::vector<Eigen::MatrixX2d>& windows) {
  if (windows.empty()) throw std::invalid_argument("rollout: no vehicles");
  for (const auto& w : windows)
    if (w.rows() < 2 || w.rows() != windows.front().rows())
      throw std::invalid_argument("rollout: history windows must share length >= 2");
}

inline std::vector<Eigen::MatrixX2d> to_windows(const HistorySet& histories) {
  std::vector<Eigen::MatrixX2d> w;
  w.reserve(histories.size());
  for (const auto& h : histories) w.push_back(h.points);
  return w;
}

}  // namespace detail

/// Full generator pass with t_pred = 1: encode every window, pool, run
/// one decoder step; returns the next position of every vehicle.
inline std::vector<Eigen::Vector2d> teacher_predict_one_step(const NetworkParameters& p,
                                                             const std::vector<Eigen::MatrixX2d>& windows,
                                                             const Eigen::VectorXd& z,
                                                             CallCounters* counters = nullptr) {
  if (p.role() != Role::kTeacher) throw std::invalid_argument("teacher_predict_one_step: role mismatch");
  if (z.size() != p.dims().latent) throw std::invalid_argument("teacher_predict_one_step: latent size mismatch");
  detail::require_windows(windows);
  const std::size_t V = windows.size();
  std::vector<Eigen::VectorXd> hs(V), cs(V);
  std::vector<Eigen::Vector2d> last(V);
  for (std::size_t v = 0; v < V; ++v) {
    fwd::encode_window(p, windows[v], hs[v], cs[v]);
    last[v] = windows[v].row(windows[v].rows() - 1);
  }
  std::vector<Eigen::Vector2d> next(V);
  for (std::size_t v = 0; v < V; ++v) {
    const Eigen::VectorXd pooled = fwd::pool_one(p, hs, last, v);
    Eigen::VectorXd dh = fwd::decoder_init(p, hs[v], pooled, z);
    Eigen::VectorXd dc = Eigen::VectorXd::Zero(p.dims().hidden);
    const Eigen::Vector2d d_last = windows[v].row(windows[v].rows() - 1) - windows[v].row(windows[v].rows() - 2);
    const Eigen::VectorXd e = affine_eval(p.tensor(kEmbedW), p.tensor(kEmbedB), d_last * kDeltaScale);
    fwd::lstm_forward(p.tensor(kDecW), p.tensor(kDecB), e, dh, dc);
    next[v] = last[v] + fwd::head_out(p, dh);
  }
  if (counters != nullptr) {
    counters->encoder_passes += 1;
    counters->decoder_steps += 1;
  }
  return next;
}

inline std::vector<Eigen::Vector2d> teacher_predict_one_step(const NetworkParameters& p, const HistorySet& histories,
                                                             const Eigen::VectorXd& z,
                                                             CallCounters* counters = nullptr) {
  return teacher_predict_one_step(p, detail::to_windows(histories), z, counters);
}

namespace detail {

/// Shared recursion: run the one-step generator t_plan times, optionally
/// substituting the ego column with the candidate before the windows
/// shift forward.
inline RolloutResult teacher_recurse(const NetworkParameters& p, std::vector<Eigen::MatrixX2d> windows,
                                     const std::vector<int>& ids, const Eigen::MatrixX2d* candidate, int t_plan,
                                     const Eigen::VectorXd& z) {
  const std::size_t V = windows.size();
  RolloutResult out;
  out.prediction.vehicle_ids = ids;
  out.prediction.ego_index = 0;
  out.prediction.positions.assign(V, Eigen::MatrixX2d(t_plan, 2));
  for (int t = 0; t < t_plan; ++t) {
    std::vector<Eigen::Vector2d> next = teacher_predict_one_step(p, windows, z, &out.counters);
    if (candidate != nullptr) next[0] = candidate->row(t);
    for (std::size_t v = 0; v < V; ++v) {
      out.prediction.positions[v].row(t) = next[v];
      // shift the window forward one step
      Eigen::MatrixX2d& w = windows[v];
      const auto rows = w.rows();
      w.block(0, 0, rows - 1, 2) = w.block(1, 0, rows - 1, 2).eval();
      w.row(rows - 1) = next[v];
    }
  }
  return out;
}

}  // namespace detail

/// Interactive teacher rollout: t_plan full generator passes, ego column
/// overwritten with the candidate each step before the history windows
/// shift (Fig. 3a-style recursion). The returned ego column equals the
/// candidate exactly and encoder_passes == t_plan.
inline RolloutResult teacher_rollout(const NetworkParameters& p, const HistorySet& histories,
                                     const EgoCandidate& candidate, std::uint64_t latent_seed) {
  if (p.role() != Role::kTeacher) throw std::invalid_argument("teacher_rollout: role mismatch");
  if (histories.empty() || !histories.front().is_ego)
    throw std::invalid_argument("teacher_rollout: ego history must come first");
  const Eigen::VectorXd z = sample_latent(p.dims().latent, latent_seed);
  std::vector<int> ids;
  for (const auto& h : histories) ids.push_back(h.id);
  return detail::teacher_recurse(p, detail::to_windows(histories), ids, &candidate.points, candidate.horizon(), z);
}

/// Free-running rollout (no candidate): every column including the ego
/// is fed back from the model's own predictions. Used for training and
/// open-loop evaluation.
inline RolloutResult teacher_rollout_free(const NetworkParameters& p, const HistorySet& histories, int t_plan,
                                          std::uint64_t latent_seed) {
  if (p.role() != Role::kTeacher) throw std::invalid_argument("teacher_rollout_free: role mismatch");
  const Eigen::VectorXd z = sample_latent(p.dims().latent, latent_seed);
  std::vector<int> ids;
  for (const auto& h : histories) ids.push_back(h.id);
  return detail::teacher_recurse(p, detail::to_windows(histories), ids, nullptr, t_plan, z);
}

// ---------------------------------------------------------------------------
// Student: one-shot generator conditioned on the ego candidate
// ---------------------------------------------------------------------------

/// One encoder pass and one pooling, then t_plan decoder steps. Each
/// decoder input embeds the vehicle's previous displacement together
/// with the ego's previous (candidate-substituted) displacement, which
/// is how the candidate reaches the surrounding vehicles without
/// re-encoding. encoder_passes == 1, decoder_steps == t_plan.
inline RolloutResult student_rollout(const NetworkParameters& p, const HistorySet& histories,
                                     const EgoCandidate& candidate) {
  if (p.role() != Role::kStudent) throw std::invalid_argument("student_rollout: role mismatch");
  if (histories.empty() || !histories.front().is_ego)
    throw std::invalid_argument("student_rollout: ego history must come first");
  std::vector<Eigen::MatrixX2d> windows = detail::to_windows(histories);
  detail::require_windows(windows);
  const std::size_t V = windows.size();
  const int T = candidate.horizon();
  const int hd = p.dims().hidden;

  RolloutResult out;
  out.prediction.ego_index = 0;
  for (const auto& h : histories) out.prediction.vehicle_ids.push_back(h.id);
  out.prediction.positions.assign(V, Eigen::MatrixX2d(T, 2));

  std::vector<Eigen::VectorXd> hs(V), cs(V);
  std::vector<Eigen::Vector2d> last(V);
  for (std::size_t v = 0; v < V; ++v) {
    fwd::encode_window(p, windows[v], hs[v], cs[v]);
    last[v] = windows[v].row(windows[v].rows() - 1);
  }
  out.counters.encoder_passes += 1;

  std::vector<Eigen::VectorXd> dh(V), dc(V);
  for (std::size_t v = 0; v < V; ++v) {
    const Eigen::VectorXd pooled = fwd::pool_one(p, hs, last, v);
    dh[v] = fwd::decoder_init(p, hs[v], pooled, Eigen::VectorXd());
    dc[v] = Eigen::VectorXd::Zero(hd);
  }

  std::vector<Eigen::Vector2d> pos = last;       // position at step t-1
  std::vector<Eigen::Vector2d> prev_disp(V);     // displacement into step t-1
  for (std::size_t v = 0; v < V; ++v)
    prev_disp[v] = windows[v].row(windows[v].rows() - 1) - windows[v].row(windows[v].rows() - 2);

  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd ego_e =
        affine_eval(p.tensor(kEmbedW), p.tensor(kEmbedB), Eigen::Vector2d(prev_disp[0]) * kDeltaScale);
    std::vector<Eigen::Vector2d> next(V);
    for (std::size_t v = 0; v < V; ++v) {
      const Eigen::VectorXd own_e =
          affine_eval(p.tensor(kEmbedW), p.tensor(kEmbedB), Eigen::Vector2d(prev_disp[v]) * kDeltaScale);
      Eigen::VectorXd inp(own_e.size() + ego_e.size());
      inp << own_e, ego_e;
      fwd::lstm_forward(p.tensor(kDecW), p.tensor(kDecB), inp, dh[v], dc[v]);
      next[v] = pos[v] + fwd::head_out(p, dh[v]);
    }
    out.counters.decoder_steps += 1;
    // internal ego substitution before the next decoder step
    next[0] = candidate.points.row(t);
    for (std::size_t v = 0; v < V; ++v) {
      out.prediction.positions[v].row(t) = next[v];
      prev_disp[v] = next[v] - pos[v];
      pos[v] = next[v];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Taped rollouts (training / gradient checks)
// ---------------------------------------------------------------------------

/// A recorded rollout: forward values plus the node ids needed to read
/// gradients with respect to history inputs and outputs.
struct RolloutTape {
  std::unique_ptr<Tape> tape;
  std::vector<std::vector<int>> history_nodes;  // [vehicle][t_obs] position leaves
  std::vector<std::vector<int>> output_nodes;   // [vehicle][t_plan] predicted positions
  PredictionSet prediction;
  CallCounters counters;
  int t_obs = 0;

  int n_vehicles() const { return static_cast<int>(history_nodes.size()); }
  int horizon() const { return output_nodes.empty() ? 0 : static_cast<int>(output_nodes.front().size()); }
  /// Flat index of output scalar (vehicle-major, then step, then x/y).
  int flat_outputs() const { return n_vehicles() * horizon() * 2; }
};

namespace detail {

struct TapedVehicle {
  std::vector<int> window;  // node ids of window positions
  int h = -1, c = -1;
};

inline void encode_window_taped(Tape& tp, const std::vector<int>& window, int hd, int& h_out, int& c_out) {
  int h = tp.zero(hd);
  int c = tp.zero(hd);
  for (std::size_t t = 0; t < window.size(); ++t) {
    int d;
    if (t == 0)
      d = tp.zero(2);
    else
      d = tp.sub(window[t], window[t - 1]);
    const int e = tp.affine(kEmbedW, kEmbedB, tp.scale(d, kDeltaScale));
    const LstmNodes n = tp.lstm_step(kEncW, kEncB, e, h, c);
    h = n.h;
    c = n.c;
  }
  h_out = h;
  c_out = c;
}

inline int pool_one_taped(Tape& tp, const std::vector<int>& hiddens, const std::vector<int>& positions,
                          std::size_t i, int hd) {
  std::vector<int> outs;
  for (std::size_t j = 0; j < hiddens.size(); ++j) {
    if (j == i) continue;
    const int rel = tp.sub(positions[j], positions[i]);
    const int e = tp.affine(kEmbedW, kEmbedB, tp.scale(rel, kRelScale));
    const int cat = tp.concat(hiddens[j], e);
    const int m1 = tp.relu_op(tp.affine(kPoolW1, kPoolB1, cat));
    outs.push_back(tp.affine(kPoolW2, kPoolB2, m1));
  }
  if (outs.empty()) return tp.zero(hd);
  return tp.max_reduce(outs);
}

inline int decoder_init_taped(Tape& tp, int h, int pooled, int z_node) {
  const int ctx = tp.affine(kDecInitW, kDecInitB, tp.concat(h, pooled));
  if (z_node < 0) return ctx;
  return tp.concat(ctx, z_node);
}

}  // namespace detail

/// Records a teacher rollout. With a candidate the ego column is
/// substituted (planning semantics); without one the rollout is
/// free-running (training semantics).
inline RolloutTape teacher_rollout_taped(const NetworkParameters& p, const HistorySet& histories,
                                         const std::optional<Eigen::MatrixX2d>& candidate, int t_plan,
                                         const Eigen::VectorXd& z) {
  if (p.role() != Role::kTeacher) throw std::invalid_argument("teacher_rollout_taped: role mismatch");
  if (z.size() != p.dims().latent) throw std::invalid_argument("teacher_rollout_taped: latent size mismatch");
  RolloutTape rt;
  rt.tape = std::make_unique<Tape>(p);
  Tape& tp = *rt.tape;
  const int hd = p.dims().hidden;
  const std::size_t V = histories.size();
  const int t_obs = histories.front().length();
  rt.t_obs = t_obs;

  std::vector<std::vector<int>> windows(V);
  for (std::size_t v = 0; v < V; ++v) {
    for (int t = 0; t < t_obs; ++t) {
      const int node = tp.input(Eigen::Vector2d(histories[v].points.row(t)));
      windows[v].push_back(node);
    }
    rt.history_nodes.push_back(windows[v]);
  }
  const int z_node = p.dims().latent > 0 ? tp.constant(z) : -1;

  rt.output_nodes.assign(V, {});
  for (int step = 0; step < t_plan; ++step) {
    std::vector<int> hs(V), cs(V), lastpos(V);
    for (std::size_t v = 0; v < V; ++v) {
      detail::encode_window_taped(tp, windows[v], hd, hs[v], cs[v]);
      lastpos[v] = windows[v].back();
    }
    rt.counters.encoder_passes += 1;
    std::vector<int> next(V);
    for (std::size_t v = 0; v < V; ++v) {
      const int pooled = detail::pool_one_taped(tp, hs, lastpos, v, hd);
      int dh = detail::decoder_init_taped(tp, hs[v], pooled, z_node);
      int dc = tp.zero(hd);
      const int d_last = tp.sub(windows[v][windows[v].size() - 1], windows[v][windows[v].size() - 2]);
      const int e = tp.affine(kEmbedW, kEmbedB, tp.scale(d_last, kDeltaScale));
      const LstmNodes n = tp.lstm_step(kDecW, kDecB, e, dh, dc);
      const int disp = tp.scale(tp.affine(kHeadW, kHeadB, n.h), kOutputScale);
      next[v] = tp.add(lastpos[v], disp);
    }
    rt.counters.decoder_steps += 1;
    if (candidate.has_value()) next[0] = tp.constant(Eigen::Vector2d(candidate->row(step)));
    for (std::size_t v = 0; v < V; ++v) {
      rt.output_nodes[v].push_back(next[v]);
      windows[v].erase(windows[v].begin());
      windows[v].push_back(next[v]);
    }
  }

  rt.prediction.ego_index = 0;
  for (const auto& h : histories) rt.prediction.vehicle_ids.push_back(h.id);
  rt.prediction.positions.assign(V, Eigen::MatrixX2d(t_plan, 2));
  for (std::size_t v = 0; v < V; ++v)
    for (int t = 0; t < t_plan; ++t) rt.prediction.positions[v].row(t) = tp.val(rt.output_nodes[v][static_cast<std::size_t>(t)]);
  return rt;
}

/// Records a student rollout (always candidate-conditioned).
inline RolloutTape student_rollout_taped(const NetworkParameters& p, const HistorySet& histories,
                                         const Eigen::MatrixX2d& candidate) {
  if (p.role() != Role::kStudent) throw std::invalid_argument("student_rollout_taped: role mismatch");
  RolloutTape rt;
  rt.tape = std::make_unique<Tape>(p);
  Tape& tp = *rt.tape;
  const int hd = p.dims().hidden;
  const std::size_t V = histories.size();
  const int t_obs = histories.front().length();
  const int T = static_cast<int>(candidate.rows());
  rt.t_obs = t_obs;

  std::vector<std::vector<int>> windows(V);
  for (std::size_t v = 0; v < V; ++v) {
    for (int t = 0; t < t_obs; ++t) windows[v].push_back(tp.input(Eigen::Vector2d(histories[v].points.row(t))));
    rt.history_nodes.push_back(windows[v]);
  }

  std::vector<int> hs(V), cs(V), lastpos(V);
  for (std::size_t v = 0; v < V; ++v) {
    detail::encode_window_taped(tp, windows[v], hd, hs[v], cs[v]);
    lastpos[v] = windows[v].back();
  }
  rt.counters.encoder_passes += 1;

  std::vector<int> dh(V), dc(V);
  for (std::size_t v = 0; v < V; ++v) {
    const int pooled = detail::pool_one_taped(tp, hs, lastpos, v, hd);
    dh[v] = detail::decoder_init_taped(tp, hs[v], pooled, -1);
    dc[v] = tp.zero(hd);
  }

  std::vector<int> pos = lastpos;
  std::vector<int> prev_disp(V);
  for (std::size_t v = 0; v < V; ++v)
    prev_disp[v] = tp.sub(windows[v][windows[v].size() - 1], windows[v][windows[v].size() - 2]);

  rt.output_nodes.assign(V, {});
  for (int t = 0; t < T; ++t) {
    const int ego_e = tp.affine(kEmbedW, kEmbedB, tp.scale(prev_disp[0], kDeltaScale));
    std::vector<int> next(V);
    for (std::size_t v = 0; v < V; ++v) {
      const int own_e = tp.affine(kEmbedW, kEmbedB, tp.scale(prev_disp[v], kDeltaScale));
      const int inp = tp.concat(own_e, ego_e);
      const LstmNodes n = tp.lstm_step(kDecW, kDecB, inp, dh[v], dc[v]);
      dh[v] = n.h;
      dc[v] = n.c;
      const int disp = tp.scale(tp.affine(kHeadW, kHeadB, n.h), kOutputScale);
      next[v] = tp.add(pos[v], disp);
    }
    rt.counters.decoder_steps += 1;
    next[0] = tp.constant(Eigen::Vector2d(candidate.row(t)));
    for (std::size_t v = 0; v < V; ++v) {
      rt.output_nodes[v].push_back(next[v]);
      prev_disp[v] = tp.sub(next[v], pos[v]);
      pos[v] = next[v];
    }
  }

  rt.prediction.ego_index = 0;
  for (const auto& h : histories) rt.prediction.vehicle_ids.push_back(h.id);
  rt.prediction.positions.assign(V, Eigen::MatrixX2d(T, 2));
  for (std::size_t v = 0; v < V; ++v)
    for (int t = 0; t < T; ++t) rt.prediction.positions[v].row(t) = tp.val(rt.output_nodes[v][static_cast<std::size_t>(t)]);
  return rt;
}

/// Exact reverse-mode gradient of one scalar output with respect to the
/// recorded history inputs, flattened (vehicle, time, x/y).
inline Eigen::VectorXd input_gradient(RolloutTape& rt, int output_index) {
  const int V = rt.n_vehicles();
  const int T = rt.horizon();
  if (output_index < 0 || output_index >= rt.flat_outputs())
    throw std::invalid_argument("input_gradient: output index out of range");
  const int v = output_index / (T * 2);
  const int rem = output_index % (T * 2);
  const int t = rem / 2;
  const int coord = rem % 2;
  rt.tape->clear_grads();
  rt.tape->seed_component(rt.output_nodes[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)], coord, 1.0);
  rt.tape->run_backward();
  Eigen::VectorXd out(V * rt.t_obs * 2);
  int k = 0;
  for (int vv = 0; vv < V; ++vv)
    for (int tt = 0; tt < rt.t_obs; ++tt) {
      const Eigen::VectorXd g =
          rt.tape->grad_or_zero(rt.history_nodes[static_cast<std::size_t>(vv)][static_cast<std::size_t>(tt)]);
      out[k++] = g[0];
      out[k++] = g[1];
    }
  return out;
}

/// Exact reverse-mode parameter gradient for an upstream loss gradient
/// over the flattened outputs.
inline TensorSet parameter_gradient(RolloutTape& rt, const Eigen::VectorXd& loss_grad) {
  if (loss_grad.size() != rt.flat_outputs())
    throw std::invalid_argument("parameter_gradient: loss gradient size mismatch");
  rt.tape->clear_grads();
  const int T = rt.horizon();
  for (int v = 0; v < rt.n_vehicles(); ++v)
    for (int t = 0; t < T; ++t) {
      const Eigen::Vector2d g{loss_grad[v * T * 2 + t * 2], loss_grad[v * T * 2 + t * 2 + 1]};
      if (g[0] != 0.0 || g[1] != 0.0)
        rt.tape->seed(rt.output_nodes[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)], g);
    }
  rt.tape->run_backward();
  return rt.tape->param_grads();
}

// ---------------------------------------------------------------------------
// Planner-facing predictor interface
// ---------------------------------------------------------------------------

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual PredictionSet predict(const HistorySet& histories, const EgoCandidate& candidate) const = 0;
  virtual std::string name() const = 0;
};

class TeacherPredictor final : public Predictor {
 public:
  TeacherPredictor(const NetworkParameters& params, std::uint64_t latent_seed)
      : params_(&params), latent_seed_(latent_seed) {}
  PredictionSet predict(const HistorySet& histories, const EgoCandidate& candidate) const override {
    return teacher_rollout(*params_, histories, candidate, latent_seed_).prediction;
  }
  std::string name() const override { return "teacher"; }

 private:
  const NetworkParameters* params_;
  std::uint64_t latent_seed_;
};

class StudentPredictor final : public Predictor {
 public:
  explicit StudentPredictor(const NetworkParameters& params) : params_(&params) {}
  PredictionSet predict(const HistorySet& histories, const EgoCandidate& candidate) const override {
    return student_rollout(*params_, histories, candidate).prediction;
  }
  std::string name() const override { return "student"; }

 private:
  const NetworkParameters* params_;
};

}  // namespace iakd
