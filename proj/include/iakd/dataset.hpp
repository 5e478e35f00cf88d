#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iakd/predictor.hpp"
#include "iakd/scenario.hpp"

namespace iakd {

/// One training example: the observation windows at some planning step,
/// the ego candidate evaluated there, and the teacher's interactive
/// prediction for it (or the simulation ground truth, for teacher
/// training pairs). Vehicles are stored in scenario order, ego first.
struct DistillationRecord {
  std::uint32_t scenario_id = 0;
  std::uint32_t step_index = 0;
  std::vector<Eigen::MatrixX2d> histories;  // [V] t_obs x 2
  Eigen::MatrixX2d candidate;               // t_plan x 2 (ego)
  std::vector<Eigen::MatrixX2d> prediction;  // [V] t_plan x 2

  int n_vehicles() const { return static_cast<int>(histories.size()); }
  int t_obs() const { return histories.empty() ? 0 : static_cast<int>(histories.front().rows()); }
  int t_plan() const { return static_cast<int>(candidate.rows()); }

  HistorySet history_set() const {
    HistorySet hs;
    for (std::size_t v = 0; v < histories.size(); ++v) {
      ObservationHistory h;
      h.id = static_cast<int>(v);
      h.is_ego = (v == 0);
      h.points = histories[v];
      hs.push_back(std::move(h));
    }
    return hs;
  }

  PredictionSet prediction_set() const {
    PredictionSet p;
    p.ego_index = 0;
    for (std::size_t v = 0; v < prediction.size(); ++v) {
      p.vehicle_ids.push_back(static_cast<int>(v));
      p.positions.push_back(prediction[v]);
    }
    return p;
  }

  /// Snap all payloads onto the float32 grid (the file stores float32).
  void round_to_f32() {
    auto snap = [](Eigen::MatrixX2d& m) {
      for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < 2; ++c) m(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
    };
    for (auto& h : histories) snap(h);
    snap(candidate);
    for (auto& p : prediction) snap(p);
  }
};

enum class DatasetKind : std::uint8_t {
  kDistillation = 0,  // prediction column holds the teacher output
  kPairs = 1          // prediction column holds simulation ground truth
};

struct DatasetHeader {
  std::uint32_t version = 1;
  std::uint64_t config_digest = 0;
  std::uint64_t latent_seed = 0;
  DatasetKind kind = DatasetKind::kDistillation;
};

namespace detail {

inline void write_f32_block(std::ofstream& f, const Eigen::MatrixX2d& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < 2; ++c) {
      const auto v = static_cast<float>(m(r, c));
      f.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
}

inline void read_f32_block(std::istream& f, Eigen::MatrixX2d& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < 2; ++c) {
      float v = 0.0f;
      f.read(reinterpret_cast<char*>(&v), sizeof(float));
      m(r, c) = static_cast<double>(v);
    }
}

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("truncated dataset file");
  return v;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const DatasetHeader& header,
                         const std::vector<DistillationRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset for write: " + path);
  f.write("IAKD-DS", 7);
  detail::write_pod(f, header.version);
  detail::write_pod(f, header.config_digest);
  detail::write_pod(f, header.latent_seed);
  detail::write_pod(f, static_cast<std::uint8_t>(header.kind));
  detail::write_pod(f, static_cast<std::uint64_t>(records.size()));
  for (const auto& r : records) {
    const std::uint32_t V = static_cast<std::uint32_t>(r.n_vehicles());
    const std::uint32_t to = static_cast<std::uint32_t>(r.t_obs());
    const std::uint32_t tp = static_cast<std::uint32_t>(r.t_plan());
    const std::uint32_t payload = static_cast<std::uint32_t>(
        5 * sizeof(std::uint32_t) + sizeof(float) * 2 * (V * to + tp + V * tp));
    detail::write_pod(f, payload);
    detail::write_pod(f, r.scenario_id);
    detail::write_pod(f, r.step_index);
    detail::write_pod(f, V);
    detail::write_pod(f, to);
    detail::write_pod(f, tp);
    for (const auto& h : r.histories) detail::write_f32_block(f, h);
    detail::write_f32_block(f, r.candidate);
    for (const auto& p : r.prediction) detail::write_f32_block(f, p);
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

inline std::pair<DatasetHeader, std::vector<DistillationRecord>> load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset: " + path);
  char magic[7];
  f.read(magic, 7);
  if (!f || std::memcmp(magic, "IAKD-DS", 7) != 0) throw std::runtime_error("bad dataset magic: " + path);
  DatasetHeader header;
  header.version = detail::read_pod<std::uint32_t>(f);
  if (header.version != 1) throw std::runtime_error("unsupported dataset version");
  header.config_digest = detail::read_pod<std::uint64_t>(f);
  header.latent_seed = detail::read_pod<std::uint64_t>(f);
  header.kind = static_cast<DatasetKind>(detail::read_pod<std::uint8_t>(f));
  const auto count = detail::read_pod<std::uint64_t>(f);
  std::vector<DistillationRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    detail::read_pod<std::uint32_t>(f);  // payload length (redundant with dims)
    DistillationRecord r;
    r.scenario_id = detail::read_pod<std::uint32_t>(f);
    r.step_index = detail::read_pod<std::uint32_t>(f);
    const auto V = detail::read_pod<std::uint32_t>(f);
    const auto to = detail::read_pod<std::uint32_t>(f);
    const auto tp = detail::read_pod<std::uint32_t>(f);
    r.histories.assign(V, Eigen::MatrixX2d(to, 2));
    for (auto& h : r.histories) detail::read_f32_block(f, h);
    r.candidate.resize(tp, 2);
    detail::read_f32_block(f, r.candidate);
    r.prediction.assign(V, Eigen::MatrixX2d(tp, 2));
    for (auto& p : r.prediction) detail::read_f32_block(f, p);
    records.push_back(std::move(r));
  }
  return {header, records};
}

}  // namespace iakd
