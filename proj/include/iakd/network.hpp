#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iakd/rng.hpp"

namespace iakd {

enum class Role : std::uint32_t { kTeacher = 0, kStudent = 1 };

inline const char* role_name(Role r) { return r == Role::kTeacher ? "teacher" : "student"; }

/// The generator is a shared schema for teacher and student: input
/// embedding, encoder LSTM, neighbor-pooling MLP, decoder-init layer,
/// decoder LSTM and a linear position head. Only the dimensions (and the
/// decoder input width) differ between the two roles.
enum TensorId : int {
  kEmbedW = 0,
  kEmbedB,
  kEncW,
  kEncB,
  kPoolW1,
  kPoolB1,
  kPoolW2,
  kPoolB2,
  kDecInitW,
  kDecInitB,
  kDecW,
  kDecB,
  kHeadW,
  kHeadB,
  kTensorCount
};

inline const char* tensor_name(int id) {
  static const char* names[kTensorCount] = {"embed.W",    "embed.b",    "enc.W",  "enc.b",  "pool.W1",
                                            "pool.b1",    "pool.W2",    "pool.b2", "dec_init.W",
                                            "dec_init.b", "dec.W",      "dec.b",  "head.W", "head.b"};
  return names[id];
}

struct NetworkDims {
  int hidden = 32;
  int embed = 16;
  int mlp = 64;
  int latent = 8;
};

inline NetworkDims teacher_dims() { return {32, 16, 64, 8}; }
inline NetworkDims student_dims() { return {16, 16, 16, 0}; }

/// Gradient (or moment) holder shaped exactly like the parameter set.
using TensorSet = std::array<Eigen::MatrixXd, kTensorCount>;

class NetworkParameters {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  NetworkParameters() = default;

  Role role() const { return role_; }
  const NetworkDims& dims() const { return dims_; }
  std::uint32_t format_version() const { return version_; }
  /// Bumped on every mutation; used to detect stale tapes.
  std::uint64_t revision() const { return revision_; }

  /// Student decoders take the neighbor displacement and the substituted
  /// ego displacement; teachers take the own displacement only.
  int decoder_input_dim() const {
    return role_ == Role::kStudent ? 2 * dims_.embed : dims_.embed;
  }

  const Eigen::MatrixXd& tensor(int id) const { return t_[static_cast<std::size_t>(id)]; }
  const TensorSet& tensors() const { return t_; }

  /// Mutable access; bumps the revision.
  TensorSet& mutate() {
    ++revision_;
    return t_;
  }

  static std::pair<int, int> tensor_shape(int id, const NetworkDims& d, Role role) {
    const int h = d.hidden, e = d.embed, m = d.mlp;
    const int din = role == Role::kStudent ? 2 * e : e;
    switch (id) {
      case kEmbedW: return {e, 2};
      case kEmbedB: return {e, 1};
      case kEncW: return {4 * h, e + h};
      case kEncB: return {4 * h, 1};
      case kPoolW1: return {m, h + e};
      case kPoolB1: return {m, 1};
      case kPoolW2: return {h, m};
      case kPoolB2: return {h, 1};
      case kDecInitW: return {h - d.latent, 2 * h};
      case kDecInitB: return {h - d.latent, 1};
      case kDecW: return {4 * h, din + h};
      case kDecB: return {4 * h, 1};
      case kHeadW: return {2, h};
      case kHeadB: return {2, 1};
      default: throw std::logic_error("bad tensor id");
    }
  }

  /// Fresh parameters with uniform(-1/sqrt(fan_in), +) weights and zero
  /// biases, rounded onto the float32 grid so weight files round-trip
  /// losslessly.
  static NetworkParameters init(Role role, const NetworkDims& dims, std::uint64_t seed) {
    validate_dims(role, dims);
    NetworkParameters p;
    p.role_ = role;
    p.dims_ = dims;
    Rng rng(seed);
    for (int id = 0; id < kTensorCount; ++id) {
      auto [rows, cols] = tensor_shape(id, dims, role);
      Eigen::MatrixXd m(rows, cols);
      const bool is_bias = cols == 1 && id % 2 == 1;
      const double s = is_bias ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cols));
      for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r)
          m(r, c) = is_bias ? 0.0 : static_cast<double>(static_cast<float>(rng.uniform(-s, s)));
      p.t_[static_cast<std::size_t>(id)] = std::move(m);
    }
    return p;
  }

  static NetworkParameters zeros(Role role, const NetworkDims& dims) {
    validate_dims(role, dims);
    NetworkParameters p;
    p.role_ = role;
    p.dims_ = dims;
    for (int id = 0; id < kTensorCount; ++id) {
      auto [rows, cols] = tensor_shape(id, dims, role);
      p.t_[static_cast<std::size_t>(id)] = Eigen::MatrixXd::Zero(rows, cols);
    }
    return p;
  }

  TensorSet zero_like() const {
    TensorSet g;
    for (int id = 0; id < kTensorCount; ++id)
      g[static_cast<std::size_t>(id)] =
          Eigen::MatrixXd::Zero(t_[static_cast<std::size_t>(id)].rows(), t_[static_cast<std::size_t>(id)].cols());
    return g;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open weights for write: " + path);
    f.write("IAKD", 4);
    write_u32(f, version_);
    write_u32(f, static_cast<std::uint32_t>(role_));
    write_u32(f, static_cast<std::uint32_t>(dims_.hidden));
    write_u32(f, static_cast<std::uint32_t>(dims_.embed));
    write_u32(f, static_cast<std::uint32_t>(dims_.mlp));
    write_u32(f, static_cast<std::uint32_t>(dims_.latent));
    write_u32(f, static_cast<std::uint32_t>(kTensorCount));
    for (int id = 0; id < kTensorCount; ++id) {
      const std::string name = tensor_name(id);
      write_u32(f, static_cast<std::uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Eigen::MatrixXd& m = t_[static_cast<std::size_t>(id)];
      const bool is_bias = m.cols() == 1 && id % 2 == 1;
      write_u32(f, is_bias ? 1u : 2u);
      write_u32(f, static_cast<std::uint32_t>(m.rows()));
      if (!is_bias) write_u32(f, static_cast<std::uint32_t>(m.cols()));
      for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r) {
          const auto v = static_cast<float>(m(r, c));
          f.write(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    }
    if (!f) throw std::runtime_error("short write: " + path);
  }

  static NetworkParameters load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open weights: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "IAKD", 4) != 0) throw std::runtime_error("bad weights magic: " + path);
    NetworkParameters p;
    p.version_ = read_u32(f);
    if (p.version_ != kFormatVersion) throw std::runtime_error("unsupported weights version");
    p.role_ = static_cast<Role>(read_u32(f));
    p.dims_.hidden = static_cast<int>(read_u32(f));
    p.dims_.embed = static_cast<int>(read_u32(f));
    p.dims_.mlp = static_cast<int>(read_u32(f));
    p.dims_.latent = static_cast<int>(read_u32(f));
    validate_dims(p.role_, p.dims_);
    const std::uint32_t count = read_u32(f);
    if (count != kTensorCount) throw std::runtime_error("unexpected tensor count");
    for (int id = 0; id < kTensorCount; ++id) {
      const std::uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      if (name != tensor_name(id)) throw std::runtime_error("unexpected tensor name: " + name);
      const std::uint32_t rank = read_u32(f);
      const std::uint32_t rows = read_u32(f);
      const std::uint32_t cols = rank == 2 ? read_u32(f) : 1u;
      auto [erows, ecols] = tensor_shape(id, p.dims_, p.role_);
      if (static_cast<int>(rows) != erows || static_cast<int>(cols) != ecols)
        throw std::runtime_error("tensor shape mismatch for " + name);
      Eigen::MatrixXd m(rows, cols);
      for (std::uint32_t c = 0; c < cols; ++c)
        for (std::uint32_t r = 0; r < rows; ++r) {
          float v = 0.0f;
          f.read(reinterpret_cast<char*>(&v), sizeof(float));
          m(r, c) = static_cast<double>(v);
        }
      p.t_[static_cast<std::size_t>(id)] = std::move(m);
    }
    if (!f) throw std::runtime_error("truncated weights file: " + path);
    return p;
  }

  /// Snap every value onto the float32 grid (used after optimizer steps).
  void round_to_f32() {
    for (auto& m : t_)
      for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r) m(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
  }

  bool all_finite() const {
    for (const auto& m : t_)
      if (!m.allFinite()) return false;
    return true;
  }

 private:
  static void validate_dims(Role role, const NetworkDims& d) {
    if (d.hidden < 1 || d.embed < 1 || d.mlp < 1 || d.latent < 0)
      throw std::invalid_argument("network dims must be positive");
    if (d.latent >= d.hidden) throw std::invalid_argument("latent dim must be smaller than hidden dim");
    if (role == Role::kStudent && d.latent != 0)
      throw std::invalid_argument("student networks do not sample a latent");
  }
  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw std::runtime_error("truncated weights file");
    return v;
  }

  Role role_ = Role::kTeacher;
  NetworkDims dims_;
  std::uint32_t version_ = kFormatVersion;
  std::uint64_t revision_ = 0;
  TensorSet t_;
};

/// Latent draw z ~ N(0, I) of length latent_dim, deterministic in seed.
inline Eigen::VectorXd sample_latent(int latent_dim, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd z(latent_dim);
  for (int i = 0; i < latent_dim; ++i) z[i] = rng.normal();
  return z;
}

/// A latent sample together with the seed that produced it.
struct LatentSample {
  Eigen::VectorXd values;
  std::uint64_t seed = 0;

  static LatentSample draw(int latent_dim, std::uint64_t seed) { return {sample_latent(latent_dim, seed), seed}; }
};

}  // namespace iakd
