#pragma once

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <vector>

#include "iakd/network.hpp"
#include "iakd/nn_ops.hpp"

namespace iakd {

struct LstmNodes {
  int h = -1;
  int c = -1;
};

/// Reverse-mode tape for the fixed generator architectures. Records the
/// forward pass as a flat op list over vector nodes; backward yields
/// exact gradients with respect to tracked leaves (input_gradient) and
/// network tensors (parameter_gradient).
///
/// Stored forward values ARE the outputs, so replaying a tape is a
/// lookup and reproduces the forward bit-for-bit.
class Tape {
 public:
  explicit Tape(const NetworkParameters& params) : params_(&params), revision_(params.revision()) {
    nodes_.reserve(1024);
    val_.reserve(1024);
  }

  // ---- forward recording ----

  int input(const Eigen::VectorXd& v) { return push(OpKind::kLeaf, v); }
  int constant(const Eigen::VectorXd& v) { return push(OpKind::kLeaf, v); }
  int zero(int len) { return push(OpKind::kLeaf, Eigen::VectorXd::Zero(len)); }

  int affine(TensorId W, TensorId b, int x) {
    check(x);
    const int id = push(OpKind::kAffine, affine_eval(params_->tensor(W), params_->tensor(b), val(x)));
    nodes_.back().a = x;
    nodes_.back().w = W;
    nodes_.back().aux = b;
    return id;
  }

  int concat(int a, int b) {
    check(a);
    check(b);
    Eigen::VectorXd v(val(a).size() + val(b).size());
    v << val(a), val(b);
    const int id = push(OpKind::kConcat, std::move(v));
    nodes_.back().a = a;
    nodes_.back().b = b;
    return id;
  }

  int slice(int x, int offset, int len) {
    check(x);
    const int id = push(OpKind::kSlice, val(x).segment(offset, len));
    nodes_.back().a = x;
    nodes_.back().aux = offset;
    return id;
  }

  int sigmoid_op(int x) {
    check(x);
    Eigen::VectorXd v = val(x);
    sigmoid_inplace(v);
    const int id = push(OpKind::kSigmoid, std::move(v));
    nodes_.back().a = x;
    return id;
  }

  int tanh_op(int x) {
    check(x);
    Eigen::VectorXd v = val(x);
    tanh_inplace(v);
    const int id = push(OpKind::kTanh, std::move(v));
    nodes_.back().a = x;
    return id;
  }

  int relu_op(int x) {
    check(x);
    Eigen::VectorXd v = val(x);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      min_relu_margin_ = std::min(min_relu_margin_, std::abs(v[i]));
    relu_inplace(v);
    const int id = push(OpKind::kRelu, std::move(v));
    nodes_.back().a = x;
    return id;
  }

  int cmul(int a, int b) {
    check(a);
    check(b);
    const int id = push(OpKind::kMul, (val(a).array() * val(b).array()).matrix());
    nodes_.back().a = a;
    nodes_.back().b = b;
    return id;
  }

  int add(int a, int b) {
    check(a);
    check(b);
    const int id = push(OpKind::kAdd, val(a) + val(b));
    nodes_.back().a = a;
    nodes_.back().b = b;
    return id;
  }

  int sub(int a, int b) {
    check(a);
    check(b);
    const int id = push(OpKind::kSub, val(a) - val(b));
    nodes_.back().a = a;
    nodes_.back().b = b;
    return id;
  }

  int scale(int x, double s) {
    check(x);
    const int id = push(OpKind::kScale, val(x) * s);
    nodes_.back().a = x;
    scale_factors_.push_back(s);
    nodes_.back().aux = static_cast<int>(scale_factors_.size()) - 1;
    return id;
  }

  /// Elementwise max over >= 1 operands of equal length. Gradient routes
  /// to the first argmax operand per element.
  int max_reduce(const std::vector<int>& xs) {
    if (xs.empty()) throw std::invalid_argument("max_reduce: empty operand list");
    const auto len = val(xs[0]).size();
    Eigen::VectorXd out = val(xs[0]);
    Eigen::VectorXi arg = Eigen::VectorXi::Zero(len);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const Eigen::VectorXd& v = val(xs[k]);
      if (v.size() != len) throw std::invalid_argument("max_reduce: length mismatch");
      for (Eigen::Index i = 0; i < len; ++i)
        if (v[i] > out[i]) {
          // margin between winner and runner-up, for FD test hygiene
          min_pool_margin_ = std::min(min_pool_margin_, v[i] - out[i]);
          out[i] = v[i];
          arg[i] = static_cast<int>(k);
        } else {
          min_pool_margin_ = std::min(min_pool_margin_, out[i] - v[i]);
        }
    }
    const int id = push(OpKind::kMax, std::move(out));
    nodes_.back().aux = static_cast<int>(max_args_.size());
    nodes_.back().b = static_cast<int>(xs.size());
    for (int x : xs) max_args_.push_back(x);
    argmax_.push_back(std::move(arg));
    nodes_.back().a = static_cast<int>(argmax_.size()) - 1;
    return id;
  }

  /// Standard gated recurrent cell (input/forget/output sigmoid gates,
  /// tanh candidate), gate order [i, f, g, o] in the stacked weight rows.
  LstmNodes lstm_step(TensorId W, TensorId b, int x, int h_prev, int c_prev) {
    const int h = static_cast<int>(val(h_prev).size());
    const int xc = concat(x, h_prev);
    const int pre = affine(W, b, xc);
    const int gi = sigmoid_op(slice(pre, 0, h));
    const int gf = sigmoid_op(slice(pre, h, h));
    const int gg = tanh_op(slice(pre, 2 * h, h));
    const int go = sigmoid_op(slice(pre, 3 * h, h));
    const int c = add(cmul(gf, c_prev), cmul(gi, gg));
    const int ct = tanh_op(c);
    const int hn = cmul(go, ct);
    return {hn, c};
  }

  const Eigen::VectorXd& val(int id) const { return val_[static_cast<std::size_t>(id)]; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // ---- backward ----

  bool stale() const { return params_->revision() != revision_; }

  void clear_grads() {
    grad_.assign(val_.size(), Eigen::VectorXd());
    pgrad_ = params_->zero_like();
    seeded_ = true;
  }

  void seed(int node, const Eigen::VectorXd& g) {
    if (!seeded_) clear_grads();
    auto& gr = grad_[static_cast<std::size_t>(node)];
    if (gr.size() == 0) gr = Eigen::VectorXd::Zero(val(node).size());
    gr += g;
  }

  void seed_component(int node, int component, double g) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(val(node).size());
    v[component] = g;
    seed(node, v);
  }

  /// One reverse sweep; call after seeding output gradients. Throws if
  /// the parameters changed since the tape was recorded.
  void run_backward() {
    if (stale()) throw std::runtime_error("stale tape: parameters changed since recording");
    if (!seeded_) throw std::logic_error("run_backward: nothing seeded");
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      const Eigen::VectorXd& g = grad_[static_cast<std::size_t>(id)];
      if (g.size() == 0) continue;
      switch (n.op) {
        case OpKind::kLeaf:
          break;
        case OpKind::kAffine: {
          accum(n.a, params_->tensor(n.w).transpose() * g);
          pgrad_[static_cast<std::size_t>(n.w)].noalias() += g * val(n.a).transpose();
          pgrad_[static_cast<std::size_t>(n.aux)].col(0) += g;
          break;
        }
        case OpKind::kConcat: {
          const auto la = val(n.a).size();
          accum(n.a, g.head(la));
          accum(n.b, g.tail(g.size() - la));
          break;
        }
        case OpKind::kSlice: {
          auto& gr = grad_ref(n.a);
          gr.segment(n.aux, g.size()) += g;
          break;
        }
        case OpKind::kSigmoid: {
          const Eigen::VectorXd& s = val(id);
          accum(n.a, (g.array() * s.array() * (1.0 - s.array())).matrix());
          break;
        }
        case OpKind::kTanh: {
          const Eigen::VectorXd& t = val(id);
          accum(n.a, (g.array() * (1.0 - t.array() * t.array())).matrix());
          break;
        }
        case OpKind::kRelu: {
          const Eigen::VectorXd& x = val(n.a);
          Eigen::VectorXd gx = g;
          for (Eigen::Index i = 0; i < gx.size(); ++i)
            if (x[i] <= 0.0) gx[i] = 0.0;
          accum(n.a, gx);
          break;
        }
        case OpKind::kMul: {
          accum(n.a, (g.array() * val(n.b).array()).matrix());
          accum(n.b, (g.array() * val(n.a).array()).matrix());
          break;
        }
        case OpKind::kAdd: {
          accum(n.a, g);
          accum(n.b, g);
          break;
        }
        case OpKind::kSub: {
          accum(n.a, g);
          accum(n.b, -g);
          break;
        }
        case OpKind::kScale: {
          accum(n.a, g * scale_factors_[static_cast<std::size_t>(n.aux)]);
          break;
        }
        case OpKind::kMax: {
          const Eigen::VectorXi& arg = argmax_[static_cast<std::size_t>(n.a)];
          for (Eigen::Index i = 0; i < g.size(); ++i) {
            const int src = max_args_[static_cast<std::size_t>(n.aux + arg[i])];
            auto& gr = grad_ref(src);
            gr[i] += g[i];
          }
          break;
        }
      }
    }
  }

  const Eigen::VectorXd& grad(int id) const {
    static const Eigen::VectorXd empty;
    const auto& g = grad_[static_cast<std::size_t>(id)];
    return g.size() == 0 ? empty : g;
  }

  Eigen::VectorXd grad_or_zero(int id) const {
    const auto& g = grad_[static_cast<std::size_t>(id)];
    if (g.size() == 0) return Eigen::VectorXd::Zero(val(id).size());
    return g;
  }

  const TensorSet& param_grads() const { return pgrad_; }

  double min_relu_margin() const { return min_relu_margin_; }
  double min_pool_margin() const { return min_pool_margin_; }
  const NetworkParameters& params() const { return *params_; }

 private:
  enum class OpKind : std::uint8_t {
    kLeaf,
    kAffine,
    kConcat,
    kSlice,
    kSigmoid,
    kTanh,
    kRelu,
    kMul,
    kAdd,
    kSub,
    kScale,
    kMax
  };
  struct Node {
    OpKind op;
    int a = -1;
    int b = -1;
    int w = -1;
    int aux = -1;
  };

  int push(OpKind op, Eigen::VectorXd v) {
    nodes_.push_back(Node{op, -1, -1, -1, -1});
    val_.push_back(std::move(v));
    return static_cast<int>(nodes_.size()) - 1;
  }
  void check(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw std::logic_error("tape: bad node id");
  }
  Eigen::VectorXd& grad_ref(int id) {
    auto& g = grad_[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Eigen::VectorXd::Zero(val(id).size());
    return g;
  }
  void accum(int id, const Eigen::VectorXd& g) { grad_ref(id) += g; }

  std::vector<Node> nodes_;
  std::vector<Eigen::VectorXd> val_;
  std::vector<Eigen::VectorXd> grad_;
  std::vector<int> max_args_;
  std::vector<Eigen::VectorXi> argmax_;
  std::vector<double> scale_factors_;
  TensorSet pgrad_;
  bool seeded_ = false;
  const NetworkParameters* params_;
  std::uint64_t revision_;
  double min_relu_margin_ = std::numeric_limits<double>::infinity();
  double min_pool_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace iakd
