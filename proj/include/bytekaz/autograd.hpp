#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every op applied to Vars; Tape::backward walks the record in
// reverse. Ops whose inputs carry no gradient record no closure, so frozen
// sub-graphs cost one forward pass and nothing else.

#include "bytekaz/types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace bytekaz {

template <typename Scalar>
struct Parameter {
  std::string name;
  std::string group;
  int layer = -1;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->node(id_).value; }
  const Matrix<Scalar>& grad() const { return tape_->node(id_).grad; }
  bool requires_grad() const { return tape_->node(id_).requires_grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;

  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a parameter; gradients flow into param.grad iff trainable
  /// (or when `force_grad` is set, which gradient checking uses).
  Var<Scalar> param(Parameter<Scalar>& p, bool force_grad = false) {
    auto& n = push(p.value, grad_enabled_ && (p.trainable || force_grad));
    n.param = &p;
    return last();
  }

  Var<Scalar> constant(Mat value) {
    push(std::move(value), false);
    return last();
  }

  Var<Scalar> variable(Mat value) {
    push(std::move(value), grad_enabled_);
    return last();
  }

  /// Records a result node. `backward` receives the node's gradient.
  template <typename Backward>
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward&& backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    auto& n = push(std::move(value), needs);
    const int id = static_cast<int>(nodes_.size()) - 1;
    if (needs) {
      n.backward = [this, id, fn = std::forward<Backward>(backward)]() mutable { fn(nodes_[id]->grad); };
    }
    return last();
  }

  /// Adds `g` into the gradient of `v` if `v` takes gradients.
  template <typename Expr>
  void accumulate(const Var<Scalar>& v, const Expr& g) {
    auto& n = *nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  bool wants_grad(const Var<Scalar>& v) const { return nodes_[v.id()]->requires_grad; }

  void backward(const Var<Scalar>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw Error("backward: loss must be a 1x1 scalar");
    auto& root = *nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = Mat::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      auto& n = *nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }
  const Node& node(int id) const { return *nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  Node& push(Mat value, bool requires_grad) {
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return *nodes_.back();
  }
  Var<Scalar> last() { return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1); }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool grad_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimensions differ");
  auto& t = a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b, &t](const Matrix<Scalar>& g) {
    if (t.wants_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.wants_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T.
template <typename Scalar>
Var<Scalar> matmul_transposed(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols()) throw Error("matmul_transposed: widths differ");
  auto& t = a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b, &t](const Matrix<Scalar>& g) {
    if (t.wants_grad(a)) t.accumulate(a, g * b.value());
    if (t.wants_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("add: shape mismatch");
  auto& t = a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b, &t](const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("sub: shape mismatch");
  auto& t = a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b, &t](const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  auto& t = a.tape();
  return t.record(a.value() * s, {a}, [a, s, &t](const Matrix<Scalar>& g) { t.accumulate(a, g * s); });
}

/// a + broadcast(row) for a 1 x cols row vector.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: bias width mismatch");
  auto& t = a.tape();
  Matrix<Scalar> out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row, &t](const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    if (t.wants_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

/// x W + b.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename Scalar>
Var<Scalar> repeat_rows(const Var<Scalar>& row, Eigen::Index count) {
  if (row.rows() != 1) throw Error("repeat_rows: expects a single row");
  auto& t = row.tape();
  Matrix<Scalar> out = row.value().replicate(count, 1);
  return t.record(std::move(out), {row}, [row, &t](const Matrix<Scalar>& g) { t.accumulate(row, g.colwise().sum()); });
}

template <typename Scalar>
Var<Scalar> concat_rows(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols()) throw Error("concat_rows: width mismatch");
  auto& t = a.tape();
  Matrix<Scalar> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const auto ra = a.rows();
  const auto rb = b.rows();
  return t.record(std::move(out), {a, b}, [a, b, ra, rb, &t](const Matrix<Scalar>& g) {
    if (t.wants_grad(a)) t.accumulate(a, g.topRows(ra));
    if (t.wants_grad(b)) t.accumulate(b, g.bottomRows(rb));
  });
}

/// Row gather: out[i] = table[ids[i]].
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const int> ids) {
  auto& t = table.tape();
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw Error("embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, idv = std::move(idv), &t](const Matrix<Scalar>& g) {
    Matrix<Scalar> dt = Matrix<Scalar>::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idv.size(); ++i) dt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(table, dt);
  });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  auto& t = a.tape();
  static constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  static constexpr Scalar k = Scalar(0.044715);
  const auto& x = a.value();
  Matrix<Scalar> out = (Scalar(0.5) * x.array() * (Scalar(1) + (c * (x.array() + k * x.array().cube())).tanh())).matrix();
  return t.record(std::move(out), {a}, [a, &t](const Matrix<Scalar>& g) {
    const auto& x = a.value();
    auto u = (c * (x.array() + k * x.array().cube())).eval();
    auto th = u.tanh().eval();
    auto du = (c * (Scalar(1) + Scalar(3) * k * x.array().square())).eval();
    auto d = (Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * x.array() * (Scalar(1) - th.square()) * du).eval();
    t.accumulate(a, (g.array() * d).matrix());
  });
}

/// Row-wise layer normalization with learned gain and shift (both 1 x cols).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& shift, Scalar eps = Scalar(1e-5)) {
  auto& t = x.tape();
  const auto rows = x.rows();
  const auto cols = x.cols();
  Matrix<Scalar> xhat(rows, cols);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r).array();
    const Scalar mean = row.mean();
    const Scalar var = (row - mean).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = ((row - mean) * inv_std(r)).matrix();
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += shift.value().row(0);
  return t.record(std::move(out), {x, gain, shift}, [x, gain, shift, xhat, inv_std, &t](const Matrix<Scalar>& g) {
    if (t.wants_grad(gain)) t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
    if (t.wants_grad(shift)) t.accumulate(shift, g.colwise().sum());
    if (!t.wants_grad(x)) return;
    Matrix<Scalar> dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
    Matrix<Scalar> dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const Scalar m1 = dxhat.row(r).mean();
      const Scalar m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
      dx.row(r) = (inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2)).matrix();
    }
    t.accumulate(x, dx);
  });
}

/// Rotary position embedding applied per head with the half-split pairing
/// (dimension i rotates with i + head_dim/2). Positions may be any reals.
template <typename Scalar>
Matrix<Scalar> rope_apply(const Matrix<Scalar>& x, std::span<const double> positions, int heads, double base, bool inverse = false) {
  const auto rows = x.rows();
  const auto width = x.cols();
  const auto head_dim = width / heads;
  const auto half = head_dim / 2;
  Matrix<Scalar> out = x;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = positions[static_cast<std::size_t>(r)] * freq;
      const Scalar c = static_cast<Scalar>(std::cos(angle));
      const Scalar s = static_cast<Scalar>(inverse ? -std::sin(angle) : std::sin(angle));
      for (int h = 0; h < heads; ++h) {
        const auto a = h * head_dim + i;
        const auto b = a + half;
        const Scalar x1 = x(r, a);
        const Scalar x2 = x(r, b);
        out(r, a) = x1 * c - x2 * s;
        out(r, b) = x1 * s + x2 * c;
      }
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> rope(const Var<Scalar>& x, std::span<const double> positions, int heads, double base) {
  if (static_cast<std::size_t>(x.rows()) != positions.size()) throw Error("rope: one position per row required");
  if (x.cols() % heads != 0 || (x.cols() / heads) % 2 != 0) throw Error("rope: head width must be even");
  auto& t = x.tape();
  std::vector<double> pos(positions.begin(), positions.end());
  return t.record(rope_apply(x.value(), positions, heads, base), {x},
                  [x, pos = std::move(pos), heads, base, &t](const Matrix<Scalar>& g) {
                    t.accumulate(x, rope_apply<Scalar>(g, pos, heads, base, /*inverse=*/true));
                  });
}

/// Multi-head scaled dot-product attention. Masked entries get -inf before
/// the softmax. When `scores_out` is given it receives each head's masked
/// pre-softmax score matrix.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, int heads, const Mask& mask,
                      std::vector<Matrix<Scalar>>* scores_out = nullptr) {
  const auto nq = q.rows();
  const auto nk = k.rows();
  if (k.cols() != q.cols() || v.cols() != q.cols() || v.rows() != nk) throw Error("attention: shape mismatch");
  if (mask.rows() != nq || mask.cols() != nk) throw Error("attention: mask shape mismatch");
  if (q.cols() % heads != 0) throw Error("attention: width not divisible by heads");
  const auto hd = q.cols() / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(heads));
  Matrix<Scalar> out(nq, q.cols());
  if (scores_out != nullptr) scores_out->assign(static_cast<std::size_t>(heads), Matrix<Scalar>());
  for (int h = 0; h < heads; ++h) {
    Matrix<Scalar> s = (q.value().middleCols(h * hd, hd) * k.value().middleCols(h * hd, hd).transpose()) * scale;
    for (Eigen::Index i = 0; i < nq; ++i) {
      Scalar mx = neg_inf;
      for (Eigen::Index j = 0; j < nk; ++j) {
        if (!mask(i, j)) s(i, j) = neg_inf;
        mx = std::max(mx, s(i, j));
      }
      if (mx == neg_inf) throw Error("attention: query row with no visible key");
    }
    if (scores_out != nullptr) (*scores_out)[static_cast<std::size_t>(h)] = s;
    Matrix<Scalar>& p = probs[static_cast<std::size_t>(h)];
    p.resize(nq, nk);
    for (Eigen::Index i = 0; i < nq; ++i) {
      const Scalar mx = s.row(i).maxCoeff();
      Scalar z = 0;
      for (Eigen::Index j = 0; j < nk; ++j) {
        const Scalar e = mask(i, j) ? std::exp(s(i, j) - mx) : Scalar(0);
        p(i, j) = e;
        z += e;
      }
      p.row(i) /= z;
    }
    out.middleCols(h * hd, hd) = p * v.value().middleCols(h * hd, hd);
  }

  auto& t = q.tape();
  return t.record(std::move(out), {q, k, v}, [q, k, v, heads, hd, scale, probs = std::move(probs), &t](const Matrix<Scalar>& g) {
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(q.rows(), q.cols());
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(k.rows(), k.cols());
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(v.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
      const auto& p = probs[static_cast<std::size_t>(h)];
      const auto go = g.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd) = p.transpose() * go;
      Matrix<Scalar> dp = go * v.value().middleCols(h * hd, hd).transpose();
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
      Matrix<Scalar> ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
      dq.middleCols(h * hd, hd) = ds * k.value().middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd) = ds.transpose() * q.value().middleCols(h * hd, hd);
    }
    t.accumulate(q, dq);
    t.accumulate(k, dk);
    t.accumulate(v, dv);
  });
}

inline Mask causal_mask(Eigen::Index n) {
  Mask m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = j <= i;
  return m;
}

/// Mean next-unit negative log-likelihood (nats) over rows whose target is
/// not negative. Returns a 1x1 Var.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw Error("cross_entropy: one target per row required");
  auto& t = logits.tape();
  const auto& z = logits.value();
  Matrix<Scalar> probs(z.rows(), z.cols());
  double total = 0.0;
  int counted = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Scalar mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp().matrix();
    const Scalar sum = probs.row(r).sum();
    probs.row(r) /= sum;
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0) continue;
    if (target >= z.cols()) throw Error("cross_entropy: target out of range");
    total += static_cast<double>(mx + std::log(sum) - z(r, target));
    ++counted;
  }
  if (counted == 0) throw Error("cross_entropy: no scored rows");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total / counted);
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(std::move(out), {logits}, [logits, probs = std::move(probs), tg = std::move(tg), counted, &t](const Matrix<Scalar>& g) {
    Matrix<Scalar> d = probs;
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      const int target = tg[static_cast<std::size_t>(r)];
      if (target < 0) {
        d.row(r).setZero();
      } else {
        d(r, target) -= Scalar(1);
      }
    }
    t.accumulate(logits, d * (g(0, 0) / static_cast<Scalar>(counted)));
  });
}

/// Mean squared error against a constant target (no gradient to the target).
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Matrix<Scalar>& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) throw Error("mse: shape mismatch");
  auto& t = a.tape();
  const Matrix<Scalar> diff = a.value() - target;
  const Scalar n = static_cast<Scalar>(diff.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return t.record(std::move(out), {a}, [a, diff, n, &t](const Matrix<Scalar>& g) { t.accumulate(a, diff * (Scalar(2) * g(0, 0) / n)); });
}

/// sum(a .* w) for a constant weight matrix; used to build scalar probes.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& a, const Matrix<Scalar>& w) {
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw Error("weighted_sum: shape mismatch");
  auto& t = a.tape();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = (a.value().array() * w.array()).sum();
  return t.record(std::move(out), {a}, [a, w, &t](const Matrix<Scalar>& g) { t.accumulate(a, w * g(0, 0)); });
}

}  // namespace bytekaz
