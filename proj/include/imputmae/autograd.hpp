#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
// Every op records its parents and a closure that pushes the output
// gradient back to them. Nodes whose ancestors are all constants or frozen
// parameters are marked non-differentiable and skipped on the way back.

#include "imputmae/core.hpp"

#include <deque>
#include <memory>
#include <map>
#include <string>
#include <unordered_map>

namespace imputmae::ag {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v) { return push(std::move(v), false, {}); }

  /// Leaf bound to caller-owned storage (no copy). The matrix must outlive the tape.
  Var bind(const std::string& name, const Mat& storage, bool trainable) {
    if (auto it = bound_.find(name); it != bound_.end()) return Var{this, it->second};
    Node n;
    n.ref = &storage;
    n.requires_grad = trainable && record_;
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    bound_.emplace(name, id);
    return Var{this, id};
  }

  /// Differentiable leaf that owns its value (used for probing gradients of inputs).
  Var variable(Mat v) { return push(std::move(v), record_, {}); }

  Var push(Mat v, bool requires_grad, Backward bw) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad && record_;
    if (n.requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }
  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool needs(const Var& v) const { return needs(v.id); }

  void accumulate(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Runs the reverse sweep from a 1x1 node.
  void backward(Var loss, Scalar seed = 1.0) {
    if (loss.rows() != 1 || loss.cols() != 1) throw Error("backward: loss must be a scalar node");
    Mat s(1, 1);
    s(0, 0) = seed;
    accumulate(loss.id, s);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Gradient of the last backward sweep, zeros when the node received none.
  Mat grad(const Var& v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Mat::Zero(value(v.id).rows(), value(v.id).cols());
    return n.grad;
  }

  /// Gradients of bound trainable leaves, keyed by name.
  std::map<std::string, Mat> param_grads() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, id] : bound_) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad && n.grad.size() != 0) out.emplace(name, n.grad);
    }
    return out;
  }

  /// Disables differentiation for everything pushed afterwards (inference mode).
  void set_recording(bool on) { record_ = on; }
  bool recording() const { return record_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<std::string, int> bound_;
  bool record_ = true;
};

inline const Mat& Var::value() const { return tape->value(id); }

namespace detail {
inline bool any_needs(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->needs(v)) return true;
  return false;
}
inline void same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw Error("autograd: operands recorded on different tapes");
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw Error("matmul: shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Mat v = a.value() * b.value();
  return a.tape->push(std::move(v), detail::any_needs({a, b}), [ia = a.id, ib = b.id](Tape& t, const Mat& g) {
    if (t.needs(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("add: shape mismatch");
  Mat v = a.value() + b.value();
  return a.tape->push(std::move(v), detail::any_needs({a, b}), [ia = a.id, ib = b.id](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

/// a (n x m) plus a 1 x m row broadcast over every row.
inline Var add_row(Var a, Var row) {
  detail::same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: bias shape mismatch");
  Mat v = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(v), detail::any_needs({a, row}), [ia = a.id, ir = row.id](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    if (t.needs(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

inline Var scale(Var a, Scalar s) {
  Mat v = a.value() * s;
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

/// Elementwise product with a constant mask (dropout and similar gates).
inline Var mul_const(Var a, Mat mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw Error("mul_const: shape mismatch");
  Mat v = a.value().cwiseProduct(mask);
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id, m = std::move(mask)](Tape& t, const Mat& g) { t.accumulate(ia, g.cwiseProduct(m)); });
}

inline Var transpose(Var a) {
  Mat v = a.value().transpose();
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

/// Exact (erf-based) GELU.
inline Var gelu(Var a) {
  const Mat& x = a.value();
  Mat v = x.unaryExpr([](Scalar z) { return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)); });
  return a.tape->push(std::move(v), detail::any_needs({a}), [ia = a.id](Tape& t, const Mat& g) {
    const Mat& x = t.value(ia);
    Mat d = x.unaryExpr([](Scalar z) {
      Scalar cdf = 0.5 * (1.0 + std::erf(z * M_SQRT1_2));
      Scalar pdf = std::exp(-0.5 * z * z) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
      return cdf + z * pdf;
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

inline Mat softmax_rows_value(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar mx = x.row(r).maxCoeff();
    auto e = (x.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

inline Var softmax_rows(Var a) {
  Mat v = softmax_rows_value(a.value());
  const int self = static_cast<int>(a.tape->size());
  return a.tape->push(std::move(v), detail::any_needs({a}), [ia = a.id, self](Tape& t, const Mat& g) {
    const Mat& y = t.value(self);
    Mat dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      Scalar dot = g.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
    }
    t.accumulate(ia, dx);
  });
}

/// Row-wise layer normalization with 1 x n gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias, Scalar eps = 1e-6) {
  const Mat& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gain.cols() != n || bias.cols() != n || gain.rows() != 1 || bias.rows() != 1)
    throw Error("layer_norm: parameter width mismatch");
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    Scalar mean = xv.row(r).mean();
    Scalar var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Mat v = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return x.tape->push(std::move(v), detail::any_needs({x, gain, bias}),
                      [ix = x.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                          Tape& t, const Mat& g) {
                        const Eigen::Index n = xhat.cols();
                        if (t.needs(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                        if (t.needs(ib)) t.accumulate(ib, g.colwise().sum());
                        if (t.needs(ix)) {
                          Mat gx = g.array().rowwise() * t.value(ig).row(0).array();
                          Mat dx(xhat.rows(), n);
                          for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                            Scalar m1 = gx.row(r).mean();
                            Scalar m2 = gx.row(r).dot(xhat.row(r)) / static_cast<Scalar>(n);
                            dx.row(r) = (gx.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                          }
                          t.accumulate(ix, dx);
                        }
                      });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw Error("slice_cols: out of range");
  Mat v = a.value().middleCols(start, count);
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id, start, count, r = a.rows(), c = a.cols()](Tape& t, const Mat& g) {
                        Mat full = Mat::Zero(r, c);
                        full.middleCols(start, count) = g;
                        t.accumulate(ia, full);
                      });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no operands");
  Eigen::Index rows = parts.front().rows(), cols = 0;
  bool need = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row mismatch");
    cols += p.cols();
    need = need || p.tape->needs(p);
  }
  Mat v(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.cols();
  }
  return parts.front().tape->push(std::move(v), need, [spans](Tape& t, const Mat& g) {
    for (auto [id, off] : spans)
      if (t.needs(id)) t.accumulate(id, g.middleCols(off, t.value(id).cols()));
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: no operands");
  Eigen::Index cols = parts.front().cols(), rows = 0;
  bool need = false;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: width mismatch");
    rows += p.rows();
    need = need || p.tape->needs(p);
  }
  Mat v(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.rows();
  }
  return parts.front().tape->push(std::move(v), need, [spans](Tape& t, const Mat& g) {
    for (auto [id, off] : spans)
      if (t.needs(id)) t.accumulate(id, g.middleRows(off, t.value(id).rows()));
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw Error("slice_rows: out of range");
  Mat v = a.value().middleRows(start, count);
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id, start, count, r = a.rows(), c = a.cols()](Tape& t, const Mat& g) {
                        Mat full = Mat::Zero(r, c);
                        full.middleRows(start, count) = g;
                        t.accumulate(ia, full);
                      });
}

inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<std::size_t>(a.rows())) throw Error("gather_rows: index out of bounds");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(static_cast<Eigen::Index>(idx[i]));
  }
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id, idx = std::move(idx), r = a.rows(), c = a.cols()](Tape& t, const Mat& g) {
                        Mat full = Mat::Zero(r, c);
                        for (std::size_t i = 0; i < idx.size(); ++i)
                          full.row(static_cast<Eigen::Index>(idx[i])) += g.row(static_cast<Eigen::Index>(i));
                        t.accumulate(ia, full);
                      });
}

/// out.flat[k] = a.flat[source[k]] (row-major flat indices); covers reshape and block permutations.
inline Var rearrange(Var a, Eigen::Index rows, Eigen::Index cols, std::shared_ptr<const std::vector<std::size_t>> source) {
  if (static_cast<std::size_t>(rows * cols) != source->size()) throw Error("rearrange: index map size mismatch");
  const Mat& x = a.value();
  Mat v(rows, cols);
  const Scalar* src = x.data();
  Scalar* dst = v.data();
  const std::size_t n = source->size();
  for (std::size_t k = 0; k < n; ++k) {
    if ((*source)[k] >= static_cast<std::size_t>(x.size())) throw Error("rearrange: index out of bounds");
    dst[k] = src[(*source)[k]];
  }
  return a.tape->push(std::move(v), detail::any_needs({a}),
                      [ia = a.id, source, r = a.rows(), c = a.cols()](Tape& t, const Mat& g) {
                        Mat full = Mat::Zero(r, c);
                        Scalar* out = full.data();
                        const Scalar* gin = g.data();
                        for (std::size_t k = 0; k < source->size(); ++k) out[(*source)[k]] += gin[k];
                        t.accumulate(ia, full);
                      });
}

/// Row-major reshape (flat order unchanged).
inline Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw Error("reshape: element count mismatch");
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return a.tape->push(std::move(v), detail::any_needs({a}), [ia = a.id, r = a.rows(), c = a.cols()](Tape& t, const Mat& g) {
    t.accumulate(ia, Eigen::Map<const Mat>(g.data(), r, c));
  });
}

/// 1 x n column means.
inline Var mean_rows(Var a) {
  if (a.rows() == 0) throw Error("mean_rows: empty input");
  Mat v = a.value().colwise().mean();
  return a.tape->push(std::move(v), detail::any_needs({a}), [ia = a.id, r = a.rows()](Tape& t, const Mat& g) {
    Mat full = g.replicate(r, 1) / static_cast<Scalar>(r);
    t.accumulate(ia, full);
  });
}

/// Sum of a list of 1x1 nodes.
inline Var sum_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("sum_scalars: no operands");
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

/// Inverted dropout with keep-probability 1 - p.
inline Var dropout(Var a, Scalar p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout: rate must be < 1");
  Mat mask(a.rows(), a.cols());
  const Scalar keep = 1.0 - p;
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return mul_const(a, std::move(mask));
}

/// Mean squared error over the rows flagged in `rows` (1x1 result).
/// Rows not flagged never receive gradient.
inline Var masked_mse(Var recon, const Mat& target, const std::vector<bool>& rows) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols()) throw Error("masked_mse: shape mismatch");
  if (rows.size() != static_cast<std::size_t>(target.rows())) throw Error("masked_mse: row mask size mismatch");
  Scalar sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < target.rows(); ++r) {
    if (!rows[static_cast<std::size_t>(r)]) continue;
    sum += (recon.value().row(r) - target.row(r)).squaredNorm();
    count += static_cast<std::size_t>(target.cols());
  }
  if (count == 0) throw Error("masked_mse: no active rows");
  Mat v(1, 1);
  v(0, 0) = sum / static_cast<Scalar>(count);
  return recon.tape->push(std::move(v), detail::any_needs({recon}),
                          [ir = recon.id, target, rows, count](Tape& t, const Mat& g) {
                            const Mat& y = t.value(ir);
                            Mat d = Mat::Zero(y.rows(), y.cols());
                            const Scalar k = 2.0 * g(0, 0) / static_cast<Scalar>(count);
                            for (Eigen::Index r = 0; r < y.rows(); ++r)
                              if (rows[static_cast<std::size_t>(r)]) d.row(r) = k * (y.row(r) - target.row(r));
                            t.accumulate(ir, d);
                          });
}

inline Scalar softplus(Scalar x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline Scalar sigmoid(Scalar x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  Scalar e = std::exp(x);
  return e / (1.0 + e);
}

/// Discrete-time hazard negative log-likelihood of one patient from its 1 x T logits.
/// interval is 1-based. Uses log h = -softplus(-x), log(1 - h) = -softplus(x).
inline Var hazard_nll(Var logits, int interval, bool event) {
  const Eigen::Index T = logits.cols();
  if (logits.rows() != 1) throw Error("hazard_nll: logits must be a row vector");
  if (interval < 1 || interval > T) throw Error("hazard_nll: interval index outside [1, T]");
  const Mat& x = logits.value();
  Scalar loss = 0.0;
  for (int t = 1; t <= interval; ++t) {
    Scalar xt = x(0, t - 1);
    loss += (event && t == interval) ? softplus(-xt) : softplus(xt);
  }
  Mat v(1, 1);
  v(0, 0) = loss;
  return logits.tape->push(std::move(v), detail::any_needs({logits}), [il = logits.id, interval, event](Tape& t, const Mat& g) {
    const Mat& x = t.value(il);
    Mat d = Mat::Zero(1, x.cols());
    for (int k = 1; k <= interval; ++k) {
      Scalar h = sigmoid(x(0, k - 1));
      d(0, k - 1) = g(0, 0) * ((event && k == interval) ? h - 1.0 : h);
    }
    t.accumulate(il, d);
  });
}

}  // namespace imputmae::ag
