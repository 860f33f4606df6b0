#pragma once

// Pre-norm transformer blocks shared by the modality encoders, the joint
// decoder and the survival fusion block.
//
//   h   = x + Attn(LN1(x))
//   out = h + MLP(LN2(h)),  MLP = W2 GELU(W1 . + b1) + b2
//
// Parameters of block i of a stack named `s` live under "s.L<i>.".

#include "imputmae/params.hpp"

namespace imputmae {

/// Standard sine/cosine table: even columns sin(pos / 10000^(2i/d)), odd columns cos.
inline Mat sinusoidal_table(std::size_t positions, std::size_t d) {
  Mat t(static_cast<Eigen::Index>(positions), static_cast<Eigen::Index>(d));
  for (std::size_t pos = 0; pos < positions; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const Scalar freq = std::pow(10000.0, -static_cast<Scalar>(2 * (i / 2)) / static_cast<Scalar>(d));
      const Scalar a = static_cast<Scalar>(pos) * freq;
      t(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  return t;
}

/// Attention weights recorded during a forward pass, one matrix per (layer, head).
struct AttentionTrace {
  std::vector<Mat> weights;
};

/// Dropout applied during fine-tuning; inactive when rate is 0 or rng is null.
struct DropoutCtx {
  Scalar rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

inline void add_attention_params(ParamStore& ps, const std::string& p, std::size_t d, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  for (const char* w : {"wq", "wk", "wv", "wo"}) ps.add(p + "." + w, init::xavier_uniform(n, n, rng));
  for (const char* b : {"bq", "bk", "bv", "bo"}) ps.add(p + "." + b, init::zeros(1, n));
}

inline void add_norm_params(ParamStore& ps, const std::string& p, std::size_t d) {
  ps.add(p + ".g", init::ones(1, static_cast<Eigen::Index>(d)));
  ps.add(p + ".b", init::zeros(1, static_cast<Eigen::Index>(d)));
}

inline void add_block_params(ParamStore& ps, const std::string& p, std::size_t d, std::size_t mlp_ratio, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d), h = static_cast<Eigen::Index>(d * mlp_ratio);
  add_norm_params(ps, p + ".ln1", d);
  add_attention_params(ps, p + ".attn", d, rng);
  add_norm_params(ps, p + ".ln2", d);
  ps.add(p + ".mlp.w1", init::xavier_uniform(n, h, rng));
  ps.add(p + ".mlp.b1", init::zeros(1, h));
  ps.add(p + ".mlp.w2", init::xavier_uniform(h, n, rng));
  ps.add(p + ".mlp.b2", init::zeros(1, n));
}

inline std::string layer_prefix(const std::string& stack, std::size_t layer) {
  return stack + ".L" + std::to_string(layer);
}

/// Blocks plus a final norm under "<stack>.norm".
inline void add_stack_params(ParamStore& ps, const std::string& stack, std::size_t d, std::size_t layers,
                             std::size_t mlp_ratio, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) add_block_params(ps, layer_prefix(stack, l), d, mlp_ratio, rng);
  add_norm_params(ps, stack + ".norm", d);
}

inline ag::Var linear(ag::Tape& t, const ParamStore& ps, const std::string& w, const std::string& b, ag::Var x) {
  return ag::add_row(ag::matmul(x, ps.bind(t, w)), ps.bind(t, b));
}

inline ag::Var norm(ag::Tape& t, const ParamStore& ps, const std::string& p, ag::Var x) {
  return ag::layer_norm(x, ps.bind(t, p + ".g"), ps.bind(t, p + ".b"));
}

/// Multi-head scaled dot-product self-attention over the rows of x.
inline ag::Var self_attention(ag::Tape& t, const ParamStore& ps, const std::string& p, ag::Var x, std::size_t heads,
                              AttentionTrace* trace = nullptr, const DropoutCtx& drop = {}) {
  const Eigen::Index d = x.cols();
  if (heads == 0 || d % static_cast<Eigen::Index>(heads) != 0) throw Error("self_attention: heads must divide width");
  if (ps.get(p + ".wq").rows() != d) throw Error("self_attention: width mismatch with parameters " + p);
  const Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
  ag::Var q = linear(t, ps, p + ".wq", p + ".bq", x);
  ag::Var k = linear(t, ps, p + ".wk", p + ".bk", x);
  ag::Var v = linear(t, ps, p + ".wv", p + ".bv", x);
  const Scalar inv = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  std::vector<ag::Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    ag::Var qh = ag::slice_cols(q, off, dh), kh = ag::slice_cols(k, off, dh), vh = ag::slice_cols(v, off, dh);
    ag::Var a = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), inv));
    if (trace) trace->weights.push_back(a.value());
    outs.push_back(ag::matmul(a, vh));
  }
  ag::Var merged = heads == 1 ? outs.front() : ag::concat_cols(outs);
  ag::Var o = linear(t, ps, p + ".wo", p + ".bo", merged);
  if (drop.active()) o = ag::dropout(o, drop.rate, *drop.rng);
  return o;
}

inline ag::Var transformer_block(ag::Tape& t, const ParamStore& ps, const std::string& p, ag::Var x, std::size_t heads,
                                 AttentionTrace* trace = nullptr, const DropoutCtx& drop = {}) {
  ag::Var h = ag::add(x, self_attention(t, ps, p + ".attn", norm(t, ps, p + ".ln1", x), heads, trace, drop));
  ag::Var m = ag::gelu(linear(t, ps, p + ".mlp.w1", p + ".mlp.b1", norm(t, ps, p + ".ln2", h)));
  m = linear(t, ps, p + ".mlp.w2", p + ".mlp.b2", m);
  if (drop.active()) m = ag::dropout(m, drop.rate, *drop.rng);
  return ag::add(h, m);
}

inline void check_finite(const Mat& m, const std::string& where) {
  if (!m.allFinite()) throw Error(where + ": numerical divergence (non-finite activations)");
}

/// All blocks of a stack followed by its final norm.
inline ag::Var transformer_stack(ag::Tape& t, const ParamStore& ps, const std::string& stack, ag::Var x,
                                 std::size_t layers, std::size_t heads, AttentionTrace* trace = nullptr) {
  for (std::size_t l = 0; l < layers; ++l) x = transformer_block(t, ps, layer_prefix(stack, l), x, heads, trace);
  ag::Var out = norm(t, ps, stack + ".norm", x);
  check_finite(out.value(), stack);
  return out;
}

}  // namespace imputmae
