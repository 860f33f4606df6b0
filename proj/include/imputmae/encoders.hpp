#pragma once

// Patch tokenizers and modality-specific transformer encoders.
//
// Tokenizers with kernel == stride are per-patch linear maps:
//   RNA / DNAM  1D convolution, kernel = stride = patch length
//   WSI         2D convolution, kernel = stride = 16, over H x W x C
//   MRI         two 3D convolutions, kernel = stride = k, with GELU between:
//               each k^3 sub-block of a patch -> C1 channels, then the
//               (p/k)^3 x C1 grid -> d
// Parameter keys: "<m>.tok.*", "<m>.cls", "<m>.enc.*".

#include "imputmae/masking.hpp"
#include "imputmae/transformer.hpp"

namespace imputmae {

inline std::string mkey(ModalityKind k, const std::string& suffix) {
  return std::string(modality_name(k)) + "." + suffix;
}

/// Number of k^3 sub-blocks per MRI patch.
inline std::size_t mri_subblocks(const ModalitySpec& s) {
  const std::size_t nb = s.patch_size[0] / s.stage_kernel;
  return nb * nb * nb;
}

inline void add_tokenizer_params(ParamStore& ps, const ModalitySpec& s, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(s.embed_dim);
  if (s.kind == ModalityKind::MRI) {
    const auto k3 = static_cast<Eigen::Index>(s.stage_kernel * s.stage_kernel * s.stage_kernel);
    const auto c1 = static_cast<Eigen::Index>(s.stage_channels);
    const auto nb = static_cast<Eigen::Index>(mri_subblocks(s));
    ps.add(mkey(s.kind, "tok.w1"), init::xavier_uniform(k3, c1, rng));
    ps.add(mkey(s.kind, "tok.b1"), init::zeros(1, c1));
    ps.add(mkey(s.kind, "tok.w2"), init::xavier_uniform(nb * c1, d, rng));
    ps.add(mkey(s.kind, "tok.b2"), init::zeros(1, d));
  } else {
    ps.add(mkey(s.kind, "tok.w"), init::xavier_uniform(static_cast<Eigen::Index>(s.patch_volume()), d, rng));
    ps.add(mkey(s.kind, "tok.b"), init::zeros(1, d));
  }
}

inline void add_encoder_params(ParamStore& ps, const ModalitySpec& s, std::size_t mlp_ratio, Rng& rng) {
  add_tokenizer_params(ps, s, rng);
  ps.add(mkey(s.kind, "cls"), init::normal(1, static_cast<Eigen::Index>(s.embed_dim), 0.02, rng));
  add_stack_params(ps, mkey(s.kind, "enc"), s.embed_dim, s.num_layers, mlp_ratio, rng);
}

/// Reorders MRI patch rows (M x p^3) into sub-block rows ((M * nb) x k^3).
inline Mat mri_to_subblocks(const Mat& patches, const ModalitySpec& s) {
  const auto order = mri_subblock_order(s.patch_size[0], s.stage_kernel);
  const std::size_t k3 = s.stage_kernel * s.stage_kernel * s.stage_kernel;
  const std::size_t vol = order.size();
  Mat out(patches.rows() * static_cast<Eigen::Index>(vol / k3), static_cast<Eigen::Index>(k3));
  for (Eigen::Index i = 0; i < patches.rows(); ++i)
    for (std::size_t j = 0; j < vol; ++j)
      out.data()[static_cast<std::size_t>(i) * vol + j] = patches(i, static_cast<Eigen::Index>(order[j]));
  return out;
}

/// Patch matrix (M x patch_volume) -> M x d tokens, recorded on the tape.
inline ag::Var embed(ag::Tape& t, const ParamStore& ps, const ModalitySpec& s, const Mat& patches) {
  if (static_cast<std::size_t>(patches.cols()) != s.patch_volume())
    throw Error(std::string(modality_name(s.kind)) + ": patch width " + std::to_string(patches.cols()) +
                " does not match tokenizer input " + std::to_string(s.patch_volume()));
  if (s.kind != ModalityKind::MRI) return linear(t, ps, mkey(s.kind, "tok.w"), mkey(s.kind, "tok.b"), t.constant(patches));
  const Eigen::Index m = patches.rows();
  ag::Var x = t.constant(mri_to_subblocks(patches, s));
  x = ag::gelu(linear(t, ps, mkey(s.kind, "tok.w1"), mkey(s.kind, "tok.b1"), x));
  x = ag::reshape(x, m, static_cast<Eigen::Index>(mri_subblocks(s) * s.stage_channels));
  return linear(t, ps, mkey(s.kind, "tok.w2"), mkey(s.kind, "tok.b2"), x);
}

/// Patch tokens for the given source positions, with CLS + pos[0] prepended
/// and pos[p + 1] added to the token of patch p.
inline ag::Var with_pos_and_cls(ag::Tape& t, const ParamStore& ps, const ModalitySpec& s, std::optional<ag::Var> tokens,
                                const std::vector<std::size_t>& source_positions, const Mat& pos_table) {
  ag::Var cls = ag::add(ps.bind(t, mkey(s.kind, "cls")), t.constant(pos_table.row(0)));
  if (!tokens || source_positions.empty()) return cls;
  Mat pos(static_cast<Eigen::Index>(source_positions.size()), pos_table.cols());
  for (std::size_t i = 0; i < source_positions.size(); ++i) {
    if (pos_row(source_positions[i]) >= pos_table.rows()) throw Error("positional table too short");
    pos.row(static_cast<Eigen::Index>(i)) = pos_table.row(pos_row(source_positions[i]));
  }
  return ag::concat_rows({cls, ag::add(*tokens, t.constant(std::move(pos)))});
}

inline ag::Var encode(ag::Tape& t, const ParamStore& ps, const ModalitySpec& s, ag::Var seq,
                      AttentionTrace* trace = nullptr) {
  if (static_cast<std::size_t>(seq.cols()) != s.embed_dim) throw Error("encode: token width does not match encoder");
  return transformer_stack(t, ps, mkey(s.kind, "enc"), seq, s.num_layers, s.num_heads, trace);
}

/// Full unmasked encoding of one sample (one tile for WSI): (P + 1) x d, CLS first.
inline ag::Var encode_full(ag::Tape& t, const ParamStore& ps, const ModalitySpec& s, const Mat& patches,
                           const Mat& pos_table) {
  std::vector<std::size_t> all(static_cast<std::size_t>(patches.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  return encode(t, ps, s, with_pos_and_cls(t, ps, s, embed(t, ps, s, patches), all, pos_table));
}

// Matrix-level forms of the encoder steps, evaluated without recording gradients.

inline TokenSequence embed_patches(const Mat& patches, const ParamStore& ps, const ModalitySpec& s) {
  ag::Tape t;
  t.set_recording(false);
  TokenSequence out;
  out.modality = s.kind;
  out.tokens = embed(t, ps, s, patches).value();
  out.source_positions.resize(static_cast<std::size_t>(patches.rows()));
  std::iota(out.source_positions.begin(), out.source_positions.end(), std::size_t{0});
  return out;
}

inline TokenSequence add_positional_and_cls(const TokenSequence& seq, const Mat& pos_table, const RowVec& cls) {
  if (seq.has_cls) throw Error("add_positional_and_cls: sequence already carries a CLS token");
  if (static_cast<std::size_t>(pos_table.rows()) < seq.length() + 1)
    throw Error("add_positional_and_cls: positional table too short");
  TokenSequence out = seq;
  out.has_cls = true;
  out.tokens.resize(seq.tokens.rows() + 1, seq.tokens.cols());
  out.tokens.row(0) = cls + pos_table.row(0);
  for (std::size_t i = 0; i < seq.length(); ++i)
    out.tokens.row(static_cast<Eigen::Index>(i + 1)) =
        seq.tokens.row(static_cast<Eigen::Index>(i)) + pos_table.row(pos_row(seq.source_positions[i]));
  return out;
}

inline TokenSequence encode_modality(const TokenSequence& seq, const ParamStore& ps, const ModalitySpec& s,
                                     AttentionTrace* trace = nullptr) {
  ag::Tape t;
  t.set_recording(false);
  TokenSequence out = seq;
  out.tokens = encode(t, ps, s, t.constant(seq.tokens), trace).value();
  return out;
}

}  // namespace imputmae
