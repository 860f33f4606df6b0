#pragma once

// The multimodal masked autoencoder: per-modality encoders over visible
// patches, mask-token scatter, joint decoding of the fused sequence
// [RNA | DNAM | MRI | WSI] (each segment CLS first), per-modality
// reconstruction heads, the masked multimodal MSE, and imputation.

#include "imputmae/encoders.hpp"

namespace imputmae {

/// One row per fused token.
struct SegmentEntry {
  ModalityKind modality;
  std::size_t source_position;  // patch index, unused for CLS
  bool is_cls;
};

struct FusedLatent {
  Mat tokens;
  std::vector<SegmentEntry> segment_map;

  /// First row of each modality's segment.
  std::map<ModalityKind, std::size_t> segment_starts() const {
    std::map<ModalityKind, std::size_t> s;
    for (std::size_t i = 0; i < segment_map.size(); ++i)
      if (segment_map[i].is_cls) s[segment_map[i].modality] = i;
    return s;
  }
};

/// Reconstructed patches plus the per-patch loss mask of every modality.
struct ReconstructionBundle {
  std::map<ModalityKind, Mat> patches;
  std::map<ModalityKind, std::vector<bool>> loss_mask;
};

struct LossReport {
  Scalar total = 0.0;
  std::map<ModalityKind, Scalar> per_modality;  // only modalities that contributed
};

inline void add_head_params(ParamStore& ps, const ModalitySpec& s, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(s.embed_dim);
  if (s.kind == ModalityKind::MRI) {
    const auto k3 = static_cast<Eigen::Index>(s.stage_kernel * s.stage_kernel * s.stage_kernel);
    const auto c1 = static_cast<Eigen::Index>(s.stage_channels);
    const auto nb = static_cast<Eigen::Index>(mri_subblocks(s));
    ps.add(mkey(s.kind, "head.w1"), init::xavier_uniform(d, nb * c1, rng));
    ps.add(mkey(s.kind, "head.b1"), init::zeros(1, c1));
    ps.add(mkey(s.kind, "head.w2"), init::xavier_uniform(c1, k3, rng));
    ps.add(mkey(s.kind, "head.b2"), init::zeros(1, k3));
  } else {
    ps.add(mkey(s.kind, "head.w"), init::xavier_uniform(d, static_cast<Eigen::Index>(s.patch_volume()), rng));
    ps.add(mkey(s.kind, "head.b"), init::zeros(1, static_cast<Eigen::Index>(s.patch_volume())));
  }
}

/// Concatenates per-modality sequences in the given order, adding each
/// modality's learned type embedding "<m>.type" to all of its rows.
inline ag::Var fuse(ag::Tape& t, const ParamStore& ps, const std::vector<std::pair<ModalityKind, ag::Var>>& seqs) {
  if (seqs.empty()) throw Error("fuse_latents: no modality sequences");
  std::vector<ag::Var> parts;
  const Eigen::Index d = seqs.front().second.cols();
  for (const auto& [k, v] : seqs) {
    if (v.cols() != d) throw Error("fuse_latents: width mismatch in " + std::string(modality_name(k)));
    parts.push_back(ag::add_row(v, ps.bind(t, mkey(k, "type"))));
  }
  return ag::concat_rows(parts);
}

/// Decoded patch tokens (P x d, no CLS) -> reconstructed patches (P x patch_volume).
inline ag::Var project_head(ag::Tape& t, const ParamStore& ps, const ModalitySpec& s, ag::Var tokens) {
  if (static_cast<std::size_t>(tokens.cols()) != s.embed_dim) throw Error("project_heads: token width mismatch");
  if (s.kind != ModalityKind::MRI) return linear(t, ps, mkey(s.kind, "head.w"), mkey(s.kind, "head.b"), tokens);
  const Eigen::Index m = tokens.rows();
  const auto nb = static_cast<Eigen::Index>(mri_subblocks(s));
  const auto c1 = static_cast<Eigen::Index>(s.stage_channels);
  ag::Var x = ag::matmul(tokens, ps.bind(t, mkey(s.kind, "head.w1")));
  x = ag::gelu(ag::add_row(ag::reshape(x, m * nb, c1), ps.bind(t, mkey(s.kind, "head.b1"))));
  x = linear(t, ps, mkey(s.kind, "head.w2"), mkey(s.kind, "head.b2"), x);
  // Sub-block rows back to patch-major voxel order.
  const auto order = mri_subblock_order(s.patch_size[0], s.stage_kernel);
  const std::size_t vol = order.size();
  auto src = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(m) * vol);
  for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i)
    for (std::size_t j = 0; j < vol; ++j) (*src)[i * vol + order[j]] = i * vol + j;
  return ag::rearrange(x, m, static_cast<Eigen::Index>(vol), std::move(src));
}

/// Sum over modalities of the masked-patch MSE.
/// Only loss-active modalities with at least one masked patch contribute.
struct LossTerms {
  ag::Var total;
  std::map<ModalityKind, ag::Var> per_modality;
};

inline LossTerms masked_reconstruction_loss(const std::map<ModalityKind, ag::Var>& recon,
                                            const std::map<ModalityKind, Mat>& originals, const MaskPlan& plan) {
  LossTerms out;
  std::vector<ag::Var> terms;
  for (const auto& [k, m] : plan.modalities) {
    if (!m.loss_active || m.masked_idx.empty()) continue;
    auto rit = recon.find(k);
    auto oit = originals.find(k);
    if (rit == recon.end() || oit == originals.end())
      throw Error("reconstruction_loss: missing reconstruction or original for " + std::string(modality_name(k)));
    ag::Var term = ag::masked_mse(rit->second, oit->second, m.masked_flags());
    out.per_modality.emplace(k, term);
    terms.push_back(term);
  }
  if (terms.empty()) throw Error("reconstruction_loss: no masked patches of present modalities");
  out.total = ag::sum_scalars(terms);
  return out;
}

/// Matrix-level loss; reconstructions outside the loss mask never influence it.
inline LossReport reconstruction_loss(const ReconstructionBundle& bundle, const std::map<ModalityKind, Mat>& originals,
                                      const MaskPlan& plan) {
  ag::Tape t;
  t.set_recording(false);
  std::map<ModalityKind, ag::Var> recon;
  for (const auto& [k, m] : bundle.patches) recon.emplace(k, t.constant(m));
  LossTerms terms = masked_reconstruction_loss(recon, originals, plan);
  LossReport rep;
  rep.total = terms.total.value()(0, 0);
  for (const auto& [k, v] : terms.per_modality) rep.per_modality[k] = v.value()(0, 0);
  return rep;
}

/// Encoder-decoder pair over a subset of the maskable modalities.
class MaeModel {
 public:
  struct Forward {
    std::map<ModalityKind, ag::Var> recon;   // P x patch_volume per modality
    ag::Var fused;                           // before decoding
    ag::Var decoded;                         // after decoder + final norm
    std::vector<SegmentEntry> segment_map;
    std::optional<LossTerms> loss;
  };

  MaeModel(ModelConfig cfg, std::vector<ModalityKind> subset, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (auto k : kMaskable)
      if (std::find(subset.begin(), subset.end(), k) != subset.end()) {
        cfg_.spec(k);
        modalities_.push_back(k);
      }
    if (modalities_.empty()) throw Error("model needs at least one maskable modality");
    for (auto k : modalities_) {
      const ModalitySpec& s = cfg_.spec(k);
      Rng rng = derive_rng(seed, {0x656e63ULL, static_cast<std::uint64_t>(k)});
      add_encoder_params(ps_, s, cfg_.mlp_ratio, rng);
      ps_.add(mkey(k, "mask_token"), init::normal(1, static_cast<Eigen::Index>(s.embed_dim), 0.02, rng));
      ps_.add(mkey(k, "type"), init::normal(1, static_cast<Eigen::Index>(s.embed_dim), 0.02, rng));
      add_head_params(ps_, s, rng);
      pos_.emplace(k, sinusoidal_table(s.num_patches() + 1, s.embed_dim));
    }
    Rng rng = derive_rng(seed, {0x646563ULL});
    add_stack_params(ps_, "dec", cfg_.embed_dim(), cfg_.decoder_layers, cfg_.mlp_ratio, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ModalityKind>& modalities() const { return modalities_; }
  bool uses(ModalityKind k) const { return std::find(modalities_.begin(), modalities_.end(), k) != modalities_.end(); }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const Mat& pos_table(ModalityKind k) const { return pos_.at(k); }

  std::map<ModalityKind, std::size_t> patch_counts() const {
    std::map<ModalityKind, std::size_t> c;
    for (auto k : modalities_) c[k] = cfg_.spec(k).num_patches();
    return c;
  }

  /// Encodes visible patches, scatters mask tokens, decodes and projects.
  /// `patches` holds patch matrices of the present modalities; the plan
  /// decides which rows the encoders see. The loss is added when
  /// compute_loss is set.
  Forward forward(ag::Tape& t, const std::map<ModalityKind, Mat>& patches, const MaskPlan& plan, bool compute_loss,
                  AttentionTrace* decoder_trace = nullptr) const {
    Forward f;
    std::vector<std::pair<ModalityKind, ag::Var>> seqs;
    for (auto k : modalities_) {
      const ModalitySpec& s = cfg_.spec(k);
      const ModalityMask& m = plan.at(k);
      const std::size_t P = s.num_patches();
      if (m.patch_count() != P) throw Error("mask plan patch count mismatch for " + std::string(modality_name(k)));
      const Mat& pos = pos_.at(k);

      std::optional<ag::Var> visible;
      if (!m.visible_idx.empty()) {
        auto it = patches.find(k);
        if (it == patches.end())
          throw Error("forward: plan has visible patches for absent modality " + std::string(modality_name(k)));
        Mat rows(static_cast<Eigen::Index>(m.visible_idx.size()), it->second.cols());
        for (std::size_t i = 0; i < m.visible_idx.size(); ++i)
          rows.row(static_cast<Eigen::Index>(i)) = it->second.row(static_cast<Eigen::Index>(m.visible_idx[i]));
        visible = embed(t, ps_, s, rows);
      }
      ag::Var enc = encode(t, ps_, s, with_pos_and_cls(t, ps_, s, visible, m.visible_idx, pos));

      // Scatter: [encoded (CLS + visible) ; mask rows] gathered back into patch order.
      std::vector<ag::Var> parts{enc};
      if (!m.masked_idx.empty()) {
        Mat mpos(static_cast<Eigen::Index>(m.masked_idx.size()), pos.cols());
        for (std::size_t i = 0; i < m.masked_idx.size(); ++i)
          mpos.row(static_cast<Eigen::Index>(i)) = pos.row(pos_row(m.masked_idx[i]));
        parts.push_back(ag::add_row(t.constant(std::move(mpos)), ps_.bind(t, mkey(k, "mask_token"))));
      }
      std::vector<std::size_t> order(P + 1);
      order[0] = 0;
      for (std::size_t i = 0; i < m.visible_idx.size(); ++i) order[m.visible_idx[i] + 1] = i + 1;
      for (std::size_t i = 0; i < m.masked_idx.size(); ++i)
        order[m.masked_idx[i] + 1] = m.visible_idx.size() + 1 + i;
      ag::Var full = ag::gather_rows(parts.size() == 1 ? enc : ag::concat_rows(parts), std::move(order));
      seqs.emplace_back(k, full);
      f.segment_map.push_back({k, 0, true});
      for (std::size_t p = 0; p < P; ++p) f.segment_map.push_back({k, p, false});
    }
    f.fused = fuse(t, ps_, seqs);
    f.decoded = transformer_stack(t, ps_, "dec", f.fused, cfg_.decoder_layers, cfg_.decoder_heads, decoder_trace);

    std::size_t at = 0;
    for (auto k : modalities_) {
      const ModalitySpec& s = cfg_.spec(k);
      const auto P = static_cast<Eigen::Index>(s.num_patches());
      ag::Var tokens = ag::slice_rows(f.decoded, static_cast<Eigen::Index>(at) + 1, P);
      f.recon.emplace(k, project_head(t, ps_, s, tokens));
      at += static_cast<std::size_t>(P) + 1;
    }
    if (compute_loss) f.loss = masked_reconstruction_loss(f.recon, patches, plan);
    return f;
  }

  /// Patch matrices of the present modalities; WSI uses tile `wsi_tile`.
  std::map<ModalityKind, Mat> patch_inputs(const PatientRecord& r, std::size_t wsi_tile = 0) const {
    std::map<ModalityKind, Mat> out;
    for (auto k : modalities_) {
      if (!r.has(k)) continue;
      const ModalitySpec& s = cfg_.spec(k);
      if (k == ModalityKind::WSI)
        out.emplace(k, patchify(s, r.tile(std::min(wsi_tile, r.tile_count() - 1))));
      else
        out.emplace(k, patchify(s, r.modalities.at(k).data));
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  std::vector<ModalityKind> modalities_;
  ParamStore ps_;
  std::map<ModalityKind, Mat> pos_;
};

/// Matrix-level fusion of already-scattered sequences.
inline FusedLatent fuse_latents(const std::vector<TokenSequence>& seqs, const std::map<ModalityKind, RowVec>& modality_embeds) {
  ag::Tape t;
  t.set_recording(false);
  ParamStore ps;
  std::vector<std::pair<ModalityKind, ag::Var>> vars;
  FusedLatent out;
  for (const auto& s : seqs) {
    ps.add(mkey(s.modality, "type"), modality_embeds.at(s.modality));
    if (!s.has_cls) throw Error("fuse_latents: sequences must carry CLS");
    out.segment_map.push_back({s.modality, 0, true});
    for (auto p : s.source_positions) out.segment_map.push_back({s.modality, p, false});
  }
  for (const auto& s : seqs) vars.emplace_back(s.modality, t.constant(s.tokens));
  out.tokens = fuse(t, ps, vars).value();
  return out;
}

inline FusedLatent decode(const FusedLatent& fused, const ParamStore& ps, std::size_t layers, std::size_t heads) {
  ag::Tape t;
  t.set_recording(false);
  FusedLatent out = fused;
  out.tokens = transformer_stack(t, ps, "dec", t.constant(fused.tokens), layers, heads).value();
  return out;
}

inline ReconstructionBundle project_heads(const FusedLatent& decoded, const ParamStore& ps, const ModelConfig& cfg,
                                          const MaskPlan& plan) {
  ag::Tape t;
  t.set_recording(false);
  ReconstructionBundle b;
  ag::Var all = t.constant(decoded.tokens);
  for (const auto& [k, start] : decoded.segment_starts()) {
    const ModalitySpec& s = cfg.spec(k);
    const auto P = static_cast<Eigen::Index>(s.num_patches());
    b.patches[k] = project_head(t, ps, s, ag::slice_rows(all, static_cast<Eigen::Index>(start) + 1, P)).value();
    const ModalityMask& m = plan.at(k);
    std::vector<bool> lm(static_cast<std::size_t>(P), false);
    if (m.loss_active)
      for (auto i : m.masked_idx) lm[i] = true;
    b.loss_mask[k] = std::move(lm);
  }
  return b;
}

/// Reconstructs every missing modality of the record from the present ones.
/// Present modalities are fed fully unmasked. WSI comes back as one tile [1, H, W, C].
inline std::map<ModalityKind, NdArray> impute_missing(const PatientRecord& record, const MaeModel& model) {
  bool any_present = false, any_missing = false;
  for (auto k : model.modalities()) (record.has(k) ? any_present : any_missing) = true;
  if (!any_present) throw Error("impute_missing: patient " + record.id + " has none of the model's modalities");
  std::map<ModalityKind, NdArray> out;
  if (!any_missing) return out;

  MaskPlan plan;
  Rng unused(0);
  for (const auto& [k, p] : model.patch_counts())
    plan.modalities[k] = record.has(k) ? plan_present(p, 0.0, unused) : plan_missing(p);
  ag::Tape t;
  t.set_recording(false);
  auto f = model.forward(t, model.patch_inputs(record), plan, false);
  for (auto k : model.modalities()) {
    if (record.has(k)) continue;
    const ModalitySpec& s = model.config().spec(k);
    auto flat = unpatchify(s, f.recon.at(k).value());
    std::vector<std::size_t> shape = s.raw_shape;
    if (k == ModalityKind::WSI) shape.insert(shape.begin(), 1);
    if (k == ModalityKind::DNAM)
      for (auto& v : flat) v = std::clamp(v, 0.0, 1.0);
    out.emplace(k, NdArray(std::move(shape), std::move(flat)));
  }
  return out;
}

}  // namespace imputmae
