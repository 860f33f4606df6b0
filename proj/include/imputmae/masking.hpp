#pragma once

// Per-sample mask plans and the gather/scatter steps around the encoders.
// A plan is the single source of truth for which patches the encoder sees,
// which positions the decoder fills with mask tokens, and which patches
// enter the reconstruction loss.

#include "imputmae/data_model.hpp"

namespace imputmae {

struct MaskConfig {
  Scalar mask_ratio = 0.5;
  std::uint64_t seed = 0;
};

struct ModalityMask {
  std::vector<std::size_t> visible_idx;  // sorted
  std::vector<std::size_t> masked_idx;   // sorted
  bool missing = false;
  bool loss_active = false;

  std::size_t patch_count() const { return visible_idx.size() + masked_idx.size(); }
  /// Per-patch flag: true where the patch is masked.
  std::vector<bool> masked_flags() const {
    std::vector<bool> f(patch_count(), false);
    for (auto i : masked_idx) f[i] = true;
    return f;
  }
};

struct MaskPlan {
  std::map<ModalityKind, ModalityMask> modalities;

  const ModalityMask& at(ModalityKind k) const {
    auto it = modalities.find(k);
    if (it == modalities.end()) throw Error("mask plan has no entry for " + std::string(modality_name(k)));
    return it->second;
  }
  std::map<ModalityKind, bool> loss_active() const {
    std::map<ModalityKind, bool> out;
    for (const auto& [k, m] : modalities) out[k] = m.loss_active;
    return out;
  }
};

/// round-half-up(ratio * P)
inline std::size_t masked_count(Scalar ratio, std::size_t patches) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<Scalar>(patches) + 0.5));
}

/// Masks exactly masked_count(ratio, P) patches of one present modality, drawn uniformly without replacement.
inline ModalityMask plan_present(std::size_t patches, Scalar ratio, Rng& draw) {
  if (patches == 0) throw Error("plan_masks: patch count must be at least 1");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("plan_masks: mask_ratio outside [0,1]");
  std::vector<std::size_t> perm(patches);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const std::size_t n_mask = masked_count(ratio, patches);
  for (std::size_t i = 0; i < n_mask; ++i) std::swap(perm[i], perm[i + uniform_index(draw, patches - i)]);
  ModalityMask m;
  m.masked_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_mask));
  m.visible_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_mask), perm.end());
  std::sort(m.masked_idx.begin(), m.masked_idx.end());
  std::sort(m.visible_idx.begin(), m.visible_idx.end());
  m.loss_active = true;
  return m;
}

inline ModalityMask plan_missing(std::size_t patches) {
  if (patches == 0) throw Error("plan_masks: patch count must be at least 1");
  ModalityMask m;
  m.masked_idx.resize(patches);
  std::iota(m.masked_idx.begin(), m.masked_idx.end(), std::size_t{0});
  m.missing = true;
  m.loss_active = false;
  return m;
}

/// Plans every modality listed in patch_counts. Missing modalities are fully
/// masked and excluded from the loss; CLINICAL is never planned.
inline MaskPlan plan_masks(const PatientRecord& record, const std::map<ModalityKind, std::size_t>& patch_counts,
                           const MaskConfig& cfg, Rng& draw) {
  MaskPlan plan;
  for (const auto& [k, p] : patch_counts) {
    if (!is_maskable(k)) throw Error("plan_masks: clinical features are never masked");
    plan.modalities[k] = record.has(k) ? plan_present(p, cfg.mask_ratio, draw) : plan_missing(p);
  }
  return plan;
}

/// Tokens of one modality. Row 0 is the CLS token when has_cls is set;
/// source_positions holds the patch index of every non-CLS row.
struct TokenSequence {
  Mat tokens;
  bool has_cls = false;
  ModalityKind modality = ModalityKind::RNA;
  std::vector<std::size_t> source_positions;

  std::size_t length() const { return static_cast<std::size_t>(tokens.rows()); }
};

/// Row indices of `tokens` that survive masking (CLS first when present).
inline std::vector<std::size_t> visible_rows(const ModalityMask& m, bool has_cls, std::size_t token_count) {
  const std::size_t offset = has_cls ? 1 : 0;
  if (token_count != m.patch_count() + offset)
    throw Error("gather_visible: sequence holds " + std::to_string(token_count) + " tokens, plan expects " +
                std::to_string(m.patch_count() + offset));
  std::vector<std::size_t> rows;
  if (has_cls) rows.push_back(0);
  for (auto i : m.visible_idx) {
    if (i >= m.patch_count()) throw Error("gather_visible: index out of bounds");
    rows.push_back(i + offset);
  }
  return rows;
}

inline TokenSequence gather_visible(const TokenSequence& seq, const MaskPlan& plan, ModalityKind modality) {
  const ModalityMask& m = plan.at(modality);
  const auto rows = visible_rows(m, seq.has_cls, seq.length());
  TokenSequence out;
  out.has_cls = seq.has_cls;
  out.modality = modality;
  out.tokens.resize(static_cast<Eigen::Index>(rows.size()), seq.tokens.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.tokens.row(static_cast<Eigen::Index>(i)) = seq.tokens.row(static_cast<Eigen::Index>(rows[i]));
  out.source_positions = m.visible_idx;
  return out;
}

/// Positional-table row of patch p; row 0 belongs to CLS.
inline Eigen::Index pos_row(std::size_t patch) { return static_cast<Eigen::Index>(patch + 1); }

/// Rebuilds the full (CLS + P) sequence: encoded tokens go back to their
/// patch positions, masked positions hold mask_token + pos[p + 1].
inline TokenSequence scatter_with_mask_tokens(const TokenSequence& encoded_visible, const MaskPlan& plan,
                                              ModalityKind modality, const RowVec& mask_token, const Mat& pos_table) {
  const ModalityMask& m = plan.at(modality);
  if (!encoded_visible.has_cls) throw Error("scatter_with_mask_tokens: encoded sequence must carry CLS");
  if (encoded_visible.length() != m.visible_idx.size() + 1)
    throw Error("scatter_with_mask_tokens: length mismatch");
  const std::size_t P = m.patch_count();
  if (static_cast<std::size_t>(pos_table.rows()) < P + 1) throw Error("scatter_with_mask_tokens: positional table too short");
  const Eigen::Index d = encoded_visible.tokens.cols();
  if (mask_token.cols() != d || pos_table.cols() != d) throw Error("scatter_with_mask_tokens: width mismatch");
  TokenSequence out;
  out.has_cls = true;
  out.modality = modality;
  out.tokens.resize(static_cast<Eigen::Index>(P + 1), d);
  out.tokens.row(0) = encoded_visible.tokens.row(0);
  for (std::size_t i = 0; i < m.visible_idx.size(); ++i)
    out.tokens.row(pos_row(m.visible_idx[i])) = encoded_visible.tokens.row(static_cast<Eigen::Index>(i + 1));
  for (auto p : m.masked_idx) out.tokens.row(pos_row(p)) = mask_token + pos_table.row(pos_row(p));
  out.source_positions.resize(P);
  std::iota(out.source_positions.begin(), out.source_positions.end(), std::size_t{0});
  return out;
}

}  // namespace imputmae
