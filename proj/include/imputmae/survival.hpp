#pragma once

// Fine-tuning model: pretrained encoders under a freezing policy, one CLS
// embedding per modality projected to the fusion width, a clinical token,
// one pre-norm self-attention block with mean pooling, and a linear hazard
// head over T discrete intervals.
//
// Parameter keys added on top of the encoders:
//   fusion.proj.<m>.{w,b}   d -> F per maskable modality
//   fusion.clinical.{w,b}   3 -> F
//   fusion.clinical_missing 1 x F
//   fusion.block.*          one transformer block of width F
//   fusion.hazard.{w,b}     F -> T

#include "imputmae/decoder.hpp"

#include <set>

namespace imputmae {

struct FreezePolicy {
  /// Number of leading transformer layers frozen per modality. The final
  /// encoder norm is frozen exactly when every layer is.
  std::map<ModalityKind, std::size_t> frozen_layers;
  /// Tokenizer, CLS token (and the fixed positional table) frozen.
  std::map<ModalityKind, bool> tokenizer_frozen;

  /// MRI and WSI fully frozen; RNA and DNAM keep only their last layer trainable.
  static FreezePolicy standard(const ModelConfig& cfg) {
    FreezePolicy p;
    for (const auto& [k, s] : cfg.specs) {
      const bool omics = k == ModalityKind::RNA || k == ModalityKind::DNAM;
      p.frozen_layers[k] = omics && s.num_layers > 0 ? s.num_layers - 1 : s.num_layers;
      p.tokenizer_frozen[k] = true;
    }
    return p;
  }

  static FreezePolicy freeze_all(const ModelConfig& cfg) {
    FreezePolicy p;
    for (const auto& [k, s] : cfg.specs) {
      p.frozen_layers[k] = s.num_layers;
      p.tokenizer_frozen[k] = true;
    }
    return p;
  }

  bool layer_frozen(ModalityKind k, std::size_t layer) const { return layer < frozen_layers.at(k); }
};

struct SurvivalPrediction {
  RowVec logits;
  RowVec hazards;
  RowVec survival;

  static SurvivalPrediction from_logits(const RowVec& logits) {
    SurvivalPrediction p;
    p.logits = logits;
    p.hazards.resize(logits.size());
    p.survival.resize(logits.size());
    Scalar s = 1.0;
    for (Eigen::Index t = 0; t < logits.size(); ++t) {
      p.hazards(t) = ag::sigmoid(logits(t));
      s *= 1.0 - p.hazards(t);
      p.survival(t) = s;
    }
    return p;
  }
};

/// Fine-tuning model parameters and geometry.
class SurvivalModel {
 public:
  SurvivalModel(ModelConfig cfg, std::vector<ModalityKind> subset, FreezePolicy policy, std::uint64_t seed)
      : cfg_(std::move(cfg)), policy_(std::move(policy)) {
    cfg_.validate();
    for (auto k : kMaskable)
      if (std::find(subset.begin(), subset.end(), k) != subset.end()) {
        cfg_.spec(k);
        encoders_.push_back(k);
      }
    use_clinical_ = std::find(subset.begin(), subset.end(), ModalityKind::CLINICAL) != subset.end();
    if (encoders_.empty()) throw Error("fine-tune model needs at least one maskable modality");
    if (!uses(ModalityKind::RNA)) throw Error("fine-tune subset must include RNA");
    const auto F = static_cast<Eigen::Index>(cfg_.fusion_dim);
    const auto d = static_cast<Eigen::Index>(cfg_.embed_dim());
    for (auto k : encoders_) {
      // Same stream tags as the autoencoder, so an untrained model matches its untrained encoders.
      Rng rng = derive_rng(seed, {0x656e63ULL, static_cast<std::uint64_t>(k)});
      add_encoder_params(ps_, cfg_.spec(k), cfg_.mlp_ratio, rng);
      pos_.emplace(k, sinusoidal_table(cfg_.spec(k).num_patches() + 1, cfg_.spec(k).embed_dim));
    }
    Rng rng = derive_rng(seed, {0x667573ULL});
    for (auto k : encoders_) {
      ps_.add("fusion.proj." + std::string(modality_name(k)) + ".w", init::xavier_uniform(d, F, rng));
      ps_.add("fusion.proj." + std::string(modality_name(k)) + ".b", init::zeros(1, F));
    }
    ps_.add("fusion.clinical.w", init::xavier_uniform(3, F, rng));
    ps_.add("fusion.clinical.b", init::zeros(1, F));
    ps_.add("fusion.clinical_missing", init::normal(1, F, 0.02, rng));
    add_block_params(ps_, "fusion.block", cfg_.fusion_dim, cfg_.mlp_ratio, rng);
    ps_.add("fusion.hazard.w", init::xavier_uniform(F, static_cast<Eigen::Index>(cfg_.time_bins), rng));
    ps_.add("fusion.hazard.b", init::zeros(1, static_cast<Eigen::Index>(cfg_.time_bins)));
    apply_policy();
  }

  const ModelConfig& config() const { return cfg_; }
  const FreezePolicy& policy() const { return policy_; }
  const std::vector<ModalityKind>& encoders() const { return encoders_; }
  bool uses(ModalityKind k) const { return std::find(encoders_.begin(), encoders_.end(), k) != encoders_.end(); }
  bool uses_clinical() const { return use_clinical_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const Mat& pos_table(ModalityKind k) const { return pos_.at(k); }

  /// Copies the encoder parameters of `pretrained`, which must hold every encoder key with matching shapes.
  void load_encoders(const ParamStore& pretrained) {
    ParamStore expected;
    for (const auto& [name, e] : ps_.entries())
      if (name.rfind("fusion.", 0) != 0) expected.add(name, e.value);
    check_compatible(expected, pretrained);
    for (const auto& [name, e] : expected.entries()) ps_.get_mut(name) = pretrained.get(name);
  }

  /// First layer that runs on the tape; num_layers + 1 when the whole encoder (norm included) is frozen.
  std::size_t trainable_from(ModalityKind k) const {
    if (!policy_.tokenizer_frozen.at(k)) return 0;
    const std::size_t L = cfg_.spec(k).num_layers;
    const std::size_t f = std::min(policy_.frozen_layers.at(k), L);
    return f == L ? L + 1 : f;
  }

 private:
  void apply_policy() {
    for (auto k : encoders_) {
      const ModalitySpec& s = cfg_.spec(k);
      const bool tok = policy_.tokenizer_frozen.at(k);
      ps_.set_frozen_prefix(mkey(k, "tok."), tok);
      ps_.set_frozen(mkey(k, "cls"), tok);
      const std::size_t f = policy_.frozen_layers.at(k);
      for (std::size_t l = 0; l < s.num_layers; ++l) ps_.set_frozen_prefix(layer_prefix(mkey(k, "enc"), l) + ".", l < f);
      ps_.set_frozen_prefix(mkey(k, "enc.norm"), f >= s.num_layers);
    }
  }

  ModelConfig cfg_;
  FreezePolicy policy_;
  std::vector<ModalityKind> encoders_;
  bool use_clinical_ = false;
  ParamStore ps_;
  std::map<ModalityKind, Mat> pos_;
};

/// Encoder states of one patient after the frozen prefix, one per sample (WSI: per tile).
struct EncoderCache {
  std::map<ModalityKind, std::vector<Mat>> states;
  std::optional<std::array<Scalar, 3>> clinical;
};

inline std::vector<std::span<const Scalar>> encoder_samples(const SurvivalModel& m, ModalityKind k,
                                                            const PatientRecord& r) {
  std::vector<std::span<const Scalar>> out;
  if (k == ModalityKind::WSI) {
    const std::size_t n = std::min(r.tile_count(), m.config().finetune_tiles);
    for (std::size_t i = 0; i < n; ++i) out.push_back(r.tile(i));
  } else {
    out.push_back(r.modalities.at(k).data);
  }
  return out;
}

/// Runs the frozen part of each encoder without recording. The state is
/// the raw patch matrix (trainable tokenizer), the hidden sequence entering
/// the first trainable layer, or the final CLS row (fully frozen encoder).
inline EncoderCache build_encoder_cache(const SurvivalModel& m, const PatientRecord& r) {
  EncoderCache c;
  c.clinical = r.clinical;
  ag::Tape t;
  t.set_recording(false);
  for (auto k : m.encoders()) {
    if (!r.has(k)) throw Error("patient " + r.id + ": modality " + std::string(modality_name(k)) + " absent and not imputed");
    const ModalitySpec& s = m.config().spec(k);
    const std::size_t from = m.trainable_from(k);
    for (auto sample : encoder_samples(m, k, r)) {
      Mat patches = patchify(s, sample);
      if (from == 0 && !m.policy().tokenizer_frozen.at(k)) {
        c.states[k].push_back(std::move(patches));
        continue;
      }
      std::vector<std::size_t> all(static_cast<std::size_t>(patches.rows()));
      std::iota(all.begin(), all.end(), std::size_t{0});
      ag::Var x = with_pos_and_cls(t, m.params(), s, embed(t, m.params(), s, patches), all, m.pos_table(k));
      const std::size_t stop = std::min(from, s.num_layers);
      for (std::size_t l = 0; l < stop; ++l) x = transformer_block(t, m.params(), layer_prefix(mkey(k, "enc"), l), x, s.num_heads);
      if (from > s.num_layers) x = ag::slice_rows(norm(t, m.params(), mkey(k, "enc.norm"), x), 0, 1);
      c.states[k].push_back(x.value());
    }
  }
  return c;
}

/// Final CLS embedding (1 x d) of one modality from a cached state; WSI tiles are averaged.
inline ag::Var modality_embedding(ag::Tape& t, const SurvivalModel& m, ModalityKind k, const std::vector<Mat>& states) {
  if (states.empty()) throw Error("modality_embedding: no samples for " + std::string(modality_name(k)));
  const ModalitySpec& s = m.config().spec(k);
  const std::size_t from = m.trainable_from(k);
  std::vector<ag::Var> cls;
  for (const Mat& st : states) {
    if (from > s.num_layers) {
      cls.push_back(t.constant(st));
      continue;
    }
    ag::Var x;
    if (!m.policy().tokenizer_frozen.at(k)) {
      x = encode_full(t, m.params(), s, st, m.pos_table(k));
    } else {
      x = t.constant(st);
      for (std::size_t l = from; l < s.num_layers; ++l)
        x = transformer_block(t, m.params(), layer_prefix(mkey(k, "enc"), l), x, s.num_heads);
      x = norm(t, m.params(), mkey(k, "enc.norm"), x);
    }
    cls.push_back(ag::slice_rows(x, 0, 1));
  }
  return cls.size() == 1 ? cls.front() : ag::mean_rows(ag::concat_rows(cls));
}

/// Fusion input: one projected CLS token per modality followed by the clinical token.
inline ag::Var patient_tokens(ag::Tape& t, const SurvivalModel& m, const EncoderCache& c) {
  std::vector<ag::Var> rows;
  for (auto k : m.encoders()) {
    auto it = c.states.find(k);
    if (it == c.states.end()) throw Error("patient_embedding: no encoder state for " + std::string(modality_name(k)));
    const std::string p = "fusion.proj." + std::string(modality_name(k));
    rows.push_back(linear(t, m.params(), p + ".w", p + ".b", modality_embedding(t, m, k, it->second)));
  }
  if (m.uses_clinical()) {
    if (c.clinical) {
      Mat x(1, 3);
      x << (*c.clinical)[0], (*c.clinical)[1], (*c.clinical)[2];
      rows.push_back(linear(t, m.params(), "fusion.clinical.w", "fusion.clinical.b", t.constant(std::move(x))));
    } else {
      rows.push_back(m.params().bind(t, "fusion.clinical_missing"));
    }
  }
  return rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
}

/// Self-attention block over the modality tokens, then mean pooling (1 x F).
inline ag::Var fusion_attention(ag::Tape& t, const ParamStore& ps, ag::Var tokens, std::size_t heads,
                                const DropoutCtx& drop = {}, AttentionTrace* trace = nullptr) {
  if (tokens.rows() < 1) throw Error("fusion_attention: no tokens");
  if (tokens.cols() != ps.get("fusion.block.ln1.g").cols()) throw Error("fusion_attention: token width mismatch");
  return ag::mean_rows(transformer_block(t, ps, "fusion.block", tokens, heads, trace, drop));
}

/// Linear projection to T hazard logits.
inline ag::Var hazard_logits(ag::Tape& t, const ParamStore& ps, ag::Var fused, const DropoutCtx& drop = {}) {
  if (drop.active()) fused = ag::dropout(fused, drop.rate, *drop.rng);
  return linear(t, ps, "fusion.hazard.w", "fusion.hazard.b", fused);
}

inline ag::Var survival_logits(ag::Tape& t, const SurvivalModel& m, const EncoderCache& c, const DropoutCtx& drop = {}) {
  ag::Var fused = fusion_attention(t, m.params(), patient_tokens(t, m, c), m.config().fusion_heads, drop);
  return hazard_logits(t, m.params(), fused, drop);
}

inline SurvivalPrediction predict(const SurvivalModel& m, const EncoderCache& c) {
  ag::Tape t;
  t.set_recording(false);
  return SurvivalPrediction::from_logits(survival_logits(t, m, c).value());
}

// Matrix-level forms.

inline RowVec fusion_attention(const Mat& tokens, const ParamStore& ps, std::size_t heads, AttentionTrace* trace = nullptr) {
  ag::Tape t;
  t.set_recording(false);
  return fusion_attention(t, ps, t.constant(tokens), heads, {}, trace).value();
}

inline SurvivalPrediction hazard_head(const RowVec& fused, const ParamStore& ps) {
  ag::Tape t;
  t.set_recording(false);
  return SurvivalPrediction::from_logits(hazard_logits(t, ps, t.constant(fused)).value());
}

/// Mean negative log-likelihood over patients, evaluated from logits.
inline Scalar nll_loss(const std::vector<SurvivalPrediction>& preds, const std::vector<SurvivalLabel>& labels) {
  if (preds.size() != labels.size()) throw Error("nll_loss: predictions and labels differ in length");
  if (preds.empty()) throw Error("nll_loss: no patients");
  Scalar total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int T = static_cast<int>(preds[i].logits.size());
    const int kappa = labels[i].interval_index;
    if (kappa < 1 || kappa > T) throw Error("nll_loss: interval index outside [1, T]");
    for (int t = 1; t <= kappa; ++t) {
      const Scalar x = preds[i].logits(t - 1);
      total += (labels[i].event && t == kappa) ? ag::softplus(-x) : ag::softplus(x);
    }
  }
  return total / static_cast<Scalar>(preds.size());
}

/// Batch loss on the tape: mean of per-patient hazard NLL.
inline ag::Var nll_loss(const std::vector<ag::Var>& logits, const std::vector<SurvivalLabel>& labels) {
  if (logits.size() != labels.size() || logits.empty()) throw Error("nll_loss: bad batch");
  std::vector<ag::Var> terms;
  for (std::size_t i = 0; i < logits.size(); ++i)
    terms.push_back(ag::hazard_nll(logits[i], labels[i].interval_index, labels[i].event));
  return ag::scale(ag::sum_scalars(terms), 1.0 / static_cast<Scalar>(terms.size()));
}

/// Completes a record with imputed arrays for the modalities it lacks.
inline PatientRecord with_imputations(const PatientRecord& r, const std::map<ModalityKind, NdArray>& imputed) {
  PatientRecord out = r;
  for (const auto& [k, a] : imputed)
    if (!out.has(k)) out.modalities.emplace(k, a);
  return out;
}

}  // namespace imputmae
