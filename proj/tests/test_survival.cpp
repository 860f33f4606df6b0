#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace imputmae;
using testutil::random_mat;

namespace {

const std::vector<ModalityKind> kFour{ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI, ModalityKind::WSI};
const std::vector<ModalityKind> kAll{ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI, ModalityKind::WSI,
                                     ModalityKind::CLINICAL};

Scalar logit(Scalar h) { return std::log(h / (1.0 - h)); }

// Direct transcription of the discrete-time NLL with hazards 1 / (1 + e^-x).
Scalar literal_nll(const std::vector<RowVec>& logits, const std::vector<SurvivalLabel>& labels) {
  Scalar total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    for (int t = 1; t <= labels[i].interval_index; ++t) {
      const Scalar h = 1.0 / (1.0 + std::exp(-logits[i](t - 1)));
      const Scalar y = (labels[i].event && t == labels[i].interval_index) ? 1.0 : 0.0;
      total -= y * std::log(h) + (1.0 - y) * std::log(1.0 - h);
    }
  }
  return total / static_cast<Scalar>(logits.size());
}

SurvivalLabel label(int kappa, bool event) {
  SurvivalLabel l;
  l.interval_index = kappa;
  l.event = event;
  l.time = static_cast<Scalar>(kappa);
  return l;
}

void jitter(ParamStore& ps, Rng& rng, Scalar sd = 0.1) {
  for (auto& [name, e] : ps.entries()) e.value += random_mat(e.value.rows(), e.value.cols(), rng, sd);
}

// CLS row of a full encoder pass without any caching.
RowVec direct_cls(const SurvivalModel& m, ModalityKind k, std::span<const Scalar> sample) {
  ag::Tape t;
  t.set_recording(false);
  const ModalitySpec& s = m.config().spec(k);
  return encode_full(t, m.params(), s, patchify(s, sample), m.pos_table(k)).value().row(0);
}

std::vector<SurvivalPrediction> preds_of(const std::vector<RowVec>& logits) {
  std::vector<SurvivalPrediction> out;
  for (const auto& l : logits) out.push_back(SurvivalPrediction::from_logits(l));
  return out;
}

}  // namespace

TEST(HazardHead, ZeroLogitsGiveHalfHazards) {
  const auto p = SurvivalPrediction::from_logits(RowVec::Zero(20));
  for (Eigen::Index t = 0; t < 20; ++t) {
    EXPECT_DOUBLE_EQ(p.hazards(t), 0.5);
    EXPECT_NEAR(p.survival(t), std::pow(0.5, static_cast<Scalar>(t + 1)), 1e-15);
  }
}

TEST(HazardHead, CumulativeProduct) {
  RowVec l(2);
  l << logit(0.1), logit(0.2);
  const auto p = SurvivalPrediction::from_logits(l);
  EXPECT_NEAR(p.hazards(0), 0.1, 1e-15);
  EXPECT_NEAR(p.survival(0), 0.9, 1e-15);
  EXPECT_NEAR(p.survival(1), 0.72, 1e-15);
}

TEST(HazardHead, SurvivalMonotoneForAnyLogits) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const RowVec l = random_mat(1, 20, rng, trial % 2 ? 3.0 : 30.0);
    const auto p = SurvivalPrediction::from_logits(l);
    for (Eigen::Index t = 0; t < 20; ++t) {
      ASSERT_GE(p.hazards(t), 0.0);
      ASSERT_LE(p.hazards(t), 1.0);
      ASSERT_LE(p.survival(t), t == 0 ? 1.0 : p.survival(t - 1));
      ASSERT_GE(p.survival(t), 0.0);
    }
  }
}

TEST(HazardHead, LinearProjectionOfFusedVector) {
  SurvivalModel m(micro_profile(), {ModalityKind::RNA}, FreezePolicy::standard(micro_profile()), 2);
  Rng rng(2);
  const RowVec fused = random_mat(1, 8, rng);
  const auto p = hazard_head(fused, m.params());
  const RowVec expect = fused * m.params().get("fusion.hazard.w") + m.params().get("fusion.hazard.b");
  EXPECT_TRUE(p.logits.isApprox(expect, 1e-14));
  EXPECT_EQ(p.logits.size(), 5);
}

TEST(NllLoss, HandExamples) {
  EXPECT_NEAR(nll_loss(preds_of({RowVec::Zero(20)}), {label(1, true)}), 0.6931471805599453, 1e-12);
  EXPECT_NEAR(nll_loss(preds_of({RowVec::Zero(20)}), {label(2, false)}), 1.3862943611198906, 1e-12);
  RowVec sharp = RowVec::Constant(5, -40.0);
  sharp(2) = 40.0;
  EXPECT_LT(nll_loss(preds_of({sharp}), {label(3, true)}), 1e-15);
  EXPECT_THROW(nll_loss(preds_of({RowVec::Zero(5)}), {label(0, true)}), Error);
  EXPECT_THROW(nll_loss(preds_of({RowVec::Zero(5)}), {label(6, true)}), Error);
  EXPECT_THROW(nll_loss(preds_of({RowVec::Zero(5)}), {}), Error);
}

TEST(NllLoss, MatchesLiteralDoubleLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<RowVec> logits;
    std::vector<SurvivalLabel> labels;
    for (std::size_t i = 0; i < n; ++i) {
      logits.push_back(random_mat(1, 20, rng, 2.0));
      labels.push_back(label(1 + static_cast<int>(uniform_index(rng, 20)), uniform01(rng) < 0.6));
    }
    ASSERT_NEAR(nll_loss(preds_of(logits), labels), literal_nll(logits, labels), 1e-9);

    ag::Tape t;
    std::vector<ag::Var> vars;
    for (const auto& l : logits) vars.push_back(t.variable(l));
    ASSERT_NEAR(nll_loss(vars, labels).value()(0, 0), literal_nll(logits, labels), 1e-9);
  }
}

TEST(NllLoss, StableForExtremeLogits) {
  RowVec l = RowVec::Constant(5, 800.0);
  const Scalar v = nll_loss(preds_of({l}), {label(4, false)});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 4 * 800.0, 1e-9);
}

TEST(NllLoss, LogitGradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 4);
    std::vector<Mat> logits;
    std::vector<SurvivalLabel> labels;
    for (std::size_t i = 0; i < n; ++i) {
      logits.push_back(random_mat(1, 6, rng, 2.0));
      labels.push_back(label(1 + static_cast<int>(uniform_index(rng, 6)), uniform01(rng) < 0.5));
    }
    ag::Tape t;
    std::vector<ag::Var> vars;
    for (const auto& l : logits) vars.push_back(t.variable(l));
    t.backward(nll_loss(vars, labels));
    for (std::size_t i = 0; i < n; ++i) {
      Mat numeric(1, 6);
      for (Eigen::Index j = 0; j < 6; ++j)
        numeric(0, j) = testutil::central_diff(
            [&] {
              std::vector<RowVec> rows(logits.begin(), logits.end());
              return literal_nll(rows, labels);
            },
            logits[i], j);
      const Mat analytic = t.grad(vars[i]);
      for (Eigen::Index j = 0; j < 6; ++j) ASSERT_LT(testutil::rel_error(analytic(0, j), numeric(0, j)), 1e-6);
    }
  }
}

TEST(FusionAttention, SingletonEqualsBlockOutput) {
  SurvivalModel m(micro_profile(), {ModalityKind::RNA}, FreezePolicy::standard(micro_profile()), 5);
  Rng rng(5);
  jitter(m.params(), rng);
  const Mat tok = random_mat(1, 8, rng);
  ag::Tape t;
  t.set_recording(false);
  const Mat block = transformer_block(t, m.params(), "fusion.block", t.constant(tok), 2).value();
  EXPECT_TRUE(fusion_attention(tok, m.params(), 2).isApprox(RowVec(block.row(0)), 1e-14));
  AttentionTrace trace;
  fusion_attention(tok, m.params(), 2, &trace);
  for (const Mat& w : trace.weights) EXPECT_NEAR(w(0, 0), 1.0, 1e-15);
}

TEST(FusionAttention, RowsSumToOneAndPermutationInvariant) {
  SurvivalModel m(micro_profile(), {ModalityKind::RNA}, FreezePolicy::standard(micro_profile()), 6);
  Rng rng(6);
  jitter(m.params(), rng);
  const Mat tokens = random_mat(5, 8, rng);
  AttentionTrace trace;
  const RowVec out = fusion_attention(tokens, m.params(), 2, &trace);
  ASSERT_FALSE(trace.weights.empty());
  for (const Mat& w : trace.weights)
    for (Eigen::Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-12);
  Mat perm(5, 8);
  const int order[5] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) perm.row(i) = tokens.row(order[i]);
  EXPECT_TRUE(fusion_attention(perm, m.params(), 2).isApprox(out, 1e-12));
  EXPECT_THROW(fusion_attention(Mat::Zero(3, 6), m.params(), 2), Error);
}

TEST(PatientEmbedding, WsiTilesAreAveraged) {
  ModelConfig cfg = micro_profile();
  cfg.finetune_tiles = 10;
  SurvivalModel m(cfg, {ModalityKind::RNA, ModalityKind::WSI}, FreezePolicy::standard(cfg), 7);
  PatientRecord r = synthesize_dataset(1, cfg.specs, {}, 7).records.front();
  const NdArray& tiles = r.modalities.at(ModalityKind::WSI);
  const std::size_t per = tiles.size() / tiles.shape[0];

  // Cached CLS states averaged on the tape match independently encoded tiles.
  const EncoderCache c = build_encoder_cache(m, r);
  ASSERT_EQ(c.states.at(ModalityKind::WSI).size(), 10u);
  RowVec mean = RowVec::Zero(8);
  for (std::size_t i = 0; i < 10; ++i) mean += direct_cls(m, ModalityKind::WSI, r.tile(i)) / 10.0;
  ag::Tape t;
  t.set_recording(false);
  EXPECT_TRUE(modality_embedding(t, m, ModalityKind::WSI, c.states.at(ModalityKind::WSI)).value().isApprox(mean, 1e-12));

  // Reversed tile order gives the same embedding.
  PatientRecord rev = r;
  NdArray& rt = rev.modalities.at(ModalityKind::WSI);
  for (std::size_t i = 0; i < 10; ++i)
    std::copy(tiles.data.begin() + static_cast<std::ptrdiff_t>((9 - i) * per),
              tiles.data.begin() + static_cast<std::ptrdiff_t>((10 - i) * per), rt.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  const EncoderCache cr = build_encoder_cache(m, rev);
  EXPECT_TRUE(modality_embedding(t, m, ModalityKind::WSI, cr.states.at(ModalityKind::WSI)).value().isApprox(mean, 1e-12));

  // Ten copies of one tile give that tile's CLS.
  PatientRecord same = r;
  for (std::size_t i = 1; i < 10; ++i)
    std::copy(tiles.data.begin(), tiles.data.begin() + static_cast<std::ptrdiff_t>(per),
              same.modalities.at(ModalityKind::WSI).data.begin() + static_cast<std::ptrdiff_t>(i * per));
  const EncoderCache cs = build_encoder_cache(m, same);
  EXPECT_TRUE(modality_embedding(t, m, ModalityKind::WSI, cs.states.at(ModalityKind::WSI))
                  .value()
                  .isApprox(direct_cls(m, ModalityKind::WSI, r.tile(0)), 1e-12));
}

TEST(PatientEmbedding, CachedPrefixMatchesFullEncoders) {
  const ModelConfig cfg = micro_profile();
  for (const auto& policy : {FreezePolicy::standard(cfg), FreezePolicy::freeze_all(cfg)}) {
    SurvivalModel m(cfg, kAll, policy, 8);
    Rng rng(8);
    jitter(m.params(), rng);
    const PatientRecord r = synthesize_dataset(1, cfg.specs, {}, 8).records.front();
    const EncoderCache c = build_encoder_cache(m, r);
    ag::Tape t;
    t.set_recording(false);
    for (auto k : kFour) {
      const auto samples = encoder_samples(m, k, r);
      RowVec expect = RowVec::Zero(8);
      for (auto s : samples) expect += direct_cls(m, k, s) / static_cast<Scalar>(samples.size());
      EXPECT_TRUE(modality_embedding(t, m, k, c.states.at(k)).value().isApprox(expect, 1e-12)) << modality_name(k);
    }
    const Mat tokens = patient_tokens(t, m, c).value();
    ASSERT_EQ(tokens.rows(), 5);
    Mat clin(1, 3);
    clin << (*r.clinical)[0], (*r.clinical)[1], (*r.clinical)[2];
    EXPECT_TRUE(tokens.row(4).isApprox(clin * m.params().get("fusion.clinical.w") + m.params().get("fusion.clinical.b"), 1e-12));
  }
}

TEST(PatientEmbedding, MissingClinicalUsesLearnedToken) {
  const ModelConfig cfg = micro_profile();
  SurvivalModel m(cfg, kAll, FreezePolicy::standard(cfg), 9);
  PatientRecord r = synthesize_dataset(1, cfg.specs, {}, 9).records.front();
  r.clinical.reset();
  ag::Tape t;
  t.set_recording(false);
  const Mat tokens = patient_tokens(t, m, build_encoder_cache(m, r)).value();
  EXPECT_EQ(RowVec(tokens.row(4)), m.params().get("fusion.clinical_missing"));
}

TEST(PatientEmbedding, MissingModalityUsesImputedArray) {
  const ModelConfig cfg = micro_profile();
  MaeModel imputer(cfg, kFour, 10);
  SurvivalModel m(cfg, kFour, FreezePolicy::standard(cfg), 10);
  const PatientRecord r = synthesize_dataset(1, cfg.specs, {{ModalityKind::DNAM, 1.0}}, 10).records.front();
  EXPECT_THROW(build_encoder_cache(m, r), Error);
  const auto imputed = impute_missing(r, imputer);
  const PatientRecord filled = with_imputations(r, imputed);
  const EncoderCache c = build_encoder_cache(m, filled);
  ag::Tape t;
  t.set_recording(false);
  EXPECT_TRUE(modality_embedding(t, m, ModalityKind::DNAM, c.states.at(ModalityKind::DNAM))
                  .value()
                  .isApprox(direct_cls(m, ModalityKind::DNAM, imputed.at(ModalityKind::DNAM).data), 1e-12));
  EXPECT_THROW(SurvivalModel(cfg, {ModalityKind::DNAM}, FreezePolicy::standard(cfg), 1), Error);
}

TEST(FreezePolicy, StandardFlags) {
  const ModelConfig cfg = desk_profile();
  SurvivalModel m(cfg, kAll, FreezePolicy::standard(cfg), 11);
  for (const auto& [name, e] : m.params().entries()) {
    const bool fusion = name.rfind("fusion.", 0) == 0;
    const std::string last = "enc.L" + std::to_string(cfg.spec(ModalityKind::RNA).num_layers - 1) + ".";
    const bool omics_last = name.rfind("rna." + last, 0) == 0 || name.rfind("dnam." + last, 0) == 0 ||
                            name.rfind("rna.enc.norm", 0) == 0 || name.rfind("dnam.enc.norm", 0) == 0;
    EXPECT_EQ(e.frozen, !(fusion || omics_last)) << name;
  }
  EXPECT_EQ(m.trainable_from(ModalityKind::MRI), 5u);
  EXPECT_EQ(m.trainable_from(ModalityKind::RNA), 5u);
  EXPECT_EQ(m.trainable_from(ModalityKind::WSI), 5u);
}

TEST(FreezePolicy, FineTuningKeepsFrozenParametersBitIdentical) {
  const ModelConfig cfg = micro_profile();
  const Dataset ds = synthesize_dataset(20, cfg.specs, {{ModalityKind::MRI, 0.3}}, 12);
  MaeModel pre(cfg, kFour, 12);
  Rng rng(12);
  jitter(pre.params(), rng);
  TrainConfig tc = finetune_defaults(kAll, "micro");
  tc.time_bins = cfg.time_bins;
  tc.epochs = 1;
  tc.batch_size = 3;  // 16 training patients -> 6 steps
  JsonlLog log;
  for (bool all : {false, true}) {
    const FreezePolicy policy = all ? FreezePolicy::freeze_all(cfg) : FreezePolicy::standard(cfg);
    const auto res = run_finetune(ds, cfg, &pre.params(), tc, log, &policy);
    const ParamStore& after = res.model->params();
    for (const auto& [name, e] : after.entries()) {
      if (name.rfind("fusion.", 0) == 0) {
        if (name != "fusion.clinical_missing") {
          EXPECT_NE(e.value, SurvivalModel(cfg, kAll, policy, tc.seed).params().get(name)) << name;
        }
        continue;
      }
      if (e.frozen) {
        EXPECT_EQ(e.value, pre.params().get(name)) << name;
      } else {
        EXPECT_NE(e.value, pre.params().get(name)) << name;
      }
    }
    EXPECT_EQ(after.frozen("rna.enc.L0.attn.wq"), true);
    EXPECT_EQ(after.frozen("rna.enc.L1.attn.wq"), all);
  }
}

TEST(SurvivalGradient, TrainableParametersMatchFiniteDifferences) {
  const ModelConfig cfg = micro_profile();
  SurvivalModel m(cfg, kAll, FreezePolicy::standard(cfg), 13);
  Rng rng(13);
  jitter(m.params(), rng, 0.3);
  Dataset ds = synthesize_dataset(3, cfg.specs, {}, 13);
  ds.records[1].clinical.reset();
  std::vector<EncoderCache> caches;
  std::vector<SurvivalLabel> labels;
  for (const auto& r : ds.records) caches.push_back(build_encoder_cache(m, r));
  for (int i = 0; i < 3; ++i) labels.push_back(label(1 + i * 2, i != 1));
  auto loss = [&](ag::Tape& t) {
    std::vector<ag::Var> logits;
    for (const auto& c : caches) logits.push_back(survival_logits(t, m, c));
    return nll_loss(logits, labels);
  };
  ag::Tape t;
  t.backward(loss(t));
  const auto grads = t.param_grads();
  for (const auto& [name, g] : grads) EXPECT_FALSE(m.params().frozen(name)) << name;
  EXPECT_TRUE(grads.count("rna.enc.L1.mlp.w1"));
  EXPECT_TRUE(grads.count("fusion.block.attn.wq"));
  EXPECT_TRUE(grads.count("fusion.clinical_missing"));
  const auto check = testutil::check_param_grads(
      m.params(), grads,
      [&] {
        ag::Tape t2;
        t2.set_recording(false);
        return loss(t2).value()(0, 0);
      },
      1000, 14);
  EXPECT_LT(check.worst, 1e-6) << check.worst_name;
  EXPECT_GT(check.checked, 0u);
  for (const auto& name : check.vanishing_groups) EXPECT_NE(name.find("attn.bk"), std::string::npos) << name;
}
