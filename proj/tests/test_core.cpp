#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace imputmae;

TEST(Rng, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a = derive_rng(7, {1, 2}), b = derive_rng(7, {1, 2}), c = derive_rng(7, {2, 1});
  for (int i = 0; i < 16; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
  }
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const Scalar u = uniform01(r);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMomentsRoughlyStandard) {
  Rng r(11);
  Scalar s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const Scalar x = normal01(r);
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, UniformIndexCoversRange) {
  Rng r(5);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[uniform_index(r, 7)];
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(NdArray, ShapeAndEquality) {
  NdArray a({2, 3}, 1.5);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a.ndim(), 2u);
  EXPECT_TRUE(a.all_finite());
  NdArray b = a;
  EXPECT_EQ(a, b);
  b.data[4] = std::nan("");
  EXPECT_FALSE(b.all_finite());
  EXPECT_THROW(NdArray({2, 2}, std::vector<Scalar>{1, 2, 3}), Error);
  EXPECT_EQ(shape_string({4, 5, 6}), "[4x5x6]");
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a(std::string("")), 14695981039346656037ULL);
  EXPECT_EQ(fnv1a(std::string("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a(std::string("foobar")), 0x85944171f73967e8ULL);
}

TEST(Modality, NamesRoundTrip) {
  for (auto k : kAllModalities) EXPECT_EQ(parse_modality(modality_name(k)), k);
  EXPECT_EQ(parse_modality("dna"), ModalityKind::DNAM);
  EXPECT_THROW(parse_modality("ct"), Error);
  EXPECT_EQ(kAllModalities.size(), 5u);
  EXPECT_FALSE(is_maskable(ModalityKind::CLINICAL));
  for (auto k : kMaskable) EXPECT_TRUE(is_maskable(k));
}

TEST(Modality, FullProfileDefaults) {
  const ModelConfig c = full_profile();
  EXPECT_EQ(c.spec(ModalityKind::RNA).num_layers, 6u);
  EXPECT_EQ(c.spec(ModalityKind::DNAM).num_layers, 6u);
  EXPECT_EQ(c.spec(ModalityKind::MRI).num_layers, 4u);
  EXPECT_EQ(c.spec(ModalityKind::WSI).num_layers, 4u);
  EXPECT_EQ(c.spec(ModalityKind::WSI).num_heads, 4u);
  for (const auto& [k, s] : c.specs) EXPECT_EQ(s.embed_dim, 256u);
  EXPECT_EQ(c.decoder_layers, 3u);
  EXPECT_EQ(c.fusion_dim, 256u);
  EXPECT_EQ(c.time_bins, 20u);
}

TEST(Modality, SpecValidation) {
  ModalitySpec s = make_spec(ModalityKind::WSI, {64, 64, 3}, {16, 16}, 32, 2, 3);
  EXPECT_THROW(s.validate(), Error);  // heads do not divide d
  s.num_heads = 4;
  EXPECT_NO_THROW(s.validate());
  s.patch_size = {128, 16};
  EXPECT_THROW(s.validate(), Error);
}

TEST(Modality, HashTracksGeometry) {
  ModelConfig a = desk_profile(), b = desk_profile();
  EXPECT_EQ(a.hash(), b.hash());
  b.specs[ModalityKind::RNA].num_layers = 5;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_THROW(profile_by_name("huge"), Error);
}
