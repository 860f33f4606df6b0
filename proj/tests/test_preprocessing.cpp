#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace imputmae;

namespace {

Scalar mean_of(const std::vector<Scalar>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<Scalar>(v.size()); }

Scalar std_of(const std::vector<Scalar>& v) {
  const Scalar m = mean_of(v);
  Scalar s = 0;
  for (Scalar x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<Scalar>(v.size()));
}

// Exhaustive search over the 256 candidate thresholds min + (c + 1) * width,
// splitting the raw values and scoring with their own means.
Scalar otsu_oracle(const std::vector<Scalar>& img) {
  const Scalar mn = *std::min_element(img.begin(), img.end()), mx = *std::max_element(img.begin(), img.end());
  const Scalar width = (mx - mn) / 256.0;
  Scalar best = -1, best_thr = 0;
  for (int c = 0; c < 256; ++c) {
    const Scalar thr = mn + (c + 1) * width;
    Scalar n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (Scalar v : img) {
      if (v < thr) {
        n0 += 1;
        s0 += v;
      } else {
        n1 += 1;
        s1 += v;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const Scalar d = s0 / n0 - s1 / n1;
    const Scalar between = n0 * n1 * d * d;
    if (between > best + 1e-9 * std::abs(best)) {
      best = between;
      best_thr = thr;
    }
  }
  return best_thr;
}

RgbTile solid_tile(std::size_t edge, Scalar r, Scalar g, Scalar b) {
  RgbTile t{edge, edge, {}};
  for (std::size_t p = 0; p < edge * edge; ++p) t.rgb.insert(t.rgb.end(), {r, g, b});
  return t;
}

RgbTile random_tile(std::size_t edge, Rng& rng) {
  RgbTile t{edge, edge, {}};
  for (std::size_t p = 0; p < edge * edge * 3; ++p) t.rgb.push_back(uniform01(rng));
  return t;
}

}  // namespace

TEST(RnaPreprocess, ZeroVarianceIsRejected) {
  std::vector<Scalar> zeros(10, 0.0);
  try {
    rna_preprocess(zeros);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("constant expression vector"), std::string::npos);
  }
  EXPECT_THROW(rna_preprocess(std::vector<Scalar>{1.0, -0.5}), Error);
}

TEST(RnaPreprocess, LogThenStandardize) {
  std::vector<Scalar> raw;
  for (int k = 0; k < 5; ++k) raw.push_back(std::exp(k) - 1.0);
  const auto out = rna_preprocess(raw);
  // log1p gives 0..4: mean 2, population std sqrt(2).
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(out[static_cast<std::size_t>(k)], (k - 2) / std::sqrt(2.0), 1e-12);
}

TEST(RnaPreprocess, OutputIsStandardizedProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Scalar> raw(2 + uniform_index(rng, 300));
    for (auto& v : raw) v = std::exp(3.0 * normal01(rng));
    const auto out = rna_preprocess(raw);
    EXPECT_LT(std::abs(mean_of(out)), 1e-6);
    EXPECT_LT(std::abs(std_of(out) - 1.0), 1e-6);
  }
}

TEST(DnamPreprocess, Examples) {
  EXPECT_EQ(dnam_preprocess(std::vector<Scalar>{0.0, 0.5, 1.0}), (std::vector<Scalar>{0.0, 0.5, 1.0}));
  EXPECT_EQ(dnam_preprocess(std::vector<Scalar>{1.0000005}), (std::vector<Scalar>{1.0}));
  EXPECT_EQ(dnam_preprocess(std::vector<Scalar>{-0.0000005}), (std::vector<Scalar>{0.0}));
  EXPECT_THROW(dnam_preprocess(std::vector<Scalar>{1.2}), Error);
  EXPECT_THROW(dnam_preprocess(std::vector<Scalar>{-0.01}), Error);
}

namespace {

struct Volume {
  NdArray v;
  std::vector<std::uint8_t> mask;
};

Volume cube_volume(std::size_t edge, std::size_t lo, std::size_t side, Rng& rng) {
  Volume out{NdArray({edge, edge, edge}), std::vector<std::uint8_t>(edge * edge * edge, 0)};
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v.data[i] = 1.0 + uniform01(rng);
  for (std::size_t z = lo; z < lo + side; ++z)
    for (std::size_t y = lo; y < lo + side; ++y)
      for (std::size_t x = lo; x < lo + side; ++x) out.mask[(z * edge + y) * edge + x] = 1;
  return out;
}

// z-score over the nonzero voxels, computed independently.
std::vector<Scalar> zscore_nonzero(std::vector<Scalar> v) {
  std::vector<Scalar> nz;
  for (Scalar x : v)
    if (x != 0.0) nz.push_back(x);
  const Scalar m = mean_of(nz), s = std_of(nz);
  for (auto& x : v)
    if (x != 0.0) x = (x - m) / s;
  return v;
}

}  // namespace

TEST(MriPrepare, ExactCubeIsCroppedWithoutResampling) {
  Rng rng(1);
  Volume vol = cube_volume(80, 8, 64, rng);
  const NdArray out = mri_prepare(vol.v, vol.mask);
  ASSERT_EQ(out.shape, (std::vector<std::size_t>{64, 64, 64}));
  std::vector<Scalar> crop;
  for (std::size_t z = 8; z < 72; ++z)
    for (std::size_t y = 8; y < 72; ++y)
      for (std::size_t x = 8; x < 72; ++x) crop.push_back(vol.v.data[(z * 80 + y) * 80 + x]);
  const auto expected = zscore_nonzero(crop);
  for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(out.data[i], expected[i], 1e-9);
}

TEST(MriPrepare, SmallCubeIsCentredWithSixteenVoxelPadding) {
  Rng rng(2);
  Volume vol = cube_volume(64, 10, 32, rng);
  const NdArray out = mri_prepare(vol.v, vol.mask);
  std::vector<Scalar> crop;
  for (std::size_t z = 10; z < 42; ++z)
    for (std::size_t y = 10; y < 42; ++y)
      for (std::size_t x = 10; x < 42; ++x) crop.push_back(vol.v.data[(z * 64 + y) * 64 + x]);
  const auto expected = zscore_nonzero(crop);
  std::size_t k = 0;
  for (std::size_t z = 0; z < 64; ++z)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const bool inside = z >= 16 && z < 48 && y >= 16 && y < 48 && x >= 16 && x < 48;
        const Scalar v = out.data[(z * 64 + y) * 64 + x];
        if (inside)
          ASSERT_NEAR(v, expected[k++], 1e-9);
        else
          ASSERT_EQ(v, 0.0);
      }
}

TEST(MriPrepare, LargeBoxIsDownsampledTrilinearly) {
  // Intensity linear in z is reproduced exactly by trilinear interpolation.
  const std::size_t edge = 100;
  NdArray v({edge, edge, edge});
  std::vector<std::uint8_t> mask(edge * edge * edge, 0);
  for (std::size_t z = 0; z < edge; ++z)
    for (std::size_t y = 0; y < edge; ++y)
      for (std::size_t x = 0; x < edge; ++x) {
        v.data[(z * edge + y) * edge + x] = 1.0 + static_cast<Scalar>(z);
        if (z >= 2 && z < 98 && y >= 2 && y < 98 && x >= 2 && x < 98) mask[(z * edge + y) * edge + x] = 1;
      }
  const NdArray out = mri_prepare(v, mask);
  ASSERT_EQ(out.shape, (std::vector<std::size_t>{64, 64, 64}));
  const Scalar step = out.data[64 * 64] - out.data[0];
  for (std::size_t z = 1; z < 64; ++z)
    ASSERT_NEAR(out.data[z * 64 * 64 + 5 * 64 + 9] - out.data[(z - 1) * 64 * 64 + 5 * 64 + 9], step, 1e-9);
  std::vector<Scalar> all(out.data);
  EXPECT_NEAR(mean_of(all), 0.0, 1e-9);
}

TEST(MriPrepare, EmptyMaskIsRejected) {
  NdArray v({8, 8, 8}, 1.0);
  try {
    mri_prepare(v, std::vector<std::uint8_t>(512, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no tumor voxels"), std::string::npos);
  }
}

TEST(Otsu, BimodalSeparatesModes) {
  std::vector<Scalar> img(100, 0.1);
  std::fill(img.begin() + 50, img.end(), 0.9);
  const Scalar t = otsu_threshold(img);
  EXPECT_GT(t, 0.1);
  EXPECT_LT(t, 0.9);
}

TEST(Otsu, UniformRampMatchesExhaustiveOracle) {
  std::vector<Scalar> img;
  for (int v = 0; v < 256; ++v) img.push_back(v);
  EXPECT_DOUBLE_EQ(otsu_threshold(img), otsu_oracle(img));
  EXPECT_DOUBLE_EQ(otsu_threshold(img), 128.0 * 255.0 / 256.0);
}

TEST(Otsu, RandomIntegerImagesMatchOracleProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Scalar> img{0.0, 255.0};
    const std::size_t n = 50 + uniform_index(rng, 400);
    const Scalar centre = static_cast<Scalar>(uniform_index(rng, 200));
    for (std::size_t i = 0; i < n; ++i) {
      const Scalar v = i % 2 ? centre + 20.0 * normal01(rng) : 60.0 * normal01(rng) + 180.0;
      img.push_back(std::clamp(std::round(v), 0.0, 255.0));
    }
    EXPECT_DOUBLE_EQ(otsu_threshold(img), otsu_oracle(img)) << "trial " << trial;
  }
}

TEST(Otsu, ConstantImageIsRejected) { EXPECT_THROW(otsu_threshold(std::vector<Scalar>(20, 0.3)), Error); }

TEST(WsiTiles, KeepsTenOfAThousand) {
  Rng rng(3);
  std::vector<RgbTile> tiles;
  for (int i = 0; i < 1000; ++i) tiles.push_back(random_tile(4, rng));
  const auto keep = select_wsi_tiles(tiles, 10);
  EXPECT_EQ(keep.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(keep.begin(), keep.end()).size(), 10u);
  EXPECT_THROW(select_wsi_tiles(tiles, 1001), Error);
}

TEST(WsiTiles, SaturatedTileBeatsWhiteBackground) {
  std::vector<RgbTile> tiles(6, solid_tile(8, 1.0, 1.0, 1.0));
  tiles[4] = solid_tile(8, 0.7, 0.2, 0.5);
  EXPECT_EQ(select_wsi_tiles(tiles, 1), (std::vector<std::size_t>{4}));
  const auto scores = score_wsi_tiles(tiles);
  EXPECT_DOUBLE_EQ(scores[4].tissue_fraction, 1.0);
  EXPECT_DOUBLE_EQ(scores[0].tissue_fraction, 0.0);
}

TEST(WsiTiles, TiesGoToLowerIndex) {
  std::vector<RgbTile> tiles(5, solid_tile(8, 1.0, 1.0, 1.0));
  tiles[1] = tiles[3] = solid_tile(8, 0.6, 0.1, 0.4);
  EXPECT_EQ(select_wsi_tiles(tiles, 1), (std::vector<std::size_t>{1}));
}

TEST(WsiTiles, PermutationEquivarianceProperty) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<RgbTile> tiles;
    for (int i = 0; i < 30; ++i) tiles.push_back(random_tile(6, rng));
    std::vector<std::size_t> perm(tiles.size());
    std::iota(perm.begin(), perm.end(), 0);
    detail::shuffle(perm, rng);
    std::vector<RgbTile> permuted;
    for (auto p : perm) permuted.push_back(tiles[p]);
    const auto a = select_wsi_tiles(tiles, 5);
    const auto b = select_wsi_tiles(permuted, 5);
    std::vector<std::size_t> mapped;
    for (auto i : b) mapped.push_back(perm[i]);
    EXPECT_EQ(a, mapped);
  }
}

TEST(ClinicalEncode, Examples) {
  EXPECT_EQ(clinical_encode(true, false, 60, 60, 10), (std::array<Scalar, 3>{1, 0, 0}));
  EXPECT_EQ(clinical_encode(false, true, 70, 60, 10), (std::array<Scalar, 3>{0, 1, 1}));
  EXPECT_EQ(clinical_encode(false, false, 50, 60, 10), (std::array<Scalar, 3>{0, 0, -1}));
  EXPECT_THROW(clinical_encode(false, false, 50, 60, 0), Error);
}

namespace {
std::vector<SurvivalLabel> labels_of(const std::vector<Scalar>& times) {
  std::vector<SurvivalLabel> out;
  for (Scalar t : times) out.push_back({t, true, 0});
  return out;
}
}  // namespace

TEST(DiscretizeTimes, HundredTimesTwentyBins) {
  std::vector<Scalar> times;
  for (int t = 1; t <= 100; ++t) times.push_back(t);
  const auto edges = discretize_times(labels_of(times), 20);
  ASSERT_EQ(edges.size(), 21u);
  std::vector<int> counts(21, 0);
  for (Scalar t : times) ++counts[static_cast<std::size_t>(interval_index(edges, t))];
  for (int k = 1; k <= 20; ++k) EXPECT_EQ(counts[static_cast<std::size_t>(k)], 5) << "bin " << k;
}

TEST(DiscretizeTimes, SingleBinAndClamping) {
  const std::vector<Scalar> times{3, 9, 27, 81};
  const auto one = discretize_times(labels_of(times), 1);
  for (Scalar t : times) EXPECT_EQ(interval_index(one, t), 1);
  const auto edges = discretize_times(labels_of(times), 4);
  EXPECT_EQ(interval_index(edges, 0.5), 1);
  EXPECT_EQ(interval_index(edges, 1000.0), 4);
  EXPECT_THROW(discretize_times(labels_of({1, 1, 2}), 3), Error);
  EXPECT_THROW(discretize_times(labels_of(times), 0), Error);
}

TEST(DiscretizeTimes, BalancedCountsProperty) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + uniform_index(rng, 20);
    const std::size_t n = T + uniform_index(rng, 200);
    std::vector<Scalar> times;
    for (std::size_t i = 0; i < n; ++i) times.push_back(1.0 + 1000.0 * uniform01(rng));
    const auto edges = discretize_times(labels_of(times), T);
    std::vector<int> counts(T + 1, 0);
    for (Scalar t : times) {
      const int k = interval_index(edges, t);
      ASSERT_GE(k, 1);
      ASSERT_LE(k, static_cast<int>(T));
      ++counts[static_cast<std::size_t>(k)];
    }
    const auto [lo, hi] = std::minmax_element(counts.begin() + 1, counts.end());
    EXPECT_LE(*hi - *lo, 1) << "n=" << n << " T=" << T;
  }
}
