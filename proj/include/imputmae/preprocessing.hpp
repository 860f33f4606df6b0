#pragma once

// Per-modality preprocessing: RNA log/standardize, DNAm validation, MRI
// tumour-centred crop, Otsu tissue masking and tile scoring, clinical
// encoding, and quantile discretization of survival times.

#include "imputmae/data_model.hpp"

namespace imputmae {

/// log1p followed by per-subject standardization (population std).
inline std::vector<Scalar> rna_preprocess(std::span<const Scalar> raw) {
  if (raw.empty()) throw Error("rna_preprocess: empty expression vector");
  std::vector<Scalar> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!(raw[i] >= 0.0) || !std::isfinite(raw[i])) throw Error("rna_preprocess: negative or non-finite expression value");
    out[i] = std::log1p(raw[i]);
  }
  const Scalar n = static_cast<Scalar>(out.size());
  const Scalar mean = std::accumulate(out.begin(), out.end(), 0.0) / n;
  Scalar var = 0.0;
  for (Scalar v : out) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 1e-24)) throw Error("rna_preprocess: constant expression vector");
  const Scalar sd = std::sqrt(var);
  for (auto& v : out) v = (v - mean) / sd;
  return out;
}

inline constexpr Scalar kBetaTolerance = 1e-6;

/// Validates beta values, clamping ones within kBetaTolerance of [0, 1].
inline std::vector<Scalar> dnam_preprocess(std::span<const Scalar> raw) {
  std::vector<Scalar> out(raw.begin(), raw.end());
  for (auto& v : out) {
    if (!std::isfinite(v) || v < -kBetaTolerance || v > 1.0 + kBetaTolerance)
      throw Error("dnam_preprocess: beta value out of [0,1]: " + std::to_string(v));
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

/// Cube around the tumour bounding box, resampled or zero-padded to
/// `out_edge`^3, then z-scored over non-zero voxels.
/// volume and mask are D x H x W row-major.
inline NdArray mri_prepare(const NdArray& volume, const std::vector<std::uint8_t>& mask, std::size_t out_edge = 64) {
  if (volume.ndim() != 3) throw Error("mri_prepare: volume must be 3D");
  if (mask.size() != volume.size()) throw Error("mri_prepare: mask shape differs from volume");
  const std::size_t D = volume.shape[0], H = volume.shape[1], W = volume.shape[2];
  std::array<std::ptrdiff_t, 3> lo{PTRDIFF_MAX, PTRDIFF_MAX, PTRDIFF_MAX}, hi{-1, -1, -1};
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (mask[(z * H + y) * W + x]) {
          const std::array<std::ptrdiff_t, 3> c{static_cast<std::ptrdiff_t>(z), static_cast<std::ptrdiff_t>(y),
                                                static_cast<std::ptrdiff_t>(x)};
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], c[a]);
            hi[a] = std::max(hi[a], c[a]);
          }
        }
  if (hi[0] < 0) throw Error("mri_prepare: no tumor voxels");

  std::ptrdiff_t side = 0;
  for (int a = 0; a < 3; ++a) side = std::max(side, hi[a] - lo[a] + 1);
  // Cube start per axis, centred on the box; voxels outside the volume read as zero.
  std::array<std::ptrdiff_t, 3> start{};
  for (int a = 0; a < 3; ++a) start[a] = lo[a] - (side - (hi[a] - lo[a] + 1)) / 2;
  auto at = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) -> Scalar {
    if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(D) || y >= static_cast<std::ptrdiff_t>(H) ||
        x >= static_cast<std::ptrdiff_t>(W))
      return 0.0;
    return volume.data[(static_cast<std::size_t>(z) * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)];
  };

  const auto E = static_cast<std::ptrdiff_t>(out_edge);
  NdArray out({out_edge, out_edge, out_edge}, 0.0);
  auto put = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x, Scalar v) {
    out.data[(static_cast<std::size_t>(z) * out_edge + static_cast<std::size_t>(y)) * out_edge +
             static_cast<std::size_t>(x)] = v;
  };
  if (side <= E) {
    const std::ptrdiff_t pad = (E - side) / 2;
    for (std::ptrdiff_t z = 0; z < side; ++z)
      for (std::ptrdiff_t y = 0; y < side; ++y)
        for (std::ptrdiff_t x = 0; x < side; ++x)
          put(z + pad, y + pad, x + pad, at(start[0] + z, start[1] + y, start[2] + x));
  } else {
    // Trilinear downsampling with aligned corners.
    const Scalar step = static_cast<Scalar>(side - 1) / static_cast<Scalar>(E - 1);
    for (std::ptrdiff_t z = 0; z < E; ++z)
      for (std::ptrdiff_t y = 0; y < E; ++y)
        for (std::ptrdiff_t x = 0; x < E; ++x) {
          const std::array<Scalar, 3> s{static_cast<Scalar>(z) * step, static_cast<Scalar>(y) * step,
                                        static_cast<Scalar>(x) * step};
          std::array<std::ptrdiff_t, 3> i0{};
          std::array<Scalar, 3> f{};
          for (int a = 0; a < 3; ++a) {
            i0[a] = std::min(static_cast<std::ptrdiff_t>(std::floor(s[a])), side - 2);
            f[a] = s[a] - static_cast<Scalar>(i0[a]);
          }
          Scalar v = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const Scalar w = (dz ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dx ? f[2] : 1 - f[2]);
                v += w * at(start[0] + i0[0] + dz, start[1] + i0[1] + dy, start[2] + i0[2] + dx);
              }
          put(z, y, x, v);
        }
  }

  Scalar sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (Scalar v : out.data)
    if (v != 0.0) {
      sum += v;
      sq += v * v;
      ++n;
    }
  if (n > 0) {
    const Scalar mean = sum / static_cast<Scalar>(n);
    const Scalar var = sq / static_cast<Scalar>(n) - mean * mean;
    const Scalar sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    for (auto& v : out.data)
      if (v != 0.0) v = (v - mean) / sd;
  }
  return out;
}

inline constexpr std::size_t kOtsuBins = 256;

/// Otsu threshold over a 256-bin histogram spanning [min, max]. Values
/// strictly below the returned threshold form the lower class.
inline Scalar otsu_threshold(std::span<const Scalar> gray) {
  if (gray.empty()) throw Error("otsu_threshold: empty image");
  const auto [mn_it, mx_it] = std::minmax_element(gray.begin(), gray.end());
  const Scalar mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) throw Error("otsu_threshold: constant image");
  const Scalar width = (mx - mn) / static_cast<Scalar>(kOtsuBins);
  std::array<Scalar, kOtsuBins> hist{};
  for (Scalar v : gray) {
    auto b = static_cast<std::size_t>((v - mn) / width);
    hist[std::min(b, kOtsuBins - 1)] += 1.0;
  }
  const Scalar total = static_cast<Scalar>(gray.size());
  Scalar sum_all = 0.0;
  for (std::size_t b = 0; b < kOtsuBins; ++b) sum_all += static_cast<Scalar>(b) * hist[b];

  Scalar w0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_cut = 0;
  for (std::size_t b = 0; b < kOtsuBins; ++b) {
    w0 += hist[b];
    sum0 += static_cast<Scalar>(b) * hist[b];
    const Scalar w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const Scalar m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const Scalar between = w0 * w1 * (m0 - m1) * (m0 - m1) / (total * total);
    if (between > best) {
      best = between;
      best_cut = b;
    }
  }
  return mn + static_cast<Scalar>(best_cut + 1) * width;
}

struct TileScore {
  std::size_t tile_index = 0;
  Scalar hsv_score = 0.0;
  Scalar tissue_fraction = 0.0;
};

/// Tile stored H x W x 3 (RGB in [0,1]).
struct RgbTile {
  std::size_t height = 0, width = 0;
  std::vector<Scalar> rgb;
};

inline Scalar luminance(Scalar r, Scalar g, Scalar b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline Scalar hsv_saturation(Scalar r, Scalar g, Scalar b) {
  const Scalar mx = std::max({r, g, b}), mn = std::min({r, g, b});
  return mx > 0.0 ? (mx - mn) / mx : 0.0;
}

/// Scores every candidate: mean HSV saturation times the fraction of pixels
/// darker than the Otsu threshold of all candidates pooled (the slide-level
/// tissue mask). A constant pooled image counts every pixel as tissue.
inline std::vector<TileScore> score_wsi_tiles(const std::vector<RgbTile>& candidates) {
  if (candidates.empty()) throw Error("select_wsi_tiles: no candidate tiles");
  std::vector<Scalar> pooled;
  for (const auto& t : candidates) {
    if (t.rgb.size() != t.height * t.width * 3 || t.rgb.empty()) throw Error("select_wsi_tiles: malformed tile");
    for (std::size_t p = 0; p < t.height * t.width; ++p)
      pooled.push_back(luminance(t.rgb[3 * p], t.rgb[3 * p + 1], t.rgb[3 * p + 2]));
  }
  const auto [mn, mx] = std::minmax_element(pooled.begin(), pooled.end());
  const bool separable = *mx > *mn;
  const Scalar thr = separable ? otsu_threshold(pooled) : 0.0;

  std::vector<TileScore> scores;
  std::size_t at = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& t = candidates[i];
    const std::size_t npx = t.height * t.width;
    Scalar sat = 0.0, tissue = 0.0;
    for (std::size_t p = 0; p < npx; ++p) {
      sat += hsv_saturation(t.rgb[3 * p], t.rgb[3 * p + 1], t.rgb[3 * p + 2]);
      if (!separable || pooled[at + p] < thr) tissue += 1.0;
    }
    at += npx;
    TileScore s;
    s.tile_index = i;
    s.tissue_fraction = tissue / static_cast<Scalar>(npx);
    s.hsv_score = sat / static_cast<Scalar>(npx) * s.tissue_fraction;
    scores.push_back(s);
  }
  return scores;
}

/// Indices of the n_keep highest-scoring tiles, ties broken by lower index.
inline std::vector<std::size_t> select_wsi_tiles(const std::vector<RgbTile>& candidates, std::size_t n_keep) {
  if (n_keep > candidates.size()) throw Error("select_wsi_tiles: n_keep exceeds candidate count");
  auto scores = score_wsi_tiles(candidates);
  std::stable_sort(scores.begin(), scores.end(),
                   [](const TileScore& a, const TileScore& b) { return a.hsv_score > b.hsv_score; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_keep; ++i) out.push_back(scores[i].tile_index);
  return out;
}

/// [radiation, pharmaceutical, z-scored age]; age statistics come from the training split.
inline std::array<Scalar, 3> clinical_encode(bool radiation, bool pharma, Scalar age, Scalar age_mean, Scalar age_std) {
  if (!(age_std > 0.0)) throw Error("clinical_encode: age_std must be positive");
  return {radiation ? 1.0 : 0.0, pharma ? 1.0 : 0.0, (age - age_mean) / age_std};
}

/// T + 1 edges at empirical quantiles of the training times: edge_0 is the
/// minimum, edge_k the ceil(k n / T)-th smallest time. Interval k covers
/// (edge_{k-1}, edge_k], the first one also includes edge_0.
inline std::vector<Scalar> discretize_times(const std::vector<SurvivalLabel>& train_labels, std::size_t T) {
  if (T == 0) throw Error("discretize_times: T must be at least 1");
  std::vector<Scalar> times;
  for (const auto& l : train_labels) times.push_back(l.time);
  std::sort(times.begin(), times.end());
  std::vector<Scalar> distinct = times;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < T)
    throw Error("discretize_times: only " + std::to_string(distinct.size()) + " distinct times for T=" +
                std::to_string(T) + "; use a smaller T");
  const std::size_t n = times.size();
  std::vector<Scalar> edges{times.front()};
  for (std::size_t k = 1; k <= T; ++k) edges.push_back(times[(k * n + T - 1) / T - 1]);
  for (std::size_t k = 1; k <= T; ++k)
    if (!(edges[k] > edges[k - 1]) && k > 1) edges[k] = std::nextafter(edges[k - 1], INFINITY);
  return edges;
}

/// kappa(t): 1-based interval containing t, clamped to [1, T].
inline int interval_index(const std::vector<Scalar>& edges, Scalar t) {
  if (edges.size() < 2) throw Error("interval_index: need at least two bin edges");
  const int T = static_cast<int>(edges.size()) - 1;
  const auto it = std::lower_bound(edges.begin() + 1, edges.end(), t);
  const int k = static_cast<int>(it - edges.begin());
  return std::clamp(k, 1, T);
}

/// Assigns interval indices to every record of a dataset.
inline void assign_intervals(Dataset& ds, const std::vector<Scalar>& edges) {
  ds.time_bin_edges = edges;
  for (auto& r : ds.records) r.label.interval_index = interval_index(edges, r.label.time);
}

}  // namespace imputmae
