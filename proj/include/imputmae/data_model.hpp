#pragma once

// Patient records, dataset I/O, the shared-latent synthetic generator and
// event-stratified splitting.

#include "imputmae/patchify.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace imputmae {

struct SurvivalLabel {
  Scalar time = 1.0;  // days
  bool event = false;
  int interval_index = 0;  // 1-based; 0 until discretized
};

/// One patient. For WSI the array holds a stack of tiles [n_tiles, H, W, C];
/// every other modality holds exactly raw_shape.
struct PatientRecord {
  std::string id;
  std::map<ModalityKind, NdArray> modalities;
  std::optional<std::array<Scalar, 3>> clinical;  // radiation, pharmaceutical, z-scored age
  SurvivalLabel label;

  bool has(ModalityKind k) const {
    if (k == ModalityKind::CLINICAL) return clinical.has_value();
    return modalities.count(k) > 0;
  }
  /// Presence flags derived from the populated arrays.
  std::map<ModalityKind, bool> presence() const {
    std::map<ModalityKind, bool> p;
    for (auto k : kAllModalities) p[k] = has(k);
    return p;
  }
  std::size_t tile_count() const {
    auto it = modalities.find(ModalityKind::WSI);
    return it == modalities.end() ? 0 : it->second.shape.at(0);
  }
  /// Flat view of one WSI tile.
  std::span<const Scalar> tile(std::size_t i) const {
    const NdArray& a = modalities.at(ModalityKind::WSI);
    const std::size_t per = a.size() / a.shape.at(0);
    return std::span<const Scalar>(a.data).subspan(i * per, per);
  }
};

struct Dataset {
  std::vector<PatientRecord> records;
  std::map<ModalityKind, ModalitySpec> specs;
  std::vector<Scalar> time_bin_edges;  // T + 1 ascending, empty until discretized

  std::size_t size() const { return records.size(); }
  std::size_t count_present(ModalityKind k) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [k](const PatientRecord& r) { return r.has(k); }));
  }
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.specs = specs;
    out.time_bin_edges = time_bin_edges;
    for (auto i : idx) out.records.push_back(records.at(i));
    return out;
  }
};

/// Checks one modality array against its spec and value constraints.
inline void validate_modality(const std::string& id, ModalityKind k, const NdArray& a, const ModalitySpec& spec) {
  const std::string where = "patient " + id + ", modality " + std::string(modality_name(k)) + ": ";
  if (k == ModalityKind::WSI) {
    if (a.shape.size() != 4 || a.shape[0] == 0 ||
        !std::equal(spec.raw_shape.begin(), spec.raw_shape.end(), a.shape.begin() + 1))
      throw Error(where + "wrong shape " + shape_string(a.shape) + ", expected [n_tiles," +
                  shape_string(spec.raw_shape).substr(1));
  } else if (a.shape != spec.raw_shape) {
    throw Error(where + "wrong shape " + shape_string(a.shape) + ", expected " + shape_string(spec.raw_shape));
  }
  if (!a.all_finite()) throw Error(where + "non-finite value");
  if (k == ModalityKind::DNAM)
    for (Scalar v : a.data)
      if (v < 0.0 || v > 1.0) throw Error(where + "beta value out of [0,1]: " + std::to_string(v));
}

inline void validate_record(const PatientRecord& r, const std::map<ModalityKind, ModalitySpec>& specs) {
  if (!(r.label.time > 0.0) || !std::isfinite(r.label.time))
    throw Error("patient " + r.id + ": non-positive survival time");
  for (const auto& [k, a] : r.modalities) {
    auto it = specs.find(k);
    if (it == specs.end()) throw Error("patient " + r.id + ": no spec for modality " + std::string(modality_name(k)));
    validate_modality(r.id, k, a, it->second);
  }
  if (r.clinical)
    for (Scalar v : *r.clinical)
      if (!std::isfinite(v)) throw Error("patient " + r.id + ": non-finite clinical value");
}

namespace io {

inline std::vector<Scalar> read_csv_column(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::vector<Scalar> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(line, &used));
    } catch (const std::exception&) {
      throw Error(p.string() + ": unparsable value '" + line + "'");
    }
  }
  return out;
}

inline void write_csv_column(const std::filesystem::path& p, std::span<const Scalar> v) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  char buf[40];
  for (Scalar x : v) {
    std::snprintf(buf, sizeof buf, "%.17g\n", x);
    out << buf;
  }
}

inline std::vector<Scalar> read_f32(const std::filesystem::path& p, std::size_t expected) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes != expected * 4)
    throw Error(p.string() + ": holds " + std::to_string(bytes / 4) + " floats, expected " + std::to_string(expected));
  std::vector<std::uint32_t> raw(expected);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  std::vector<Scalar> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t w = raw[i];
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    float f;
    std::memcpy(&f, &w, 4);
    out[i] = f;
  }
  return out;
}

inline void write_f32(const std::filesystem::path& p, std::span<const Scalar> v) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  std::vector<std::uint32_t> raw(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    float f = static_cast<float>(v[i]);
    std::uint32_t w;
    std::memcpy(&w, &f, 4);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    raw[i] = w;
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

inline NdArray read_modality_file(const std::filesystem::path& p, ModalityKind k, const std::vector<std::size_t>& shape) {
  if (k == ModalityKind::RNA || k == ModalityKind::DNAM) {
    auto v = read_csv_column(p);
    const std::size_t n = v.size();
    return NdArray({n}, std::move(v));
  }
  return NdArray(shape, read_f32(p, NdArray::element_count(shape)));
}

inline void write_modality_file(const std::filesystem::path& p, ModalityKind k, const NdArray& a) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  if (k == ModalityKind::RNA || k == ModalityKind::DNAM)
    write_csv_column(p, a.data);
  else
    write_f32(p, a.data);
}

inline std::string file_name(ModalityKind k) {
  return std::string(modality_name(k)) + ((k == ModalityKind::RNA || k == ModalityKind::DNAM) ? ".csv" : ".f32");
}

}  // namespace io

/// Reads root/manifest.json and the per-modality files it references.
inline Dataset load_dataset(const std::filesystem::path& root, const std::map<ModalityKind, ModalitySpec>& specs) {
  const auto manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error("missing manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
  if (!manifest.is_array()) throw Error("manifest must be a JSON list of patient entries");

  Dataset ds;
  ds.specs = specs;
  std::set<std::string> seen;
  for (const auto& entry : manifest) {
    PatientRecord r;
    r.id = entry.at("id").get<std::string>();
    if (!seen.insert(r.id).second) throw Error("duplicate patient id " + r.id);
    r.label.time = entry.at("time_days").get<Scalar>();
    r.label.event = entry.at("event").get<int>() != 0;
    if (!(r.label.time > 0.0)) throw Error("patient " + r.id + ": non-positive survival time");
    if (entry.contains("clinical") && !entry["clinical"].is_null()) {
      auto c = entry["clinical"].get<std::vector<Scalar>>();
      if (c.size() != 3) throw Error("patient " + r.id + ": clinical must hold 3 values");
      r.clinical = std::array<Scalar, 3>{c[0], c[1], c[2]};
    }
    if (entry.contains("modalities")) {
      for (const auto& [key, rel] : entry["modalities"].items()) {
        const ModalityKind k = parse_modality(key);
        auto sit = specs.find(k);
        if (sit == specs.end()) continue;  // modality not modelled in this configuration
        std::vector<std::size_t> shape = sit->second.raw_shape;
        if (entry.contains("shape") && entry["shape"].contains(key))
          shape = entry["shape"][key].get<std::vector<std::size_t>>();
        const auto path = root / rel.get<std::string>();
        if (!std::filesystem::exists(path)) continue;  // listed but absent: treated as missing
        NdArray a = io::read_modality_file(path, k, shape);
        validate_modality(r.id, k, a, sit->second);
        r.modalities.emplace(k, std::move(a));
      }
    }
    validate_record(r, specs);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

/// Writes the directory layout read by load_dataset.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& r : ds.records) {
    nlohmann::json e;
    e["id"] = r.id;
    e["time_days"] = r.label.time;
    e["event"] = r.label.event ? 1 : 0;
    e["clinical"] = r.clinical ? nlohmann::json(std::vector<Scalar>(r.clinical->begin(), r.clinical->end()))
                               : nlohmann::json(nullptr);
    e["modalities"] = nlohmann::json::object();
    e["shape"] = nlohmann::json::object();
    std::filesystem::create_directories(root / r.id);
    for (const auto& [k, a] : r.modalities) {
      const std::string key(modality_name(k));
      const std::string rel = r.id + "/" + io::file_name(k);
      io::write_modality_file(root / rel, k, a);
      e["modalities"][key] = rel;
      if (k == ModalityKind::MRI || k == ModalityKind::WSI) e["shape"][key] = a.shape;
    }
    manifest.push_back(std::move(e));
  }
  std::ofstream out(root / "manifest.json");
  out << manifest.dump(2) << "\n";
}

/// Knobs of the shared-latent generator.
struct SynthOptions {
  std::size_t latent_dim = 8;
  Scalar noise_std = 0.1;
  std::size_t tiles_per_patient = 10;
  Scalar tile_jitter = 0.3;           // per-tile latent perturbation scale
  Scalar patch_mixing = 0.3;          // weight of the patch-specific part of each mixing matrix
  Scalar time_scale_days = 1000.0;
  Scalar risk_coefficient = 0.8;      // event time decreases with the first latent component
  Scalar time_noise = 0.25;
  Scalar censor_max_days = 4500.0;    // uniform censoring horizon, about 30% censored
};

/// Fixed random maps from the latent factor to each modality's patch space.
/// Patch p of modality m is basis_m * mixing_m[p] * z: a shared within-patch
/// basis and a per-patch mixing matrix sqrt(1 - a^2) I + a R_p, with unit
/// signal variance per element.
struct SyntheticMaps {
  std::map<ModalityKind, Mat> basis;                // S x k
  std::map<ModalityKind, std::vector<Mat>> mixing;  // P of k x k

  /// Voxel basis of an edge^3 patch built from separable cosines with
  /// frequencies 0..2 per axis, scaled to unit signal variance per voxel.
  static Mat smooth_volume_basis(std::size_t edge, Eigen::Index k, Rng& rng) {
    constexpr std::size_t F = 3;
    const auto n = static_cast<Eigen::Index>(edge * edge * edge);
    Mat b(n, static_cast<Eigen::Index>(F * F * F));
    for (std::size_t z = 0; z < edge; ++z)
      for (std::size_t y = 0; y < edge; ++y)
        for (std::size_t x = 0; x < edge; ++x) {
          const auto row = static_cast<Eigen::Index>((z * edge + y) * edge + x);
          auto c = [edge](std::size_t f, std::size_t i) {
            return std::cos(M_PI * static_cast<Scalar>(f) * (static_cast<Scalar>(i) + 0.5) / static_cast<Scalar>(edge));
          };
          for (std::size_t fz = 0; fz < F; ++fz)
            for (std::size_t fy = 0; fy < F; ++fy)
              for (std::size_t fx = 0; fx < F; ++fx)
                b(row, static_cast<Eigen::Index>((fz * F + fy) * F + fx)) = c(fz, z) * c(fy, y) * c(fx, x);
        }
    Mat coef(b.cols(), k);
    for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = normal01(rng);
    Mat u = b * coef;
    u *= 1.0 / std::sqrt(u.squaredNorm() / static_cast<Scalar>(n));
    return u;
  }

  static SyntheticMaps draw(const std::map<ModalityKind, ModalitySpec>& specs, std::size_t k, std::uint64_t seed,
                            Scalar patch_mixing = 0.3) {
    if (!(patch_mixing >= 0.0 && patch_mixing <= 1.0)) throw Error("synthesize_dataset: patch_mixing outside [0,1]");
    SyntheticMaps maps;
    for (const auto& [kind, spec] : specs) {
      Rng rng = derive_rng(seed, {0x6d617073ULL, static_cast<std::uint64_t>(kind)});
      const auto s = static_cast<Eigen::Index>(spec.patch_volume());
      const auto kk = static_cast<Eigen::Index>(k);
      const Scalar sd = 1.0 / std::sqrt(static_cast<Scalar>(k));
      Mat u(s, kk);
      if (kind == ModalityKind::MRI) {
        u = smooth_volume_basis(spec.patch_size[0], kk, rng);
      } else {
        for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = sd * normal01(rng);
      }
      std::vector<Mat> v;
      for (std::size_t p = 0; p < spec.num_patches(); ++p) {
        Mat m(kk, kk);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = patch_mixing * sd * normal01(rng);
        m.diagonal().array() += std::sqrt(1.0 - patch_mixing * patch_mixing);
        v.push_back(std::move(m));
      }
      maps.basis.emplace(kind, std::move(u));
      maps.mixing.emplace(kind, std::move(v));
    }
    return maps;
  }

  /// Noise-free sample of one modality (one tile for WSI) for latent z.
  /// DNAM values are on the logit scale here; the generator squashes them to beta values.
  std::vector<Scalar> signal(const ModalitySpec& spec, const Eigen::VectorXd& z) const {
    const Mat& u = basis.at(spec.kind);
    const auto& v = mixing.at(spec.kind);
    Mat patches(static_cast<Eigen::Index>(v.size()), u.rows());
    for (std::size_t p = 0; p < v.size(); ++p) patches.row(static_cast<Eigen::Index>(p)) = (u * (v[p] * z)).transpose();
    return unpatchify(spec, patches);
  }
};

/// Synthetic cohort whose modalities share a latent factor z.
/// Latent factors are stored per record (same order) when `latents` is non-null.
inline Dataset synthesize_dataset(std::size_t n, const std::map<ModalityKind, ModalitySpec>& specs,
                                  const std::map<ModalityKind, Scalar>& missing_rates, std::uint64_t seed,
                                  const SynthOptions& opt = {}, std::vector<Eigen::VectorXd>* latents = nullptr) {
  if (n == 0) throw Error("synthesize_dataset: n must be at least 1");
  for (const auto& [k, rate] : missing_rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw Error("synthesize_dataset: missing rate outside [0,1]");
    if (k == ModalityKind::RNA && rate != 0.0) throw Error("RNA must always be present");
  }
  if (specs.find(ModalityKind::RNA) == specs.end()) throw Error("RNA must always be present");
  auto rate_of = [&](ModalityKind k) {
    auto it = missing_rates.find(k);
    return it == missing_rates.end() ? 0.0 : it->second;
  };

  const SyntheticMaps maps = SyntheticMaps::draw(specs, opt.latent_dim, seed, opt.patch_mixing);
  Dataset ds;
  ds.specs = specs;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, {0x70617469ULL, i});
    PatientRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "P%04zu", i);
    r.id = id;
    Eigen::VectorXd z(static_cast<Eigen::Index>(opt.latent_dim));
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = normal01(rng);

    const Scalar t_event =
        opt.time_scale_days * std::exp(-opt.risk_coefficient * z(0) + opt.time_noise * normal01(rng));
    const Scalar t_censor = opt.censor_max_days * uniform01(rng);
    r.label.event = t_event <= t_censor;
    r.label.time = std::max(r.label.event ? t_event : t_censor, 1e-3);

    for (const auto& [k, spec] : specs) {
      const bool missing = uniform01(rng) < rate_of(k);
      if (missing) continue;
      if (k == ModalityKind::WSI) {
        const std::size_t per = spec.raw_size();
        NdArray a({opt.tiles_per_patient, spec.raw_shape[0], spec.raw_shape[1], spec.raw_shape[2]});
        for (std::size_t t = 0; t < opt.tiles_per_patient; ++t) {
          Eigen::VectorXd zt = z;
          for (Eigen::Index j = 0; j < zt.size(); ++j) zt(j) += opt.tile_jitter * normal01(rng);
          auto tile = maps.signal(spec, zt);
          for (std::size_t e = 0; e < per; ++e) a.data[t * per + e] = tile[e] + opt.noise_std * normal01(rng);
        }
        r.modalities.emplace(k, std::move(a));
      } else {
        auto v = maps.signal(spec, z);
        for (auto& x : v) {
          x += opt.noise_std * normal01(rng);
          if (k == ModalityKind::DNAM) x = 1.0 / (1.0 + std::exp(-x));
        }
        r.modalities.emplace(k, NdArray(spec.raw_shape, std::move(v)));
      }
    }
    if (uniform01(rng) >= rate_of(ModalityKind::CLINICAL)) {
      const Scalar radiation = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      const Scalar pharma = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      r.clinical = std::array<Scalar, 3>{radiation, pharma, normal01(rng)};
    }
    validate_record(r, specs);
    ds.records.push_back(std::move(r));
    if (latents) latents->push_back(z);
  }
  return ds;
}

namespace detail {
inline void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}
/// Indices grouped by event indicator, each group shuffled: {events, censored}.
inline std::array<std::vector<std::size_t>, 2> stratify(const Dataset& ds, Rng& rng) {
  std::array<std::vector<std::size_t>, 2> g;
  for (std::size_t i = 0; i < ds.size(); ++i) g[ds.records[i].label.event ? 0 : 1].push_back(i);
  shuffle(g[0], rng);
  shuffle(g[1], rng);
  return g;
}
}  // namespace detail

/// Event-stratified train/test partition; the test side gets round(fraction * n) records, at least one.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, Scalar test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("split_train_test: test_fraction must be in (0,1)");
  const std::size_t n = ds.size();
  if (n < 2) throw Error("split_train_test: need at least two records");
  Rng rng = derive_rng(seed, {0x73706c74ULL});
  auto groups = detail::stratify(ds, rng);

  auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<Scalar>(n) + 0.5));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  // Largest-remainder allocation of the test quota across strata.
  std::array<std::size_t, 2> quota{};
  std::array<Scalar, 2> rem{};
  std::size_t assigned = 0;
  for (int g = 0; g < 2; ++g) {
    const Scalar exact = static_cast<Scalar>(n_test) * static_cast<Scalar>(groups[g].size()) / static_cast<Scalar>(n);
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    rem[g] = exact - std::floor(exact);
    assigned += quota[g];
  }
  while (assigned < n_test) {
    const int g = (rem[0] >= rem[1] && quota[0] < groups[0].size()) || quota[1] >= groups[1].size() ? 0 : 1;
    ++quota[g];
    rem[g] = -1.0;
    ++assigned;
  }
  std::vector<std::size_t> train, test;
  for (int g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < groups[g].size(); ++i) (i < quota[g] ? test : train).push_back(groups[g][i]);
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

/// Event-stratified k-fold partition: (train, validation) per fold.
inline std::vector<std::pair<Dataset, Dataset>> kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("kfold_split: k must be at least 2");
  if (k > ds.size()) throw Error("kfold_split: k exceeds the number of records");
  Rng rng = derive_rng(seed, {0x6b666f6cULL});
  auto groups = detail::stratify(ds, rng);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (const auto& g : groups)
    for (auto i : g) folds[pos++ % k].push_back(i);
  std::vector<std::pair<Dataset, Dataset>> out;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train, valid = folds[f];
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    std::sort(train.begin(), train.end());
    std::sort(valid.begin(), valid.end());
    out.emplace_back(ds.subset(train), ds.subset(valid));
  }
  return out;
}

}  // namespace imputmae
