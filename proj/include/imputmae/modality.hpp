#pragma once

#include "imputmae/core.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace imputmae {

enum class ModalityKind { RNA, DNAM, MRI, WSI, CLINICAL };

/// Modalities that are tokenized, masked and reconstructed, in fused-sequence order.
inline constexpr std::array<ModalityKind, 4> kMaskable = {ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI,
                                                          ModalityKind::WSI};
inline constexpr std::array<ModalityKind, 5> kAllModalities = {ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI,
                                                               ModalityKind::WSI, ModalityKind::CLINICAL};

inline bool is_maskable(ModalityKind k) { return k != ModalityKind::CLINICAL; }

inline std::string_view modality_name(ModalityKind k) {
  switch (k) {
    case ModalityKind::RNA: return "rna";
    case ModalityKind::DNAM: return "dnam";
    case ModalityKind::MRI: return "mri";
    case ModalityKind::WSI: return "wsi";
    case ModalityKind::CLINICAL: return "clinical";
  }
  return "?";
}

inline ModalityKind parse_modality(std::string_view s) {
  for (auto k : kAllModalities)
    if (modality_name(k) == s) return k;
  if (s == "dna") return ModalityKind::DNAM;
  if (s == "cln") return ModalityKind::CLINICAL;
  throw Error("unknown modality '" + std::string(s) + "'");
}

/// Tokenization geometry and encoder size for one modality.
///
/// raw_shape is [N] for RNA/DNAM, [D, H, W] for MRI and [H, W, C] for a WSI
/// tile. patch_size is [P], [p, p, p] or [p, p] respectively. The MRI
/// tokenizer is two stacked stride-`stage_kernel` volumetric projections, so
/// its patch edge must equal stage_kernel squared.
struct ModalitySpec {
  ModalityKind kind = ModalityKind::RNA;
  std::vector<std::size_t> raw_shape;
  std::vector<std::size_t> patch_size;
  std::size_t embed_dim = 256;
  std::size_t num_layers = 6;
  std::size_t num_heads = 8;
  std::size_t stage_kernel = 4;
  std::size_t stage_channels = 32;

  std::size_t raw_size() const { return NdArray::element_count(raw_shape); }

  std::size_t channels() const { return kind == ModalityKind::WSI ? raw_shape.at(2) : 1; }

  /// Tail-padded length for 1D modalities; raw size otherwise.
  std::size_t padded_size() const {
    if (kind == ModalityKind::RNA || kind == ModalityKind::DNAM) {
      const std::size_t p = patch_size.at(0);
      return (raw_shape.at(0) + p - 1) / p * p;
    }
    return raw_size();
  }

  std::size_t num_patches() const {
    switch (kind) {
      case ModalityKind::RNA:
      case ModalityKind::DNAM: return padded_size() / patch_size.at(0);
      case ModalityKind::MRI:
        return (raw_shape[0] / patch_size[0]) * (raw_shape[1] / patch_size[1]) * (raw_shape[2] / patch_size[2]);
      case ModalityKind::WSI: return (raw_shape[0] / patch_size[0]) * (raw_shape[1] / patch_size[1]);
      case ModalityKind::CLINICAL: break;
    }
    throw Error("clinical features are not patched");
  }

  /// Elements per patch.
  std::size_t patch_volume() const {
    switch (kind) {
      case ModalityKind::RNA:
      case ModalityKind::DNAM: return patch_size.at(0);
      case ModalityKind::MRI: return patch_size[0] * patch_size[1] * patch_size[2];
      case ModalityKind::WSI: return patch_size[0] * patch_size[1] * channels();
      case ModalityKind::CLINICAL: break;
    }
    throw Error("clinical features are not patched");
  }

  void validate() const {
    const std::string name(modality_name(kind));
    if (!is_maskable(kind)) throw Error("no ModalitySpec for clinical features");
    const std::size_t dims = (kind == ModalityKind::RNA || kind == ModalityKind::DNAM) ? 1 : 3;
    const std::size_t pdims = (kind == ModalityKind::WSI) ? 2 : dims;
    if (raw_shape.size() != dims) throw Error(name + ": raw_shape must have " + std::to_string(dims) + " dims");
    if (patch_size.size() != pdims) throw Error(name + ": patch_size must have " + std::to_string(pdims) + " dims");
    for (std::size_t i = 0; i < pdims; ++i) {
      if (patch_size[i] == 0) throw Error(name + ": patch_size must be positive");
      const std::size_t extent = (dims == 1) ? padded_size() : raw_shape[i];
      if (patch_size[i] > extent) throw Error(name + ": patch larger than input");
      if (dims != 1 && raw_shape[i] % patch_size[i] != 0)
        throw Error(name + ": raw_shape " + shape_string(raw_shape) + " not divisible by patch size");
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0)
      throw Error(name + ": num_heads must divide embed_dim");
    if (kind == ModalityKind::MRI) {
      for (auto p : patch_size)
        if (p != stage_kernel * stage_kernel) throw Error("mri: patch edge must equal stage_kernel squared");
      if (stage_channels == 0) throw Error("mri: stage_channels must be positive");
    }
  }
};

/// Whole-model geometry: per-modality encoders, shared decoder and survival head.
struct ModelConfig {
  std::map<ModalityKind, ModalitySpec> specs;
  std::size_t decoder_layers = 3;
  std::size_t decoder_heads = 8;
  std::size_t fusion_dim = 256;
  std::size_t fusion_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t time_bins = 20;
  std::size_t finetune_tiles = 10;

  std::size_t embed_dim() const { return specs.begin()->second.embed_dim; }

  const ModalitySpec& spec(ModalityKind k) const {
    auto it = specs.find(k);
    if (it == specs.end()) throw Error("model has no '" + std::string(modality_name(k)) + "' modality");
    return it->second;
  }

  void validate() const {
    if (specs.empty()) throw Error("model config has no modalities");
    for (const auto& [k, s] : specs) {
      if (s.kind != k) throw Error("model config: spec keyed under the wrong modality");
      s.validate();
      if (s.embed_dim != embed_dim()) throw Error("all modalities must share embed_dim");
    }
    if (embed_dim() % decoder_heads != 0) throw Error("decoder_heads must divide embed_dim");
    if (fusion_dim % fusion_heads != 0) throw Error("fusion_heads must divide fusion_dim");
    if (time_bins == 0) throw Error("time_bins must be positive");
  }

  /// Canonical text form, hashed into checkpoints.
  std::string describe() const {
    std::string s;
    for (const auto& [k, sp] : specs) {
      s += std::string(modality_name(k)) + ":" + shape_string(sp.raw_shape) + "/" + shape_string(sp.patch_size) +
           ",d" + std::to_string(sp.embed_dim) + ",L" + std::to_string(sp.num_layers) + ",H" +
           std::to_string(sp.num_heads) + ",k" + std::to_string(sp.stage_kernel) + ",c" +
           std::to_string(sp.stage_channels) + ";";
    }
    s += "dec" + std::to_string(decoder_layers) + "x" + std::to_string(decoder_heads) + ";fus" +
         std::to_string(fusion_dim) + "x" + std::to_string(fusion_heads) + ";mlp" + std::to_string(mlp_ratio) + ";T" +
         std::to_string(time_bins);
    return s;
  }
  std::uint64_t hash() const { return fnv1a(describe()); }
};

inline ModalitySpec make_spec(ModalityKind kind, std::vector<std::size_t> raw, std::vector<std::size_t> patch,
                              std::size_t d, std::size_t layers, std::size_t heads) {
  ModalitySpec s;
  s.kind = kind;
  s.raw_shape = std::move(raw);
  s.patch_size = std::move(patch);
  s.embed_dim = d;
  s.num_layers = layers;
  s.num_heads = heads;
  return s;
}

/// Full-size geometry: 16,304 genes, 25,978 CpG sites, 64^3 MRI crops, 256x256 RGB tiles.
inline ModelConfig full_profile() {
  ModelConfig c;
  c.specs[ModalityKind::RNA] = make_spec(ModalityKind::RNA, {16304}, {512}, 256, 6, 8);
  c.specs[ModalityKind::DNAM] = make_spec(ModalityKind::DNAM, {25978}, {1024}, 256, 6, 8);
  c.specs[ModalityKind::MRI] = make_spec(ModalityKind::MRI, {64, 64, 64}, {16, 16, 16}, 256, 4, 8);
  c.specs[ModalityKind::WSI] = make_spec(ModalityKind::WSI, {256, 256, 3}, {16, 16}, 256, 4, 4);
  c.decoder_heads = 8;
  return c;
}

/// Small geometry that trains in minutes on one CPU core.
inline ModelConfig desk_profile() {
  ModelConfig c;
  c.specs[ModalityKind::RNA] = make_spec(ModalityKind::RNA, {2048}, {512}, 32, 6, 4);
  c.specs[ModalityKind::DNAM] = make_spec(ModalityKind::DNAM, {4096}, {1024}, 32, 6, 4);
  c.specs[ModalityKind::MRI] = make_spec(ModalityKind::MRI, {32, 32, 32}, {16, 16, 16}, 32, 4, 4);
  c.specs[ModalityKind::WSI] = make_spec(ModalityKind::WSI, {64, 64, 3}, {16, 16}, 32, 4, 4);
  c.specs[ModalityKind::MRI].stage_channels = 8;
  c.decoder_heads = 4;
  c.fusion_dim = 64;
  c.fusion_heads = 4;
  return c;
}

/// Tiny geometry for finite-difference gradient checks (d = 8).
inline ModelConfig micro_profile() {
  ModelConfig c;
  c.specs[ModalityKind::RNA] = make_spec(ModalityKind::RNA, {12}, {4}, 8, 2, 2);
  c.specs[ModalityKind::DNAM] = make_spec(ModalityKind::DNAM, {10}, {4}, 8, 2, 2);
  c.specs[ModalityKind::MRI] = make_spec(ModalityKind::MRI, {8, 4, 4}, {4, 4, 4}, 8, 2, 2);
  c.specs[ModalityKind::WSI] = make_spec(ModalityKind::WSI, {8, 8, 1}, {4, 4}, 8, 2, 2);
  c.specs[ModalityKind::MRI].stage_kernel = 2;
  c.specs[ModalityKind::MRI].stage_channels = 3;
  c.decoder_layers = 2;
  c.decoder_heads = 2;
  c.fusion_dim = 8;
  c.fusion_heads = 2;
  c.time_bins = 5;
  c.finetune_tiles = 2;
  return c;
}

inline ModelConfig profile_by_name(const std::string& name) {
  if (name == "full") return full_profile();
  if (name == "desk") return desk_profile();
  if (name == "micro") return micro_profile();
  throw Error("unknown profile '" + name + "' (expected full, desk or micro)");
}

}  // namespace imputmae
