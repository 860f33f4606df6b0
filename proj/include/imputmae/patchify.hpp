#pragma once

// Splitting raw modality arrays into non-overlapping patches and back.
// Patch rows are flattened row-major in the original axis order.

#include "imputmae/modality.hpp"

#include <span>

namespace imputmae {

/// Non-overlapping windows of length `patch`; the tail is zero-padded to a multiple of `patch`.
inline Mat patchify_1d(std::span<const Scalar> signal, std::size_t patch) {
  if (patch == 0) throw Error("patchify_1d: patch size must be positive");
  if (signal.empty()) throw Error("patchify_1d: empty signal");
  const std::size_t m = (signal.size() + patch - 1) / patch;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(patch));
  std::copy(signal.begin(), signal.end(), out.data());
  return out;
}

/// Inverse of patchify_1d; drops the padding beyond `length`.
inline std::vector<Scalar> unpatchify_1d(const Mat& patches, std::size_t length) {
  if (static_cast<std::size_t>(patches.size()) < length) throw Error("unpatchify_1d: too few elements");
  return std::vector<Scalar>(patches.data(), patches.data() + length);
}

/// (D/p * H/p * W/p) x p^3, blocks in lexicographic (z, y, x) order.
inline Mat patchify_3d(std::span<const Scalar> volume, std::size_t depth, std::size_t height, std::size_t width,
                       std::size_t patch) {
  if (patch == 0) throw Error("patchify_3d: patch size must be positive");
  if (volume.size() != depth * height * width) throw Error("patchify_3d: volume size does not match shape");
  if (depth % patch || height % patch || width % patch)
    throw Error("patchify_3d: shape " + shape_string({depth, height, width}) + " not divisible by " +
                std::to_string(patch));
  const std::size_t bz = depth / patch, by = height / patch, bx = width / patch;
  Mat out(static_cast<Eigen::Index>(bz * by * bx), static_cast<Eigen::Index>(patch * patch * patch));
  for (std::size_t z = 0; z < depth; ++z)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t row = ((z / patch) * by + y / patch) * bx + x / patch;
        const std::size_t col = ((z % patch) * patch + y % patch) * patch + x % patch;
        out(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) = volume[(z * height + y) * width + x];
      }
  return out;
}

inline std::vector<Scalar> unpatchify_3d(const Mat& patches, std::size_t depth, std::size_t height, std::size_t width,
                                         std::size_t patch) {
  const std::size_t bz = depth / patch, by = height / patch, bx = width / patch;
  if (static_cast<std::size_t>(patches.rows()) != bz * by * bx ||
      static_cast<std::size_t>(patches.cols()) != patch * patch * patch)
    throw Error("unpatchify_3d: patch matrix shape mismatch");
  std::vector<Scalar> out(depth * height * width);
  for (std::size_t z = 0; z < depth; ++z)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t row = ((z / patch) * by + y / patch) * bx + x / patch;
        const std::size_t col = ((z % patch) * patch + y % patch) * patch + x % patch;
        out[(z * height + y) * width + x] = patches(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
      }
  return out;
}

/// Tile stored H x W x C row-major -> (H/p * W/p) x (p * p * C), blocks row-major.
inline Mat patchify_2d(std::span<const Scalar> tile, std::size_t height, std::size_t width, std::size_t channels,
                       std::size_t patch) {
  if (patch == 0) throw Error("patchify_2d: patch size must be positive");
  if (tile.size() != height * width * channels) throw Error("patchify_2d: tile size does not match shape");
  if (height % patch || width % patch)
    throw Error("patchify_2d: tile " + shape_string({height, width}) + " not divisible by " + std::to_string(patch));
  const std::size_t bx = width / patch;
  Mat out(static_cast<Eigen::Index>((height / patch) * bx), static_cast<Eigen::Index>(patch * patch * channels));
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t row = (y / patch) * bx + x / patch;
        const std::size_t col = ((y % patch) * patch + x % patch) * channels + c;
        out(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) = tile[(y * width + x) * channels + c];
      }
  return out;
}

inline std::vector<Scalar> unpatchify_2d(const Mat& patches, std::size_t height, std::size_t width,
                                         std::size_t channels, std::size_t patch) {
  const std::size_t bx = width / patch;
  if (static_cast<std::size_t>(patches.rows()) != (height / patch) * bx ||
      static_cast<std::size_t>(patches.cols()) != patch * patch * channels)
    throw Error("unpatchify_2d: patch matrix shape mismatch");
  std::vector<Scalar> out(height * width * channels);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t row = (y / patch) * bx + x / patch;
        const std::size_t col = ((y % patch) * patch + x % patch) * channels + c;
        out[(y * width + x) * channels + c] = patches(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
      }
  return out;
}

/// Patches one sample (one tile for WSI) according to its modality spec.
inline Mat patchify(const ModalitySpec& spec, std::span<const Scalar> sample) {
  if (sample.size() != spec.raw_size())
    throw Error(std::string(modality_name(spec.kind)) + ": sample has " + std::to_string(sample.size()) +
                " values, expected " + std::to_string(spec.raw_size()));
  const auto& r = spec.raw_shape;
  switch (spec.kind) {
    case ModalityKind::RNA:
    case ModalityKind::DNAM: return patchify_1d(sample, spec.patch_size[0]);
    case ModalityKind::MRI: return patchify_3d(sample, r[0], r[1], r[2], spec.patch_size[0]);
    case ModalityKind::WSI: return patchify_2d(sample, r[0], r[1], r[2], spec.patch_size[0]);
    case ModalityKind::CLINICAL: break;
  }
  throw Error("clinical features are not patched");
}

inline std::vector<Scalar> unpatchify(const ModalitySpec& spec, const Mat& patches) {
  const auto& r = spec.raw_shape;
  switch (spec.kind) {
    case ModalityKind::RNA:
    case ModalityKind::DNAM: return unpatchify_1d(patches, r[0]);
    case ModalityKind::MRI: return unpatchify_3d(patches, r[0], r[1], r[2], spec.patch_size[0]);
    case ModalityKind::WSI: return unpatchify_2d(patches, r[0], r[1], r[2], spec.patch_size[0]);
    case ModalityKind::CLINICAL: break;
  }
  throw Error("clinical features are not patched");
}

/// Flat index map that reorders an MRI patch row (p^3, row-major) into
/// (p/k)^3 sub-blocks of k^3 voxels, one sub-block per row. Used by the
/// stride-k tokenizer stage and its transposed counterpart.
inline std::vector<std::size_t> mri_subblock_order(std::size_t patch, std::size_t kernel) {
  const std::size_t nb = patch / kernel;
  std::vector<std::size_t> order;
  order.reserve(patch * patch * patch);
  for (std::size_t bz = 0; bz < nb; ++bz)
    for (std::size_t by = 0; by < nb; ++by)
      for (std::size_t bx = 0; bx < nb; ++bx)
        for (std::size_t z = 0; z < kernel; ++z)
          for (std::size_t y = 0; y < kernel; ++y)
            for (std::size_t x = 0; x < kernel; ++x)
              order.push_back(((bz * kernel + z) * patch + by * kernel + y) * patch + bx * kernel + x);
  return order;
}

}  // namespace imputmae
