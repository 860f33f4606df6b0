#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace imputmae {

using Scalar = double;
// Row-major so that reshapes and row gathers act on contiguous memory.
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense n-dimensional array, row-major.
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<Scalar> data;

  NdArray() = default;
  NdArray(std::vector<std::size_t> s, Scalar fill = 0.0)
      : shape(std::move(s)), data(element_count(shape), fill) {}
  NdArray(std::vector<std::size_t> s, std::vector<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape)) throw Error("NdArray: data size does not match shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  bool all_finite() const {
    for (Scalar v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
  bool operator==(const NdArray&) const = default;
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

using Rng = std::mt19937_64;

/// Derives an independent stream from a master seed and a list of tags
/// (epoch, sample index, purpose) so results do not depend on call order.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline Scalar uniform01(Rng& rng) {
  // 53 random bits; avoids implementation-defined distribution objects.
  return static_cast<Scalar>(rng() >> 11) * 0x1.0p-53;
}

inline Scalar normal01(Rng& rng) {
  // Box-Muller, single draw.
  Scalar u1 = uniform01(rng);
  Scalar u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<Scalar>(n)) % n;
}

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 14695981039346656037ULL) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace imputmae
