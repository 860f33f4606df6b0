#pragma once

// Named parameter arrays with a frozen bitmap, plus the binary checkpoint format.
//
// Checkpoint layout (little-endian):
//   "IMPUTMAE" | u32 version | u64 config hash | u64 seed | str config text
//   | u64 entry count | entries | u64 FNV-1a checksum of all preceding bytes
// entry: str name | u64 rows | u64 cols | u8 frozen | rows*cols f64, row-major
// str:   u32 byte length | bytes

#include "imputmae/autograd.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <bit>
#include <cstring>
#include <type_traits>

namespace imputmae {

class ParamStore {
 public:
  struct Entry {
    Mat value;
    bool frozen = false;
  };

  void add(const std::string& name, Mat value, bool frozen = false) {
    if (!entries_.emplace(name, Entry{std::move(value), frozen}).second) throw Error("duplicate parameter " + name);
  }
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const Mat& get(const std::string& name) const { return entry(name).value; }
  Mat& get_mut(const std::string& name) { return entry(name).value; }
  bool frozen(const std::string& name) const { return entry(name).frozen; }
  void set_frozen(const std::string& name, bool f) { entry(name).frozen = f; }

  /// Sets the frozen flag of every key starting with prefix; returns how many matched.
  std::size_t set_frozen_prefix(const std::string& prefix, bool f) {
    std::size_t n = 0;
    for (auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0) {
        e.frozen = f;
        ++n;
      }
    return n;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  ag::Var bind(ag::Tape& tape, const std::string& name) const {
    const Entry& e = entry(name);
    return tape.bind(name, e.value, !e.frozen);
  }

  /// Copies every entry of `other` whose name exists here (shapes must agree).
  void load_from(const ParamStore& other) {
    for (const auto& [name, e] : other.entries_) {
      auto it = entries_.find(name);
      if (it == entries_.end()) continue;
      if (it->second.value.rows() != e.value.rows() || it->second.value.cols() != e.value.cols())
        throw Error("parameter " + name + ": shape mismatch with checkpoint");
      it->second.value = e.value;
    }
  }

  bool operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (const auto& [name, e] : entries_) {
      auto it = o.entries_.find(name);
      if (it == o.entries_.end() || it->second.frozen != e.frozen) return false;
      if (it->second.value.rows() != e.value.rows() || it->second.value.cols() != e.value.cols()) return false;
      if (std::memcmp(it->second.value.data(), e.value.data(), sizeof(Scalar) * static_cast<std::size_t>(e.value.size())))
        return false;
    }
    return true;
  }

 private:
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter " + name);
    return it->second;
  }
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

namespace init {
inline Mat xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const Scalar a = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = a * (2.0 * uniform01(rng) - 1.0);
  return m;
}
inline Mat normal(Eigen::Index rows, Eigen::Index cols, Scalar sd, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * normal01(rng);
  return m;
}
inline Mat zeros(Eigen::Index rows, Eigen::Index cols) { return Mat::Zero(rows, cols); }
inline Mat ones(Eigen::Index rows, Eigen::Index cols) { return Mat::Ones(rows, cols); }
}  // namespace init

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'I', 'M', 'P', 'U', 'T', 'M', 'A', 'E'};

struct Checkpoint {
  ParamStore params;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string config_text;
};

namespace detail {
class ByteWriter {
 public:
  template <class T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b, std::size_t end) : buf_(b), end_(end) {}
  template <class T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + at_, n);
    at_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + at_, n);
    at_ += n;
  }
  std::size_t position() const { return at_; }

 private:
  void need(std::size_t n) const {
    if (at_ + n > end_) throw Error("corrupt checkpoint: unexpected end of data");
  }
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t at_ = 0;
};
}  // namespace detail

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  w.pod(ck.config_hash);
  w.pod(ck.seed);
  w.str(ck.config_text);
  w.pod(static_cast<std::uint64_t>(ck.params.entries().size()));
  for (const auto& [name, e] : ck.params.entries()) {
    w.str(name);
    w.pod(static_cast<std::uint64_t>(e.value.rows()));
    w.pod(static_cast<std::uint64_t>(e.value.cols()));
    w.pod(static_cast<std::uint8_t>(e.frozen ? 1 : 0));
    w.raw(e.value.data(), sizeof(Scalar) * static_cast<std::size_t>(e.value.size()));
  }
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod(sum);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kCheckpointMagic + 4 + 8) throw Error("corrupt checkpoint: file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw Error("not a checkpoint file: " + path.string());
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);

  detail::ByteReader r(bytes, body);
  char magic[8];
  r.raw(magic, sizeof magic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");
  if (fnv1a(bytes.data(), body) != stored) throw Error("corrupt checkpoint: checksum mismatch");
  Checkpoint ck;
  ck.config_hash = r.pod<std::uint64_t>();
  ck.seed = r.pod<std::uint64_t>();
  ck.config_text = r.str();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rows = r.pod<std::uint64_t>();
    const auto cols = r.pod<std::uint64_t>();
    const bool frozen = r.pod<std::uint8_t>() != 0;
    if (rows * cols > body) throw Error("corrupt checkpoint: implausible shape for " + name);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.raw(m.data(), sizeof(Scalar) * rows * cols);
    ck.params.add(name, std::move(m), frozen);
  }
  if (r.position() != body) throw Error("corrupt checkpoint: trailing bytes");
  return ck;
}

/// Every key of `expected` must exist in `loaded` with the same shape.
inline void check_compatible(const ParamStore& expected, const ParamStore& loaded) {
  for (const auto& [name, e] : expected.entries()) {
    if (!loaded.has(name)) throw Error("checkpoint mismatch: missing parameter " + name);
    const Mat& m = loaded.get(name);
    if (m.rows() != e.value.rows() || m.cols() != e.value.cols())
      throw Error("checkpoint mismatch: parameter " + name + " has shape " + std::to_string(m.rows()) + "x" +
                  std::to_string(m.cols()) + ", model expects " + std::to_string(e.value.rows()) + "x" +
                  std::to_string(e.value.cols()));
  }
}

}  // namespace imputmae
