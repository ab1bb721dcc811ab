#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "t2d/common.hpp"

namespace t2d {

// Binary envelope shared by every checkpoint:
//
//   magic "T2DCKPT\0" | u32 version | u32 kind | u32 users | u32 items | u32 dim
//   | u64 seed | u64 config_hash | str stage | u32 n_sections
//   | n_sections x (str name | u32 type | u64 rows | u64 cols | payload)
//   | u64 fnv1a of all preceding bytes
//
// Integers and floats are little-endian; str is u32 length + bytes; matrix
// payloads are row-major float32.
enum class ArtifactKind : std::uint32_t {
  kBehavior = 1,
  kEncoder = 2,
  kVocabulary = 3,
  kRecEmbeddings = 4,
};

inline const char* kind_name(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::kBehavior: return "behavior embeddings";
    case ArtifactKind::kEncoder: return "encoder";
    case ArtifactKind::kVocabulary: return "user vocabulary";
    case ArtifactKind::kRecEmbeddings: return "recommendation embeddings";
  }
  return "unknown";
}

struct Section {
  enum Type : std::uint32_t { kFloat32 = 0, kBytes = 1 };
  std::string name;
  Type type = kFloat32;
  std::uint64_t rows = 0, cols = 0;
  std::vector<float> floats;
  std::string bytes;

  Matrix matrix() const {
    if (type != kFloat32) throw IntegrityError("section " + name + " is not a matrix");
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < floats.size(); ++k) m.data()[k] = floats[k];
    return m;
  }
};

struct Envelope {
  static constexpr std::string_view kMagic{"T2DCKPT\0", 8};
  static constexpr std::uint32_t kVersion = 1;

  ArtifactKind kind = ArtifactKind::kBehavior;
  std::uint32_t users = 0, items = 0, dim = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string stage;
  std::vector<Section> sections;

  void add_matrix(std::string name, const Matrix& m) {
    Section s;
    s.name = std::move(name);
    s.type = Section::kFloat32;
    s.rows = m.rows();
    s.cols = m.cols();
    s.floats.resize(m.size());
    for (Eigen::Index k = 0; k < m.size(); ++k) s.floats[k] = static_cast<float>(m.data()[k]);
    sections.push_back(std::move(s));
  }
  void add_bytes(std::string name, std::string bytes) {
    Section s;
    s.name = std::move(name);
    s.type = Section::kBytes;
    s.rows = bytes.size();
    s.cols = 1;
    s.bytes = std::move(bytes);
    sections.push_back(std::move(s));
  }
  bool has(std::string_view name) const {
    for (const auto& s : sections) {
      if (s.name == name) return true;
    }
    return false;
  }
  const Section& section(std::string_view name) const {
    for (const auto& s : sections) {
      if (s.name == name) return s;
    }
    throw IntegrityError("missing section " + std::string(name));
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), sizeof(T));
  } else {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
  }
}

inline void put_str(std::string& out, std::string_view s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    if constexpr (std::endian::native == std::endian::big) {
      std::array<char, sizeof(T)> bytes;
      std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    } else {
      std::memcpy(&v, data_.data() + pos_, sizeof(T));
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(take(get<std::uint32_t>())); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IntegrityError("checkpoint is truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Envelope& env) {
  std::string out(Envelope::kMagic);
  detail::put_le(out, Envelope::kVersion);
  detail::put_le(out, static_cast<std::uint32_t>(env.kind));
  detail::put_le(out, env.users);
  detail::put_le(out, env.items);
  detail::put_le(out, env.dim);
  detail::put_le(out, env.seed);
  detail::put_le(out, env.config_hash);
  detail::put_str(out, env.stage);
  detail::put_le(out, static_cast<std::uint32_t>(env.sections.size()));
  for (const auto& s : env.sections) {
    detail::put_str(out, s.name);
    detail::put_le(out, static_cast<std::uint32_t>(s.type));
    detail::put_le(out, s.rows);
    detail::put_le(out, s.cols);
    if (s.type == Section::kFloat32) {
      for (float f : s.floats) detail::put_le(out, f);
    } else {
      out.append(s.bytes);
    }
  }
  detail::put_le(out, fnv1a(out));
  return out;
}

inline Envelope parse_envelope(std::string_view data) {
  if (data.size() < Envelope::kMagic.size() || data.substr(0, 8) != Envelope::kMagic) {
    throw IntegrityError("unrecognized magic; not a checkpoint");
  }
  if (data.size() < 16) throw IntegrityError("checkpoint is truncated");
  detail::Reader r(data);
  r.take(8);
  const auto version = r.get<std::uint32_t>();
  if (version != Envelope::kVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  }
  Envelope env;
  const auto kind = r.get<std::uint32_t>();
  if (kind < 1 || kind > 4) throw IntegrityError("unknown artifact kind " + std::to_string(kind));
  env.kind = static_cast<ArtifactKind>(kind);
  env.users = r.get<std::uint32_t>();
  env.items = r.get<std::uint32_t>();
  env.dim = r.get<std::uint32_t>();
  env.seed = r.get<std::uint64_t>();
  env.config_hash = r.get<std::uint64_t>();
  env.stage = r.str();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < n; ++k) {
    Section s;
    s.name = r.str();
    const auto type = r.get<std::uint32_t>();
    if (type > 1) throw IntegrityError("bad section type in " + s.name);
    s.type = static_cast<Section::Type>(type);
    s.rows = r.get<std::uint64_t>();
    s.cols = r.get<std::uint64_t>();
    if (s.type == Section::kFloat32) {
      const auto count = s.rows * s.cols;
      if (count > (data.size() - r.pos()) / 4) throw IntegrityError("checkpoint is truncated");
      s.floats.resize(count);
      for (auto& f : s.floats) f = r.get<float>();
    } else {
      s.bytes = std::string(r.take(s.rows));
    }
    env.sections.push_back(std::move(s));
  }
  const auto body_end = r.pos();
  const auto stored = r.get<std::uint64_t>();
  if (stored != fnv1a(data.substr(0, body_end))) throw IntegrityError("checksum mismatch");
  if (r.pos() != data.size()) throw IntegrityError("trailing bytes after checkpoint");
  return env;
}

inline void write_envelope(const std::filesystem::path& path, const Envelope& env) {
  atomic_write(path, serialize(env));
}

inline Envelope read_envelope(const std::filesystem::path& path) {
  return parse_envelope(read_file(path));
}

}  // namespace t2d
