#include "dedupkit/embedstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "dedupkit/error.hpp"
#include "dedupkit/linalg.hpp"

namespace dedupkit {

namespace {

// Rows already within this distance of unit norm are stored untouched, so a
// write/read cycle is the identity on normalized matrices.
constexpr double kUnitSlack = 1e-6;

void normalize_rows(std::size_t d, std::vector<float>& values) {
  const std::size_t n = d == 0 ? 0 : values.size() / d;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<float> row(values.data() + i * d, d);
    for (float v : row) {
      if (!std::isfinite(v)) {
        throw ValidationError("row " + std::to_string(i) +
                              " contains a non-finite value");
      }
    }
    const double len = norm(std::span<const float>(row));
    if (!(len > 0.0)) {
      throw ValidationError("row " + std::to_string(i) +
                            " has zero norm and cannot be normalized");
    }
    if (std::abs(len - 1.0) <= kUnitSlack) continue;
    for (float& v : row) v = static_cast<float>(static_cast<double>(v) / len);
  }
}

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      out_.push_back(static_cast<std::uint8_t>(u & 0xFF));
      if constexpr (sizeof(T) > 1) u >>= 8;
    }
  }

  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }

  void put_bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + len);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void seek(std::size_t pos) {
    if (pos > bytes_.size()) throw FormatError("offset past end of file");
    pos_ = pos;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  template <typename T>
  T get() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      u |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + b]) << (8 * b);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

  std::span<const std::uint8_t> get_bytes(std::size_t len) {
    need(len);
    auto s = bytes_.subspan(pos_, len);
    pos_ += len;
    return s;
  }

 private:
  void need(std::size_t len) const {
    if (remaining() < len) throw FormatError("truncated embedding file");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t d) : d_(d) {
  if (d == 0) throw ValidationError("embedding dimension must be positive");
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t d, std::vector<float> values,
                                 std::vector<std::string> ids)
    : d_(d), values_(std::move(values)), ids_(std::move(ids)) {
  if (d_ == 0) throw ValidationError("embedding dimension must be positive");
  if (values_.size() != ids_.size() * d_) {
    throw ValidationError("value count " + std::to_string(values_.size()) +
                          " does not match " + std::to_string(ids_.size()) +
                          " rows of dimension " + std::to_string(d_));
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(ids_.size());
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) {
      throw ValidationError("duplicate sample id '" + id + "'");
    }
  }
  normalize_rows(d_, values_);
}

EmbeddingMatrix EmbeddingMatrix::with_index_ids(std::size_t d,
                                                std::vector<float> values) {
  const std::size_t n = d == 0 ? 0 : values.size() / d;
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  return EmbeddingMatrix(d, std::move(values), std::move(ids));
}

EmbeddingMatrix subset(const EmbeddingMatrix& m,
                       std::span<const std::size_t> indices) {
  std::vector<float> values;
  values.reserve(indices.size() * m.dim());
  std::vector<std::string> ids;
  ids.reserve(indices.size());
  std::vector<std::size_t> repeats(m.rows(), 0);
  for (std::size_t idx : indices) {
    if (idx >= m.rows()) {
      throw IndexError("row index " + std::to_string(idx) +
                       " out of range for " + std::to_string(m.rows()) +
                       " rows");
    }
    auto r = m.row(idx);
    values.insert(values.end(), r.begin(), r.end());
    const std::size_t k = repeats[idx]++;
    ids.push_back(k == 0 ? m.id(idx) : m.id(idx) + "#" + std::to_string(k));
  }
  if (indices.empty()) return EmbeddingMatrix(m.dim());
  return EmbeddingMatrix(m.dim(), std::move(values), std::move(ids));
}

namespace embedstore {

std::vector<std::uint8_t> encode(const EmbeddingMatrix& m) {
  std::vector<std::uint8_t> out;
  const std::uint64_t n = m.rows();
  const std::uint64_t payload = n * m.dim() * sizeof(float);
  out.reserve(kHeaderBytes + payload + n * 8);
  Writer w(out);
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(n);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.dim()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(DType::f32));
  for (int i = 0; i < 7; ++i) w.put<std::uint8_t>(0);
  w.put<std::uint64_t>(kHeaderBytes + payload);
  for (float v : m.values()) w.put_f32(v);
  for (const auto& id : m.ids()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(id.size()));
    w.put_bytes(id.data(), id.size());
  }
  return out;
}

FileHeader decode_header(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.get_bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("bad magic: not an embedding file");
  }
  FileHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != kVersion) {
    throw FormatError("unsupported embedding file version " +
                      std::to_string(h.version));
  }
  h.n = r.get<std::uint64_t>();
  h.d = r.get<std::uint32_t>();
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != static_cast<std::uint8_t>(DType::f32)) {
    throw FormatError("unsupported dtype code " + std::to_string(dtype));
  }
  h.dtype = DType::f32;
  r.get_bytes(7);
  h.id_table_offset = r.get<std::uint64_t>();
  if (h.d == 0) throw FormatError("embedding dimension is zero");
  return h;
}

EmbeddingMatrix decode(std::span<const std::uint8_t> bytes) {
  const FileHeader h = decode_header(bytes);
  const std::uint64_t payload = h.n * h.d * sizeof(float);
  if (h.n != 0 && payload / h.n / sizeof(float) != h.d) {
    throw FormatError("declared payload size overflows");
  }
  if (bytes.size() < kHeaderBytes + payload) {
    throw FormatError("truncated payload: declared " + std::to_string(h.n) +
                      "x" + std::to_string(h.d) + " floats");
  }
  if (h.id_table_offset < kHeaderBytes + payload) {
    throw FormatError("id table overlaps payload");
  }
  Reader r(bytes);
  r.seek(kHeaderBytes);
  std::vector<float> values(static_cast<std::size_t>(h.n * h.d));
  for (float& v : values) v = r.get_f32();
  r.seek(static_cast<std::size_t>(h.id_table_offset));
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(h.n));
  for (std::uint64_t i = 0; i < h.n; ++i) {
    const auto len = r.get<std::uint32_t>();
    auto raw = r.get_bytes(len);
    ids.emplace_back(reinterpret_cast<const char*>(raw.data()), raw.size());
  }
  return EmbeddingMatrix(h.d, std::move(values), std::move(ids));
}

void write_embeddings(const EmbeddingMatrix& m,
                      const std::filesystem::path& path) {
  for (float v : m.values()) {
    if (!std::isfinite(v)) throw ValidationError("non-finite value in matrix");
  }
  const auto bytes = encode(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace embedstore
}  // namespace dedupkit
