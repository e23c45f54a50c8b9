#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dedupkit {

/// Row-major n x d matrix of unit-norm float embeddings with stable ids.
///
/// Construction validates and L2-normalizes: every row of a live
/// EmbeddingMatrix has norm 1 +- 1e-4, ids are unique and all values are
/// finite. A row with zero norm cannot be normalized and is rejected.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  // Empty matrix of dimension d.
  explicit EmbeddingMatrix(std::size_t d);

  // Takes ownership of `values` (n*d floats) and `ids` (n entries).
  // Throws ValidationError on non-finite values, zero-norm rows, d == 0,
  // size mismatch or duplicate ids.
  EmbeddingMatrix(std::size_t d, std::vector<float> values,
                  std::vector<std::string> ids);

  // As above with ids "0", "1", ...
  static EmbeddingMatrix with_index_ids(std::size_t d,
                                        std::vector<float> values);

  std::size_t rows() const { return ids_.size(); }
  std::size_t dim() const { return d_; }
  bool empty() const { return ids_.empty(); }

  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * d_, d_};
  }
  std::span<const float> values() const { return values_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }

  friend bool operator==(const EmbeddingMatrix&,
                         const EmbeddingMatrix&) = default;

 private:
  std::size_t d_ = 0;
  std::vector<float> values_;
  std::vector<std::string> ids_;
};

namespace embedstore {

inline constexpr char kMagic[8] = {'F', 'D', 'D', 'E', 'M', 'B', '0', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 40;

enum class DType : std::uint8_t { f32 = 0 };

struct FileHeader {
  std::uint32_t version = kVersion;
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  DType dtype = DType::f32;
  std::uint64_t id_table_offset = 0;
};

// Serialized bytes of `m`: header | payload f32 LE | id table.
std::vector<std::uint8_t> encode(const EmbeddingMatrix& m);

// Parses and validates a serialized file image. Throws FormatError on a bad
// header or truncated payload, ValidationError on zero-norm or non-finite
// rows.
EmbeddingMatrix decode(std::span<const std::uint8_t> bytes);

FileHeader decode_header(std::span<const std::uint8_t> bytes);

void write_embeddings(const EmbeddingMatrix& m,
                      const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

}  // namespace embedstore

// Gathers rows (and ids) in the given order. Repeated indices duplicate the
// row; the resulting ids get a "#k" suffix on repeats to stay unique.
EmbeddingMatrix subset(const EmbeddingMatrix& m,
                       std::span<const std::size_t> indices);

}  // namespace dedupkit
