#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dedupkit/embedstore.hpp"

namespace dedupkit {

inline constexpr std::string_view kConceptPlaceholder = "{concept}";

// Sensitive concepts plus caption templates. Each template holds the
// placeholder exactly once; concepts are non-empty and unique.
struct ConceptSpec {
  std::vector<std::string> concepts;
  std::vector<std::string> templates;

  void validate() const;
  static ConceptSpec from_json_file(const std::filesystem::path& path);
  static ConceptSpec from_json_text(const std::string& text);
};

struct Caption {
  std::size_t concept_index;
  std::size_t template_index;
  std::string text;

  // Embedding-file id of this caption, "c{concept}:t{template}".
  std::string id() const;
};

// Concept-major enumeration: (c0,t0), (c0,t1), ..., (c1,t0), ...
std::vector<Caption> expand_captions(const ConceptSpec& spec);

// m named unit-norm prototype vectors; row order follows the ConceptSpec.
class ConceptPrototypeSet {
 public:
  ConceptPrototypeSet() = default;
  ConceptPrototypeSet(std::vector<std::string> names, EmbeddingMatrix vectors);

  std::size_t size() const { return names_.size(); }
  std::size_t dim() const { return vectors_.dim(); }
  const std::vector<std::string>& names() const { return names_; }
  const EmbeddingMatrix& vectors() const { return vectors_; }
  std::span<const float> vector(std::size_t i) const {
    return vectors_.row(i);
  }

  // Stored as an embedding file whose ids are the concept names.
  static ConceptPrototypeSet from_matrix(EmbeddingMatrix m);

 private:
  std::vector<std::string> names_;
  EmbeddingMatrix vectors_;
};

// Averages each concept's template embeddings and renormalizes. Rows of
// `caption_embeddings` must follow expand_captions order.
// Throws DegenerateConceptError if a mean has norm < 1e-8.
ConceptPrototypeSet build_prototypes(const ConceptSpec& spec,
                                     const EmbeddingMatrix& caption_embeddings);

// Dense n x m similarity matrix, row-major.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
};

// Image-concept alignment: entry (i, j) is the cosine similarity between
// image i and prototype j. Throws DimensionError on mismatched d.
SimilarityMatrix concept_similarities(const EmbeddingMatrix& images,
                                      const ConceptPrototypeSet& protos,
                                      std::size_t workers = 1);

}  // namespace dedupkit
