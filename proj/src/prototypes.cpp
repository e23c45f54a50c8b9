#include "dedupkit/prototypes.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "dedupkit/error.hpp"
#include "dedupkit/linalg.hpp"
#include "dedupkit/parallel.hpp"

namespace dedupkit {

namespace {

std::size_t count_placeholders(const std::string& s) {
  std::size_t count = 0;
  for (auto pos = s.find(kConceptPlaceholder); pos != std::string::npos;
       pos = s.find(kConceptPlaceholder, pos + kConceptPlaceholder.size())) {
    ++count;
  }
  return count;
}

}  // namespace

void ConceptSpec::validate() const {
  if (concepts.empty()) throw ValidationError("concept list is empty");
  if (templates.empty()) throw ValidationError("template list is empty");
  std::unordered_set<std::string> seen;
  for (const auto& c : concepts) {
    if (c.empty()) throw ValidationError("empty concept string");
    if (!seen.insert(c).second) {
      throw ValidationError("duplicate concept '" + c + "'");
    }
  }
  for (const auto& t : templates) {
    if (count_placeholders(t) != 1) {
      throw ValidationError("template '" + t + "' must contain " +
                            std::string(kConceptPlaceholder) + " exactly once");
    }
  }
}

ConceptSpec ConceptSpec::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("concept spec is not valid JSON: ") +
                      e.what());
  }
  if (!j.is_object() || !j.contains("concepts") || !j.contains("templates")) {
    throw ValidationError(
        "concept spec needs \"concepts\" and \"templates\" arrays");
  }
  ConceptSpec spec;
  try {
    spec.concepts = j.at("concepts").get<std::vector<std::string>>();
    spec.templates = j.at("templates").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("concept spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

ConceptSpec ConceptSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open concept spec '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string Caption::id() const {
  return "c" + std::to_string(concept_index) + ":t" +
         std::to_string(template_index);
}

std::vector<Caption> expand_captions(const ConceptSpec& spec) {
  spec.validate();
  std::vector<Caption> out;
  out.reserve(spec.concepts.size() * spec.templates.size());
  for (std::size_t c = 0; c < spec.concepts.size(); ++c) {
    for (std::size_t t = 0; t < spec.templates.size(); ++t) {
      std::string text = spec.templates[t];
      text.replace(text.find(kConceptPlaceholder), kConceptPlaceholder.size(),
                   spec.concepts[c]);
      out.push_back({c, t, std::move(text)});
    }
  }
  return out;
}

ConceptPrototypeSet::ConceptPrototypeSet(std::vector<std::string> names,
                                         EmbeddingMatrix vectors)
    : names_(std::move(names)), vectors_(std::move(vectors)) {
  if (names_.size() != vectors_.rows()) {
    throw ValidationError("prototype names and vectors differ in length");
  }
}

ConceptPrototypeSet ConceptPrototypeSet::from_matrix(EmbeddingMatrix m) {
  auto names = m.ids();
  return ConceptPrototypeSet(std::move(names), std::move(m));
}

ConceptPrototypeSet build_prototypes(const ConceptSpec& spec,
                                     const EmbeddingMatrix& caption_embeddings) {
  spec.validate();
  const std::size_t nc = spec.concepts.size();
  const std::size_t nt = spec.templates.size();
  if (caption_embeddings.rows() != nc * nt) {
    throw ValidationError("expected " + std::to_string(nc * nt) +
                          " caption embeddings, got " +
                          std::to_string(caption_embeddings.rows()));
  }
  const std::size_t d = caption_embeddings.dim();
  std::vector<float> values;
  values.reserve(nc * d);
  std::vector<double> mean(d);
  for (std::size_t c = 0; c < nc; ++c) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t t = 0; t < nt; ++t) {
      auto r = caption_embeddings.row(c * nt + t);
      for (std::size_t k = 0; k < d; ++k) mean[k] += r[k];
    }
    for (double& v : mean) v /= static_cast<double>(nt);
    const double len = norm(std::span<const double>(mean));
    if (len < 1e-8) {
      throw DegenerateConceptError("captions of concept '" + spec.concepts[c] +
                                   "' average to a zero vector");
    }
    for (double v : mean) values.push_back(static_cast<float>(v / len));
  }
  return ConceptPrototypeSet(
      spec.concepts, EmbeddingMatrix(d, std::move(values), spec.concepts));
}

SimilarityMatrix concept_similarities(const EmbeddingMatrix& images,
                                      const ConceptPrototypeSet& protos,
                                      std::size_t workers) {
  if (images.dim() != protos.dim()) {
    throw DimensionError("image dimension " + std::to_string(images.dim()) +
                         " != prototype dimension " +
                         std::to_string(protos.dim()));
  }
  SimilarityMatrix s;
  s.rows = images.rows();
  s.cols = protos.size();
  s.values.resize(s.rows * s.cols);
  parallel_for(s.rows, workers, [&](std::size_t i) {
    for (std::size_t j = 0; j < s.cols; ++j) {
      s.values[i * s.cols + j] = dot(images.row(i), protos.vector(j));
    }
  });
  return s;
}

}  // namespace dedupkit
