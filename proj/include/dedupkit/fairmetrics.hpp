#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dedupkit/embedstore.hpp"
#include "dedupkit/labels.hpp"

namespace dedupkit {

// Additive smoothing applied to every attribute-value proportion of both the
// observed and the desired distribution before renormalizing.
inline constexpr double kDefaultSmoothing = 1e-6;

// ---------------------------------------------------------------------------
// Zero-shot classification disparity

// Fraction of records with true class `cls` and label `value` whose
// prediction is `cls`. Throws InsufficientSupportError with no such records.
double subgroup_recall(const LabeledTable& table, const std::string& cls,
                       const std::string& attribute, const std::string& value);

struct ClassDisparity {
  std::string cls;
  std::size_t support_l1 = 0;
  std::size_t support_l2 = 0;
  // recall(l1) - recall(l2); empty when the class was excluded.
  std::optional<double> value;
  std::string excluded_reason;
};

// Signed recall gap between two subgroups for one class. Classes where
// either subgroup has fewer than `min_support` records come back excluded.
ClassDisparity disparity(const LabeledTable& table, const std::string& cls,
                         const std::string& attribute, const std::string& l1,
                         const std::string& l2, std::size_t min_support = 25);

struct DisparityAggregate {
  double mean = 0.0;  // mean |d|
  double max = 0.0;   // max |d|
  double gap = 0.0;   // max - mean
};

// Throws EmptyReportError on an empty input.
DisparityAggregate aggregate_disparities(std::span<const double> signed_values);

struct DisparityReport {
  std::string attribute;
  std::string l1;
  std::string l2;
  std::size_t min_support = 25;
  std::vector<ClassDisparity> included;
  std::vector<ClassDisparity> excluded;
  DisparityAggregate summary;
};

DisparityReport disparity_report(const LabeledTable& table,
                                 const std::string& attribute,
                                 const std::string& l1, const std::string& l2,
                                 std::size_t min_support = 25);

nlohmann::ordered_json to_json(const DisparityReport& report);

// ---------------------------------------------------------------------------
// Ranked retrieval skew

struct RankedRetrieval {
  std::string query;
  std::vector<std::string> ranking;  // descending score
  std::size_t k = 0;

  void validate() const;
};

struct DesiredDistribution {
  std::string attribute;
  std::vector<std::string> values;  // sorted
  std::vector<double> proportions;

  void validate() const;
  // Index of `value`; throws VocabularyError when absent.
  std::size_t index_of(const std::string& value) const;

  // Empirical distribution of `attribute` over the first record of every
  // distinct id in `corpus`.
  static DesiredDistribution from_corpus(const LabeledTable& corpus,
                                         const std::string& attribute);
  static DesiredDistribution from_json_text(const std::string& text);
  static DesiredDistribution from_json_file(const std::filesystem::path& path);
};

// (p + delta) / (1 + delta * |A|) per value.
std::vector<double> smooth(std::span<const double> proportions, double delta);

// Value index (per `desired.values`) of each ranked id's attribute label,
// for the whole ranking. Throws VocabularyError on unknown ids or labels.
std::vector<std::size_t> attribute_sequence(const RankedRetrieval& retrieval,
                                            const LabeledTable& labels,
                                            const DesiredDistribution& desired);

// Smoothed attribute distribution of the first `depth` entries of `seq`.
std::vector<double> prefix_distribution(std::span<const std::size_t> seq,
                                        std::size_t depth,
                                        std::size_t value_count, double delta);

double skew(const RankedRetrieval& retrieval, const LabeledTable& labels,
            const DesiredDistribution& desired, const std::string& value,
            double delta = kDefaultSmoothing);

struct SkewExtremes {
  double max_skew = 0.0;
  double min_skew = 0.0;  // signed
  double min_skew_abs = 0.0;
};

SkewExtremes max_min_skew(const RankedRetrieval& retrieval,
                          const LabeledTable& labels,
                          const DesiredDistribution& desired,
                          double delta = kDefaultSmoothing);

// Normalized discounted cumulative KL divergence over prefix depths 1..k.
double ndkl(const RankedRetrieval& retrieval, const LabeledTable& labels,
            const DesiredDistribution& desired,
            double delta = kDefaultSmoothing);

// Sequence-level forms of the metrics above.
SkewExtremes max_min_skew_of(std::span<const std::size_t> seq, std::size_t k,
                             std::span<const double> desired, double delta);
double ndkl_of(std::span<const std::size_t> seq, std::size_t k,
               std::span<const double> desired, double delta);

struct QueryMetrics {
  std::string query;
  double max_skew = 0.0;
  double min_skew = 0.0;
  double ndkl = 0.0;
};

struct AttributeAudit {
  std::string attribute;
  std::size_t k = 0;
  double mean_max_skew = 0.0;
  double mean_abs_min_skew = 0.0;
  double mean_ndkl = 0.0;
  std::vector<QueryMetrics> queries;
};

struct RetrievalAuditConfig {
  std::size_t k = 1000;
  double delta = kDefaultSmoothing;
  // Attributes to audit; empty means every attribute of the label table.
  std::vector<std::string> attributes;
  // Overrides of the corpus distribution, per attribute.
  std::vector<DesiredDistribution> desired;
  std::size_t workers = 1;
};

// Ranks `images` by cosine similarity to `caption_embs` row i for query i
// (ties by ascending id), then averages MaxSkew, |MinSkew| and NDKL over
// queries for each attribute.
std::vector<AttributeAudit> audit_retrievals(
    const std::vector<std::string>& queries, const EmbeddingMatrix& images,
    const EmbeddingMatrix& caption_embs, const LabeledTable& labels,
    const RetrievalAuditConfig& cfg);

// Image ids ordered by descending similarity to `query`, ties by id.
std::vector<std::string> rank_images(const EmbeddingMatrix& images,
                                     std::span<const float> query);

nlohmann::ordered_json to_json(const AttributeAudit& audit,
                               bool include_queries = false);

}  // namespace dedupkit
