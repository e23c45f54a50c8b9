#include "dedupkit/fairmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dedupkit/error.hpp"
#include "dedupkit/linalg.hpp"
#include "dedupkit/parallel.hpp"

namespace dedupkit {

// ---------------------------------------------------------------------------
// Disparity

namespace {

struct RecallCount {
  std::size_t support = 0;
  std::size_t correct = 0;
};

RecallCount count_recall(const LabeledTable& table, const std::string& cls,
                         std::size_t attr, const std::string& value) {
  RecallCount c;
  for (const auto& r : table.records()) {
    if (r.true_class != cls || r.attributes[attr] != value) continue;
    ++c.support;
    if (r.predicted == cls) ++c.correct;
  }
  return c;
}

}  // namespace

double subgroup_recall(const LabeledTable& table, const std::string& cls,
                       const std::string& attribute, const std::string& value) {
  const auto c = count_recall(table, cls, table.attribute_index(attribute), value);
  if (c.support == 0) {
    throw InsufficientSupportError("no records of class '" + cls +
                                   "' with " + attribute + "=" + value);
  }
  return static_cast<double>(c.correct) / static_cast<double>(c.support);
}

ClassDisparity disparity(const LabeledTable& table, const std::string& cls,
                         const std::string& attribute, const std::string& l1,
                         const std::string& l2, std::size_t min_support) {
  const std::size_t a = table.attribute_index(attribute);
  const auto c1 = count_recall(table, cls, a, l1);
  const auto c2 = count_recall(table, cls, a, l2);
  ClassDisparity out;
  out.cls = cls;
  out.support_l1 = c1.support;
  out.support_l2 = c2.support;
  const std::size_t floor = std::max<std::size_t>(1, min_support);
  if (c1.support < floor || c2.support < floor) {
    std::ostringstream reason;
    reason << "support " << c1.support << "/" << c2.support << " below "
           << floor;
    out.excluded_reason = reason.str();
    return out;
  }
  out.value = static_cast<double>(c1.correct) / static_cast<double>(c1.support) -
              static_cast<double>(c2.correct) / static_cast<double>(c2.support);
  return out;
}

DisparityAggregate aggregate_disparities(std::span<const double> signed_values) {
  if (signed_values.empty()) {
    throw EmptyReportError("no classes left to aggregate");
  }
  DisparityAggregate agg;
  double total = 0.0;
  for (double v : signed_values) {
    const double a = std::abs(v);
    total += a;
    agg.max = std::max(agg.max, a);
  }
  agg.mean = total / static_cast<double>(signed_values.size());
  agg.gap = agg.max - agg.mean;
  return agg;
}

DisparityReport disparity_report(const LabeledTable& table,
                                 const std::string& attribute,
                                 const std::string& l1, const std::string& l2,
                                 std::size_t min_support) {
  if (table.empty()) throw EmptyReportError("label table is empty");
  DisparityReport report;
  report.attribute = attribute;
  report.l1 = l1;
  report.l2 = l2;
  report.min_support = min_support;
  std::vector<double> values;
  for (const auto& cls : table.classes()) {
    auto d = disparity(table, cls, attribute, l1, l2, min_support);
    if (d.value) {
      values.push_back(*d.value);
      report.included.push_back(std::move(d));
    } else {
      report.excluded.push_back(std::move(d));
    }
  }
  if (values.empty()) {
    throw EmptyReportError("every class was excluded by min_support=" +
                           std::to_string(min_support));
  }
  report.summary = aggregate_disparities(values);
  return report;
}

nlohmann::ordered_json to_json(const DisparityReport& report) {
  nlohmann::ordered_json j;
  j["attribute"] = report.attribute;
  j["subgroups"] = {report.l1, report.l2};
  j["min_support"] = report.min_support;
  j["Mean"] = report.summary.mean;
  j["Max"] = report.summary.max;
  j["Gap"] = report.summary.gap;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : report.included) {
    classes.push_back({{"class", c.cls},
                       {"disparity", *c.value},
                       {"support", {c.support_l1, c.support_l2}}});
  }
  auto& excluded = j["excluded"] = nlohmann::ordered_json::array();
  for (const auto& c : report.excluded) {
    excluded.push_back({{"class", c.cls}, {"reason", c.excluded_reason}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Skew

void RankedRetrieval::validate() const {
  if (k == 0) throw ConfigError("evaluation depth k must be positive");
  if (k > ranking.size()) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds ranking length " +
                      std::to_string(ranking.size()));
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ranking) {
    if (!seen.insert(id).second) {
      throw ValidationError("ranking repeats id '" + id + "'");
    }
  }
}

void DesiredDistribution::validate() const {
  if (values.size() != proportions.size()) {
    throw ValidationError("desired distribution values/proportions mismatch");
  }
  if (values.empty()) throw ValidationError("desired distribution is empty");
  double total = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ValidationError("negative desired proportion");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("desired proportions of '" + attribute +
                          "' sum to " + std::to_string(total));
  }
}

std::size_t DesiredDistribution::index_of(const std::string& value) const {
  auto it = std::find(values.begin(), values.end(), value);
  if (it == values.end()) {
    throw VocabularyError("value '" + value + "' not in vocabulary of '" +
                          attribute + "'");
  }
  return static_cast<std::size_t>(it - values.begin());
}

DesiredDistribution DesiredDistribution::from_corpus(
    const LabeledTable& corpus, const std::string& attribute) {
  const std::size_t a = corpus.attribute_index(attribute);
  DesiredDistribution d;
  d.attribute = attribute;
  d.values = corpus.vocabulary(attribute);
  std::vector<std::size_t> counts(d.values.size(), 0);
  std::unordered_set<std::string_view> seen;
  std::size_t total = 0;
  for (const auto& r : corpus.records()) {
    if (!seen.insert(r.id).second || r.attributes[a].empty()) continue;
    ++counts[d.index_of(r.attributes[a])];
    ++total;
  }
  if (total == 0) {
    throw ValidationError("corpus has no labels for '" + attribute + "'");
  }
  for (std::size_t c : counts) {
    d.proportions.push_back(static_cast<double>(c) / static_cast<double>(total));
  }
  return d;
}

DesiredDistribution DesiredDistribution::from_json_text(const std::string& text) {
  DesiredDistribution d;
  try {
    const auto j = nlohmann::json::parse(text);
    d.attribute = j.at("attribute").get<std::string>();
    // std::map iteration keeps values sorted.
    const auto props = j.at("proportions").get<std::map<std::string, double>>();
    for (const auto& [value, p] : props) {
      d.values.push_back(value);
      d.proportions.push_back(p);
    }
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("desired distribution: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("desired distribution: ") + e.what());
  }
  d.validate();
  return d;
}

DesiredDistribution DesiredDistribution::from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::vector<double> smooth(std::span<const double> proportions, double delta) {
  std::vector<double> out(proportions.size());
  const double denom = 1.0 + delta * static_cast<double>(proportions.size());
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    out[i] = (proportions[i] + delta) / denom;
  }
  return out;
}

std::vector<std::size_t> attribute_sequence(const RankedRetrieval& retrieval,
                                            const LabeledTable& labels,
                                            const DesiredDistribution& desired) {
  const std::size_t a = labels.attribute_index(desired.attribute);
  std::vector<std::size_t> seq;
  seq.reserve(retrieval.ranking.size());
  for (const auto& id : retrieval.ranking) {
    const LabelRecord* r = labels.find(id);
    if (r == nullptr) throw VocabularyError("ranked id '" + id + "' has no labels");
    seq.push_back(desired.index_of(r->attributes[a]));
  }
  return seq;
}

std::vector<double> prefix_distribution(std::span<const std::size_t> seq,
                                        std::size_t depth,
                                        std::size_t value_count, double delta) {
  std::vector<double> p(value_count, 0.0);
  for (std::size_t i = 0; i < depth; ++i) p[seq[i]] += 1.0;
  for (double& v : p) v /= static_cast<double>(depth);
  return smooth(p, delta);
}

namespace {

void check_skew_inputs(const RankedRetrieval& retrieval,
                       const DesiredDistribution& desired) {
  retrieval.validate();
  desired.validate();
}

std::vector<double> skews_of(std::span<const std::size_t> seq, std::size_t k,
                             std::span<const double> desired, double delta) {
  const auto actual = prefix_distribution(seq, k, desired.size(), delta);
  const auto target = smooth(desired, delta);
  std::vector<double> out(desired.size());
  for (std::size_t i = 0; i < desired.size(); ++i) {
    if (!(target[i] > 0.0)) {
      throw ValidationError("desired proportion is zero after smoothing");
    }
    out[i] = std::log(actual[i] / target[i]);
  }
  return out;
}

}  // namespace

double skew(const RankedRetrieval& retrieval, const LabeledTable& labels,
            const DesiredDistribution& desired, const std::string& value,
            double delta) {
  check_skew_inputs(retrieval, desired);
  const std::size_t v = desired.index_of(value);
  const auto seq = attribute_sequence(retrieval, labels, desired);
  return skews_of(seq, retrieval.k, desired.proportions, delta)[v];
}

SkewExtremes max_min_skew_of(std::span<const std::size_t> seq, std::size_t k,
                             std::span<const double> desired, double delta) {
  if (desired.size() < 2) {
    throw ConfigError("MaxSkew/MinSkew need an attribute with >= 2 values");
  }
  const auto s = skews_of(seq, k, desired, delta);
  SkewExtremes e;
  e.max_skew = *std::max_element(s.begin(), s.end());
  e.min_skew = *std::min_element(s.begin(), s.end());
  e.min_skew_abs = std::abs(e.min_skew);
  return e;
}

SkewExtremes max_min_skew(const RankedRetrieval& retrieval,
                          const LabeledTable& labels,
                          const DesiredDistribution& desired, double delta) {
  check_skew_inputs(retrieval, desired);
  const auto seq = attribute_sequence(retrieval, labels, desired);
  return max_min_skew_of(seq, retrieval.k, desired.proportions, delta);
}

double ndkl_of(std::span<const std::size_t> seq, std::size_t k,
               std::span<const double> desired, double delta) {
  if (k == 0) throw ConfigError("NDKL needs k >= 1");
  const auto target = smooth(desired, delta);
  std::vector<double> counts(desired.size(), 0.0);
  std::vector<double> p(desired.size());
  double z = 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i <= k; ++i) {
    counts[seq[i - 1]] += 1.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
      p[v] = counts[v] / static_cast<double>(i);
    }
    const auto actual = smooth(p, delta);
    double kl = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
      if (actual[v] > 0.0) kl += actual[v] * std::log(actual[v] / target[v]);
    }
    const double w = 1.0 / std::log2(static_cast<double>(i) + 1.0);
    z += w;
    total += w * kl;
  }
  return total / z;
}

double ndkl(const RankedRetrieval& retrieval, const LabeledTable& labels,
            const DesiredDistribution& desired, double delta) {
  check_skew_inputs(retrieval, desired);
  const auto seq = attribute_sequence(retrieval, labels, desired);
  return ndkl_of(seq, retrieval.k, desired.proportions, delta);
}

std::vector<std::string> rank_images(const EmbeddingMatrix& images,
                                     std::span<const float> query) {
  if (query.size() != images.dim()) {
    throw DimensionError("query dimension does not match image embeddings");
  }
  std::vector<std::pair<double, std::size_t>> scored(images.rows());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    scored[i] = {dot(images.row(i), query), i};
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return images.id(a.second) < images.id(b.second);
  });
  std::vector<std::string> out;
  out.reserve(scored.size());
  for (const auto& [score, i] : scored) out.push_back(images.id(i));
  return out;
}

std::vector<AttributeAudit> audit_retrievals(
    const std::vector<std::string>& queries, const EmbeddingMatrix& images,
    const EmbeddingMatrix& caption_embs, const LabeledTable& labels,
    const RetrievalAuditConfig& cfg) {
  if (queries.size() != caption_embs.rows()) {
    throw ValidationError("need one caption embedding per query (" +
                          std::to_string(queries.size()) + " queries, " +
                          std::to_string(caption_embs.rows()) + " rows)");
  }
  if (queries.empty()) throw ConfigError("no queries to audit");
  if (cfg.k == 0 || cfg.k > images.rows()) {
    throw ConfigError("k=" + std::to_string(cfg.k) +
                      " must lie in [1, corpus size " +
                      std::to_string(images.rows()) + "]");
  }
  if (caption_embs.dim() != images.dim()) {
    throw DimensionError("caption and image embeddings differ in dimension");
  }
  const LabeledTable corpus = labels.restrict_to(images.ids());
  const auto attributes =
      cfg.attributes.empty() ? labels.attribute_names() : cfg.attributes;

  std::vector<DesiredDistribution> desired;
  for (const auto& attr : attributes) {
    auto it = std::find_if(cfg.desired.begin(), cfg.desired.end(),
                           [&](const auto& d) { return d.attribute == attr; });
    if (it != cfg.desired.end()) {
      it->validate();
      // Every value present in the corpus must be covered.
      for (const auto& v : corpus.vocabulary(attr)) it->index_of(v);
      desired.push_back(*it);
    } else {
      desired.push_back(DesiredDistribution::from_corpus(corpus, attr));
    }
  }

  // Per query, per attribute.
  std::vector<std::vector<QueryMetrics>> metrics(
      queries.size(), std::vector<QueryMetrics>(attributes.size()));
  parallel_for(queries.size(), cfg.workers, [&](std::size_t q) {
    RankedRetrieval r;
    r.query = queries[q];
    r.ranking = rank_images(images, caption_embs.row(q));
    r.ranking.resize(cfg.k);
    r.k = cfg.k;
    for (std::size_t a = 0; a < attributes.size(); ++a) {
      const auto seq = attribute_sequence(r, corpus, desired[a]);
      const auto e = max_min_skew_of(seq, r.k, desired[a].proportions, cfg.delta);
      QueryMetrics& m = metrics[q][a];
      m.query = r.query;
      m.max_skew = e.max_skew;
      m.min_skew = e.min_skew;
      m.ndkl = ndkl_of(seq, r.k, desired[a].proportions, cfg.delta);
    }
  });

  std::vector<AttributeAudit> out(attributes.size());
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    AttributeAudit& audit = out[a];
    audit.attribute = attributes[a];
    audit.k = cfg.k;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto& m = metrics[q][a];
      audit.mean_max_skew += m.max_skew;
      audit.mean_abs_min_skew += std::abs(m.min_skew);
      audit.mean_ndkl += m.ndkl;
      audit.queries.push_back(m);
    }
    const double nq = static_cast<double>(queries.size());
    audit.mean_max_skew /= nq;
    audit.mean_abs_min_skew /= nq;
    audit.mean_ndkl /= nq;
  }
  return out;
}

nlohmann::ordered_json to_json(const AttributeAudit& audit,
                               bool include_queries) {
  nlohmann::ordered_json j;
  j["attribute"] = audit.attribute;
  j["k"] = audit.k;
  j["queries"] = audit.queries.size();
  j["MinSkew"] = audit.mean_abs_min_skew;
  j["MaxSkew"] = audit.mean_max_skew;
  j["NDKL"] = audit.mean_ndkl;
  if (include_queries) {
    auto& per = j["per_query"] = nlohmann::ordered_json::array();
    for (const auto& q : audit.queries) {
      per.push_back({{"query", q.query},
                     {"MaxSkew", q.max_skew},
                     {"MinSkew", q.min_skew},
                     {"NDKL", q.ndkl}});
    }
  }
  return j;
}

}  // namespace dedupkit
