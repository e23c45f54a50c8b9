#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dedupkit/dedup.hpp"
#include "dedupkit/embedstore.hpp"
#include "dedupkit/labels.hpp"
#include "dedupkit/prototypes.hpp"
#include "dedupkit/stats.hpp"

namespace dedupkit {

struct SynthGroup {
  std::string label;
  std::size_t count = 0;
  std::size_t duplicate_multiplicity = 1;
};

struct SynthCluster {
  // Draws the center from its own stream when set, otherwise from the trial.
  std::optional<std::uint64_t> center_seed;
  double angular_noise = 0.05;
  std::vector<SynthGroup> groups;
};

struct SynthSpec {
  std::size_t d = 32;
  std::uint64_t seed = 0;
  // Offset of each label's group center from the cluster center, along a
  // label direction orthogonal to every cluster center.
  double label_separation = 0.1;
  std::string attribute = "group";
  std::vector<SynthCluster> clusters;

  void validate() const;
  std::size_t total_rows() const;
  // Labels in first-appearance order.
  std::vector<std::string> labels() const;
  // Label with the most rows; ties go to the first to appear.
  std::string modal_label() const;

  // A cluster entry may carry "repeat": n to stand for n identical clusters
  // (sharing center_seed, if given).
  static SynthSpec from_json(const nlohmann::json& j);
  static SynthSpec from_json_text(const std::string& text);
  static SynthSpec from_json_file(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
};

struct SynthDataset {
  EmbeddingMatrix embeddings;
  // Class column holds the generating cluster ("c<i>"), attribute column the label.
  LabeledTable labels{std::vector<std::string>{"group"}};
  // One oracle prototype per label: normalized mean of its true group centers.
  ConceptPrototypeSet prototypes;
  std::vector<std::string> row_labels;
  std::vector<std::uint32_t> row_clusters;
};

// Rows are emitted cluster by cluster, group by group; each base point is
// followed by its copies. Ids are "s<row>". Deterministic in (spec.seed, trial).
SynthDataset generate(const SynthSpec& spec, std::size_t trial = 0);

struct StudyConfig {
  std::size_t n_trials = 10;
  double target_keep = 0.5;
  double tol = 0.005;
  // 0 means one cluster per spec cluster.
  std::size_t k = 0;
  std::size_t kmeans_max_iters = 100;
  double kmeans_tol = 1e-4;
  VisitOrder visit_order = VisitOrder::shuffled;
  // Empty means every non-modal label.
  std::vector<std::string> minority_labels;
  std::size_t workers = 1;

  void validate() const;
};

struct TrialOutcome {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::size_t rows = 0;
  double full_mass = 0.0;
  double semdedup_mass = 0.0;
  double fairdedup_mass = 0.0;
  double semdedup_keep = 0.0;
  double fairdedup_keep = 0.0;
  double semdedup_epsilon = 0.0;
  double fairdedup_epsilon = 0.0;
  bool semdedup_attained = false;
  bool fairdedup_attained = false;
};

struct RetentionReport {
  std::vector<std::string> minority_labels;
  std::vector<TrialOutcome> trials;
  double mean_full = 0.0;
  double mean_semdedup = 0.0;
  double mean_fairdedup = 0.0;
  // fairdedup - semdedup per trial.
  PairedTTest test;
};

// Minority share among rows where `keep` is true (all rows when empty).
double minority_mass(const std::vector<std::string>& row_labels,
                     const std::vector<std::string>& minority,
                     const std::vector<bool>& keep = {});

TrialOutcome run_trial(const SynthSpec& spec, std::size_t trial,
                       const StudyConfig& cfg,
                       const std::vector<std::string>& minority);

RetentionReport retention_study(const SynthSpec& spec, const StudyConfig& cfg);

nlohmann::ordered_json to_json(const RetentionReport& report);
// Plain-text table with one row per heuristic and the test summary.
std::string render_table(const RetentionReport& report);

}  // namespace dedupkit
