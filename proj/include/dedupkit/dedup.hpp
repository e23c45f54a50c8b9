#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dedupkit/embedstore.hpp"
#include "dedupkit/partition.hpp"
#include "dedupkit/prototypes.hpp"

namespace dedupkit {

enum class Heuristic { semdedup, fairdedup, random };

std::string to_string(Heuristic h);
Heuristic parse_heuristic(const std::string& name);

// Order in which the neighborhood walk picks unvisited anchors. `shuffled`
// draws a seeded permutation of the cluster; `sequential` always takes the
// lowest unvisited index.
enum class VisitOrder { shuffled, sequential };

std::string to_string(VisitOrder v);
VisitOrder parse_visit_order(const std::string& name);

struct DedupConfig {
  // Samples are duplicates when their cosine similarity exceeds 1 - epsilon.
  double epsilon = 0.0;
  Heuristic heuristic = Heuristic::semdedup;
  std::uint64_t seed = 0;
  std::optional<double> target_keep_fraction;
  VisitOrder visit_order = VisitOrder::shuffled;
  std::size_t workers = 1;
  // Row-block height used when materializing pairwise similarities.
  std::size_t block_rows = 256;

  void validate() const;
};

// Running per-concept similarity totals of the samples kept so far in one
// cluster.
struct BalanceState {
  std::vector<double> sums;
  std::size_t count = 0;

  explicit BalanceState(std::size_t concepts = 0) : sums(concepts, 0.0) {}

  void update(std::span<const double> concept_sims);
  double mean(std::size_t concept_index) const;
  std::vector<double> means() const;
  // Concept with the lowest running mean; lowest index on ties. Requires
  // count > 0.
  std::size_t min_concept() const;

  friend bool operator==(const BalanceState&, const BalanceState&) = default;
};

// Members of `anchor`'s duplicate neighborhood in ascending local order:
// every j with sim(j, anchor) > 1 - epsilon, plus the anchor itself.
std::vector<std::size_t> neighborhood(const EmbeddingMatrix& cluster,
                                      std::size_t anchor, double epsilon);

struct SemDedupScores {
  // Local indices sorted by distance to the centroid, farthest first.
  std::vector<std::size_t> order;
  // Per local index: the highest similarity to any sample ahead of it in
  // `order`, or -inf for the first one.
  std::vector<double> max_prior_sim;
};

SemDedupScores semdedup_scores(const EmbeddingMatrix& cluster,
                               std::span<const float> centroid,
                               std::size_t block_rows = 256);

// Max-distance selection: a sample survives iff its highest similarity to
// any sample farther from the centroid is <= 1 - epsilon. Returns kept
// local indices ascending.
std::vector<std::size_t> semdedup_filter(const EmbeddingMatrix& cluster,
                                         std::span<const float> centroid,
                                         double epsilon,
                                         std::size_t block_rows = 256);

struct WalkResult {
  // Kept local indices in the order they were kept (one per neighborhood).
  std::vector<std::size_t> kept;
  // Per local index: ordinal of the neighborhood that visited it.
  std::vector<std::size_t> neighborhood_of;
  BalanceState balance;
};

// Fairness-aware neighborhood walk. The first neighborhood keeps the member
// with the highest mean concept similarity; later ones keep the member most
// similar to the concept whose running mean is lowest. `proto_sims` is the
// q x m matrix from concept_similarities. Throws ConfigError when m == 0.
WalkResult fairdedup_select(const EmbeddingMatrix& cluster,
                            const SimilarityMatrix& proto_sims, double epsilon,
                            std::uint64_t seed,
                            VisitOrder order = VisitOrder::shuffled);

// Same walk, keeping a uniformly random member of each neighborhood.
WalkResult random_select(const EmbeddingMatrix& cluster, double epsilon,
                         std::uint64_t seed,
                         VisitOrder order = VisitOrder::shuffled);

struct SampleDecision {
  std::uint32_t cluster = 0;
  bool kept = false;
  // Neighborhood ordinal within the cluster; -1 when not applicable
  // (pruned samples under semdedup).
  std::int64_t neighborhood = -1;
};

struct KeepList {
  Heuristic heuristic = Heuristic::semdedup;
  double epsilon = 0.0;
  std::vector<SampleDecision> decisions;  // one per sample row
  // Per cluster: kept global indices in keep order.
  std::vector<std::vector<std::size_t>> keep_order;
  // Per cluster final balance (fairdedup only).
  std::map<std::uint32_t, BalanceState> balances;

  std::vector<std::size_t> kept() const;
  std::size_t kept_count() const;
  double keep_fraction() const;
};

// Seed of the walk in `cluster_id` under root `seed`.
std::uint64_t cluster_seed(std::uint64_t seed, std::size_t cluster_id);

// Runs the configured heuristic on every non-empty cluster independently.
// `protos` must be present exactly when the heuristic is fairdedup.
KeepList dedup_dataset(const EmbeddingMatrix& matrix,
                       const ClusterAssignment& assignment,
                       const ConceptPrototypeSet* protos,
                       const DedupConfig& cfg);

struct CalibrationResult {
  double epsilon = 0.0;
  double keep_fraction = 1.0;
  bool attained = false;
  // (epsilon, keep fraction) per evaluation, in evaluation order.
  std::vector<std::pair<double, double>> trace;
};

// Bisection over a single global epsilon in [0, 1] until the realized keep
// fraction is within `tol` of `target_keep`. When the keep-fraction
// staircase jumps over the target, returns the closest boundary epsilon with
// attained == false.
CalibrationResult calibrate_epsilon(const EmbeddingMatrix& matrix,
                                    const ClusterAssignment& assignment,
                                    const ConceptPrototypeSet* protos,
                                    const DedupConfig& cfg, double target_keep,
                                    double tol);

void write_keep_list(const KeepList& keep, const EmbeddingMatrix& matrix,
                     const std::filesystem::path& path);

// Ids flagged kept in a keep-list file.
std::vector<std::string> read_kept_ids(const std::filesystem::path& path);

}  // namespace dedupkit
