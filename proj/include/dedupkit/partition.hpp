#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dedupkit/embedstore.hpp"

namespace dedupkit {

enum class KMeansInit { kmeanspp, random };

std::string to_string(KMeansInit init);
KMeansInit parse_kmeans_init(const std::string& name);

struct KMeansConfig {
  std::size_t k = 1;
  std::size_t max_iters = 100;
  // Stop once the relative inertia improvement drops below this.
  double tol = 1e-4;
  std::uint64_t seed = 0;
  KMeansInit init = KMeansInit::kmeanspp;
  std::size_t workers = 1;

  void validate() const;
};

// Spherical k-means partition. Inertia is sum over samples of
// 1 - cos(sample, assigned centroid).
struct ClusterAssignment {
  std::vector<std::uint32_t> assignments;
  EmbeddingMatrix centroids;
  double inertia = 0.0;
  // Inertia measured after each assignment step.
  std::vector<double> inertia_history;
  std::vector<std::uint32_t> empty_clusters;
  std::size_t iterations = 0;

  std::size_t k() const { return centroids.rows(); }
  std::size_t size() const { return assignments.size(); }
};

ClusterAssignment kmeans(const EmbeddingMatrix& matrix,
                         const KMeansConfig& cfg);

// Row indices of `cluster_id`, ascending. Throws IndexError on a bad id.
std::vector<std::size_t> cluster_members(const ClusterAssignment& assignment,
                                         std::size_t cluster_id);

// All clusters' members in one pass; out[c] is ascending.
std::vector<std::vector<std::size_t>> all_cluster_members(
    const ClusterAssignment& assignment);

// Assignment JSON-lines ({"id":..,"cluster":..} per sample) plus a centroid
// embedding file.
void write_assignment(const ClusterAssignment& assignment,
                      const EmbeddingMatrix& matrix,
                      const std::filesystem::path& jsonl_path,
                      const std::filesystem::path& centroids_path);

// Rebuilds an assignment from files written by write_assignment. Records are
// matched to `matrix` rows by id.
ClusterAssignment read_assignment(const EmbeddingMatrix& matrix,
                                  const std::filesystem::path& jsonl_path,
                                  const std::filesystem::path& centroids_path);

}  // namespace dedupkit
