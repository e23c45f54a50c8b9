#include "dedupkit/partition.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "dedupkit/error.hpp"
#include "dedupkit/linalg.hpp"
#include "dedupkit/parallel.hpp"
#include "dedupkit/rng.hpp"

namespace dedupkit {

namespace {

using Centroids = std::vector<double>;  // k x d, row-major

struct AssignStep {
  std::vector<std::uint32_t> labels;
  std::vector<double> best_sim;
};

AssignStep assign(const EmbeddingMatrix& m, const Centroids& c, std::size_t k,
                  std::size_t workers) {
  const std::size_t d = m.dim();
  AssignStep out{std::vector<std::uint32_t>(m.rows()),
                 std::vector<double>(m.rows())};
  parallel_for(m.rows(), workers, [&](std::size_t i) {
    auto x = m.row(i);
    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double s = dot(x, std::span<const double>(c.data() + j * d, d));
      // Strict > keeps the lowest cluster index on ties.
      if (s > best) {
        best = s;
        arg = static_cast<std::uint32_t>(j);
      }
    }
    out.labels[i] = arg;
    out.best_sim[i] = best;
  });
  return out;
}

double inertia_of(const std::vector<double>& best_sim) {
  double total = 0.0;
  for (double s : best_sim) total += 1.0 - s;
  return total;
}

// Renormalized member means; clusters without a usable mean keep their
// previous centroid and are reported in `empty`.
void update(const EmbeddingMatrix& m,
            const std::vector<std::vector<std::size_t>>& members,
            Centroids& c, std::vector<std::uint32_t>& empty,
            std::size_t workers) {
  const std::size_t d = m.dim();
  const std::size_t k = members.size();
  std::vector<char> is_empty(k, 0);
  parallel_for(k, workers, [&](std::size_t j) {
    if (members[j].empty()) {
      is_empty[j] = 1;
      return;
    }
    std::vector<double> sum(d, 0.0);
    for (std::size_t i : members[j]) {
      auto x = m.row(i);
      for (std::size_t t = 0; t < d; ++t) sum[t] += x[t];
    }
    const double len = norm(std::span<const double>(sum));
    if (!(len > 0.0)) return;
    for (std::size_t t = 0; t < d; ++t) c[j * d + t] = sum[t] / len;
  });
  empty.clear();
  for (std::size_t j = 0; j < k; ++j) {
    if (is_empty[j]) empty.push_back(static_cast<std::uint32_t>(j));
  }
}

std::vector<std::vector<std::size_t>> group(
    const std::vector<std::uint32_t>& labels, std::size_t k) {
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  return members;
}

std::vector<std::size_t> init_random(std::size_t n, std::size_t k, Rng& rng) {
  // Partial Fisher-Yates: k distinct rows.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

// k-means++ seeding with D^2 weights; for unit vectors the squared distance
// is 2 (1 - cos), so 1 - max cos is used directly.
std::vector<std::size_t> init_kmeanspp(const EmbeddingMatrix& m, std::size_t k,
                                       Rng& rng, std::size_t workers) {
  const std::size_t n = m.rows();
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::vector<char> taken(n, 0);
  std::vector<double> best(n, -std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.index(n));
  chosen.push_back(first);
  taken[first] = 1;
  while (chosen.size() < k) {
    const auto c = m.row(chosen.back());
    parallel_for(n, workers, [&](std::size_t i) {
      const double s = dot(m.row(i), c);
      if (s > best[i]) best[i] = s;
    });
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) total += std::max(0.0, 1.0 - best[i]);
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double w = std::max(0.0, 1.0 - best[i]);
        if (w <= 0.0) continue;
        acc += w;
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) {
      // Every remaining row coincides with a chosen centroid.
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
    taken[pick] = 1;
  }
  return chosen;
}

}  // namespace

std::string to_string(KMeansInit init) {
  return init == KMeansInit::kmeanspp ? "kmeanspp" : "random";
}

KMeansInit parse_kmeans_init(const std::string& name) {
  if (name == "kmeanspp" || name == "kmeans++") return KMeansInit::kmeanspp;
  if (name == "random") return KMeansInit::random;
  throw ConfigError("unknown k-means init '" + name + "'");
}

void KMeansConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (!(tol >= 0.0)) throw ConfigError("tol must be >= 0");
}

ClusterAssignment kmeans(const EmbeddingMatrix& matrix,
                         const KMeansConfig& cfg) {
  cfg.validate();
  const std::size_t n = matrix.rows();
  const std::size_t d = matrix.dim();
  const std::size_t k = cfg.k;
  if (n == 0) throw ConfigError("cannot cluster an empty matrix");
  if (k > n) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds sample count " +
                      std::to_string(n));
  }
  for (float v : matrix.values()) {
    if (!std::isfinite(v)) throw ValidationError("non-finite embedding value");
  }

  Rng rng(derive_seed(cfg.seed, "cluster"));
  const auto seeds = cfg.init == KMeansInit::kmeanspp
                         ? init_kmeanspp(matrix, k, rng, cfg.workers)
                         : init_random(n, k, rng);
  Centroids centroids(k * d);
  for (std::size_t j = 0; j < k; ++j) {
    auto r = matrix.row(seeds[j]);
    for (std::size_t t = 0; t < d; ++t) centroids[j * d + t] = r[t];
  }

  ClusterAssignment out;
  std::vector<std::uint32_t> prev;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    auto step = assign(matrix, centroids, k, cfg.workers);
    const double inertia = inertia_of(step.best_sim);
    const bool changed = step.labels != prev;
    const double last = out.inertia_history.empty()
                            ? std::numeric_limits<double>::infinity()
                            : out.inertia_history.back();
    out.inertia_history.push_back(inertia);
    out.iterations = it + 1;
    prev = std::move(step.labels);
    update(matrix, group(prev, k), centroids, out.empty_clusters, cfg.workers);
    if (!changed) break;
    if (std::isfinite(last)) {
      const double gain = last - inertia;
      if (gain <= cfg.tol * std::max(last, 1e-12)) break;
    }
  }
  out.assignments = std::move(prev);

  std::vector<float> cvals(centroids.begin(), centroids.end());
  std::vector<std::string> cids;
  cids.reserve(k);
  for (std::size_t j = 0; j < k; ++j) cids.push_back(std::to_string(j));
  out.centroids = EmbeddingMatrix(d, std::move(cvals), std::move(cids));

  // Against the stored centroids, so a reloaded assignment agrees.
  for (std::size_t i = 0; i < n; ++i) {
    out.inertia += 1.0 - dot(matrix.row(i), out.centroids.row(out.assignments[i]));
  }
  return out;
}

std::vector<std::size_t> cluster_members(const ClusterAssignment& assignment,
                                         std::size_t cluster_id) {
  if (cluster_id >= assignment.k()) {
    throw IndexError("cluster id " + std::to_string(cluster_id) +
                     " out of range for k=" + std::to_string(assignment.k()));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.assignments.size(); ++i) {
    if (assignment.assignments[i] == cluster_id) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> all_cluster_members(
    const ClusterAssignment& assignment) {
  return group(assignment.assignments, assignment.k());
}

void write_assignment(const ClusterAssignment& assignment,
                      const EmbeddingMatrix& matrix,
                      const std::filesystem::path& jsonl_path,
                      const std::filesystem::path& centroids_path) {
  if (assignment.size() != matrix.rows()) {
    throw ValidationError("assignment size does not match matrix rows");
  }
  std::ofstream out(jsonl_path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + jsonl_path.string() + "'");
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    nlohmann::ordered_json rec;
    rec["id"] = matrix.id(i);
    rec["cluster"] = assignment.assignments[i];
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write to '" + jsonl_path.string() + "' failed");
  embedstore::write_embeddings(assignment.centroids, centroids_path);
}

ClusterAssignment read_assignment(const EmbeddingMatrix& matrix,
                                  const std::filesystem::path& jsonl_path,
                                  const std::filesystem::path& centroids_path) {
  ClusterAssignment out;
  out.centroids = embedstore::read_embeddings(centroids_path);
  if (out.centroids.dim() != matrix.dim()) {
    throw DimensionError("centroid dimension does not match embeddings");
  }
  std::unordered_map<std::string, std::size_t> row_of;
  row_of.reserve(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i) row_of.emplace(matrix.id(i), i);

  std::ifstream in(jsonl_path);
  if (!in) throw IoError("cannot open '" + jsonl_path.string() + "'");
  constexpr auto kUnset = std::numeric_limits<std::uint32_t>::max();
  out.assignments.assign(matrix.rows(), kUnset);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw FormatError(jsonl_path.string() + ":" + std::to_string(lineno) +
                        ": invalid JSON");
    }
    const auto id = rec.at("id").is_string() ? rec.at("id").get<std::string>()
                                             : rec.at("id").dump();
    const auto cluster = rec.at("cluster").get<std::uint64_t>();
    auto it = row_of.find(id);
    if (it == row_of.end()) {
      throw ValidationError("assignment id '" + id +
                            "' not present in embeddings");
    }
    if (cluster >= out.centroids.rows()) {
      throw ValidationError("cluster id out of range for '" + id + "'");
    }
    out.assignments[it->second] = static_cast<std::uint32_t>(cluster);
  }
  for (std::size_t i = 0; i < out.assignments.size(); ++i) {
    if (out.assignments[i] == kUnset) {
      throw ValidationError("sample '" + matrix.id(i) + "' has no cluster");
    }
  }
  auto members = all_cluster_members(out);
  for (std::size_t j = 0; j < members.size(); ++j) {
    if (members[j].empty()) out.empty_clusters.push_back(static_cast<std::uint32_t>(j));
  }
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    out.inertia += 1.0 - dot(matrix.row(i), out.centroids.row(out.assignments[i]));
  }
  return out;
}

}  // namespace dedupkit
