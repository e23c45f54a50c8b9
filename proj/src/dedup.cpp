#include "dedupkit/dedup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "dedupkit/error.hpp"
#include "dedupkit/linalg.hpp"
#include "dedupkit/parallel.hpp"
#include "dedupkit/rng.hpp"

namespace dedupkit {

std::string to_string(Heuristic h) {
  switch (h) {
    case Heuristic::semdedup:
      return "semdedup";
    case Heuristic::fairdedup:
      return "fairdedup";
    case Heuristic::random:
      return "random";
  }
  return "unknown";
}

Heuristic parse_heuristic(const std::string& name) {
  if (name == "semdedup") return Heuristic::semdedup;
  if (name == "fairdedup") return Heuristic::fairdedup;
  if (name == "random") return Heuristic::random;
  throw ConfigError("unknown heuristic '" + name + "'");
}

std::string to_string(VisitOrder v) {
  return v == VisitOrder::shuffled ? "shuffled" : "sequential";
}

VisitOrder parse_visit_order(const std::string& name) {
  if (name == "shuffled" || name == "random") return VisitOrder::shuffled;
  if (name == "sequential" || name == "first") return VisitOrder::sequential;
  throw ConfigError("unknown visit order '" + name + "'");
}

void DedupConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError("epsilon must lie in [0, 1]");
  }
  if (target_keep_fraction &&
      !(*target_keep_fraction > 0.0 && *target_keep_fraction <= 1.0)) {
    throw ConfigError("target keep fraction must lie in (0, 1]");
  }
  if (block_rows == 0) throw ConfigError("block_rows must be positive");
}

void BalanceState::update(std::span<const double> concept_sims) {
  for (std::size_t c = 0; c < sums.size(); ++c) sums[c] += concept_sims[c];
  ++count;
}

double BalanceState::mean(std::size_t concept_index) const {
  return sums[concept_index] / static_cast<double>(count);
}

std::vector<double> BalanceState::means() const {
  std::vector<double> out(sums.size());
  for (std::size_t c = 0; c < sums.size(); ++c) out[c] = mean(c);
  return out;
}

std::size_t BalanceState::min_concept() const {
  std::size_t arg = 0;
  double best = mean(0);
  for (std::size_t c = 1; c < sums.size(); ++c) {
    const double m = mean(c);
    if (m < best) {
      best = m;
      arg = c;
    }
  }
  return arg;
}

std::vector<std::size_t> neighborhood(const EmbeddingMatrix& cluster,
                                      std::size_t anchor, double epsilon) {
  if (anchor >= cluster.rows()) {
    throw IndexError("anchor " + std::to_string(anchor) + " out of range");
  }
  const double threshold = 1.0 - epsilon;
  const auto a = cluster.row(anchor);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < cluster.rows(); ++j) {
    if (j == anchor || dot(cluster.row(j), a) > threshold) out.push_back(j);
  }
  return out;
}

SemDedupScores semdedup_scores(const EmbeddingMatrix& cluster,
                               std::span<const float> centroid,
                               std::size_t block_rows) {
  if (centroid.size() != cluster.dim()) {
    throw DimensionError("centroid dimension does not match cluster");
  }
  const std::size_t q = cluster.rows();
  std::vector<double> centroid_sim(q);
  for (std::size_t i = 0; i < q; ++i) centroid_sim[i] = dot(cluster.row(i), centroid);

  SemDedupScores out;
  out.order.resize(q);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  // Farthest from the centroid first; stable so equal distances keep index
  // order.
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return centroid_sim[a] < centroid_sim[b];
                   });

  out.max_prior_sim.assign(q, -std::numeric_limits<double>::infinity());
  block_rows = std::max<std::size_t>(1, block_rows);
  std::vector<double> tile;
  for (std::size_t b0 = 0; b0 < q; b0 += block_rows) {
    const std::size_t b1 = std::min(q, b0 + block_rows);
    // tile holds sims of sorted rows [b0, b1) against sorted rows [0, b1).
    tile.assign((b1 - b0) * b1, 0.0);
    for (std::size_t r = b0; r < b1; ++r) {
      const auto x = cluster.row(out.order[r]);
      double* t = tile.data() + (r - b0) * b1;
      for (std::size_t p = 0; p < r; ++p) t[p] = dot(x, cluster.row(out.order[p]));
    }
    for (std::size_t r = b0; r < b1; ++r) {
      const double* t = tile.data() + (r - b0) * b1;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < r; ++p) best = std::max(best, t[p]);
      out.max_prior_sim[out.order[r]] = best;
    }
  }
  return out;
}

std::vector<std::size_t> semdedup_filter(const EmbeddingMatrix& cluster,
                                         std::span<const float> centroid,
                                         double epsilon,
                                         std::size_t block_rows) {
  const auto scores = semdedup_scores(cluster, centroid, block_rows);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < cluster.rows(); ++i) {
    if (scores.max_prior_sim[i] <= 1.0 - epsilon) kept.push_back(i);
  }
  return kept;
}

namespace {

template <typename Chooser>
WalkResult walk(const EmbeddingMatrix& cluster, double epsilon,
                std::uint64_t seed, VisitOrder order, BalanceState balance,
                Chooser&& choose) {
  const std::size_t q = cluster.rows();
  Rng rng(seed);
  std::vector<std::size_t> visit(q);
  if (order == VisitOrder::shuffled) {
    visit = rng.permutation(q);
  } else {
    std::iota(visit.begin(), visit.end(), std::size_t{0});
  }
  WalkResult out;
  out.balance = std::move(balance);
  out.neighborhood_of.assign(q, 0);
  std::vector<char> visited(q, 0);
  std::vector<std::size_t> candidates;
  std::size_t ordinal = 0;
  for (std::size_t anchor : visit) {
    if (visited[anchor]) continue;
    const auto members = neighborhood(cluster, anchor, epsilon);
    candidates.clear();
    for (std::size_t j : members) {
      if (!visited[j]) candidates.push_back(j);
    }
    out.kept.push_back(choose(candidates, out.balance, rng));
    for (std::size_t j : candidates) {
      visited[j] = 1;
      out.neighborhood_of[j] = ordinal;
    }
    ++ordinal;
  }
  return out;
}

}  // namespace

WalkResult fairdedup_select(const EmbeddingMatrix& cluster,
                            const SimilarityMatrix& proto_sims, double epsilon,
                            std::uint64_t seed, VisitOrder order) {
  const std::size_t m = proto_sims.cols;
  if (m == 0) throw ConfigError("fairdedup needs at least one concept prototype");
  if (proto_sims.rows != cluster.rows()) {
    throw DimensionError("prototype similarity rows do not match cluster size");
  }
  return walk(
      cluster, epsilon, seed, order, BalanceState(m),
      [&](const std::vector<std::size_t>& cand, BalanceState& balance, Rng&) {
        std::size_t pick = cand.front();
        if (balance.count == 0) {
          // First neighborhood: highest mean similarity over all concepts.
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t j : cand) {
            const auto r = proto_sims.row(j);
            double s = 0.0;
            for (double v : r) s += v;
            const double mean = s / static_cast<double>(m);
            if (mean > best) {
              best = mean;
              pick = j;
            }
          }
        } else {
          const std::size_t c = balance.min_concept();
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t j : cand) {
            const double v = proto_sims.at(j, c);
            if (v > best) {
              best = v;
              pick = j;
            }
          }
        }
        balance.update(proto_sims.row(pick));
        return pick;
      });
}

WalkResult random_select(const EmbeddingMatrix& cluster, double epsilon,
                         std::uint64_t seed, VisitOrder order) {
  return walk(cluster, epsilon, seed, order, BalanceState(0),
              [](const std::vector<std::size_t>& cand, BalanceState&,
                 Rng& rng) {
                return cand[static_cast<std::size_t>(rng.index(cand.size()))];
              });
}

std::vector<std::size_t> KeepList::kept() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i].kept) out.push_back(i);
  }
  return out;
}

std::size_t KeepList::kept_count() const {
  return static_cast<std::size_t>(
      std::count_if(decisions.begin(), decisions.end(),
                    [](const SampleDecision& d) { return d.kept; }));
}

double KeepList::keep_fraction() const {
  if (decisions.empty()) return 1.0;
  return static_cast<double>(kept_count()) /
         static_cast<double>(decisions.size());
}

std::uint64_t cluster_seed(std::uint64_t seed, std::size_t cluster_id) {
  return derive_seed(seed, "dedup", cluster_id);
}

namespace {

struct ClusterOutcome {
  std::vector<std::size_t> keep_order;  // local indices
  std::vector<std::int64_t> neighborhood;
  std::vector<char> kept;
  std::optional<BalanceState> balance;
};

void check_protos(const EmbeddingMatrix& matrix,
                  const ConceptPrototypeSet* protos, Heuristic h) {
  if (h != Heuristic::fairdedup) return;
  if (protos == nullptr) {
    throw ConfigError("fairdedup requires concept prototypes");
  }
  if (protos->size() == 0) {
    throw ConfigError("fairdedup needs at least one concept prototype");
  }
  if (protos->dim() != matrix.dim()) {
    throw DimensionError("prototype dimension does not match embeddings");
  }
}

ClusterOutcome run_cluster(const EmbeddingMatrix& sub,
                           std::span<const float> centroid,
                           const ConceptPrototypeSet* protos,
                           const DedupConfig& cfg, std::uint64_t seed) {
  const std::size_t q = sub.rows();
  ClusterOutcome out;
  out.neighborhood.assign(q, -1);
  out.kept.assign(q, 0);
  if (cfg.heuristic == Heuristic::semdedup) {
    const auto scores = semdedup_scores(sub, centroid, cfg.block_rows);
    std::int64_t ordinal = 0;
    for (std::size_t i : scores.order) {
      if (scores.max_prior_sim[i] <= 1.0 - cfg.epsilon) {
        out.kept[i] = 1;
        out.neighborhood[i] = ordinal++;
        out.keep_order.push_back(i);
      }
    }
    return out;
  }
  WalkResult w =
      cfg.heuristic == Heuristic::fairdedup
          ? fairdedup_select(sub, concept_similarities(sub, *protos),
                             cfg.epsilon, seed, cfg.visit_order)
          : random_select(sub, cfg.epsilon, seed, cfg.visit_order);
  for (std::size_t i = 0; i < q; ++i) {
    out.neighborhood[i] = static_cast<std::int64_t>(w.neighborhood_of[i]);
  }
  for (std::size_t i : w.kept) out.kept[i] = 1;
  out.keep_order = std::move(w.kept);
  if (cfg.heuristic == Heuristic::fairdedup) out.balance = std::move(w.balance);
  return out;
}

}  // namespace

KeepList dedup_dataset(const EmbeddingMatrix& matrix,
                       const ClusterAssignment& assignment,
                       const ConceptPrototypeSet* protos,
                       const DedupConfig& cfg) {
  cfg.validate();
  check_protos(matrix, protos, cfg.heuristic);
  if (assignment.size() != matrix.rows()) {
    throw ValidationError("assignment covers " +
                          std::to_string(assignment.size()) + " samples, matrix has " +
                          std::to_string(matrix.rows()));
  }
  if (assignment.centroids.dim() != matrix.dim()) {
    throw DimensionError("centroid dimension does not match embeddings");
  }
  const auto members = all_cluster_members(assignment);
  const std::size_t k = members.size();
  std::vector<ClusterOutcome> outcomes(k);
  parallel_for(k, cfg.workers, [&](std::size_t c) {
    if (members[c].empty()) return;
    const auto sub = subset(matrix, members[c]);
    outcomes[c] = run_cluster(sub, assignment.centroids.row(c), protos, cfg,
                              cluster_seed(cfg.seed, c));
  });

  KeepList keep;
  keep.heuristic = cfg.heuristic;
  keep.epsilon = cfg.epsilon;
  keep.decisions.resize(matrix.rows());
  keep.keep_order.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& mem = members[c];
    const auto& o = outcomes[c];
    for (std::size_t l = 0; l < mem.size(); ++l) {
      auto& d = keep.decisions[mem[l]];
      d.cluster = static_cast<std::uint32_t>(c);
      d.kept = o.kept[l] != 0;
      d.neighborhood = o.neighborhood[l];
    }
    for (std::size_t l : o.keep_order) keep.keep_order[c].push_back(mem[l]);
    if (o.balance) keep.balances.emplace(static_cast<std::uint32_t>(c), *o.balance);
  }
  return keep;
}

CalibrationResult calibrate_epsilon(const EmbeddingMatrix& matrix,
                                    const ClusterAssignment& assignment,
                                    const ConceptPrototypeSet* protos,
                                    const DedupConfig& cfg, double target_keep,
                                    double tol) {
  if (!(tol > 0.0)) throw ConfigError("calibration tolerance must be > 0");
  if (!(target_keep > 0.0 && target_keep <= 1.0)) {
    throw ConfigError("target keep fraction must lie in (0, 1]");
  }
  cfg.validate();
  check_protos(matrix, protos, cfg.heuristic);
  if (matrix.rows() == 0) throw ConfigError("cannot calibrate on an empty matrix");

  // The max-distance predicate only depends on epsilon through a threshold,
  // so its per-sample scores are computed once.
  std::vector<double> scores;
  if (cfg.heuristic == Heuristic::semdedup) {
    scores.assign(matrix.rows(), 0.0);
    const auto members = all_cluster_members(assignment);
    parallel_for(members.size(), cfg.workers, [&](std::size_t c) {
      if (members[c].empty()) return;
      const auto sub = subset(matrix, members[c]);
      const auto s = semdedup_scores(sub, assignment.centroids.row(c), cfg.block_rows);
      for (std::size_t l = 0; l < members[c].size(); ++l) {
        scores[members[c][l]] = s.max_prior_sim[l];
      }
    });
  }

  CalibrationResult result;
  auto evaluate = [&](double eps) {
    double frac;
    if (cfg.heuristic == Heuristic::semdedup) {
      std::size_t kept = 0;
      for (double s : scores) kept += s <= 1.0 - eps ? 1 : 0;
      frac = static_cast<double>(kept) / static_cast<double>(matrix.rows());
    } else {
      DedupConfig c = cfg;
      c.epsilon = eps;
      frac = dedup_dataset(matrix, assignment, protos, c).keep_fraction();
    }
    result.trace.emplace_back(eps, frac);
    return frac;
  };
  auto done = [&](double eps, double frac, bool attained) {
    result.epsilon = eps;
    result.keep_fraction = frac;
    result.attained = attained;
    return result;
  };

  double lo = 0.0;
  double hi = 1.0;
  const double f_lo = evaluate(lo);
  if (std::abs(f_lo - target_keep) <= tol) return done(lo, f_lo, true);
  if (f_lo < target_keep) return done(lo, f_lo, false);
  const double f_hi = evaluate(hi);
  if (std::abs(f_hi - target_keep) <= tol) {
    // Search for the smallest epsilon that still lands in the band.
  } else if (f_hi > target_keep) {
    return done(hi, f_hi, false);
  }
  double flo = f_lo;
  double fhi = f_hi;
  constexpr int kMaxSteps = 64;
  for (int step = 0; step < kMaxSteps && hi - lo > 1e-12; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double f = evaluate(mid);
    if (std::abs(f - target_keep) <= tol) return done(mid, f, true);
    if (f > target_keep) {
      lo = mid;
      flo = f;
    } else {
      hi = mid;
      fhi = f;
    }
  }
  if (std::abs(fhi - target_keep) <= tol) return done(hi, fhi, true);
  return std::abs(flo - target_keep) <= std::abs(fhi - target_keep)
             ? done(lo, flo, false)
             : done(hi, fhi, false);
}

void write_keep_list(const KeepList& keep, const EmbeddingMatrix& matrix,
                     const std::filesystem::path& path) {
  if (keep.decisions.size() != matrix.rows()) {
    throw ValidationError("keep list does not match matrix rows");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string heuristic = to_string(keep.heuristic);
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    const auto& d = keep.decisions[i];
    nlohmann::ordered_json rec;
    rec["id"] = matrix.id(i);
    rec["kept"] = d.kept;
    rec["cluster"] = d.cluster;
    if (d.neighborhood >= 0) {
      rec["neighborhood"] = d.neighborhood;
    } else {
      rec["neighborhood"] = nullptr;
    }
    rec["heuristic"] = heuristic;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<std::string> read_kept_ids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      if (rec.at("kept").get<bool>()) {
        ids.push_back(rec.at("id").is_string() ? rec.at("id").get<std::string>()
                                               : rec.at("id").dump());
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return ids;
}

}  // namespace dedupkit
