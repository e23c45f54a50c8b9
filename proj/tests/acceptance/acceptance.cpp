// Acceptance run: one PASS/FAIL line per headline property.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dedupkit/dedup.hpp"
#include "dedupkit/error.hpp"
#include "dedupkit/fairmetrics.hpp"
#include "dedupkit/partition.hpp"
#include "dedupkit/rng.hpp"
#include "dedupkit/synthstudy.hpp"
#include "oracles.hpp"

using namespace dedupkit;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kBalanceTol = 1e-12;
constexpr double kMetricTol = 1e-9;
constexpr double kCalibrationTol = 0.005;
constexpr double kSignificance = 0.01;
constexpr double kOracleBudgetS = 60.0;
constexpr double kCalibrationBudgetS = 300.0;
constexpr double kStudyBudgetS = 600.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SimilarityMatrix sims_of(const std::vector<std::vector<double>>& rows) {
  SimilarityMatrix s;
  s.rows = rows.size();
  s.cols = rows.empty() ? 0 : rows[0].size();
  for (const auto& r : rows) s.values.insert(s.values.end(), r.begin(), r.end());
  return s;
}

std::vector<float> mean_direction(const oracle::Rows& rows) {
  std::vector<double> m(rows[0].size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t t = 0; t < r.size(); ++t) m[t] += r[t];
  return oracle::unit(m);
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(9001);
  std::uniform_int_distribution<std::size_t> size(1, 200);
  std::uniform_real_distribution<double> eps_pick(0.0, 0.25);
  std::size_t mismatches = 0;
  std::size_t checks = 0;
  for (int c = 0; c < 100; ++c) {
    const auto rows = oracle::duplicate_rich_cluster(gen, size(gen), 16);
    const auto x = oracle::matrix_of(rows, 16);
    const auto stored = oracle::rows_of(x);
    const auto centroid = mean_direction(stored);
    for (double eps : {0.0, 0.002, 0.02, 0.1, eps_pick(gen)}) {
      ++checks;
      if (semdedup_filter(x, centroid, eps) != oracle::semdedup_bruteforce(stored, centroid, eps))
        ++mismatches;
    }
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < kOracleBudgetS,
          std::to_string(checks) + " cluster/epsilon pairs, " + std::to_string(mismatches) +
              " mismatches, " + fmt("%.2f s", s)};
}

Outcome fairdedup_equivalence() {
  std::mt19937_64 gen(9002);
  std::uniform_int_distribution<std::size_t> size(1, 100);
  std::uniform_int_distribution<std::size_t> concepts(1, 5);
  std::uniform_real_distribution<double> eps_pick(0.0, 0.3);
  std::uniform_real_distribution<double> sim(-0.3, 0.9);
  std::size_t bad = 0;
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = size(gen);
    const std::size_t m = concepts(gen);
    const auto x = oracle::matrix_of(oracle::duplicate_rich_cluster(gen, n, 8), 8);
    std::vector<std::vector<double>> s(n, std::vector<double>(m));
    for (auto& r : s)
      for (auto& v : r) v = sim(gen);
    const double eps = eps_pick(gen);
    const std::uint64_t seed = 77 + c;
    const auto visit = Rng(seed).permutation(n);
    const auto w = fairdedup_select(x, sims_of(s), eps, seed, VisitOrder::shuffled);
    const auto ref = oracle::fairdedup_reference(oracle::rows_of(x), s, eps, visit);
    bool ok = w.kept == ref.kept && w.balance.count == ref.count &&
              w.balance.sums.size() == ref.sums.size();
    for (std::size_t i = 0; ok && i < m; ++i) {
      const double diff = std::abs(w.balance.sums[i] - ref.sums[i]);
      worst = std::max(worst, diff);
      ok = diff <= kBalanceTol;
    }
    bad += ok ? 0 : 1;
  }
  return {bad == 0, "100 clusters, " + std::to_string(bad) + " mismatches, max balance diff " +
                        fmt("%.3g", worst)};
}

SynthSpec planted_spec(std::size_t clusters, std::size_t per_major, std::size_t per_minor,
                       std::size_t d, double sigma, std::uint64_t seed) {
  SynthSpec s;
  s.d = d;
  s.seed = seed;
  for (std::size_t i = 0; i < clusters; ++i) {
    SynthCluster c;
    c.angular_noise = sigma;
    c.groups = {{"majority", per_major, 2}, {"minority", per_minor, 1}};
    s.clusters.push_back(c);
  }
  return s;
}

Outcome calibration() {
  const auto t0 = Clock::now();
  // 250 clusters x (80 doubled + 40 single) = 50,000 rows.
  const auto ds = generate(planted_spec(250, 80, 40, 32, 0.05, 4242));
  KMeansConfig km;
  km.k = 250;
  km.seed = 4242;
  const auto assign = kmeans(ds.embeddings, km);
  DedupConfig cfg;
  cfg.heuristic = Heuristic::semdedup;
  const auto cal = calibrate_epsilon(ds.embeddings, assign, nullptr, cfg, 0.5, kCalibrationTol);
  cfg.epsilon = cal.epsilon;
  const double realized = dedup_dataset(ds.embeddings, assign, nullptr, cfg).keep_fraction();
  bool monotone = true;
  double prev = 2.0;
  for (int i = 0; i < 200; ++i) {
    cfg.epsilon = static_cast<double>(i) / 199.0;
    const double f = dedup_dataset(ds.embeddings, assign, nullptr, cfg).keep_fraction();
    if (f > prev) monotone = false;
    prev = f;
  }
  const double s = seconds_since(t0);
  const bool hit = cal.attained && std::abs(realized - 0.5) <= kCalibrationTol &&
                   realized == cal.keep_fraction;
  return {hit && monotone && s < kCalibrationBudgetS,
          std::to_string(ds.embeddings.rows()) + " rows, epsilon " + fmt("%.6f", cal.epsilon) +
              ", keep " + fmt("%.4f", realized) + ", 200-point sweep " +
              (monotone ? "monotone" : "NOT monotone") + ", " + fmt("%.1f s", s)};
}

LabeledTable binary_table(const std::vector<std::string>& values) {
  LabeledTable t({"g"});
  for (std::size_t i = 0; i < values.size(); ++i) t.add({"s" + std::to_string(i), "c", "c", {values[i]}});
  return t;
}

RankedRetrieval in_order(std::size_t n, std::size_t k) {
  RankedRetrieval r;
  r.query = "q";
  for (std::size_t i = 0; i < n; ++i) r.ranking.push_back("s" + std::to_string(i));
  r.k = k;
  return r;
}

Outcome metrics() {
  const double delta = kDefaultSmoothing;
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

  const auto t4 = binary_table({"x", "y", "y", "y"});
  const DesiredDistribution d4{"g", {"x", "y"}, {0.25, 0.75}};
  const auto r2 = in_order(4, 2);
  track(skew(r2, t4, d4, "x", 0.0), std::log(2.0));
  track(skew(r2, t4, d4, "x"),
        std::log(oracle::smoothed(0.5, delta, 2) / oracle::smoothed(0.25, delta, 2)));
  const auto e0 = max_min_skew(r2, t4, d4, 0.0);
  track(e0.max_skew, std::log(2.0));
  track(e0.min_skew_abs, std::abs(std::log(2.0 / 3.0)));

  std::vector<std::string> ten(10, "y");
  ten[0] = "x";
  const DesiredDistribution d10{"g", {"x", "y"}, {0.2, 0.8}};
  track(skew(in_order(10, 10), binary_table(ten), d10, "x", 0.0), std::log(0.5));

  const DesiredDistribution even{"g", {"x", "y"}, {0.5, 0.5}};
  const auto t2 = binary_table({"x", "x", "y", "y"});
  const double p1 = oracle::smoothed(1.0, delta, 2);
  const double p0 = oracle::smoothed(0.0, delta, 2);
  const double q = oracle::smoothed(0.5, delta, 2);
  const double kl = p1 * std::log(p1 / q) + p0 * std::log(p0 / q);
  track(ndkl(r2, t2, even), kl);

  // Full-corpus prefix on random corpora.
  std::mt19937_64 gen(9003);
  std::uniform_int_distribution<int> pick(0, 3);
  double zero_worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    std::vector<std::string> vals;
    for (int i = 0; i < 50 + c; ++i) vals.push_back(std::string(1, static_cast<char>('a' + pick(gen))));
    const auto t = binary_table(vals);
    const auto d = DesiredDistribution::from_corpus(t, "g");
    if (d.values.size() < 2) continue;
    const auto e = max_min_skew(in_order(vals.size(), vals.size()), t, d);
    zero_worst = std::max({zero_worst, std::abs(e.max_skew), std::abs(e.min_skew_abs)});
  }

  // Gap over fuzzed recall tables, against arithmetic from raw counts.
  std::uniform_int_distribution<int> classes(1, 6);
  std::uniform_int_distribution<int> support(0, 40);
  std::uniform_int_distribution<int> floor_pick(1, 30);
  std::size_t gap_bad = 0;
  for (int c = 0; c < 10000; ++c) {
    LabeledTable t({"g"});
    const int nc = classes(gen);
    const auto ms = static_cast<std::size_t>(floor_pick(gen));
    std::vector<double> expect;
    for (int k = 0; k < nc; ++k) {
      const std::string cls = "k" + std::to_string(k);
      int n[2];
      int hit[2];
      for (int g = 0; g < 2; ++g) {
        n[g] = support(gen);
        hit[g] = n[g] == 0 ? 0 : std::uniform_int_distribution<int>(0, n[g])(gen);
        for (int i = 0; i < n[g]; ++i)
          t.add({cls + "_" + std::to_string(g) + "_" + std::to_string(i), cls,
                 i < hit[g] ? cls : "miss", {g == 0 ? "f" : "m"}});
      }
      if (n[0] >= static_cast<int>(ms) && n[1] >= static_cast<int>(ms))
        expect.push_back(static_cast<double>(hit[0]) / n[0] - static_cast<double>(hit[1]) / n[1]);
    }
    try {
      const auto rep = disparity_report(t, "g", "f", "m", ms);
      double mean = 0.0;
      double mx = 0.0;
      for (double v : expect) {
        mean += std::abs(v);
        mx = std::max(mx, std::abs(v));
      }
      mean /= static_cast<double>(expect.size());
      const bool ok = !expect.empty() && rep.included.size() == expect.size() &&
                      std::abs(rep.summary.mean - mean) < 1e-12 && rep.summary.max == mx &&
                      rep.summary.gap == rep.summary.max - rep.summary.mean &&
                      std::abs(rep.summary.gap - (mx - mean)) < 1e-12;
      gap_bad += ok ? 0 : 1;
    } catch (const EmptyReportError&) {
      gap_bad += expect.empty() ? 0 : 1;
    }
  }
  const bool pass = worst < kMetricTol && zero_worst < kMetricTol && gap_bad == 0;
  return {pass, "hand values max err " + fmt("%.3g", worst) + ", k=n max |metric| " +
                    fmt("%.3g", zero_worst) + ", gap fuzz 10000 cases, " +
                    std::to_string(gap_bad) + " failures"};
}

Outcome gap_arithmetic() {
  const auto g = aggregate_disparities(std::vector<double>{0.303, -0.009, 0.0});
  const bool ok = std::abs(g.mean - 0.104) < 1e-12 && g.max == 0.303 &&
                  std::abs(g.gap - 0.199) < 1e-12 && g.gap == g.max - g.mean;
  // Reference (mean, max, gap) rows satisfy gap = max - mean at 3 d.p.
  const double rows[12][3] = {{.104, .303, .199}, {.113, .346, .233}, {.109, .298, .189},
                              {.100, .354, .254}, {.112, .342, .230}, {.105, .320, .215},
                              {.063, .268, .205}, {.059, .230, .171}, {.075, .225, .150},
                              {.098, .252, .154}, {.096, .248, .152}, {.087, .153, .066}};
  std::size_t bad = 0;
  for (const auto& r : rows) bad += std::abs((r[1] - r[0]) - r[2]) < 5e-4 ? 0 : 1;
  return {ok && bad == 0, "mean " + fmt("%.3f", g.mean) + ", max " + fmt("%.3f", g.max) +
                              ", gap " + fmt("%.12f", g.gap) + "; reference rows consistent: " +
                              std::to_string(12 - bad) + "/12"};
}

Outcome retention_direction() {
  const auto t0 = Clock::now();
  const auto spec = SynthSpec::from_json_file(fs::path(DEDUPKIT_DATA_DIR) / "study_duplicate_skew.json");
  StudyConfig cfg;
  cfg.n_trials = 10;
  const auto r = retention_study(spec, cfg);
  const double s = seconds_since(t0);
  const bool order = r.mean_full >= r.mean_fairdedup && r.mean_fairdedup >= r.mean_semdedup;
  const bool sig = r.test.p_two_sided < kSignificance && r.test.mean_diff > 0.0;
  return {order && sig && s < kStudyBudgetS,
          "full " + fmt("%.4f", r.mean_full) + ", fairdedup " + fmt("%.4f", r.mean_fairdedup) +
              ", semdedup " + fmt("%.4f", r.mean_semdedup) + ", t " + fmt("%.3f", r.test.t) +
              ", p " + fmt("%.3g", r.test.p_two_sided) + ", " + fmt("%.1f s", s)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// cluster -> calibrated fairdedup -> retrieval audit, all outputs to `dir`.
void run_pipeline(const SynthDataset& ds, std::size_t workers, const fs::path& dir) {
  fs::create_directories(dir);
  embedstore::write_embeddings(ds.embeddings, dir / "embeddings.emb");
  KMeansConfig km;
  km.k = 12;
  km.seed = derive_seed(31, "cluster", 0);
  km.workers = workers;
  const auto assign = kmeans(ds.embeddings, km);
  write_assignment(assign, ds.embeddings, dir / "assignment.jsonl", dir / "centroids.emb");
  DedupConfig cfg;
  cfg.heuristic = Heuristic::fairdedup;
  cfg.seed = derive_seed(31, "dedup", 0);
  cfg.workers = workers;
  const auto cal = calibrate_epsilon(ds.embeddings, assign, &ds.prototypes, cfg, 0.5, kCalibrationTol);
  cfg.epsilon = cal.epsilon;
  const auto keep = dedup_dataset(ds.embeddings, assign, &ds.prototypes, cfg);
  write_keep_list(keep, ds.embeddings, dir / "keep_list.jsonl");
  const auto kept = subset(ds.embeddings, keep.kept());
  RetrievalAuditConfig ac;
  ac.k = 100;
  ac.workers = workers;
  const auto& names = ds.prototypes.names();
  const auto audits = audit_retrievals(names, kept, ds.prototypes.vectors(),
                                       ds.labels.restrict_to(kept.ids()), ac);
  std::ofstream out(dir / "audit.json", std::ios::binary);
  for (const auto& a : audits) out << to_json(a, true).dump() << "\n";
}

Outcome determinism() {
  SynthSpec spec = planted_spec(12, 60, 20, 24, 0.05, 31);
  const auto ds = generate(spec);
  const fs::path root = fs::temp_directory_path() / ("dedupkit_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  run_pipeline(ds, 1, root / "a");
  run_pipeline(generate(spec), 1, root / "b");
  run_pipeline(ds, 8, root / "c");
  std::size_t differing = 0;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    const auto name = e.path().filename();
    ++files;
    const auto ref = slurp(e.path());
    if (ref.empty() || slurp(root / "b" / name) != ref || slurp(root / "c" / name) != ref) ++differing;
  }
  fs::remove_all(root);
  return {differing == 0 && files == 5, std::to_string(files) + " output files x 3 runs (workers 1, 1, 8), " +
                                            std::to_string(differing) + " differ"};
}

double two_partition_objective(const oracle::Rows& x, std::uint64_t mask) {
  const std::size_t d = x[0].size();
  std::vector<double> s[2] = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  std::size_t n[2] = {0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int g = (mask >> i) & 1;
    ++n[g];
    for (std::size_t t = 0; t < d; ++t) s[g][t] += x[i][t];
  }
  double obj = 0.0;
  for (int g = 0; g < 2; ++g) {
    double len = 0.0;
    for (double v : s[g]) len += v * v;
    obj += static_cast<double>(n[g]) - std::sqrt(len);
  }
  return obj;
}

// Best spherical 2-partition of 3-d points. Optimal partitions are cut by a
// plane through the origin, and every such cut can be rotated onto two
// points, so enumerating planes spanned by point pairs (with both sides for
// the two points on it) covers all candidates.
std::uint64_t best_plane_partition(const oracle::Rows& x) {
  const std::size_t n = x.size();
  std::uint64_t best = 0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w[3] = {
          static_cast<double>(x[i][1]) * x[j][2] - static_cast<double>(x[i][2]) * x[j][1],
          static_cast<double>(x[i][2]) * x[j][0] - static_cast<double>(x[i][0]) * x[j][2],
          static_cast<double>(x[i][0]) * x[j][1] - static_cast<double>(x[i][1]) * x[j][0]};
      std::uint64_t base = 0;
      for (std::size_t p = 0; p < n; ++p) {
        if (p == i || p == j) continue;
        const double side = w[0] * x[p][0] + w[1] * x[p][1] + w[2] * x[p][2];
        if (side > 0.0) base |= std::uint64_t{1} << p;
      }
      for (int combo = 0; combo < 4; ++combo) {
        std::uint64_t mask = base;
        if (combo & 1) mask |= std::uint64_t{1} << i;
        if (combo & 2) mask |= std::uint64_t{1} << j;
        if (mask == 0 || mask == (std::uint64_t{1} << n) - 1) continue;
        const double obj = two_partition_objective(x, mask);
        if (obj < best_obj) {
          best_obj = obj;
          best = mask;
        }
      }
    }
  }
  return best;
}

Outcome kmeans_properties() {
  std::mt19937_64 gen(9004);
  std::size_t rises = 0;
  std::size_t runs = 0;
  for (int c = 0; c < 10; ++c) {
    oracle::Rows rows;
    for (int b = 0; b < 8; ++b) {
      const auto center = oracle::random_unit(gen, 12);
      for (int i = 0; i < 50; ++i) rows.push_back(oracle::jitter(gen, center, 0.2));
    }
    KMeansConfig km;
    km.k = 8 + c;
    km.seed = 500 + c;
    km.tol = 0.0;
    const auto a = kmeans(oracle::matrix_of(rows, 12), km);
    for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
      rises += a.inertia_history[i] > a.inertia_history[i - 1] ? 1 : 0;
    ++runs;
  }
  std::size_t blob_bad = 0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    std::mt19937_64 g(seed);
    const auto c = oracle::random_unit(g, 3);
    const std::vector<float> minus{-c[0], -c[1], -c[2]};
    oracle::Rows rows;
    for (int i = 0; i < 20; ++i) rows.push_back(oracle::jitter(g, c, 0.01));
    for (int i = 0; i < 20; ++i) rows.push_back(oracle::jitter(g, minus, 0.01));
    const std::uint64_t best = best_plane_partition(rows);
    KMeansConfig km;
    km.k = 2;
    km.seed = seed;
    const auto a = kmeans(oracle::matrix_of(rows, 3), km);
    const bool first_side = best & 1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const bool same = a.assignments[i] == a.assignments[0];
      if (same != ((((best >> i) & 1) != 0) == first_side)) ++blob_bad;
    }
  }
  return {rises == 0 && blob_bad == 0,
          std::to_string(runs) + " runs with " + std::to_string(rises) +
              " inertia increases; two 20-point blobs x 5 seeds, " + std::to_string(blob_bad) +
              " rows off the exhaustive optimum"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"semdedup oracle equivalence", oracle_equivalence},
      {"fairdedup loop equivalence", fairdedup_equivalence},
      {"epsilon calibration", calibration},
      {"metric correctness", metrics},
      {"disparity gap arithmetic", gap_arithmetic},
      {"minority mass retention direction", retention_direction},
      {"pipeline determinism", determinism},
      {"k-means properties", kmeans_properties},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
