#include "dedupkit/synthstudy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dedupkit/error.hpp"
#include "dedupkit/parallel.hpp"
#include "dedupkit/partition.hpp"
#include "dedupkit/rng.hpp"

namespace dedupkit {

void SynthSpec::validate() const {
  if (d < 2) throw ConfigError("synthetic dimension must be >= 2");
  if (clusters.empty()) throw ValidationError("synthetic spec needs at least one cluster");
  if (!(label_separation >= 0.0) || !std::isfinite(label_separation)) {
    throw ValidationError("label_separation must be finite and >= 0");
  }
  if (attribute.empty()) throw ValidationError("attribute name is empty");
  for (const auto& c : clusters) {
    if (!(c.angular_noise >= 0.0) || !std::isfinite(c.angular_noise)) {
      throw ValidationError("angular_noise must be finite and >= 0");
    }
    for (const auto& g : c.groups) {
      if (g.label.empty()) throw ValidationError("group label is empty");
      if (g.duplicate_multiplicity == 0) {
        throw ValidationError("duplicate_multiplicity must be >= 1");
      }
    }
  }
}

std::size_t SynthSpec::total_rows() const {
  std::size_t n = 0;
  for (const auto& c : clusters) {
    for (const auto& g : c.groups) n += g.count * g.duplicate_multiplicity;
  }
  return n;
}

std::vector<std::string> SynthSpec::labels() const {
  std::vector<std::string> out;
  for (const auto& c : clusters) {
    for (const auto& g : c.groups) {
      if (std::find(out.begin(), out.end(), g.label) == out.end()) {
        out.push_back(g.label);
      }
    }
  }
  return out;
}

std::string SynthSpec::modal_label() const {
  const auto names = labels();
  if (names.empty()) throw ValidationError("synthetic spec has no groups");
  std::map<std::string, std::size_t> rows;
  for (const auto& c : clusters) {
    for (const auto& g : c.groups) rows[g.label] += g.count * g.duplicate_multiplicity;
  }
  std::string best = names.front();
  for (const auto& l : names) {
    if (rows[l] > rows[best]) best = l;
  }
  return best;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.d = j.value("d", s.d);
    s.seed = j.value("seed", s.seed);
    s.label_separation = j.value("label_separation", s.label_separation);
    s.attribute = j.value("attribute", s.attribute);
    for (const auto& jc : j.at("clusters")) {
      SynthCluster c;
      if (jc.contains("center_seed")) c.center_seed = jc.at("center_seed").get<std::uint64_t>();
      c.angular_noise = jc.value("angular_noise", c.angular_noise);
      for (const auto& jg : jc.at("groups")) {
        SynthGroup g;
        g.label = jg.at("label").get<std::string>();
        const auto count = jg.at("count").get<long long>();
        const auto mult = jg.value("duplicate_multiplicity", 1LL);
        if (count < 0) throw ValidationError("group count must be >= 0");
        if (mult < 1) throw ValidationError("duplicate_multiplicity must be >= 1");
        g.count = static_cast<std::size_t>(count);
        g.duplicate_multiplicity = static_cast<std::size_t>(mult);
        c.groups.push_back(std::move(g));
      }
      const auto repeat = jc.value("repeat", 1LL);
      if (repeat < 1) throw ValidationError("cluster repeat must be >= 1");
      for (long long r = 1; r < repeat; ++r) s.clusters.push_back(c);
      s.clusters.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthSpec SynthSpec::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("synthetic spec: ") + e.what());
  }
  return from_json(j);
}

SynthSpec SynthSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

nlohmann::ordered_json SynthSpec::to_json() const {
  nlohmann::ordered_json j;
  j["d"] = d;
  j["seed"] = seed;
  j["label_separation"] = label_separation;
  j["attribute"] = attribute;
  auto& cs = j["clusters"] = nlohmann::ordered_json::array();
  for (const auto& c : clusters) {
    nlohmann::ordered_json jc;
    if (c.center_seed) jc["center_seed"] = *c.center_seed;
    jc["angular_noise"] = c.angular_noise;
    auto& gs = jc["groups"] = nlohmann::ordered_json::array();
    for (const auto& g : c.groups) {
      gs.push_back({{"label", g.label},
                    {"count", g.count},
                    {"duplicate_multiplicity", g.duplicate_multiplicity}});
    }
    cs.push_back(std::move(jc));
  }
  return j;
}

namespace {

using Vec = std::vector<double>;

double vnorm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void normalize(Vec& v) {
  const double n = vnorm(v);
  for (double& x : v) x /= n;
}

Vec gaussian(Rng& rng, std::size_t d) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

// Removes the components along an orthonormal basis. Returns false when
// nothing is left, leaving `v` untouched.
bool orthogonalize(Vec& v, const std::vector<Vec>& basis) {
  Vec w = v;
  for (const auto& b : basis) {
    double p = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) p += w[i] * b[i];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= p * b[i];
  }
  if (vnorm(w) < 1e-6 * vnorm(v)) return false;
  v = std::move(w);
  return true;
}

}  // namespace

SynthDataset generate(const SynthSpec& spec, std::size_t trial) {
  spec.validate();
  const std::size_t d = spec.d;
  const std::uint64_t tseed = derive_seed(spec.seed, "synth", trial);
  const auto label_names = spec.labels();

  std::vector<Vec> centers;
  std::vector<Vec> basis;
  for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
    const auto& cl = spec.clusters[c];
    Rng rng(cl.center_seed ? derive_seed(*cl.center_seed, "center")
                           : derive_seed(tseed, "center", c));
    Vec v = gaussian(rng, d);
    normalize(v);
    centers.push_back(v);
    if (orthogonalize(v, basis)) {
      normalize(v);
      basis.push_back(std::move(v));
    }
  }
  std::map<std::string, Vec> directions;
  for (std::size_t l = 0; l < label_names.size(); ++l) {
    Rng rng(derive_seed(tseed, "label", l));
    Vec v = gaussian(rng, d);
    if (orthogonalize(v, basis)) {
      normalize(v);
      basis.push_back(v);
    } else {
      normalize(v);
    }
    directions[label_names[l]] = std::move(v);
  }

  SynthDataset out;
  out.labels = LabeledTable({spec.attribute});
  std::map<std::string, Vec> proto_sums;
  for (const auto& l : label_names) proto_sums[l] = Vec(d, 0.0);

  std::vector<float> values;
  values.reserve(spec.total_rows() * d);
  std::vector<std::string> ids;
  auto emit = [&](const Vec& v, std::size_t c, const std::string& label) {
    for (double x : v) values.push_back(static_cast<float>(x));
    const std::string id = "s" + std::to_string(ids.size());
    ids.push_back(id);
    out.row_labels.push_back(label);
    out.row_clusters.push_back(static_cast<std::uint32_t>(c));
    const std::string cls = "c" + std::to_string(c);
    out.labels.add({id, cls, cls, {label}});
  };

  for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
    const auto& cl = spec.clusters[c];
    Rng rng(derive_seed(tseed, "points", c));
    const double sigma = cl.angular_noise;
    for (const auto& g : cl.groups) {
      Vec center = centers[c];
      const Vec& dir = directions[g.label];
      for (std::size_t i = 0; i < d; ++i) center[i] += spec.label_separation * dir[i];
      normalize(center);
      Vec& ps = proto_sums[g.label];
      for (std::size_t i = 0; i < d; ++i) ps[i] += center[i];

      for (std::size_t b = 0; b < g.count; ++b) {
        Vec base = center;
        for (double& x : base) x += sigma * rng.normal();
        normalize(base);
        if (g.duplicate_multiplicity == 1) {
          emit(base, c, g.label);
          continue;
        }
        for (std::size_t m = 0; m < g.duplicate_multiplicity; ++m) {
          Vec copy = base;
          for (double& x : copy) x += 0.1 * sigma * rng.normal();
          normalize(copy);
          emit(copy, c, g.label);
        }
      }
    }
  }
  out.embeddings = EmbeddingMatrix(d, std::move(values), std::move(ids));

  std::vector<float> pv;
  std::vector<std::string> pnames;
  for (const auto& l : label_names) {
    Vec v = proto_sums[l];
    if (vnorm(v) < 1e-12) throw DegenerateConceptError("label '" + l + "' has no center");
    normalize(v);
    for (double x : v) pv.push_back(static_cast<float>(x));
    pnames.push_back(l);
  }
  out.prototypes = ConceptPrototypeSet(pnames, EmbeddingMatrix(d, std::move(pv), pnames));
  return out;
}

void StudyConfig::validate() const {
  if (n_trials < 2) throw ConfigError("retention study needs at least 2 trials");
  if (!(target_keep > 0.0 && target_keep <= 1.0)) {
    throw ConfigError("target keep fraction must lie in (0, 1]");
  }
  if (!(tol > 0.0)) throw ConfigError("calibration tolerance must be > 0");
  if (workers == 0) throw ConfigError("workers must be >= 1");
}

double minority_mass(const std::vector<std::string>& row_labels,
                     const std::vector<std::string>& minority,
                     const std::vector<bool>& keep) {
  if (!keep.empty() && keep.size() != row_labels.size()) {
    throw ValidationError("keep mask does not match rows");
  }
  std::size_t total = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < row_labels.size(); ++i) {
    if (!keep.empty() && !keep[i]) continue;
    ++total;
    if (std::find(minority.begin(), minority.end(), row_labels[i]) != minority.end()) {
      ++hits;
    }
  }
  if (total == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(total);
}

TrialOutcome run_trial(const SynthSpec& spec, std::size_t trial,
                       const StudyConfig& cfg,
                       const std::vector<std::string>& minority) {
  const SynthDataset data = generate(spec, trial);
  const auto& x = data.embeddings;
  if (x.rows() == 0) throw ValidationError("synthetic spec produces no rows");

  TrialOutcome t;
  t.trial = trial;
  t.seed = derive_seed(spec.seed, "synth", trial);
  t.rows = x.rows();
  t.full_mass = minority_mass(data.row_labels, minority);

  KMeansConfig km;
  km.k = std::min(cfg.k == 0 ? spec.clusters.size() : cfg.k, x.rows());
  km.max_iters = cfg.kmeans_max_iters;
  km.tol = cfg.kmeans_tol;
  km.seed = t.seed;
  const ClusterAssignment assignment = kmeans(x, km);

  auto run = [&](Heuristic h, double target, double tol, double& mass,
                 double& keep, double& eps, bool& attained) {
    DedupConfig dc;
    dc.heuristic = h;
    dc.seed = t.seed;
    dc.visit_order = cfg.visit_order;
    const auto cal =
        calibrate_epsilon(x, assignment, &data.prototypes, dc, target, tol);
    dc.epsilon = cal.epsilon;
    const KeepList kl = dedup_dataset(x, assignment, &data.prototypes, dc);
    std::vector<bool> mask(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) mask[i] = kl.decisions[i].kept;
    mass = minority_mass(data.row_labels, minority, mask);
    keep = kl.keep_fraction();
    eps = cal.epsilon;
    attained = cal.attained;
  };
  // FairDeDup is calibrated to the target; SemDeDup, whose keep count moves
  // one sample at a time, is then matched to the exact same count.
  run(Heuristic::fairdedup, cfg.target_keep, cfg.tol, t.fairdedup_mass,
      t.fairdedup_keep, t.fairdedup_epsilon, t.fairdedup_attained);
  run(Heuristic::semdedup, t.fairdedup_keep,
      0.5 / static_cast<double>(x.rows()), t.semdedup_mass, t.semdedup_keep,
      t.semdedup_epsilon, t.semdedup_attained);
  return t;
}

RetentionReport retention_study(const SynthSpec& spec, const StudyConfig& cfg) {
  spec.validate();
  cfg.validate();
  RetentionReport report;
  if (cfg.minority_labels.empty()) {
    const std::string modal = spec.modal_label();
    for (const auto& l : spec.labels()) {
      if (l != modal) report.minority_labels.push_back(l);
    }
  } else {
    const auto known = spec.labels();
    for (const auto& l : cfg.minority_labels) {
      if (std::find(known.begin(), known.end(), l) == known.end()) {
        throw VocabularyError("minority label '" + l + "' not in spec");
      }
    }
    report.minority_labels = cfg.minority_labels;
  }

  report.trials.resize(cfg.n_trials);
  parallel_for(cfg.n_trials, cfg.workers, [&](std::size_t i) {
    report.trials[i] = run_trial(spec, i, cfg, report.minority_labels);
  });

  std::vector<double> fdd;
  std::vector<double> sdd;
  for (const auto& t : report.trials) {
    report.mean_full += t.full_mass;
    report.mean_semdedup += t.semdedup_mass;
    report.mean_fairdedup += t.fairdedup_mass;
    fdd.push_back(t.fairdedup_mass);
    sdd.push_back(t.semdedup_mass);
  }
  const double n = static_cast<double>(cfg.n_trials);
  report.mean_full /= n;
  report.mean_semdedup /= n;
  report.mean_fairdedup /= n;
  report.test = paired_t_test(fdd, sdd);
  return report;
}

nlohmann::ordered_json to_json(const RetentionReport& report) {
  nlohmann::ordered_json j;
  j["minority_labels"] = report.minority_labels;
  j["means"] = {{"full", report.mean_full},
                {"semdedup", report.mean_semdedup},
                {"fairdedup", report.mean_fairdedup}};
  const auto& t = report.test;
  j["paired_t"] = {{"n", t.n},
                   {"mean_diff", t.mean_diff},
                   {"sd_diff", t.sd_diff},
                   {"t", t.degenerate ? nlohmann::ordered_json(nullptr)
                                      : nlohmann::ordered_json(t.t)},
                   {"p_two_sided", t.p_two_sided},
                   {"p_greater", t.p_greater},
                   {"exact_tie", t.degenerate}};
  auto& trials = j["trials"] = nlohmann::ordered_json::array();
  for (const auto& tr : report.trials) {
    trials.push_back({{"trial", tr.trial},
                      {"seed", tr.seed},
                      {"rows", tr.rows},
                      {"full", tr.full_mass},
                      {"semdedup", tr.semdedup_mass},
                      {"fairdedup", tr.fairdedup_mass},
                      {"semdedup_keep", tr.semdedup_keep},
                      {"fairdedup_keep", tr.fairdedup_keep},
                      {"semdedup_epsilon", tr.semdedup_epsilon},
                      {"fairdedup_epsilon", tr.fairdedup_epsilon},
                      {"semdedup_attained", tr.semdedup_attained},
                      {"fairdedup_attained", tr.fairdedup_attained}});
  }
  return j;
}

std::string render_table(const RetentionReport& report) {
  std::string labels;
  for (const auto& l : report.minority_labels) {
    if (!labels.empty()) labels += ", ";
    labels += l;
  }
  double keep_sdd = 0.0;
  double keep_fdd = 0.0;
  for (const auto& t : report.trials) {
    keep_sdd += t.semdedup_keep;
    keep_fdd += t.fairdedup_keep;
  }
  const double n = std::max<double>(1.0, static_cast<double>(report.trials.size()));
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "Minority mass (%s), %zu trials\n", labels.c_str(),
                report.trials.size());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %10s %8s\n", "Data", "Minority %", "Keep");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %10.2f %8.3f\n", "Full", 100.0 * report.mean_full, 1.0);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %10.2f %8.3f\n", "SemDeDup",
                100.0 * report.mean_semdedup, keep_sdd / n);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %10.2f %8.3f\n", "FairDeDup",
                100.0 * report.mean_fairdedup, keep_fdd / n);
  out += buf;
  const auto& t = report.test;
  if (t.degenerate) {
    std::snprintf(buf, sizeof buf,
                  "FairDeDup - SemDeDup: %+.2f pp, identical in every trial (exact tie)\n",
                  100.0 * t.mean_diff);
  } else {
    std::snprintf(buf, sizeof buf, "FairDeDup - SemDeDup: %+.2f pp, t=%.3f, p=%.3g\n",
                  100.0 * t.mean_diff, t.t, t.p_two_sided);
  }
  out += buf;
  return out;
}

}  // namespace dedupkit
