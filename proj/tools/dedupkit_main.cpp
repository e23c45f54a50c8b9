// dedupkit: cluster, deduplicate and audit embedding datasets.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dedupkit/dedup.hpp"
#include "dedupkit/embedstore.hpp"
#include "dedupkit/error.hpp"
#include "dedupkit/fairmetrics.hpp"
#include "dedupkit/labels.hpp"
#include "dedupkit/partition.hpp"
#include "dedupkit/prototypes.hpp"
#include "dedupkit/rng.hpp"
#include "dedupkit/synthstudy.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace dedupkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNotAttained = 4;

// JSON config files. Top-level scalars apply to the running subcommand; an
// object keyed by a subcommand name applies only to that subcommand.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string section) : section_(std::move(section)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return {};
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    add_items(j, items, /*nested=*/false);
    if (j.contains(section_) && j[section_].is_object()) {
      add_items(j[section_], items, /*nested=*/true);
    }
    return items;
  }

 private:
  void add_items(const nlohmann::json& obj, std::vector<CLI::ConfigItem>& items,
                 bool nested) const {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) continue;
      if (!nested && obj.contains(section_) && obj[section_].is_object() &&
          obj[section_].contains(key)) {
        continue;
      }
      CLI::ConfigItem item;
      item.parents = {section_};
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  std::string section_;
};

struct Common {
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out-dir,-o", c.out_dir, "Directory receiving all outputs")->required();
  sub->add_option("--seed", c.seed, "Root seed for every random sub-stream");
  sub->add_option("--workers,-j", c.workers, "Worker threads")
      ->check(CLI::PositiveNumber);
}

fs::path prepare_out_dir(const Common& c) {
  fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'");
  }
  return dir;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

// Effective option values of `sub` (flags, then config, then defaults).
// Worker count and output directory do not affect results and are left out.
ordered_json resolved_options(const CLI::App* sub) {
  std::map<std::string, ordered_json> sorted;
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string key = opt->get_single_name();
    if (key.empty() || key == "help" || key == "out-dir" || key == "workers") continue;
    const auto& res = opt->results();
    if (!res.empty()) {
      sorted[key] = res.size() == 1 ? ordered_json(res.front()) : ordered_json(res);
    } else if (!opt->get_default_str().empty()) {
      sorted[key] = opt->get_default_str();
    } else {
      sorted[key] = nullptr;
    }
  }
  ordered_json j = ordered_json::object();
  for (auto& [k, v] : sorted) j[k] = std::move(v);
  return j;
}

void write_manifest(const fs::path& dir, const CLI::App* sub, const Common& c,
                    const std::vector<std::string>& outputs,
                    ordered_json extra = ordered_json::object()) {
  ordered_json m;
  m["command"] = sub->get_name();
  const ordered_json config = resolved_options(sub);
  m["config_hash"] = "fnv1a64:" + hex64(fnv1a64(config.dump()));
  m["config"] = config;
  m["seeds"] = {{"root", c.seed},
                {"cluster", derive_seed(c.seed, "cluster")},
                {"dedup", derive_seed(c.seed, "dedup")},
                {"synth", derive_seed(c.seed, "synth")}};
  m["outputs"] = outputs;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_json(dir / "manifest.json", m);
}

// ---------------------------------------------------------------------------

struct ClusterArgs {
  std::string embeddings;
  std::size_t k = 1;
  std::size_t max_iters = 100;
  double tol = 1e-4;
  std::string init = "kmeans++";
};

int run_cluster(const CLI::App* sub, const Common& c, const ClusterArgs& a) {
  const auto x = embedstore::read_embeddings(a.embeddings);
  KMeansConfig cfg;
  cfg.k = a.k;
  cfg.max_iters = a.max_iters;
  cfg.tol = a.tol;
  cfg.seed = c.seed;
  cfg.init = parse_kmeans_init(a.init);
  cfg.workers = c.workers;
  const auto dir = prepare_out_dir(c);
  const auto result = kmeans(x, cfg);
  write_assignment(result, x, dir / "assignment.jsonl", dir / "centroids.emb");
  ordered_json summary = {{"rows", x.rows()},
                          {"k", result.k()},
                          {"iterations", result.iterations},
                          {"inertia", result.inertia},
                          {"inertia_history", result.inertia_history},
                          {"empty_clusters", result.empty_clusters}};
  write_json(dir / "cluster_summary.json", summary);
  write_manifest(dir, sub, c, {"assignment.jsonl", "centroids.emb", "cluster_summary.json"});
  std::printf("clustered %zu rows into k=%zu in %zu iterations, inertia %.9g\n", x.rows(),
              result.k(), result.iterations, result.inertia);
  return kExitOk;
}

struct PrototypeArgs {
  std::string concepts;
  std::string caption_embeddings;
};

int run_build_prototypes(const CLI::App* sub, const Common& c, const PrototypeArgs& a) {
  const auto spec = ConceptSpec::from_json_file(a.concepts);
  const auto captions = embedstore::read_embeddings(a.caption_embeddings);
  const auto protos = build_prototypes(spec, captions);
  const auto dir = prepare_out_dir(c);
  embedstore::write_embeddings(protos.vectors(), dir / "prototypes.emb");
  write_manifest(dir, sub, c, {"prototypes.emb"});
  std::printf("built %zu prototypes from %zu captions, d=%zu\n", protos.size(),
              captions.rows(), protos.dim());
  return kExitOk;
}

struct DedupArgs {
  std::string embeddings;
  std::string assignment;
  std::string centroids;
  std::string prototypes;
  std::string heuristic = "semdedup";
  std::optional<double> epsilon;
  std::optional<double> target_keep;
  double tol = 0.005;
  std::string visit_order = "shuffled";
  std::size_t block_rows = 256;
};

struct DedupInputs {
  EmbeddingMatrix x;
  ClusterAssignment assignment;
  std::optional<ConceptPrototypeSet> protos;
  DedupConfig cfg;
};

DedupInputs load_dedup_inputs(const Common& c, const DedupArgs& a) {
  DedupInputs in;
  in.cfg.heuristic = parse_heuristic(a.heuristic);
  in.cfg.visit_order = parse_visit_order(a.visit_order);
  in.cfg.seed = c.seed;
  in.cfg.workers = c.workers;
  in.cfg.block_rows = a.block_rows;
  in.cfg.epsilon = a.epsilon.value_or(0.0);
  in.cfg.target_keep_fraction = a.target_keep;
  if (in.cfg.heuristic == Heuristic::fairdedup && a.prototypes.empty()) {
    throw ConfigError("--heuristic fairdedup requires --prototypes");
  }
  in.cfg.validate();
  in.x = embedstore::read_embeddings(a.embeddings);
  const fs::path centroids =
      a.centroids.empty() ? fs::path(a.assignment).parent_path() / "centroids.emb"
                          : fs::path(a.centroids);
  in.assignment = read_assignment(in.x, a.assignment, centroids);
  if (!a.prototypes.empty()) {
    in.protos = ConceptPrototypeSet::from_matrix(embedstore::read_embeddings(a.prototypes));
  }
  return in;
}

ordered_json calibration_json(const CalibrationResult& cal, double target, double tol) {
  ordered_json trace = ordered_json::array();
  for (const auto& [eps, frac] : cal.trace) trace.push_back({eps, frac});
  return {{"target_keep", target},
          {"tol", tol},
          {"epsilon", cal.epsilon},
          {"keep_fraction", cal.keep_fraction},
          {"attained", cal.attained},
          {"trace", trace}};
}

int run_dedup(const CLI::App* sub, const Common& c, const DedupArgs& a, bool calibrate_only) {
  if (calibrate_only && !a.target_keep) {
    throw ConfigError("calibrate requires --target-keep");
  }
  if (!calibrate_only && !a.epsilon && !a.target_keep) {
    throw ConfigError("dedup requires --epsilon or --target-keep");
  }
  auto in = load_dedup_inputs(c, a);
  const ConceptPrototypeSet* protos = in.protos ? &*in.protos : nullptr;
  const auto dir = prepare_out_dir(c);
  std::vector<std::string> outputs;
  ordered_json extra = ordered_json::object();
  int code = kExitOk;
  if (a.target_keep) {
    const auto cal =
        calibrate_epsilon(in.x, in.assignment, protos, in.cfg, *a.target_keep, a.tol);
    write_json(dir / "calibration.json", calibration_json(cal, *a.target_keep, a.tol));
    outputs.push_back("calibration.json");
    in.cfg.epsilon = cal.epsilon;
    extra["calibrated_epsilon"] = cal.epsilon;
    if (!cal.attained) {
      std::fprintf(stderr,
                   "target keep %.6g +- %.3g not attainable; best epsilon %.9g keeps %.6f\n",
                   *a.target_keep, a.tol, cal.epsilon, cal.keep_fraction);
      code = kExitNotAttained;
    } else {
      std::printf("calibrated epsilon %.9g keeps %.6f (target %.6g +- %.3g)\n", cal.epsilon,
                  cal.keep_fraction, *a.target_keep, a.tol);
    }
  }
  if (!calibrate_only) {
    const auto keep = dedup_dataset(in.x, in.assignment, protos, in.cfg);
    write_keep_list(keep, in.x, dir / "keep_list.jsonl");
    outputs.push_back("keep_list.jsonl");
    ordered_json summary = {{"heuristic", to_string(keep.heuristic)},
                            {"epsilon", keep.epsilon},
                            {"rows", in.x.rows()},
                            {"kept", keep.kept_count()},
                            {"keep_fraction", keep.keep_fraction()}};
    write_json(dir / "dedup_summary.json", summary);
    outputs.push_back("dedup_summary.json");
    std::printf("%s epsilon %.9g kept %zu of %zu rows (%.6f)\n", to_string(keep.heuristic).c_str(),
                keep.epsilon, keep.kept_count(), in.x.rows(), keep.keep_fraction());
  }
  write_manifest(dir, sub, c, outputs, extra);
  return code;
}

struct AuditArgs {
  std::string labels;
  std::string attribute;
  std::string l1;
  std::string l2;
  std::size_t min_support = 25;
  std::string embeddings;
  std::string caption_embeddings;
  std::string keep_list;
  std::size_t k = 1000;
  double delta = kDefaultSmoothing;
  std::vector<std::string> audit_attributes;
  std::vector<std::string> desired;
  std::vector<std::string> label_maps;
  bool per_query = false;
};

int run_audit(const CLI::App* sub, const Common& c, const AuditArgs& a) {
  const bool disparity_mode = !a.attribute.empty() || !a.l1.empty() || !a.l2.empty();
  const bool retrieval_mode = !a.embeddings.empty() || !a.caption_embeddings.empty();
  if (!disparity_mode && !retrieval_mode) {
    throw ConfigError(
        "audit needs --attribute/--l1/--l2 (disparity) or --embeddings/--caption-embeddings "
        "(retrieval skew)");
  }
  LabeledTable table = LabeledTable::read_csv(a.labels);
  if (table.empty()) throw EmptyReportError("label table '" + a.labels + "' is empty");
  for (const auto& path : a.label_maps) LabelMapping::from_json_file(path).apply(table);

  std::optional<std::vector<std::string>> kept;
  if (!a.keep_list.empty()) kept = read_kept_ids(a.keep_list);

  ordered_json report;
  if (disparity_mode) {
    if (a.attribute.empty() || a.l1.empty() || a.l2.empty()) {
      throw ConfigError("disparity audit needs --attribute, --l1 and --l2");
    }
    const LabeledTable scoped = kept ? table.restrict_to(*kept) : table;
    if (scoped.empty()) throw EmptyReportError("no labeled records survive the keep list");
    const auto d = disparity_report(scoped, a.attribute, a.l1, a.l2, a.min_support);
    report["disparity"] = to_json(d);
    std::printf("disparity %s (%s vs %s): Mean %.6f Max %.6f Gap %.6f over %zu classes\n",
                a.attribute.c_str(), a.l1.c_str(), a.l2.c_str(), d.summary.mean, d.summary.max,
                d.summary.gap, d.included.size());
  }
  if (retrieval_mode) {
    if (a.embeddings.empty() || a.caption_embeddings.empty()) {
      throw ConfigError("retrieval audit needs both --embeddings and --caption-embeddings");
    }
    EmbeddingMatrix images = embedstore::read_embeddings(a.embeddings);
    if (kept) {
      std::map<std::string, std::size_t> index;
      for (std::size_t i = 0; i < images.rows(); ++i) index[images.id(i)] = i;
      std::vector<std::size_t> rows;
      for (const auto& id : *kept) {
        auto it = index.find(id);
        if (it == index.end()) {
          throw ValidationError("kept id '" + id + "' is not in '" + a.embeddings + "'");
        }
        rows.push_back(it->second);
      }
      std::sort(rows.begin(), rows.end());
      images = subset(images, rows);
    }
    const auto captions = embedstore::read_embeddings(a.caption_embeddings);
    RetrievalAuditConfig cfg;
    cfg.k = a.k;
    cfg.delta = a.delta;
    cfg.attributes = a.audit_attributes;
    cfg.workers = c.workers;
    for (const auto& path : a.desired) cfg.desired.push_back(DesiredDistribution::from_json_file(path));
    const auto audits = audit_retrievals(captions.ids(), images, captions, table, cfg);
    auto& out = report["retrieval"] = ordered_json::array();
    for (const auto& au : audits) {
      out.push_back(to_json(au, a.per_query));
      std::printf("retrieval %s @%zu: MinSkew %.6f MaxSkew %.6f NDKL %.6f over %zu queries\n",
                  au.attribute.c_str(), au.k, au.mean_abs_min_skew, au.mean_max_skew,
                  au.mean_ndkl, au.queries.size());
    }
  }
  const auto dir = prepare_out_dir(c);
  write_json(dir / "audit.json", report);
  write_manifest(dir, sub, c, {"audit.json"});
  return kExitOk;
}

struct SynthArgs {
  std::string spec;
  std::size_t trial = 0;
};

SynthSpec load_spec(const std::string& path, const CLI::Option* seed_opt, const Common& c) {
  SynthSpec spec = SynthSpec::from_json_file(path);
  if (seed_opt->count() > 0) spec.seed = c.seed;
  return spec;
}

int run_synth(const CLI::App* sub, const Common& c, const SynthArgs& a,
              const CLI::Option* seed_opt) {
  const SynthSpec spec = load_spec(a.spec, seed_opt, c);
  const auto data = generate(spec, a.trial);
  const auto dir = prepare_out_dir(c);
  embedstore::write_embeddings(data.embeddings, dir / "embeddings.emb");
  embedstore::write_embeddings(data.prototypes.vectors(), dir / "prototypes.emb");
  data.labels.write_csv(dir / "labels.csv");
  write_json(dir / "spec.json", spec.to_json());
  write_manifest(dir, sub, c, {"embeddings.emb", "prototypes.emb", "labels.csv", "spec.json"},
                 {{"spec_seed", spec.seed}, {"trial_seed", derive_seed(spec.seed, "synth", a.trial)}});
  std::printf("generated %zu rows (d=%zu, %zu labels)\n", data.embeddings.rows(),
              data.embeddings.dim(), data.prototypes.size());
  return kExitOk;
}

struct StudyArgs {
  std::string spec;
  std::size_t trials = 10;
  double target_keep = 0.5;
  double tol = 0.005;
  std::size_t k = 0;
  std::string visit_order = "shuffled";
  std::vector<std::string> minority;
};

int run_study(const CLI::App* sub, const Common& c, const StudyArgs& a,
              const CLI::Option* seed_opt) {
  const SynthSpec spec = load_spec(a.spec, seed_opt, c);
  StudyConfig cfg;
  cfg.n_trials = a.trials;
  cfg.target_keep = a.target_keep;
  cfg.tol = a.tol;
  cfg.k = a.k;
  cfg.visit_order = parse_visit_order(a.visit_order);
  cfg.minority_labels = a.minority;
  cfg.workers = c.workers;
  cfg.validate();
  const auto dir = prepare_out_dir(c);
  const auto report = retention_study(spec, cfg);
  const std::string table = render_table(report);
  write_json(dir / "report.json", to_json(report));
  write_text(dir / "report.txt", table);
  write_manifest(dir, sub, c, {"report.json", "report.txt"}, {{"spec_seed", spec.seed}});
  std::fputs(table.c_str(), stdout);
  return kExitOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  return kExitConfig;
}

// Subcommand named on the command line, used to scope config-file keys.
std::string active_subcommand(int argc, char** argv, const CLI::App& app) {
  for (int i = 1; i < argc; ++i) {
    for (const CLI::App* s : app.get_subcommands({})) {
      if (s->get_name() == argv[i]) return argv[i];
    }
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic deduplication and fairness auditing for embedding datasets"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.set_version_flag("--version", "dedupkit 0.1.0");

  Common common;

  ClusterArgs cluster;
  auto* cl = app.add_subcommand("cluster", "Spherical k-means over an embedding file");
  cl->option_defaults()->always_capture_default();
  add_common(cl, common);
  cl->add_option("--embeddings,-e", cluster.embeddings, "Embedding file")
      ->required()->check(CLI::ExistingFile);
  cl->add_option("--k", cluster.k, "Number of clusters");
  cl->add_option("--max-iters", cluster.max_iters, "Iteration cap");
  cl->add_option("--tol", cluster.tol, "Relative inertia-gain stopping threshold");
  cl->add_option("--init", cluster.init, "kmeans++ or random");

  PrototypeArgs proto;
  auto* bp = app.add_subcommand("build-prototypes",
                                "Average caption embeddings into concept prototypes");
  bp->option_defaults()->always_capture_default();
  add_common(bp, common);
  bp->add_option("--concepts", proto.concepts, "Concept spec JSON (concepts + templates)")
      ->required()->check(CLI::ExistingFile);
  bp->add_option("--caption-embeddings", proto.caption_embeddings,
                 "Caption embeddings in caption enumeration order")
      ->required()->check(CLI::ExistingFile);

  DedupArgs dedup;
  auto add_dedup_options = [&](CLI::App* s) {
    s->option_defaults()->always_capture_default();
    add_common(s, common);
    s->add_option("--embeddings,-e", dedup.embeddings, "Embedding file")
        ->required()->check(CLI::ExistingFile);
    s->add_option("--assignment", dedup.assignment, "assignment.jsonl from `cluster`")
        ->required()->check(CLI::ExistingFile);
    s->add_option("--centroids", dedup.centroids,
                  "Centroid file (default: centroids.emb next to the assignment)")
        ->check(CLI::ExistingFile);
    s->add_option("--prototypes", dedup.prototypes, "Concept prototype file")
        ->check(CLI::ExistingFile);
    s->add_option("--heuristic", dedup.heuristic, "semdedup, fairdedup or random");
    s->add_option("--epsilon", dedup.epsilon, "Neighborhood threshold: similarity > 1 - epsilon");
    s->add_option("--target-keep", dedup.target_keep, "Calibrate epsilon to this keep fraction");
    s->add_option("--tol", dedup.tol, "Calibration tolerance on the keep fraction");
    s->add_option("--visit-order", dedup.visit_order, "shuffled or sequential");
    s->add_option("--block-rows", dedup.block_rows, "Row block size for similarity tiles")
        ->check(CLI::PositiveNumber);
  };
  auto* dd = app.add_subcommand("dedup", "Prune each cluster and write a keep list");
  add_dedup_options(dd);
  auto* ca = app.add_subcommand("calibrate", "Find the epsilon reaching a target keep fraction");
  add_dedup_options(ca);

  AuditArgs audit;
  auto* au = app.add_subcommand("audit", "Classification disparity and retrieval skew reports");
  au->option_defaults()->always_capture_default();
  add_common(au, common);
  au->add_option("--labels", audit.labels, "Label CSV (id,class,predicted,attributes...)")
      ->required()->check(CLI::ExistingFile);
  au->add_option("--attribute", audit.attribute, "Attribute for the disparity report");
  au->add_option("--l1", audit.l1, "First subgroup label");
  au->add_option("--l2", audit.l2, "Second subgroup label");
  au->add_option("--min-support", audit.min_support, "Minimum records per subgroup and class");
  au->add_option("--embeddings,-e", audit.embeddings, "Image embeddings for retrieval")
      ->check(CLI::ExistingFile);
  au->add_option("--caption-embeddings", audit.caption_embeddings,
                 "Query caption embeddings; row ids name the queries")
      ->check(CLI::ExistingFile);
  au->add_option("--keep-list", audit.keep_list, "Restrict the audit to kept ids")
      ->check(CLI::ExistingFile);
  au->add_option("--k", audit.k, "Retrieval depth");
  au->add_option("--delta", audit.delta, "Additive smoothing of proportions");
  au->add_option("--audit-attribute", audit.audit_attributes,
                 "Attribute(s) for retrieval skew (default: all)");
  au->add_option("--desired", audit.desired, "Desired distribution JSON file(s)")
      ->check(CLI::ExistingFile);
  au->add_option("--label-map", audit.label_maps, "Label mapping JSON file(s), e.g. age bins")
      ->check(CLI::ExistingFile);
  au->add_flag("--per-query", audit.per_query, "Include per-query metrics");

  SynthArgs synth;
  auto* sy = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  sy->option_defaults()->always_capture_default();
  add_common(sy, common);
  sy->add_option("--spec", synth.spec, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  sy->add_option("--trial", synth.trial, "Trial index");
  const CLI::Option* synth_seed = sy->get_option("--seed");

  StudyArgs study;
  auto* st = app.add_subcommand("study", "Minority-mass retention study on a synthetic spec");
  st->option_defaults()->always_capture_default();
  add_common(st, common);
  st->add_option("--spec", study.spec, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  st->add_option("--trials", study.trials, "Number of trials (>= 2)");
  st->add_option("--target-keep", study.target_keep, "Keep fraction for both heuristics");
  st->add_option("--tol", study.tol, "Calibration tolerance");
  st->add_option("--k", study.k, "Clusters per trial (0: one per spec cluster)");
  st->add_option("--visit-order", study.visit_order, "shuffled or sequential");
  st->add_option("--minority", study.minority, "Minority labels (default: all non-modal)");
  const CLI::Option* study_seed = st->get_option("--seed");

  app.config_formatter(std::make_shared<JsonConfig>(active_subcommand(argc, argv, app)));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (cl->parsed()) return run_cluster(cl, common, cluster);
    if (bp->parsed()) return run_build_prototypes(bp, common, proto);
    if (dd->parsed()) return run_dedup(dd, common, dedup, false);
    if (ca->parsed()) return run_dedup(ca, common, dedup, true);
    if (au->parsed()) return run_audit(au, common, audit);
    if (sy->parsed()) return run_synth(sy, common, synth, synth_seed);
    if (st->parsed()) return run_study(st, common, study, study_seed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return kExitConfig;
}
