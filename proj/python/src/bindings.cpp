#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "dedupkit/dedup.hpp"
#include "dedupkit/embedstore.hpp"
#include "dedupkit/error.hpp"
#include "dedupkit/fairmetrics.hpp"
#include "dedupkit/partition.hpp"
#include "dedupkit/prototypes.hpp"
#include "dedupkit/stats.hpp"
#include "dedupkit/synthstudy.hpp"

namespace py = pybind11;
using namespace dedupkit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

EmbeddingMatrix matrix_from_array(FloatArray a, std::vector<std::string> ids) {
  if (a.ndim() != 2) throw DimensionError("embeddings must be a 2-d array");
  const auto n = static_cast<std::size_t>(a.shape(0));
  const auto d = static_cast<std::size_t>(a.shape(1));
  std::vector<float> values(a.data(), a.data() + n * d);
  if (ids.empty()) {
    for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  }
  return EmbeddingMatrix(d, std::move(values), std::move(ids));
}

py::array_t<float> matrix_to_array(const EmbeddingMatrix& m) {
  py::array_t<float> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.dim())});
  if (!m.values().empty()) {
    std::memcpy(out.mutable_data(), m.values().data(), m.values().size() * sizeof(float));
  }
  return out;
}

ClusterAssignment assignment_from(const EmbeddingMatrix& m, std::vector<std::uint32_t> labels,
                                  FloatArray centroids) {
  if (labels.size() != m.rows()) throw ValidationError("one cluster label per row required");
  ClusterAssignment a;
  a.centroids = matrix_from_array(centroids, {});
  for (auto l : labels) {
    if (l >= a.centroids.rows()) throw IndexError("cluster label out of range");
  }
  a.assignments = std::move(labels);
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Semantic deduplication and fairness auditing for embedding datasets";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<IndexError>(m, "OutOfRangeError", base.ptr());
  py::register_exception<VocabularyError>(m, "VocabularyError", base.ptr());
  py::register_exception<EmptyReportError>(m, "EmptyReportError", base.ptr());

  py::class_<EmbeddingMatrix>(m, "EmbeddingMatrix")
      .def(py::init(&matrix_from_array), py::arg("values"), py::arg("ids") = std::vector<std::string>{},
           "Rows are L2-normalized on construction.")
      .def_property_readonly("rows", &EmbeddingMatrix::rows)
      .def_property_readonly("dim", &EmbeddingMatrix::dim)
      .def_property_readonly("ids", &EmbeddingMatrix::ids)
      .def("to_numpy", &matrix_to_array)
      .def("__len__", &EmbeddingMatrix::rows);

  m.def("read_embeddings", [](const std::string& p) { return embedstore::read_embeddings(p); });
  m.def("write_embeddings",
        [](const EmbeddingMatrix& x, const std::string& p) { embedstore::write_embeddings(x, p); });

  m.def(
      "kmeans",
      [](const EmbeddingMatrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iters,
         double tol, const std::string& init, std::size_t workers) {
        KMeansConfig cfg;
        cfg.k = k;
        cfg.seed = seed;
        cfg.max_iters = max_iters;
        cfg.tol = tol;
        cfg.init = parse_kmeans_init(init);
        cfg.workers = workers;
        const auto a = kmeans(x, cfg);
        py::dict out;
        out["assignments"] = a.assignments;
        out["centroids"] = matrix_to_array(a.centroids);
        out["inertia"] = a.inertia;
        out["inertia_history"] = a.inertia_history;
        out["iterations"] = a.iterations;
        out["empty_clusters"] = a.empty_clusters;
        return out;
      },
      py::arg("x"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iters") = 100,
      py::arg("tol") = 1e-4, py::arg("init") = "kmeans++", py::arg("workers") = 1);

  m.def(
      "dedup",
      [](const EmbeddingMatrix& x, std::vector<std::uint32_t> labels, FloatArray centroids,
         const std::string& heuristic, double epsilon, std::optional<FloatArray> prototypes,
         std::uint64_t seed, const std::string& visit_order, std::size_t workers) {
        const auto a = assignment_from(x, std::move(labels), centroids);
        DedupConfig cfg;
        cfg.heuristic = parse_heuristic(heuristic);
        cfg.epsilon = epsilon;
        cfg.seed = seed;
        cfg.visit_order = parse_visit_order(visit_order);
        cfg.workers = workers;
        std::optional<ConceptPrototypeSet> protos;
        if (prototypes) protos = ConceptPrototypeSet::from_matrix(matrix_from_array(*prototypes, {}));
        const auto keep = dedup_dataset(x, a, protos ? &*protos : nullptr, cfg);
        std::vector<bool> kept;
        std::vector<std::int64_t> nb;
        for (const auto& d : keep.decisions) {
          kept.push_back(d.kept);
          nb.push_back(d.neighborhood);
        }
        py::dict out;
        out["kept"] = kept;
        out["neighborhood"] = nb;
        out["keep_fraction"] = keep.keep_fraction();
        return out;
      },
      py::arg("x"), py::arg("assignments"), py::arg("centroids"), py::arg("heuristic") = "semdedup",
      py::arg("epsilon") = 0.0, py::arg("prototypes") = py::none(), py::arg("seed") = 0,
      py::arg("visit_order") = "shuffled", py::arg("workers") = 1);

  m.def(
      "calibrate",
      [](const EmbeddingMatrix& x, std::vector<std::uint32_t> labels, FloatArray centroids,
         double target_keep, double tol, const std::string& heuristic,
         std::optional<FloatArray> prototypes, std::uint64_t seed) {
        const auto a = assignment_from(x, std::move(labels), centroids);
        DedupConfig cfg;
        cfg.heuristic = parse_heuristic(heuristic);
        cfg.seed = seed;
        std::optional<ConceptPrototypeSet> protos;
        if (prototypes) protos = ConceptPrototypeSet::from_matrix(matrix_from_array(*prototypes, {}));
        const auto r = calibrate_epsilon(x, a, protos ? &*protos : nullptr, cfg, target_keep, tol);
        py::dict out;
        out["epsilon"] = r.epsilon;
        out["keep_fraction"] = r.keep_fraction;
        out["attained"] = r.attained;
        out["trace"] = r.trace;
        return out;
      },
      py::arg("x"), py::arg("assignments"), py::arg("centroids"), py::arg("target_keep"),
      py::arg("tol") = 0.005, py::arg("heuristic") = "semdedup", py::arg("prototypes") = py::none(),
      py::arg("seed") = 0);

  m.def(
      "semdedup_filter",
      [](const EmbeddingMatrix& cluster, FloatArray centroid, double epsilon) {
        if (centroid.ndim() != 1) throw DimensionError("centroid must be 1-d");
        return semdedup_filter(cluster, {centroid.data(), static_cast<std::size_t>(centroid.size())},
                               epsilon);
      },
      py::arg("cluster"), py::arg("centroid"), py::arg("epsilon"));

  m.def(
      "fairdedup_select",
      [](const EmbeddingMatrix& cluster, FloatArray prototypes, double epsilon, std::uint64_t seed,
         const std::string& visit_order) {
        const auto protos = ConceptPrototypeSet::from_matrix(matrix_from_array(prototypes, {}));
        const auto sims = concept_similarities(cluster, protos);
        const auto r = fairdedup_select(cluster, sims, epsilon, seed, parse_visit_order(visit_order));
        py::dict out;
        out["kept"] = r.kept;
        out["balance_means"] = r.balance.means();
        return out;
      },
      py::arg("cluster"), py::arg("prototypes"), py::arg("epsilon"), py::arg("seed") = 0,
      py::arg("visit_order") = "shuffled");

  m.def(
      "aggregate_disparities",
      [](const std::vector<double>& d) {
        const auto a = aggregate_disparities(d);
        return py::make_tuple(a.mean, a.max, a.gap);
      },
      "(mean |d|, max |d|, max - mean)");

  m.def(
      "skew_metrics",
      [](const std::vector<std::size_t>& seq, std::size_t k, const std::vector<double>& desired,
         double delta) {
        if (k == 0 || k > seq.size()) throw ConfigError("k must lie in [1, len(seq)]");
        for (auto v : seq) {
          if (v >= desired.size()) throw VocabularyError("sequence value outside the vocabulary");
        }
        const auto e = max_min_skew_of(seq, k, desired, delta);
        py::dict out;
        out["max_skew"] = e.max_skew;
        out["min_skew"] = e.min_skew;
        out["min_skew_abs"] = e.min_skew_abs;
        out["ndkl"] = ndkl_of(seq, k, desired, delta);
        return out;
      },
      py::arg("sequence"), py::arg("k"), py::arg("desired"), py::arg("delta") = kDefaultSmoothing,
      "Metrics over a ranked sequence of attribute-value indices.");

  m.def(
      "paired_t_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto t = paired_t_test(a, b);
        py::dict out;
        out["t"] = t.t;
        out["p_two_sided"] = t.p_two_sided;
        out["mean_diff"] = t.mean_diff;
        out["degenerate"] = t.degenerate;
        return out;
      });

  m.def(
      "generate_synthetic",
      [](const std::string& spec_json, std::size_t trial) {
        const auto data = generate(SynthSpec::from_json_text(spec_json), trial);
        py::dict out;
        out["embeddings"] = data.embeddings;
        out["labels"] = data.row_labels;
        out["clusters"] = data.row_clusters;
        out["prototypes"] = matrix_to_array(data.prototypes.vectors());
        out["prototype_names"] = data.prototypes.names();
        return out;
      },
      py::arg("spec_json"), py::arg("trial") = 0);

  m.def(
      "retention_study_json",
      [](const std::string& spec_json, std::size_t n_trials, double target_keep, double tol,
         std::size_t workers) {
        StudyConfig cfg;
        cfg.n_trials = n_trials;
        cfg.target_keep = target_keep;
        cfg.tol = tol;
        cfg.workers = workers;
        const auto report = retention_study(SynthSpec::from_json_text(spec_json), cfg);
        return py::make_tuple(to_json(report).dump(), render_table(report));
      },
      py::arg("spec_json"), py::arg("n_trials") = 10, py::arg("target_keep") = 0.5,
      py::arg("tol") = 0.005, py::arg("workers") = 1);
}
