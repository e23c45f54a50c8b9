import json
import math
import os

import numpy as np
import pytest

import dedupkit as dk

DATA = os.environ.get("DEDUPKIT_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "..", "data"))


def blobs(seed=0, per=30, d=8, sigma=0.05, centers=3):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(centers, d))
    rows = [c[i] + rng.normal(scale=sigma, size=d) for i in range(centers) for _ in range(per)]
    return np.asarray(rows, dtype=np.float32)


def test_matrix_normalizes_and_round_trips(tmp_path):
    x = dk.EmbeddingMatrix(np.array([[3, 4], [0, 2]], dtype=np.float32), ["a", "b"])
    assert len(x) == 2 and x.dim == 2 and x.ids == ["a", "b"]
    np.testing.assert_allclose(x.to_numpy(), [[0.6, 0.8], [0, 1]], atol=1e-7)
    p = str(tmp_path / "x.emb")
    dk.write_embeddings(x, p)
    y = dk.read_embeddings(p)
    assert y.ids == x.ids
    assert np.array_equal(y.to_numpy(), x.to_numpy())


def test_matrix_errors(tmp_path):
    with pytest.raises(dk.ValidationError):
        dk.EmbeddingMatrix(np.zeros((1, 3), dtype=np.float32))
    with pytest.raises(dk.ValidationError):
        dk.EmbeddingMatrix(np.ones((2, 2), dtype=np.float32), ["a", "a"])
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"not an embedding file")
    with pytest.raises(dk.FormatError):
        dk.read_embeddings(str(bad))
    with pytest.raises(dk.IoError):
        dk.read_embeddings(str(tmp_path / "missing.emb"))
    assert issubclass(dk.FormatError, dk.Error)


def test_kmeans_and_dedup_pipeline():
    x = dk.EmbeddingMatrix(blobs())
    km = dk.kmeans(x, 3, seed=4)
    assert len(km["assignments"]) == 90
    hist = km["inertia_history"]
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    out = dk.dedup(x, km["assignments"], km["centroids"], heuristic="semdedup", epsilon=0.02)
    assert 0 < out["keep_fraction"] <= 1
    assert out["keep_fraction"] == pytest.approx(sum(out["kept"]) / 90)
    one = dk.dedup(x, km["assignments"], km["centroids"], epsilon=1.0)
    assert sum(one["kept"]) == 3
    with pytest.raises(dk.ConfigError):
        dk.dedup(x, km["assignments"], km["centroids"], heuristic="fairdedup", epsilon=0.1)


def test_fairdedup_with_prototypes_and_calibration():
    x = dk.EmbeddingMatrix(blobs(seed=1, sigma=0.02))
    km = dk.kmeans(x, 3, seed=1)
    protos = blobs(seed=2, per=1, centers=2)
    a = dk.dedup(x, km["assignments"], km["centroids"], "fairdedup", 0.05, protos, seed=9)
    b = dk.dedup(x, km["assignments"], km["centroids"], "fairdedup", 0.05, protos, seed=9)
    assert a == b
    cal = dk.calibrate(x, km["assignments"], km["centroids"], 0.5, tol=0.02)
    assert cal["attained"]
    assert abs(cal["keep_fraction"] - 0.5) <= 0.02


def test_semdedup_and_fairdedup_worked_examples():
    same = dk.EmbeddingMatrix(np.array([[1, 0], [1, 0.001], [0, 1]], dtype=np.float32))
    kept = dk.semdedup_filter(same, np.array([0.7071, 0.7071], dtype=np.float32), 0.1)
    assert len(kept) == 2 and 2 in kept
    quad = dk.EmbeddingMatrix(np.array([[1, 0], [1, 0.001], [0, 1], [0.001, 1]], dtype=np.float32))
    r = dk.fairdedup_select(quad, np.array([[1, 0], [0, 1]], dtype=np.float32), 0.1,
                            visit_order="sequential")
    assert len(r["kept"]) == 2
    assert len(r["balance_means"]) == 2


def test_metrics():
    mean, mx, gap = dk.aggregate_disparities([0.303, -0.009, 0.0])
    assert abs(gap - 0.199) < 1e-12 and mx == 0.303 and abs(mean - 0.104) < 1e-12
    with pytest.raises(dk.EmptyReportError):
        dk.aggregate_disparities([])
    m = dk.skew_metrics([0, 1, 1, 1], 2, [0.25, 0.75], delta=0.0)
    assert abs(m["max_skew"] - math.log(2)) < 1e-9
    assert abs(m["min_skew_abs"] - abs(math.log(2 / 3))) < 1e-9
    full = dk.skew_metrics([0, 1, 1, 1], 4, [0.25, 0.75])
    assert abs(full["max_skew"]) < 1e-9 and abs(full["min_skew_abs"]) < 1e-9
    with pytest.raises(dk.ConfigError):
        dk.skew_metrics([0, 1], 3, [0.5, 0.5])
    t = dk.paired_t_test([0.21, 0.25, 0.19, 0.30, 0.27, 0.22, 0.24, 0.26],
                         [0.20, 0.22, 0.18, 0.27, 0.27, 0.20, 0.21, 0.25])
    assert t["t"] == pytest.approx(4.2488388506681884, rel=1e-10)
    assert t["p_two_sided"] == pytest.approx(0.003798576327652083, rel=1e-8)


def small_spec():
    return {
        "d": 16,
        "seed": 3,
        "clusters": [{"repeat": 4, "angular_noise": 0.04,
                      "groups": [{"label": "majority", "count": 40},
                                 {"label": "minority", "count": 10, "duplicate_multiplicity": 3}]}],
    }


def test_synthetic_generation():
    g = dk.generate_synthetic(json.dumps(small_spec()))
    assert len(g["embeddings"]) == 4 * 70
    assert g["labels"].count("minority") == 4 * 30
    assert sorted(g["prototype_names"]) == ["majority", "minority"]
    again = dk.generate_synthetic(json.dumps(small_spec()))
    assert np.array_equal(again["embeddings"].to_numpy(), g["embeddings"].to_numpy())


def test_retention_study():
    report, table = dk.retention_study(small_spec(), n_trials=2)
    assert len(report["trials"]) == 2
    assert "FairDeDup" in table
    with pytest.raises(dk.ConfigError):
        dk.retention_study(small_spec(), n_trials=1)
