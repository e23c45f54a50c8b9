import filecmp
import json
import os
import subprocess

import shutil

import pytest

CLI = os.environ.get("DEDUPKIT_CLI", "dedupkit")
DATA = os.environ["DEDUPKIT_DATA_DIR"]

SPEC = {
    "d": 16,
    "seed": 5,
    "clusters": [{"repeat": 6, "angular_noise": 0.04,
                  "groups": [{"label": "majority", "count": 40, "duplicate_multiplicity": 2},
                             {"label": "minority", "count": 15}]}],
}


def run(*args, check=True):
    p = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and p.returncode != 0:
        raise AssertionError(f"exit {p.returncode}: {p.stderr}")
    return p


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SPEC))
    run("synth", "--spec", spec, "-o", root / "data")
    return root


def pipeline(synth, out, workers):
    d = synth / "data"
    run("cluster", "-e", d / "embeddings.emb", "--k", 6, "--seed", 3, "-j", workers, "-o", out / "c")
    run("dedup", "-e", d / "embeddings.emb", "--assignment", out / "c" / "assignment.jsonl",
        "--prototypes", d / "prototypes.emb", "--heuristic", "fairdedup", "--target-keep", 0.5,
        "--seed", 3, "-j", workers, "-o", out / "d")
    run("audit", "--labels", d / "labels.csv", "-e", d / "embeddings.emb",
        "--caption-embeddings", d / "prototypes.emb", "--keep-list", out / "d" / "keep_list.jsonl",
        "--k", 50, "-j", workers, "-o", out / "a")


def test_synth_outputs(synth):
    d = synth / "data"
    for name in ["embeddings.emb", "prototypes.emb", "labels.csv", "spec.json", "manifest.json"]:
        assert (d / name).exists()
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["config_hash"].startswith("fnv1a64:")
    assert len((d / "labels.csv").read_text().strip().splitlines()) == 1 + 6 * 95


def test_pipeline_deterministic_across_workers(synth, tmp_path):
    # Same output location each time so recorded paths agree too.
    for name, workers in [("w1", 1), ("w1b", 1), ("w8", 8)]:
        pipeline(synth, tmp_path / "run", workers)
        shutil.move(tmp_path / "run", tmp_path / name)
    for stage in ["c", "d", "a"]:
        names = sorted(os.listdir(tmp_path / "w1" / stage))
        assert names
        for n in names:
            assert filecmp.cmp(tmp_path / "w1" / stage / n, tmp_path / "w1b" / stage / n, shallow=False), n
            assert filecmp.cmp(tmp_path / "w1" / stage / n, tmp_path / "w8" / stage / n, shallow=False), n
    summary = json.loads((tmp_path / "w1" / "d" / "dedup_summary.json").read_text())
    cal = json.loads((tmp_path / "w1" / "d" / "calibration.json").read_text())
    assert cal["attained"]
    assert abs(summary["keep_fraction"] - 0.5) <= 0.005
    audit = json.loads((tmp_path / "w1" / "a" / "audit.json").read_text())
    assert audit


def test_single_cluster(synth, tmp_path):
    d = synth / "data"
    run("cluster", "-e", d / "embeddings.emb", "--k", 1, "-o", tmp_path)
    clusters = {json.loads(l)["cluster"] for l in (tmp_path / "assignment.jsonl").read_text().splitlines()}
    assert clusters == {0}


def test_config_file_and_precedence(synth, tmp_path):
    d = synth / "data"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9, "cluster": {"k": 2, "embeddings": str(d / "embeddings.emb")}}))
    run("--config", cfg, "cluster", "-o", tmp_path / "a")
    run("--config", cfg, "cluster", "--k", 3, "-o", tmp_path / "b")
    ka = json.loads((tmp_path / "a" / "manifest.json").read_text())
    kb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ka["config"]["k"] == "2" and kb["config"]["k"] == "3"
    assert ka["seeds"]["root"] == 9
    assert ka["config_hash"] != kb["config_hash"]


def test_exit_codes(synth, tmp_path):
    d = synth / "data"
    assert run("cluster", "-o", tmp_path, check=False).returncode == 2
    assert run("cluster", "-e", tmp_path / "missing.emb", "-o", tmp_path, check=False).returncode == 2
    junk = tmp_path / "junk.emb"
    junk.write_bytes(b"definitely not embeddings")
    assert run("cluster", "-e", junk, "-o", tmp_path / "j", check=False).returncode == 3
    run("cluster", "-e", d / "embeddings.emb", "--k", 6, "-o", tmp_path / "c")
    p = run("dedup", "-e", d / "embeddings.emb", "--assignment", tmp_path / "c" / "assignment.jsonl",
            "--heuristic", "fairdedup", "--epsilon", 0.1, "-o", tmp_path / "d", check=False)
    assert p.returncode == 2
    p = run("study", "--spec", DATA + "/study_majority_duplicates.json", "--trials", 1, "-o", tmp_path / "s",
            check=False)
    assert p.returncode == 2


def test_calibration_miss_exits_4(tmp_path):
    spec = tmp_path / "pairs.json"
    spec.write_text(json.dumps({"d": 8, "seed": 1, "clusters": [
        {"angular_noise": 0.001, "groups": [{"label": "a", "count": 1, "duplicate_multiplicity": 2}]}]}))
    run("synth", "--spec", spec, "-o", tmp_path / "data")
    d = tmp_path / "data"
    run("cluster", "-e", d / "embeddings.emb", "-o", tmp_path / "c")
    p = run("calibrate", "-e", d / "embeddings.emb", "--assignment", tmp_path / "c" / "assignment.jsonl",
            "--target-keep", 0.75, "--tol", 0.01, "-o", tmp_path / "cal", check=False)
    assert p.returncode == 4
    assert not json.loads((tmp_path / "cal" / "calibration.json").read_text())["attained"]


def test_study_prints_table(tmp_path):
    p = run("study", "--spec", DATA + "/study_majority_duplicates.json", "--trials", 2, "-o", tmp_path)
    assert "FairDeDup" in p.stdout and "SemDeDup" in p.stdout
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["trials"]) == 2
    assert (tmp_path / "report.txt").read_text().strip() == p.stdout.strip()
