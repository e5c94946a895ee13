import json

import pytest

from chamferlab.experiment import (ExperimentError, StageCache, load_experiment,
                                   run, sweep)

TOY_EXPERIMENT = """
schema = 1
name = "toy"
projector = "identity"

[dataset]
family = "gauss-mixture"
n_classes = 2
modes_per_class = 1
n_per_class = 60
sigma = 0.3
seed = 0

[split]
k = 8
seed = 0
n_val_per_class = 20

[model]
steps = 40
batch_size = 32
T = 10
seed = 0

[evaluation]
n_gen = 32
batch = 32
k = 3

[[configs]]
name = "unguided"
omega = 1.0
seeds = [0, 1]

[[configs]]
name = "guided"
omega = 1.0
gamma = 0.3
k_exemplars = 4
g_freq = 2
seeds = [0]
"""


@pytest.fixture
def exp_file(tmp_path):
    p = tmp_path / "toy.exp"
    p.write_text(TOY_EXPERIMENT)
    return p


class TestLoad:
    def test_loads_toml(self, exp_file):
        exp = load_experiment(exp_file)
        assert exp["name"] == "toy"
        assert len(exp["configs"]) == 2

    def test_rejects_bad_schema(self, tmp_path):
        p = tmp_path / "bad.exp"
        p.write_text('schema = 2\n[dataset]\n[model]\n')
        with pytest.raises(ExperimentError):
            load_experiment(p)

    def test_rejects_duplicate_names(self, tmp_path):
        p = tmp_path / "dup.exp"
        p.write_text('schema = 1\n[dataset]\n[model]\n'
                     '[[configs]]\nname = "a"\n[[configs]]\nname = "a"\n')
        with pytest.raises(ExperimentError):
            load_experiment(p)

    def test_rejects_missing_sections(self, tmp_path):
        p = tmp_path / "missing.exp"
        p.write_text("schema = 1\n[dataset]\n")
        with pytest.raises(ExperimentError):
            load_experiment(p)


def test_shipped_preset_loads():
    import importlib.resources as res
    with res.as_file(res.files("chamferlab") / "presets" / "paper_repro.exp") as p:
        exp = load_experiment(p)
    names = [c["name"] for c in exp["configs"]]
    assert "chamfer_guidance" in names
    assert len(names) == len(set(names))


class TestSweep:
    def test_single_value_suffixes_name(self, exp_file):
        exp = load_experiment(exp_file)
        out = sweep(exp, "omega", [2.0])
        assert [c["name"] for c in out["configs"]] == \
            ["unguided__omega=2.0", "guided__omega=2.0"]

    def test_cross_product_k(self, exp_file):
        exp = load_experiment(exp_file)
        exp["configs"] = exp["configs"][:1]
        out = sweep(exp, "k", [2, 32])
        assert len(out["configs"]) == 2
        assert out["configs"][0]["k_exemplars"] == 2
        assert out["configs"][1]["k_exemplars"] == 32

    def test_omega_table_values(self, exp_file):
        exp = load_experiment(exp_file)
        exp["configs"] = exp["configs"][:1]
        out = sweep(exp, "omega", [1, 2, 7.5])
        assert [c["omega"] for c in out["configs"]] == [1, 2, 7.5]

    def test_bad_axis_and_empty_values(self, exp_file):
        exp = load_experiment(exp_file)
        with pytest.raises(ExperimentError):
            sweep(exp, "sigma", [1])
        with pytest.raises(ExperimentError):
            sweep(exp, "omega", [])


class TestStageCache:
    def test_caches_by_key(self, tmp_path):
        cache = StageCache(tmp_path)
        calls = []

        def produce(d):
            calls.append(1)
            (d / "x.txt").write_text("payload")

        a = cache.run("k1", produce)
        b = cache.run("k1", produce)
        assert a == b and len(calls) == 1
        assert cache.hits == 1 and cache.misses == 1
        assert (a / "x.txt").read_text() == "payload"

    def test_distinct_keys_rerun(self, tmp_path):
        cache = StageCache(tmp_path)
        calls = []
        cache.run("k1", lambda d: calls.append(1))
        cache.run("k2", lambda d: calls.append(1))
        assert len(calls) == 2


class TestRun:
    def test_empty_configs_header_only(self, tmp_path):
        p = tmp_path / "empty.exp"
        p.write_text(TOY_EXPERIMENT.split("[[configs]]")[0])
        rows, report = run(p, tmp_path / "out")
        assert rows == []
        lines = (tmp_path / "out" / "results.csv").read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("config,seed,precision")
        assert report["errors"] == {}

    def test_full_run_and_idempotent_rerun(self, exp_file, tmp_path):
        out = tmp_path / "out"
        rows, report = run(exp_file, out)
        assert len(rows) == 3  # unguided x2 seeds + guided x1
        assert report["errors"] == {}
        assert (out / "results.csv").exists()
        assert (out / "report.json").exists()
        assert (out / "scatter_guided.svg").exists()
        # every artifact listed in the report exists; no orphans beside cache/report
        for name in report["artifacts"]:
            assert (out / name).exists()

        first_csv = (out / "results.csv").read_text()
        rows2, report2 = run(exp_file, out)
        assert report2["cache_misses"] == 0
        assert report2["cache_hits"] == report["cache_hits"] + report["cache_misses"]
        # stable apart from wall time
        strip = lambda text: [",".join(line.split(",")[:-1])
                              for line in text.splitlines()]
        assert strip((out / "results.csv").read_text()) == strip(first_csv)

    def test_failed_config_recorded_and_run_continues(self, exp_file, tmp_path):
        exp = load_experiment(exp_file)
        exp["configs"].append({"name": "broken", "omega": 1.0,
                               "gamma": 0.1, "grad_mode": "sideways", "seeds": [0]})
        p = tmp_path / "broken.json"
        p.write_text(json.dumps(exp))
        rows, report = run(p, tmp_path / "out")
        assert "broken" in report["errors"]
        assert len(rows) == 3  # healthy configs still evaluated

    def test_jobs_parallel_same_rows(self, exp_file, tmp_path):
        rows_a, _ = run(exp_file, tmp_path / "a", jobs=1, cache_dir=tmp_path / "ca")
        rows_b, _ = run(exp_file, tmp_path / "b", jobs=2, cache_dir=tmp_path / "cb")
        drop_wall = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_s"}
                                  for r in rows]
        assert drop_wall(rows_a) == drop_wall(rows_b)

    def test_cache_env_override(self, exp_file, tmp_path, monkeypatch):
        cache_dir = tmp_path / "shared-cache"
        monkeypatch.setenv("CHAMFERLAB_CACHE", str(cache_dir))
        run(exp_file, tmp_path / "o1")
        _, report = run(exp_file, tmp_path / "o2")
        assert cache_dir.exists()
        assert report["cache_misses"] == 0
