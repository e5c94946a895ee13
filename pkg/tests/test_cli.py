"""End-to-end exercise of every CLI subcommand on a tiny workflow."""

import hashlib
import json

import numpy as np
import pytest

from chamferlab import matio
from chamferlab.cli import main
from chamferlab.featspace import Projector

DATASET_SPEC = """
family = "gauss-mixture"
n_classes = 2
modes_per_class = 1
n_per_class = 40
sigma = 0.3
seed = 0

[split]
k = 4
seed = 0
n_val_per_class = 10
"""

TRAIN_CONFIG = """
data = "{data}"
steps = 30
batch_size = 16
T = 10
seed = 0
out = "{out}"
"""


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared pipeline state: dataset, trained model, samples."""
    root = tmp_path_factory.mktemp("cli")
    spec = root / "data.toml"
    spec.write_text(DATASET_SPEC)
    assert main(["gen-data", "--dataset-spec", str(spec),
                 "--out", str(root / "data")]) == 0

    cfg = root / "train.toml"
    cfg.write_text(TRAIN_CONFIG.format(data=root / "data" / "train",
                                       out=root / "model"))
    assert main(["train", "--config", str(cfg)]) == 0

    assert main(["sample", "--model", str(root / "model"), "--n", "32",
                 "--seed", "0", "--out", str(root / "gen.chlm")]) == 0
    return root


def test_gen_data_outputs(workdir):
    for name in ("full", "train", "val", "exemplars"):
        assert (workdir / "data" / f"{name}.chlm").exists()
        assert (workdir / "data" / f"{name}.labels.csv").exists()


def test_train_outputs(workdir):
    assert (workdir / "model" / "manifest.json").exists()
    assert (workdir / "model" / "train_info.json").exists()
    assert (workdir / "model" / "loss_curve.csv").exists()


def test_sample_byte_reproducible(workdir, tmp_path):
    out = tmp_path / "again.chlm"
    assert main(["sample", "--model", str(workdir / "model"), "--n", "32",
                 "--seed", "0", "--out", str(out)]) == 0
    assert sha(out) == sha(workdir / "gen.chlm")


def test_sample_seed_changes_output(workdir, tmp_path):
    out = tmp_path / "other.chlm"
    main(["sample", "--model", str(workdir / "model"), "--n", "32",
          "--seed", "1", "--out", str(out)])
    assert sha(out) != sha(workdir / "gen.chlm")


def test_project_and_eval(workdir, tmp_path):
    proj_dir = tmp_path / "proj"
    Projector.identity(2).save(proj_dir)
    real_feats = tmp_path / "real_feats"
    gen_feats = tmp_path / "gen_feats"
    assert main(["project", "--projector", str(proj_dir),
                 "--in", str(workdir / "data" / "val.chlm"),
                 "--source", "real", "--out", str(real_feats)]) == 0
    assert main(["project", "--projector", str(proj_dir),
                 "--in", str(workdir / "gen.chlm"),
                 "--out", str(gen_feats)]) == 0
    report = tmp_path / "metrics.json"
    assert main(["eval", "--real", str(real_feats), "--gen", str(gen_feats),
                 "--k", "3", "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert {"precision", "recall", "density", "coverage", "f1_pc",
            "frechet", "chamfer"} <= set(data)


def test_project_l2_normalize(workdir, tmp_path):
    proj_dir = tmp_path / "proj"
    Projector.identity(2).save(proj_dir)
    out = tmp_path / "unit_feats"
    assert main(["project", "--projector", str(proj_dir),
                 "--in", str(workdir / "gen.chlm"),
                 "--l2-normalize", "--out", str(out)]) == 0
    feats = matio.load_matrix(out.with_suffix(".chlm"))
    np.testing.assert_allclose(np.linalg.norm(feats, axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("mode", ["vanilla", "refl"])
def test_finetune_modes(workdir, tmp_path, mode):
    cfg = tmp_path / "ft.toml"
    cfg.write_text("steps = 5\nbatch_size = 8\nt1 = 3\nt2 = 8\n")
    out = tmp_path / f"ft-{mode}"
    assert main(["finetune", "--mode", mode, "--model", str(workdir / "model"),
                 "--exemplars", str(workdir / "data" / "exemplars"),
                 "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "manifest.json").exists()


def test_utility_command(workdir, tmp_path):
    cfg = tmp_path / "util.toml"
    cfg.write_text(f'model = "{workdir / "model"}"\n'
                   f'train = "{workdir / "data" / "train"}"\n'
                   f'val = "{workdir / "data" / "val"}"\n')
    out = tmp_path / "utility.csv"
    assert main(["utility", "--gen-config", str(cfg), "--n-synth", "60",
                 "--seeds", "0,1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "seed,mix,acc_id,acc_ood"
    assert len(lines) == 3


def test_flops_preset_and_file(tmp_path):
    out = tmp_path / "flops.json"
    assert main(["flops", "--spec", "ldm15", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["cfg_total_flops"] == pytest.approx(66e12)

    custom = tmp_path / "c.cost"
    custom.write_text("denoiser_flops = 1.0\ndecode_flops = 1.0\n"
                      "projector_flops = 1.0\n")
    assert main(["flops", "--spec", str(custom), "--out", str(out)]) == 0


def test_run_and_sweep(tmp_path):
    exp = tmp_path / "tiny.exp"
    exp.write_text("""
schema = 1
[dataset]
n_classes = 2
modes_per_class = 1
n_per_class = 40
seed = 0
[split]
k = 4
n_val_per_class = 10
[model]
steps = 20
batch_size = 16
T = 5
[evaluation]
n_gen = 16
k = 3
[[configs]]
name = "base"
omega = 1.0
seeds = [0]
""")
    assert main(["run", str(exp), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "results.csv").exists()

    expanded = tmp_path / "swept.json"
    assert main(["sweep", str(exp), "--axis", "omega", "--values", "1,2",
                 "--out", str(expanded)]) == 0
    data = json.loads(expanded.read_text())
    assert [c["name"] for c in data["configs"]] == ["base__omega=1", "base__omega=2"]

    # expanded experiments are themselves runnable
    assert main(["run", str(expanded), "--out", str(tmp_path / "out2")]) == 0


def test_run_reports_failures_with_exit_2(tmp_path):
    exp = tmp_path / "bad.json"
    exp.write_text(json.dumps({
        "schema": 1, "dataset": {"n_classes": 2, "modes_per_class": 1,
                                 "n_per_class": 40},
        "split": {"k": 4, "n_val_per_class": 10},
        "model": {"steps": 5, "batch_size": 8, "T": 5},
        "evaluation": {"n_gen": 8, "k": 2},
        "configs": [{"name": "bad", "omega": 1.0, "gamma": 0.1,
                     "grad_mode": "bogus", "seeds": [0]}],
    }))
    assert main(["run", str(exp), "--out", str(tmp_path / "out")]) == 2
