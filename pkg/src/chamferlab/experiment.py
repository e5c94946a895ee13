"""Config-driven experiment runner.

An experiment file (TOML, schema = 1) declares a dataset, a model, and a
list of sampling configs; `run` executes dataset generation, training,
sampling, and evaluation for every (config, seed) pair, caching stage
outputs by content hash so unchanged reruns recompute nothing. Outputs:
results.csv, report.json, one scatter SVG per 2-D config, and line-plot
data for k sweeps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import datasets, denoiser, sampler, svgplot
from .chamfer import GuidanceConfig
from .featspace import Projector
from .metrics import evaluate
from .schedule import make_schedule

if sys.version_info >= (3, 11):
    import tomllib as toml
else:
    import tomli as toml

RESULT_COLUMNS = ["config", "seed", "precision", "recall", "density", "coverage",
                  "f1_pc", "frechet", "chamfer", "wall_time_s"]


class ExperimentError(Exception):
    pass


def load_experiment(path) -> dict:
    path = Path(path)
    if path.suffix == ".json":
        exp = json.loads(path.read_text())
    else:
        with open(path, "rb") as f:
            exp = toml.load(f)
    if exp.get("schema") != 1:
        raise ExperimentError(f"unsupported schema {exp.get('schema')!r}")
    names = [c["name"] for c in exp.get("configs", [])]
    if len(names) != len(set(names)):
        raise ExperimentError("config names must be unique")
    for key in ("dataset", "model"):
        if key not in exp:
            raise ExperimentError(f"experiment is missing [{key}]")
    return exp


def sweep(exp: dict, axis: str, values) -> dict:
    """Cross-product expansion of every config along one axis."""
    field = {"omega": "omega", "gamma": "gamma", "k": "k_exemplars"}.get(axis)
    if field is None:
        raise ExperimentError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise ExperimentError("empty sweep values")
    out = dict(exp)
    out["configs"] = [
        {**cfg, field: v, "name": f"{cfg['name']}__{axis}={v}"}
        for cfg in exp.get("configs", []) for v in values
    ]
    return out


def _key(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()[:24]


class StageCache:
    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def dir_for(self, key: str) -> Path:
        return self.root / key

    def run(self, key: str, producer) -> Path:
        """producer(tmpdir) fills the stage output; cached by key."""
        out = self.dir_for(key)
        if (out / ".done").exists():
            self.hits += 1
            return out
        self.misses += 1
        tmp = out.with_suffix(".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        producer(tmp)
        (tmp / ".done").write_text("ok\n")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
        return out


def _dataset_stage(exp, cache: StageCache):
    ds_cfg = dict(exp["dataset"])
    split_cfg = dict(exp.get("split", {}))
    key = _key("dataset", ds_cfg, split_cfg)

    def produce(tmp: Path):
        spec = datasets.DatasetSpec.from_dict(ds_cfg)
        data = datasets.generate(spec)
        train, val, ex = datasets.split(
            data, k=split_cfg.get("k", 32), seed=split_cfg.get("seed", 0),
            n_val_per_class=split_cfg.get("n_val_per_class", 500))
        datasets.save_labeled_set(tmp / "train", train)
        datasets.save_labeled_set(tmp / "val", val)
        datasets.save_labeled_set(
            tmp / "exemplars",
            datasets.LabeledSet(ex.points, ex.class_labels, np.zeros(len(ex.points), dtype=np.intp)))

    out = cache.run(key, produce)
    return key, (datasets.load_labeled_set(out / "train"),
                 datasets.load_labeled_set(out / "val"),
                 datasets.load_labeled_set(out / "exemplars"))


def _train_stage(exp, dataset_key, train_set, cache: StageCache):
    m = dict(exp["model"])
    T = m.pop("T", 40)
    key = _key("train", m, T, dataset_key)
    sched = make_schedule(T)

    def produce(tmp: Path):
        model = denoiser.ConditionalDenoiser(
            train_set.points.shape[1], int(train_set.class_labels.max()) + 1,
            seed=m.get("seed", 0))
        cfg = denoiser.TrainConfig(**m)
        model, losses = denoiser.train(model, train_set.points, train_set.class_labels,
                                       sched, cfg)
        model.save(tmp / "model")
        np.savetxt(tmp / "loss_curve.csv", losses, fmt="%.8f")

    out = cache.run(key, produce)
    return key, denoiser.ConditionalDenoiser.load(out / "model"), sched


def _guidance_for(cfg: dict, exemplars: datasets.LabeledSet, projector: Projector):
    gamma = float(cfg.get("gamma", 0.0))
    if gamma == 0.0:
        return None
    k = int(cfg.get("k_exemplars", 32))
    pts, labels = [], []
    for c in np.unique(exemplars.class_labels):
        rows = np.flatnonzero(exemplars.class_labels == c)[:k]
        pts.append(exemplars.points[rows])
        labels.append(exemplars.class_labels[rows])
    feats = projector.project(np.concatenate(pts), source="real")
    return GuidanceConfig(
        exemplars=feats, projector=projector, gamma=gamma,
        g_freq=int(cfg.get("g_freq", 5)), omega=float(cfg.get("omega", 1.0)),
        grad_mode=cfg.get("grad_mode", "stopgrad"),
        exemplar_labels=np.concatenate(labels),
        per_class=bool(cfg.get("per_class", False)),
    )


def sample_batched(model, sched, n_gen, n_classes, seed, batch_size=256,
                   guidance=None, omega=1.0, cads=None):
    """Deterministic batched sampling with balanced class labels."""
    out_pts, out_labels = [], []
    done = 0
    batch_idx = 0
    while done < n_gen:
        b = min(batch_size, n_gen - done)
        labels = (np.arange(done, done + b)) % n_classes
        pts = sampler.sample(model, sched, labels, guidance=guidance, seed=seed,
                             omega=omega, cads=cads, stream_id=batch_idx)
        out_pts.append(pts)
        out_labels.append(labels)
        done += b
        batch_idx += 1
    return np.concatenate(out_pts), np.concatenate(out_labels)


def _eval_config(exp, cfg, model, sched, val, exemplars, projector, outdir):
    ev = exp.get("evaluation", {})
    n_gen = int(ev.get("n_gen", 1024))
    batch = int(ev.get("batch", 256))
    knn_k = int(ev.get("k", 5))
    omega = float(cfg.get("omega", 1.0))
    guidance = _guidance_for(cfg, exemplars, projector)
    cads = None
    if "cads" in cfg:
        cads = sampler.CadsParams(**cfg["cads"])
    rows = []
    first_samples = None
    for seed in cfg.get("seeds", [0]):
        t0 = time.perf_counter()
        pts, labels = sample_batched(model, sched, n_gen, model.n_classes, seed,
                                     batch_size=batch, guidance=guidance,
                                     omega=omega, cads=cads)
        real_feats = projector.project(val.points, source="real")
        gen_feats = projector.project(pts, source="generated")
        rep = evaluate(real_feats, gen_feats, k=knn_k)
        wall = time.perf_counter() - t0
        rows.append({
            "config": cfg["name"], "seed": int(seed),
            "precision": rep.precision, "recall": rep.recall,
            "density": rep.density, "coverage": rep.coverage,
            "f1_pc": rep.f1_pc, "frechet": rep.frechet, "chamfer": rep.chamfer,
            "wall_time_s": wall,
        })
        if first_samples is None:
            first_samples = (pts, labels)
    artifacts = []
    if model.dim == 2 and first_samples is not None:
        svg = Path(outdir) / f"scatter_{cfg['name']}.svg"
        svgplot.scatter_svg(svg, first_samples[0], first_samples[1],
                            title=cfg["name"])
        artifacts.append(svg.name)
    return rows, artifacts


def run(experiment_path, outdir, jobs: int = 1, cache_dir=None):
    """Execute an experiment file; returns (rows, report dict)."""
    exp = load_experiment(experiment_path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cache_root = cache_dir or os.environ.get("CHAMFERLAB_CACHE") or (outdir / ".cache")
    cache = StageCache(cache_root)

    ds_key, (train_set, val, exemplars) = _dataset_stage(exp, cache)
    train_key, model, sched = _train_stage(exp, ds_key, train_set, cache)
    dim = train_set.points.shape[1]
    proj_kind = exp.get("projector", "identity")
    if proj_kind == "identity":
        projector = Projector.identity(dim)
    elif proj_kind == "random-linear":
        projector = Projector.random_linear(dim, int(exp.get("projector_dim", dim)), seed=0)
    else:
        raise ExperimentError(f"unknown projector {proj_kind!r} for experiments")

    configs = exp.get("configs", [])
    rows: list[dict] = []
    artifacts: list[str] = []
    errors: dict[str, str] = {}

    def work(cfg):
        key = _key("config", cfg, exp.get("evaluation", {}), ds_key, train_key, proj_kind)

        def produce(tmp: Path):
            r, a = _eval_config(exp, cfg, model, sched, val, exemplars, projector, tmp)
            (tmp / "rows.json").write_text(json.dumps(r, sort_keys=True))
            (tmp / "artifacts.json").write_text(json.dumps(a))

        out = cache.run(key, produce)
        r = json.loads((out / "rows.json").read_text())
        a = json.loads((out / "artifacts.json").read_text())
        for name in a:
            shutil.copyfile(out / name, outdir / name)
        return r, a

    if jobs > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {cfg["name"]: pool.submit(work, cfg) for cfg in configs}
            for name, fut in futures.items():
                try:
                    r, a = fut.result()
                    rows.extend(r)
                    artifacts.extend(a)
                except Exception as e:
                    errors[name] = f"{type(e).__name__}: {e}"
    else:
        for cfg in configs:
            try:
                r, a = work(cfg)
                rows.extend(r)
                artifacts.extend(a)
            except Exception as e:
                errors[cfg["name"]] = f"{type(e).__name__}: {e}"

    rows.sort(key=lambda r: (r["config"], r["seed"]))
    results_csv = outdir / "results.csv"
    with open(results_csv, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    artifacts.append("results.csv")

    # k-sweep line data: coverage per k when configs vary k_exemplars
    by_k: dict[int, list[float]] = {}
    for cfg in configs:
        if "k_exemplars" in cfg:
            cov = [r["coverage"] for r in rows if r["config"] == cfg["name"]]
            if cov:
                by_k.setdefault(int(cfg["k_exemplars"]), []).extend(cov)
    if len(by_k) > 1:
        ks = sorted(by_k)
        kfile = outdir / "k_sweep.csv"
        with open(kfile, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "coverage_mean"])
            for k in ks:
                w.writerow([k, f"{np.mean(by_k[k]):.6f}"])
        svgplot.line_svg(outdir / "k_sweep.svg", ks,
                         {"coverage": [np.mean(by_k[k]) for k in ks]},
                         title="coverage vs exemplar count", x_label="k")
        artifacts.extend(["k_sweep.csv", "k_sweep.svg"])

    report = {
        "experiment": exp.get("name", Path(experiment_path).stem),
        "n_configs": len(configs),
        "n_rows": len(rows),
        "cache_hits": cache.hits,
        "cache_misses": cache.misses,
        "artifacts": sorted(artifacts),
        "errors": errors,
    }
    (outdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return rows, report
