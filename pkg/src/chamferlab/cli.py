"""Command-line front end tying the lab together."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import costmodel, datasets, denoiser, experiment, finetune, matio, utility
from .chamfer import load_guidance_config
from .featspace import FeatureSet, Projector
from .metrics import evaluate
from .sampler import sample
from .schedule import make_schedule

if sys.version_info >= (3, 11):
    import tomllib as toml
else:
    import tomli as toml


def _load_toml(path) -> dict:
    with open(path, "rb") as f:
        return toml.load(f)


def cmd_gen_data(args):
    raw = _load_toml(args.dataset_spec)
    split_cfg = raw.pop("split", {})
    spec = datasets.DatasetSpec.from_dict(raw)
    data = datasets.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets.save_labeled_set(out / "full", data)
    if split_cfg:
        train, val, ex = datasets.split(
            data, k=split_cfg.get("k", 32), seed=split_cfg.get("seed", 0),
            n_val_per_class=split_cfg.get("n_val_per_class", 500))
        datasets.save_labeled_set(out / "train", train)
        datasets.save_labeled_set(out / "val", val)
        datasets.save_labeled_set(out / "exemplars", datasets.LabeledSet(
            ex.points, ex.class_labels, np.zeros(len(ex.points), dtype=np.intp)))
    print(f"wrote dataset ({len(data)} points) to {out}")
    return 0


def cmd_train(args):
    cfg = _load_toml(args.config)
    data = datasets.load_labeled_set(cfg["data"])
    T = cfg.get("T", 40)
    sched = make_schedule(T)
    model = denoiser.ConditionalDenoiser(
        data.points.shape[1], int(data.class_labels.max()) + 1,
        seed=cfg.get("seed", 0))
    train_cfg = denoiser.TrainConfig(
        steps=cfg.get("steps", 6000), batch_size=cfg.get("batch_size", 128),
        learning_rate=cfg.get("learning_rate", 1e-3),
        p_uncond=cfg.get("p_uncond", 0.1), seed=cfg.get("seed", 0),
        optimizer=cfg.get("optimizer", "adam"))
    model, losses = denoiser.train(model, data.points, data.class_labels, sched, train_cfg)
    out = Path(args.out or cfg["out"])
    model.save(out)
    matio.save_manifest(out / "train_info.json",
                        {"T": T, "final_loss": float(losses[-1]), "steps": train_cfg.steps})
    np.savetxt(out / "loss_curve.csv", losses, fmt="%.8f")
    print(f"trained model -> {out} (final loss {losses[-1]:.4f})")
    return 0


def cmd_sample(args):
    model = denoiser.ConditionalDenoiser.load(args.model)
    info = matio.load_manifest(Path(args.model) / "train_info.json")
    sched = make_schedule(info["T"])
    labels = np.arange(args.n) % model.n_classes
    guidance = load_guidance_config(args.guidance) if args.guidance else None
    pts = sample(model, sched, labels, guidance=guidance, seed=args.seed, omega=args.omega)
    matio.save_matrix(args.out, pts)
    with open(Path(args.out).with_suffix(".labels.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "class", "group"])
        for i, c in enumerate(labels):
            w.writerow([i, int(c), 0])
    print(f"sampled {args.n} points -> {args.out}")
    return 0


def cmd_project(args):
    projector = Projector.load(args.projector)
    batch = matio.load_matrix(args.infile)
    feats = projector.project(batch, source=args.source)
    if args.l2_normalize:
        norms = np.linalg.norm(feats.features, axis=1, keepdims=True)
        feats = FeatureSet(feats.features / np.maximum(norms, 1e-12),
                           feats.projector_id + ":l2", feats.source)
    feats.save(Path(args.out))
    print(f"projected {len(feats)} points -> {args.out}")
    return 0


def _load_features(path) -> FeatureSet:
    base = Path(path)
    if base.with_suffix(".meta.json").exists():
        return FeatureSet.load(base)
    return FeatureSet(matio.load_matrix(base.with_suffix(".chlm")), "raw")


def _load_groups(path):
    real, gen = {}, {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            target = real if row["set"] == "real" else gen
            target[int(row["index"])] = int(row["group"])
    to_arr = lambda d: np.array([d[i] for i in range(len(d))]) if d else None
    return to_arr(real), to_arr(gen)


def cmd_eval(args):
    real = _load_features(args.real)
    gen = _load_features(args.gen)
    real_groups = gen_groups = None
    if args.groups:
        real_groups, gen_groups = _load_groups(args.groups)
    rep = evaluate(real, gen, k=args.k, real_groups=real_groups, gen_groups=gen_groups)
    Path(args.out).write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"f1_pc={rep.f1_pc:.4f} precision={rep.precision:.4f} "
          f"coverage={rep.coverage:.4f} -> {args.out}")
    return 0


def cmd_finetune(args):
    cfg = _load_toml(args.config)
    model = denoiser.ConditionalDenoiser.load(args.model)
    info = matio.load_manifest(Path(args.model) / "train_info.json")
    sched = make_schedule(cfg.get("T", info["T"]))
    ex_set = datasets.load_labeled_set(args.exemplars)
    k = int(np.bincount(ex_set.class_labels).max())
    exemplars = datasets.ExemplarSet(ex_set.points, ex_set.class_labels, k)
    if args.mode == "vanilla":
        train_cfg = denoiser.TrainConfig(
            steps=cfg.get("steps", 1000), batch_size=cfg.get("batch_size", 64),
            learning_rate=cfg.get("learning_rate", 1e-4),
            p_uncond=cfg.get("p_uncond", 0.1), seed=cfg.get("seed", 0),
            optimizer=cfg.get("optimizer", "sgd"))
        model, losses = finetune.vanilla_finetune(model, exemplars, sched, train_cfg)
    else:
        refl_cfg = finetune.ReflConfig(
            lam=cfg.get("lam", 1e-3), t1=cfg.get("t1", 30), t2=cfg.get("t2", 39),
            steps=cfg.get("steps", 500), batch_size=cfg.get("batch_size", 32),
            learning_rate=cfg.get("learning_rate", 1e-3), seed=cfg.get("seed", 0))
        projector = (Projector.load(cfg["projector"]) if "projector" in cfg
                     else Projector.identity(model.dim))
        model, losses = finetune.refl_chamfer_finetune(model, exemplars, projector,
                                                       sched, refl_cfg)
    out = Path(args.out)
    model.save(out)
    matio.save_manifest(out / "train_info.json", {"T": sched.T, "mode": args.mode})
    print(f"fine-tuned ({args.mode}) -> {out}")
    return 0


def cmd_utility(args):
    cfg = _load_toml(args.gen_config)
    model = denoiser.ConditionalDenoiser.load(cfg["model"])
    info = matio.load_manifest(Path(cfg["model"]) / "train_info.json")
    sched = make_schedule(cfg.get("T", info["T"]))
    omega = float(cfg.get("omega", 1.0))
    guidance = load_guidance_config(cfg["guidance"]) if "guidance" in cfg else None
    train_set = datasets.load_labeled_set(cfg["train"])
    val_set = datasets.load_labeled_set(cfg["val"])
    shifted = datasets.load_labeled_set(cfg["shifted_val"]) if "shifted_val" in cfg else None

    def generator(labels, seed):
        pts, _ = experiment.sample_batched(
            model, sched, len(labels), model.n_classes, seed,
            guidance=guidance, omega=omega)
        return pts

    def labels_for(n, seed):
        return np.arange(n) % model.n_classes

    seeds = [int(s) for s in args.seeds.split(",")]
    rows = utility.utility_experiment(
        generator, labels_for, args.n_synth, args.n_real, seeds,
        train_set, val_set, shifted_val=shifted)
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["seed", "mix", "acc_id", "acc_ood"])
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} utility rows -> {args.out}")
    return 0


def cmd_flops(args):
    if args.spec in costmodel.PRESETS:
        import importlib.resources as res
        with res.as_file(res.files("chamferlab") / "presets" / f"{args.spec}.cost") as p:
            spec = costmodel.CostSpec.from_file(p)
    else:
        spec = costmodel.CostSpec.from_file(args.spec)
    report = costmodel.total_flops(spec)
    costmodel.write_report(args.out, spec, report)
    print(f"cfg={report.cfg_total / 1e12:.1f}T guided={report.guided_total / 1e12:.1f}T "
          f"gain={report.efficiency_gain:.3f} -> {args.out}")
    return 0


def cmd_run(args):
    rows, report = experiment.run(args.experiment, args.out, jobs=args.jobs)
    print(f"{report['n_rows']} rows, {len(report['errors'])} errors, "
          f"{report['cache_hits']} cache hits -> {args.out}")
    return 2 if report["errors"] else 0


def cmd_sweep(args):
    exp = experiment.load_experiment(args.experiment)
    values = [json.loads(v) for v in args.values.split(",")]
    expanded = experiment.sweep(exp, args.axis, values)
    Path(args.out).write_text(json.dumps(expanded, indent=2, sort_keys=True) + "\n")
    print(f"{len(expanded['configs'])} configs -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chamferlab",
                                description="Exemplar-grounded guided-diffusion lab")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset")
    s.add_argument("--dataset-spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", help="train the conditional denoiser")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="sample from a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--omega", type=float, default=1.0)
    s.add_argument("--guidance")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("project", help="project points into feature space")
    s.add_argument("--projector", required=True)
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--source", default="generated", choices=["real", "generated"])
    s.add_argument("--l2-normalize", action="store_true")
    s.set_defaults(fn=cmd_project)

    s = sub.add_parser("eval", help="quality/diversity metrics")
    s.add_argument("--real", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--groups")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("finetune", help="fine-tune on exemplars")
    s.add_argument("--mode", choices=["vanilla", "refl"], required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--exemplars", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_finetune)

    s = sub.add_parser("utility", help="downstream classifier experiment")
    s.add_argument("--gen-config", required=True)
    s.add_argument("--n-synth", type=int, required=True)
    s.add_argument("--n-real", type=int, default=0)
    s.add_argument("--seeds", default="0")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_utility)

    s = sub.add_parser("flops", help="FLOP cost model")
    s.add_argument("--spec", required=True,
                   help="path to a .cost file or a preset name (ldm15, ldm35)")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_flops)

    s = sub.add_parser("run", help="run an experiment file")
    s.add_argument("experiment")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="expand an experiment along an axis")
    s.add_argument("experiment")
    s.add_argument("--axis", choices=["omega", "gamma", "k"], required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
