"""Seeded synthetic conditional datasets.

Desk-scale stand-ins for class-conditional image data: mixtures of M
Gaussian modes per class, ring shells, or per-class moons, optionally
with per-group additive shifts (the regional-variation analog). All
generation is deterministic per seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matio, rng

FAMILIES = ("gauss-mixture", "rings", "moons-per-class")


class SpecError(Exception):
    pass


class SplitError(Exception):
    pass


@dataclass
class DatasetSpec:
    family: str = "gauss-mixture"
    dim: int = 2
    n_classes: int = 8
    n_groups: int = 1
    modes_per_class: int = 4
    sigma: float = 0.3
    class_radius: float = 8.0
    mode_radius: float = 3.0
    group_shifts: list = field(default_factory=list)  # one length-dim vector per group
    n_per_class: int = 1500
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}")
        if self.modes_per_class < 1 or self.n_classes < 1 or self.n_groups < 1:
            raise SpecError("counts must be >= 1")
        if self.sigma <= 0:
            raise SpecError("sigma must be > 0")
        if self.dim < 2 or self.dim > 16:
            raise SpecError("dim must be in [2, 16]")
        if self.group_shifts and len(self.group_shifts) != self.n_groups:
            raise SpecError("need one shift vector per group")

    def shift(self, g: int) -> np.ndarray:
        if not self.group_shifts:
            return np.zeros(self.dim)
        return np.asarray(self.group_shifts[g], dtype=np.float64)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**{k.replace("-", "_"): v for k, v in d.items()})


@dataclass
class LabeledSet:
    points: np.ndarray        # (N, d)
    class_labels: np.ndarray  # (N,) int
    group_labels: np.ndarray  # (N,) int

    def __len__(self):
        return self.points.shape[0]

    def take(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledSet(self.points[idx], self.class_labels[idx], self.group_labels[idx])


@dataclass
class ExemplarSet:
    points: np.ndarray        # (C*k, d)
    class_labels: np.ndarray  # (C*k,)
    k: int


def mode_centers(spec: DatasetSpec) -> np.ndarray:
    """(C, M, dim) mode centers; classes on a circle, modes on a sub-circle."""
    c_idx = np.arange(spec.n_classes)
    ang_c = 2 * np.pi * c_idx / max(spec.n_classes, 1)
    centers = np.zeros((spec.n_classes, spec.modes_per_class, spec.dim))
    if spec.n_classes > 1:
        centers[:, :, 0] = (spec.class_radius * np.cos(ang_c))[:, None]
        centers[:, :, 1] = (spec.class_radius * np.sin(ang_c))[:, None]
    if spec.modes_per_class > 1:
        m_idx = np.arange(spec.modes_per_class)
        # offset each class's mode fan so neighboring classes interleave
        ang_m = 2 * np.pi * (m_idx[None, :] + 0.5 * (c_idx[:, None] % 2)) / spec.modes_per_class
        centers[:, :, 0] += spec.mode_radius * np.cos(ang_m)
        centers[:, :, 1] += spec.mode_radius * np.sin(ang_m)
    return centers


def _sample_class(spec: DatasetSpec, c: int, n: int, gen: np.random.Generator) -> np.ndarray:
    if spec.family == "gauss-mixture":
        centers = mode_centers(spec)[c]
        modes = gen.integers(0, spec.modes_per_class, size=n)
        return centers[modes] + spec.sigma * rng.gauss(gen, (n, spec.dim))
    if spec.family == "rings":
        radius = spec.mode_radius * (c + 1)
        arc = gen.integers(0, spec.modes_per_class, size=n)
        theta = 2 * np.pi * arc / spec.modes_per_class + spec.sigma * rng.gauss(gen, n)
        pts = spec.sigma * rng.gauss(gen, (n, spec.dim))
        pts[:, 0] += radius * np.cos(theta)
        pts[:, 1] += radius * np.sin(theta)
        return pts
    # moons-per-class: one half-moon per class, segments play the mode role
    seg = gen.integers(0, spec.modes_per_class, size=n)
    u = (seg + gen.random(n)) / spec.modes_per_class  # position along the arc
    theta = np.pi * u
    pts = spec.sigma * rng.gauss(gen, (n, spec.dim))
    ang_c = 2 * np.pi * c / spec.n_classes
    pts[:, 0] += spec.class_radius * np.cos(ang_c) + spec.mode_radius * np.cos(theta)
    pts[:, 1] += spec.class_radius * np.sin(ang_c) + spec.mode_radius * np.sin(theta)
    return pts


def generate(spec: DatasetSpec) -> LabeledSet:
    """Sample the full labeled pool for a spec, deterministically per seed."""
    points, classes, groups = [], [], []
    for c in range(spec.n_classes):
        gen = rng.stream(spec.seed, "datagen", c)
        pts = _sample_class(spec, c, spec.n_per_class, gen)
        grp = np.arange(spec.n_per_class) % spec.n_groups
        for g in range(spec.n_groups):
            pts[grp == g] += spec.shift(g)
        points.append(pts)
        classes.append(np.full(spec.n_per_class, c))
        groups.append(grp)
    return LabeledSet(
        np.concatenate(points),
        np.concatenate(classes).astype(np.intp),
        np.concatenate(groups).astype(np.intp),
    )


def split(data: LabeledSet, k: int, seed: int, n_val_per_class: int = 500):
    """Disjoint (train, validation, exemplars); exactly k exemplars per class.

    Per-class row indices are put in canonical (lexicographic point) order
    before the seeded shuffle, so the selected point multiset is invariant
    to how the dataset rows happen to be stored.
    """
    classes = np.unique(data.class_labels)
    train_idx, val_idx = [], []
    ex_points, ex_labels = [], []
    for c in classes:
        idx = np.flatnonzero(data.class_labels == c)
        n_c = idx.size
        if n_c < k + n_val_per_class:
            raise SplitError(
                f"class {c}: {n_c} points < k={k} + validation minimum {n_val_per_class}")
        order = np.lexsort(data.points[idx].T[::-1])
        idx = idx[order]
        gen = rng.stream(seed, "split", int(c))
        perm = gen.permutation(n_c)
        val_idx.append(idx[perm[:n_val_per_class]])
        tr = idx[perm[n_val_per_class:]]
        train_idx.append(tr)
        ex = tr[gen.permutation(tr.size)[:k]]
        ex_points.append(data.points[ex])
        ex_labels.append(np.full(k, c))
    train = data.take(np.concatenate(train_idx))
    val = data.take(np.concatenate(val_idx))
    exemplars = ExemplarSet(np.concatenate(ex_points), np.concatenate(ex_labels).astype(np.intp), k)
    return train, val, exemplars


def save_labeled_set(base, data: LabeledSet) -> None:
    base = Path(base)
    matio.save_matrix(base.with_suffix(".chlm"), data.points)
    with open(base.with_suffix(".labels.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "class", "group"])
        for i in range(len(data)):
            w.writerow([i, int(data.class_labels[i]), int(data.group_labels[i])])


def load_labeled_set(base) -> LabeledSet:
    base = Path(base)
    points = matio.load_matrix(base.with_suffix(".chlm"))
    classes = np.zeros(points.shape[0], dtype=np.intp)
    groups = np.zeros(points.shape[0], dtype=np.intp)
    with open(base.with_suffix(".labels.csv"), newline="") as f:
        for row in csv.DictReader(f):
            i = int(row["index"])
            classes[i] = int(row["class"])
            groups[i] = int(row["group"])
    return LabeledSet(points, classes, groups)
