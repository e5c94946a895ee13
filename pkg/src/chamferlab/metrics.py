"""Grounded quality/diversity metrics for generated point sets.

Precision/recall follow the kNN-manifold construction, density/coverage
its outlier-robust variant; radii are distances to the k-th nearest
neighbor within the same set, self excluded. F1 harmonically combines
precision with coverage, which is the model-selection criterion used
throughout this lab.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chamfer import chamfer as chamfer_distance
from .featspace import FeatureSet, NeighborIndex, check_same_space
from .linalg import sym_eig


class MetricError(Exception):
    pass


@dataclass
class MetricsReport:
    precision: float
    recall: float
    density: float
    coverage: float
    f1_pc: float
    frechet: float
    chamfer: float
    knn_k: int
    n_real: int
    n_gen: int
    per_group: dict = field(default_factory=dict)
    worst_group: int | None = None

    def to_dict(self) -> dict:
        d = {
            "precision": self.precision, "recall": self.recall,
            "density": self.density, "coverage": self.coverage,
            "f1_pc": self.f1_pc, "frechet": self.frechet, "chamfer": self.chamfer,
            "knn_k": self.knn_k, "n_real": self.n_real, "n_gen": self.n_gen,
        }
        if self.per_group:
            d["per_group"] = {str(g): r.to_dict() for g, r in sorted(self.per_group.items())}
            d["worst_group"] = self.worst_group
        return d


def knn_radii(points: np.ndarray, k: int) -> np.ndarray:
    """Distance (not squared) to the k-th nearest neighbor, self excluded."""
    if points.shape[0] <= k:
        raise MetricError(f"need more than k={k} points, got {points.shape[0]}")
    index = NeighborIndex(points, "brute")
    _, d2 = index.query(points, k + 1)
    return np.sqrt(d2[:, k])


def _cross_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2))


def precision_recall(real: FeatureSet, gen: FeatureSet, k: int):
    check_same_space(real, gen)
    r_real = knn_radii(real.features, k)
    r_gen = knn_radii(gen.features, k)
    d = _cross_dist(gen.features, real.features)  # (n_gen, n_real)
    precision = float(np.mean(np.any(d <= r_real[None, :], axis=1)))
    recall = float(np.mean(np.any(d.T <= r_gen[None, :], axis=1)))
    return precision, recall


def density_coverage(real: FeatureSet, gen: FeatureSet, k: int):
    check_same_space(real, gen)
    r_real = knn_radii(real.features, k)
    d = _cross_dist(gen.features, real.features)
    density = float(np.sum(d <= r_real[None, :]) / (k * len(gen)))
    coverage = float(np.mean(np.min(d, axis=0) <= r_real))
    return density, coverage


def f1_pc(precision: float, coverage: float) -> float:
    """Harmonic mean of precision and coverage; 0 when both are 0."""
    for name, v in (("precision", precision), ("coverage", coverage)):
        if not 0 <= v <= 1:
            raise MetricError(f"{name}={v} outside [0, 1]")
    if precision + coverage == 0:
        return 0.0
    return 2 * precision * coverage / (precision + coverage)


def frechet(a: FeatureSet, b: FeatureSet, reg: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of the two feature sets."""
    check_same_space(a, b)
    xa, xb = a.features, b.features
    mu_a, mu_b = xa.mean(axis=0), xb.mean(axis=0)
    dim = xa.shape[1]
    cov_a = np.cov(xa, rowvar=False).reshape(dim, dim) + reg * np.eye(dim)
    cov_b = np.cov(xb, rowvar=False).reshape(dim, dim) + reg * np.eye(dim)
    # tr (cov_a cov_b)^(1/2) via the symmetric product cov_a^(1/2) cov_b cov_a^(1/2)
    wa, va = sym_eig(cov_a)
    root_a = (va * np.sqrt(np.clip(wa, 0, None))) @ va.T
    inner = root_a @ cov_b @ root_a
    w_inner, _ = sym_eig((inner + inner.T) / 2)
    tr_sqrt = np.sum(np.sqrt(np.clip(w_inner, 0, None)))
    out = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_sqrt)
    if not np.isfinite(out):
        raise MetricError("frechet distance is not finite")
    return out


def _single_report(real: FeatureSet, gen: FeatureSet, k: int) -> MetricsReport:
    p, r = precision_recall(real, gen, k)
    dens, cov = density_coverage(real, gen, k)
    return MetricsReport(
        precision=p, recall=r, density=dens, coverage=cov,
        f1_pc=f1_pc(p, cov), frechet=frechet(real, gen),
        chamfer=chamfer_distance(real, gen).total,
        knn_k=k, n_real=len(real), n_gen=len(gen),
    )


def evaluate(real: FeatureSet, gen: FeatureSet, k: int = 5,
             real_groups=None, gen_groups=None) -> MetricsReport:
    """Overall report, plus per-group reports and the worst group by F1.

    Per the worst-region protocol, the worst group is selected on F1 alone
    and its companion metrics are reported as-is (they may exceed the
    average).
    """
    report = _single_report(real, gen, k)
    if real_groups is None:
        return report
    if gen_groups is None:
        raise MetricError("need group labels for both sets")
    real_groups = np.asarray(real_groups)
    gen_groups = np.asarray(gen_groups)
    for g in np.unique(real_groups):
        rr = real_groups == g
        gg = gen_groups == g
        if rr.sum() <= k or gg.sum() <= k:
            raise MetricError(f"group {g} has too few points for k={k}")
        sub_real = FeatureSet(real.features[rr], real.projector_id, real.source)
        sub_gen = FeatureSet(gen.features[gg], gen.projector_id, gen.source)
        report.per_group[int(g)] = _single_report(sub_real, sub_gen, k)
    report.worst_group = min(report.per_group, key=lambda g: report.per_group[g].f1_pc)
    return report
