"""Representation-space projection and exact nearest-neighbor search.

Projectors are the toy stand-in for a semantic encoder: identity,
random-linear, or the frozen first layers of a classifier trained on the
real split. Every kind is differentiable (a VJP is available), since the
guidance gradient must flow back through the projection.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import matio, rng
from .autodiff import Tape, Var, silu


class ProjectorError(Exception):
    pass


class NeighborError(Exception):
    pass


class Projector:
    """kind: identity | random-linear | trained-encoder."""

    def __init__(self, kind: str, dim_in: int, dim_out: int, params: dict | None = None):
        if kind not in ("identity", "random-linear", "trained-encoder"):
            raise ProjectorError(f"unknown projector kind {kind!r}")
        self.kind = kind
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.params = params or {}
        if kind == "identity" and dim_in != dim_out:
            raise ProjectorError("identity projector needs dim_in == dim_out")

    @classmethod
    def identity(cls, dim: int) -> "Projector":
        return cls("identity", dim, dim)

    @classmethod
    def random_linear(cls, dim_in: int, dim_out: int, seed: int = 0) -> "Projector":
        w = rng.gauss(rng.stream(seed, "projector"), (dim_in, dim_out)) / np.sqrt(dim_in)
        return cls("random-linear", dim_in, dim_out, {"W": w})

    @classmethod
    def linear(cls, w: np.ndarray) -> "Projector":
        w = np.asarray(w, dtype=np.float64)
        return cls("random-linear", w.shape[0], w.shape[1], {"W": w})

    @classmethod
    def encoder(cls, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> "Projector":
        """Two frozen dense layers (silu after the first)."""
        return cls("trained-encoder", w1.shape[0], w2.shape[1],
                   {"W1": w1.copy(), "b1": b1.copy(), "W2": w2.copy(), "b2": b2.copy()})

    @property
    def projector_id(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.kind}:{self.dim_in}:{self.dim_out}".encode())
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def forward_var(self, tape: Tape, x: Var) -> Var:
        if x.value.shape[1] != self.dim_in:
            raise ProjectorError(
                f"batch has {x.value.shape[1]} columns, projector expects {self.dim_in}")
        if self.kind == "identity":
            return x
        if self.kind == "random-linear":
            return x @ tape.constant(self.params["W"])
        h = silu(x @ tape.constant(self.params["W1"]) + tape.constant(self.params["b1"]))
        return h @ tape.constant(self.params["W2"]) + tape.constant(self.params["b2"])

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        tape = Tape()
        return self.forward_var(tape, tape.constant(batch)).value

    def project(self, batch: np.ndarray, source: str = "generated") -> "FeatureSet":
        return FeatureSet(self(batch), self.projector_id, source)

    def vjp(self, batch: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Gradient of sum(upstream * project(batch)) w.r.t. batch."""
        tape = Tape()
        x = tape.var(batch)
        y = self.forward_var(tape, x)
        if upstream.shape != y.value.shape:
            raise ProjectorError(f"upstream shape {upstream.shape} != output {y.value.shape}")
        tape.backward_from(y, upstream)
        return x.grad

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for k, v in self.params.items():
            matio.save_matrix(path / f"{k}.chlm", v)
        matio.save_manifest(path / "manifest.json", {
            "kind": self.kind, "dim_in": self.dim_in, "dim_out": self.dim_out,
            "params": sorted(self.params),
        })

    @classmethod
    def load(cls, path) -> "Projector":
        path = Path(path)
        man = matio.load_manifest(path / "manifest.json")
        params = {}
        for k in man["params"]:
            v = matio.load_matrix(path / f"{k}.chlm")
            params[k] = v.ravel() if k.startswith("b") else v
        return cls(man["kind"], man["dim_in"], man["dim_out"], params)


class FeatureSet:
    """Projected points plus the identity of the projector that made them."""

    def __init__(self, features: np.ndarray, projector_id: str, source: str = "generated"):
        features = np.asarray(features, dtype=np.float64)
        if not np.all(np.isfinite(features)):
            raise ProjectorError("non-finite feature values")
        self.features = features
        self.projector_id = projector_id
        self.source = source

    def __len__(self):
        return self.features.shape[0]

    def save(self, base) -> None:
        base = Path(base)
        matio.save_matrix(base.with_suffix(".chlm"), self.features)
        matio.save_manifest(base.with_suffix(".meta.json"),
                            {"projector_id": self.projector_id, "source": self.source})

    @classmethod
    def load(cls, base) -> "FeatureSet":
        base = Path(base)
        meta = matio.load_manifest(base.with_suffix(".meta.json"))
        return cls(matio.load_matrix(base.with_suffix(".chlm")),
                   meta["projector_id"], meta["source"])


def check_same_space(a: FeatureSet, b: FeatureSet) -> None:
    if a.projector_id != b.projector_id:
        raise ProjectorError(
            f"feature sets come from different projectors ({a.projector_id} vs {b.projector_id})")


def _knn_brute(points: np.ndarray, queries: np.ndarray, k: int):
    d2 = np.sum((queries[:, None, :] - points[None, :, :]) ** 2, axis=2)
    # stable argsort on (distance, index): ties go to the lower index
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(d2, idx, axis=1)


class NeighborIndex:
    """Exact k-nearest-neighbor search under squared Euclidean distance.

    strategy "cell-grid" buckets points into a uniform grid and scans
    cells in expanding shells; it is an accelerator only and returns
    exactly what brute force returns, including the lower-index tie-break.
    Grids are only worthwhile in very low dimension, so they are refused
    for D > 3.
    """

    def __init__(self, points: np.ndarray, strategy: str = "brute"):
        points = np.asarray(points, dtype=np.float64)
        if strategy not in ("brute", "cell-grid"):
            raise NeighborError(f"unknown strategy {strategy!r}")
        if strategy == "cell-grid" and points.shape[1] > 3:
            raise NeighborError("cell-grid supports D <= 3 only")
        self.points = points
        self.strategy = strategy
        if strategy == "cell-grid":
            self._build_grid()

    def _build_grid(self):
        pts = self.points
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        # target a handful of points per cell
        n_cells = max(1, int(round(len(pts) ** (1 / pts.shape[1]) / 2)))
        self._lo = lo
        self._cell = span / n_cells
        self._ncells = n_cells
        coords = np.clip(((pts - lo) / self._cell).astype(int), 0, n_cells - 1)
        self._buckets: dict[tuple, list[int]] = {}
        for i, c in enumerate(map(tuple, coords)):
            self._buckets.setdefault(c, []).append(i)

    def query(self, queries: np.ndarray, k: int):
        """Per-query (indices, squared distances) sorted ascending."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if k > len(self.points):
            raise NeighborError(f"k={k} exceeds index size {len(self.points)}")
        if self.strategy == "brute":
            return _knn_brute(self.points, queries, k)
        idx = np.empty((len(queries), k), dtype=np.intp)
        d2 = np.empty((len(queries), k))
        for qi, q in enumerate(queries):
            idx[qi], d2[qi] = self._query_grid(q, k)
        return idx, d2

    def _query_grid(self, q: np.ndarray, k: int):
        dim = self.points.shape[1]
        n = self._ncells
        qc = np.clip(((q - self._lo) / self._cell).astype(int), 0, n - 1)
        best: list[tuple[float, int]] = []
        for ring in range(n + 1):
            # collect candidates from cells at Chebyshev distance == ring
            for cell in self._ring_cells(qc, ring, dim):
                for i in self._buckets.get(cell, ()):
                    d = float(np.sum((self.points[i] - q) ** 2))
                    best.append((d, i))
            if len(best) >= k:
                best.sort()
                kth = best[k - 1][0]
                # all cells beyond this ring are at least ring*cell away
                reach = (ring * self._cell.min()) ** 2
                if reach > kth or ring == n:
                    break
        best.sort()
        top = best[:k]
        return np.array([i for _, i in top], dtype=np.intp), np.array([d for d, _ in top])

    def _ring_cells(self, center, ring, dim):
        n = self._ncells
        rng_ = range(-ring, ring + 1)
        if dim == 1:
            offsets = [(o,) for o in rng_ if abs(o) == ring or ring == 0]
        elif dim == 2:
            offsets = [(a, b) for a in rng_ for b in rng_ if max(abs(a), abs(b)) == ring]
        else:
            offsets = [(a, b, c) for a in rng_ for b in rng_ for c in rng_
                       if max(abs(a), abs(b), abs(c)) == ring]
        for off in offsets:
            cell = tuple(int(center[j] + off[j]) for j in range(dim))
            if all(0 <= cell[j] < n for j in range(dim)):
                yield cell


def knn(index: NeighborIndex, queries: np.ndarray, k: int):
    return index.query(queries, k)
