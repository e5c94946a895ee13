"""Downstream-utility harness: train a small classifier on synthetic
data and score it on held-out real data (plus a group-shifted variant as
the out-of-distribution analog)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import Tape, logsumexp_rows, silu


class UtilityError(Exception):
    pass


@dataclass
class ClassifierSpec:
    hidden: int = 64
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-2


class MLPClassifier:
    """Two-layer softmax classifier, deterministic per seed."""

    def __init__(self, dim: int, n_classes: int, spec: ClassifierSpec, seed: int = 0):
        self.spec = spec
        self.n_classes = n_classes
        gen = rng.stream(seed, "clf-init")
        h = spec.hidden
        self.params = {
            "W1": rng.gauss(gen, (dim, h)) * np.sqrt(2.0 / dim),
            "b1": np.zeros(h),
            "W2": rng.gauss(gen, (h, n_classes)) * np.sqrt(2.0 / h),
            "b2": np.zeros(n_classes),
        }

    def get_params(self) -> dict:
        return {"n_classes": self.n_classes, **vars(self.spec)}

    def _logits_var(self, tape, x_const):
        p = {k: tape.var(v) for k, v in self.params.items()}
        self._param_vars = p
        hid = silu(x_const @ p["W1"] + p["b1"])
        return hid @ p["W2"] + p["b2"]

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        tape = Tape()
        return self._logits_var(tape, tape.constant(x)).value

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_function(x), axis=1)

    def score(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def fit(self, x: np.ndarray, y: np.ndarray, seed: int = 0) -> "MLPClassifier":
        y = np.asarray(y, dtype=np.intp)
        n = x.shape[0]
        gen = rng.stream(seed, "clf-fit")
        for _ in range(self.spec.steps):
            idx = gen.integers(0, n, size=self.spec.batch_size)
            tape = Tape()
            logits = self._logits_var(tape, tape.constant(x[idx]))
            # cross entropy: mean(logsumexp - true logit)
            onehot = np.zeros((idx.size, self.n_classes))
            onehot[np.arange(idx.size), y[idx]] = 1.0
            true_logit = (logits * tape.constant(onehot)).sum() * (1.0 / idx.size)
            lse = logsumexp_rows(logits).mean()
            loss = lse - true_logit
            tape.backward(loss)
            for k, v in self._param_vars.items():
                self.params[k] -= self.spec.learning_rate * v.grad
        return self


def train_classifier(points: np.ndarray, labels: np.ndarray, spec: ClassifierSpec,
                     seed: int = 0) -> MLPClassifier:
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = int(labels.max()) + 1
    if np.unique(labels).size < 2:
        raise UtilityError("need at least 2 classes")
    clf = MLPClassifier(points.shape[1], n_classes, spec, seed=seed)
    return clf.fit(points, labels, seed=seed)


def utility_experiment(generator, labels_for, n_synth: int, n_real: int, seeds,
                       real_train, real_val, shifted_val=None,
                       spec: ClassifierSpec | None = None):
    """One UtilityRun row per seed.

    generator(labels, seed) -> synthetic points; labels_for(n, seed) ->
    class labels for the synthetic batch; real_train/real_val/shifted_val
    are LabeledSets. n_real > 0 mixes that many real training points in.
    """
    spec = spec or ClassifierSpec()
    rows = []
    for seed in seeds:
        parts_x, parts_y = [], []
        if n_synth > 0:
            labels = labels_for(n_synth, seed)
            parts_x.append(generator(labels, seed))
            parts_y.append(labels)
        if n_real > 0:
            gen = rng.stream(seed, "utility-real")
            idx = gen.permutation(len(real_train))[:n_real]
            parts_x.append(real_train.points[idx])
            parts_y.append(real_train.class_labels[idx])
        if not parts_x:
            raise UtilityError("need n_synth > 0 or n_real > 0")
        x = np.concatenate(parts_x)
        y = np.concatenate(parts_y)
        clf = train_classifier(x, y, spec, seed=seed)
        row = {
            "seed": int(seed),
            "mix": "mixed" if (n_synth > 0 and n_real > 0) else
                   ("synthetic-only" if n_synth > 0 else "real-only"),
            "acc_id": clf.score(real_val.points, real_val.class_labels),
            "acc_ood": (clf.score(shifted_val.points, shifted_val.class_labels)
                        if shifted_val is not None else float("nan")),
        }
        rows.append(row)
    return rows
