"""Conditional MLP noise predictor and its denoising-loss trainer.

The network predicts the injected noise from (x_t, t, class). Class C is
reserved as the null token for unconditional prediction, which makes the
model classifier-free-guidance capable when trained with condition dropping.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matio, rng
from .autodiff import Tape, Var, concat_cols, silu, take_rows
from .schedule import NoiseSchedule

TIME_EMB_WIDTH = 32
CLASS_EMB_WIDTH = 16
HIDDEN = 128
N_HIDDEN_LAYERS = 3


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    steps: int = 6000
    batch_size: int = 128
    learning_rate: float = 1e-3
    p_uncond: float = 0.1
    seed: int = 0
    optimizer: str = "adam"  # adam | sgd

    def __post_init__(self):
        if not 0 <= self.p_uncond < 1:
            raise TrainingError("p_uncond must be in [0, 1)")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be > 0")


def time_embedding(t, width: int = TIME_EMB_WIDTH) -> np.ndarray:
    """Sinusoidal embedding of (possibly per-sample) integer timesteps."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class ConditionalDenoiser:
    """eps_theta(x_t, t, c); class index n_classes is the null token."""

    def __init__(self, dim: int, n_classes: int, hidden: int = HIDDEN, seed: int = 0):
        self.dim = dim
        self.n_classes = n_classes
        self.hidden = hidden
        self.null_token = n_classes
        self.n_calls = 0
        self.n_uncond_calls = 0
        gen = rng.stream(seed, "init")
        in_dim = dim + TIME_EMB_WIDTH + CLASS_EMB_WIDTH
        sizes = [in_dim] + [hidden] * N_HIDDEN_LAYERS + [dim]
        self.params: dict[str, np.ndarray] = {}
        self.params["cemb"] = 0.1 * rng.gauss(gen, (n_classes + 1, CLASS_EMB_WIDTH))
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            self.params[f"W{i}"] = rng.gauss(gen, (fan_in, sizes[i + 1])) * np.sqrt(2.0 / fan_in)
            self.params[f"b{i}"] = np.zeros(sizes[i + 1])

    def get_params(self) -> dict:
        return {"dim": self.dim, "n_classes": self.n_classes, "hidden": self.hidden}

    def forward_var(self, tape: Tape, x: Var, t, labels, cond_emb=None) -> Var:
        """Taped forward pass; x is (B, dim), t scalar or (B,), labels (B,).

        cond_emb, when given, replaces the class-embedding lookup (used by
        the condition-annealing baseline).
        """
        labels = np.asarray(labels, dtype=np.intp)
        b = x.value.shape[0]
        self.n_calls += 1
        if np.all(labels == self.null_token):
            self.n_uncond_calls += 1
        temb = np.atleast_2d(time_embedding(t))
        if temb.shape[0] == 1 and b > 1:
            temb = np.repeat(temb, b, axis=0)
        p = {k: tape.var(v) for k, v in self.params.items()}
        self._param_vars = p
        if cond_emb is None:
            cemb = take_rows(p["cemb"], labels)
        else:
            cemb = tape.constant(cond_emb)
        h = concat_cols([x, tape.constant(temb), cemb])
        for i in range(N_HIDDEN_LAYERS):
            h = silu(h @ p[f"W{i}"] + p[f"b{i}"])
        return h @ p[f"W{N_HIDDEN_LAYERS}"] + p[f"b{N_HIDDEN_LAYERS}"]

    def predict_eps(self, x: np.ndarray, t, labels, cond_emb=None) -> np.ndarray:
        tape = Tape()
        return self.forward_var(tape, tape.constant(x), t, labels, cond_emb=cond_emb).value

    def param_grads(self) -> dict[str, np.ndarray]:
        """Gradients accumulated by the last backward on the last forward tape."""
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for k, v in self._param_vars.items()}

    def copy(self) -> "ConditionalDenoiser":
        out = ConditionalDenoiser(self.dim, self.n_classes, self.hidden)
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for k, v in self.params.items():
            matio.save_matrix(outdir / f"{k}.chlm", v)
        matio.save_manifest(outdir / "manifest.json", {
            "kind": "conditional-denoiser",
            "dim": self.dim,
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "time_emb_width": TIME_EMB_WIDTH,
            "class_emb_width": CLASS_EMB_WIDTH,
            "params": sorted(self.params),
        })

    @classmethod
    def load(cls, outdir) -> "ConditionalDenoiser":
        outdir = Path(outdir)
        man = matio.load_manifest(outdir / "manifest.json")
        model = cls(man["dim"], man["n_classes"], man["hidden"])
        for k in man["params"]:
            v = matio.load_matrix(outdir / f"{k}.chlm")
            model.params[k] = v.reshape(model.params[k].shape)
        return model


class AdamState:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1 ** self.t)
            vhat = self.v[k] / (1 - self.beta2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _loss_on_batch(model, tape, x_t, t, labels, eps):
    pred = model.forward_var(tape, tape.constant(x_t), t, labels)
    diff = pred - tape.constant(eps)
    return (diff * diff).sum() * (1.0 / x_t.shape[0])


def train(model: ConditionalDenoiser, data_points: np.ndarray, data_labels: np.ndarray,
          sched: NoiseSchedule, cfg: TrainConfig):
    """Stochastic optimization of the noise-prediction objective.

    Each sample's class token is swapped for the null token with
    probability p_uncond, which trains the unconditional branch needed
    for classifier-free guidance.
    """
    n = data_points.shape[0]
    if n == 0:
        raise TrainingError("empty training set")
    if data_labels.max() >= model.n_classes:
        raise TrainingError("label out of range")
    gen = rng.stream(cfg.seed, "train")
    opt = AdamState(model.params, cfg.learning_rate) if cfg.optimizer == "adam" else None
    losses = np.zeros(cfg.steps)
    for step in range(cfg.steps):
        idx = gen.integers(0, n, size=cfg.batch_size)
        x0 = data_points[idx]
        labels = data_labels[idx].copy()
        drop = gen.random(cfg.batch_size) < cfg.p_uncond
        labels[drop] = model.null_token
        t = gen.integers(1, sched.T + 1, size=cfg.batch_size)
        eps = rng.gauss(gen, x0.shape)
        ab = sched.alpha_bars[t - 1][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
        tape = Tape()
        loss = _loss_on_batch(model, tape, x_t, t, labels, eps)
        if not np.isfinite(loss.value):
            raise TrainingError(f"loss diverged at step {step}")
        tape.backward(loss)
        grads = model.param_grads()
        if opt is not None:
            opt.update(model.params, grads)
        else:
            for k in model.params:
                model.params[k] -= cfg.learning_rate * grads[k]
        losses[step] = float(loss.value)
    return model, losses


def heldout_loss(model: ConditionalDenoiser, points: np.ndarray, labels: np.ndarray,
                 sched: NoiseSchedule, seed: int, n: int = 512) -> float:
    """Monte-Carlo denoising loss on fixed held-out noise draws."""
    gen = rng.stream(seed, "heldout")
    idx = gen.integers(0, points.shape[0], size=n)
    t = gen.integers(1, sched.T + 1, size=n)
    eps = rng.gauss(gen, (n, points.shape[1]))
    ab = sched.alpha_bars[t - 1][:, None]
    x_t = np.sqrt(ab) * points[idx] + np.sqrt(1 - ab) * eps
    pred = model.predict_eps(x_t, t, labels[idx])
    return float(((pred - eps) ** 2).sum(axis=1).mean())
