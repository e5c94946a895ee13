"""Chamfer set distance, its batch gradient, and inference-time guidance.

The guidance step nudges the predicted noise so that the DDIM estimate of
the final batch descends the Chamfer distance to a set of real exemplar
features. Gradients flow through the projector and the affine x0 estimate;
in "full" mode they additionally flow through the denoiser network.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .featspace import FeatureSet, Projector, check_same_space
from .schedule import NoiseSchedule, ddim_x0


class GuidanceError(Exception):
    pass


@dataclass
class ChamferBreakdown:
    total: float
    term_real_to_gen: float   # diversity term: each real point to its closest generated
    term_gen_to_real: float   # fidelity term: each generated point to its closest real
    match_real_to_gen: np.ndarray  # argmin index into Y per row of X
    match_gen_to_real: np.ndarray  # argmin index into X per row of Y


def _pairwise_sq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=2)


def chamfer(x_set: FeatureSet, y_set: FeatureSet) -> ChamferBreakdown:
    """Symmetric-in-form set distance between real X and generated Y."""
    check_same_space(x_set, y_set)
    x, y = x_set.features, y_set.features
    if len(x) == 0 or len(y) == 0:
        raise GuidanceError("chamfer requires nonempty sets")
    d2 = _pairwise_sq(x, y)
    m_xy = np.argmin(d2, axis=1)  # ties: argmin takes the lowest index
    m_yx = np.argmin(d2, axis=0)
    term1 = float(d2[np.arange(len(x)), m_xy].mean())
    term2 = float(d2[m_yx, np.arange(len(y))].mean())
    return ChamferBreakdown(term1 + term2, term1, term2, m_xy, m_yx)


def chamfer_grad(x_set: FeatureSet, y_set: FeatureSet) -> np.ndarray:
    """d(chamfer total)/dY treating the argmin matchings as locally constant."""
    bd = chamfer(x_set, y_set)
    x, y = x_set.features, y_set.features
    grad = np.zeros_like(y)
    # diversity term: each real point pulls its matched generated point
    np.add.at(grad, bd.match_real_to_gen,
              (2.0 / len(x)) * (y[bd.match_real_to_gen] - x))
    # fidelity term: each generated point moves toward its nearest real point
    grad += (2.0 / len(y)) * (y - x[bd.match_gen_to_real])
    return grad


def chamfer_raw(x: np.ndarray, y: np.ndarray, projector_id: str = "raw") -> ChamferBreakdown:
    return chamfer(FeatureSet(x, projector_id), FeatureSet(y, projector_id))


@dataclass
class GuidanceConfig:
    exemplars: FeatureSet
    projector: Projector
    gamma: float = 0.5
    g_freq: int = 5
    omega: float = 1.0
    grad_mode: str = "stopgrad"     # stopgrad | full
    window: tuple[int, int] | None = None
    space: str = "eps"              # eps | x: where the adjustment is applied
    per_class: bool = False
    exemplar_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise GuidanceError("gamma must be >= 0")
        if self.g_freq < 1:
            raise GuidanceError("g_freq must be >= 1")
        if self.grad_mode not in ("stopgrad", "full"):
            raise GuidanceError(f"unknown grad_mode {self.grad_mode!r}")
        if self.space not in ("eps", "x"):
            raise GuidanceError(f"unknown guidance space {self.space!r}")
        if len(self.exemplars) == 0:
            raise GuidanceError("exemplar set is empty")
        if self.exemplars.projector_id != self.projector.projector_id:
            raise GuidanceError("exemplar features were not produced by this projector")
        if self.per_class and self.exemplar_labels is None:
            raise GuidanceError("per_class guidance needs exemplar_labels")

    def scheduled(self, t: int) -> bool:
        if t % self.g_freq != 0:
            return False
        if self.window is not None and not (self.window[0] <= t <= self.window[1]):
            return False
        return True


def _chamfer_feat_grad(cfg: GuidanceConfig, feats: np.ndarray, labels) -> np.ndarray:
    """Gradient of the (optionally per-class) Chamfer loss w.r.t. generated features."""
    pid = cfg.projector.projector_id
    if not cfg.per_class:
        return chamfer_grad(cfg.exemplars, FeatureSet(feats, pid))
    labels = np.asarray(labels)
    grad = np.zeros_like(feats)
    for c in np.unique(labels):
        rows = labels == c
        ex_rows = cfg.exemplar_labels == c
        if not ex_rows.any():
            continue
        ex = FeatureSet(cfg.exemplars.features[ex_rows], pid)
        grad[rows] = chamfer_grad(ex, FeatureSet(feats[rows], pid))
    return grad


def _grad_wrt_xt_stopgrad(cfg, x_t, eps, t, sched, labels):
    _, ab, _ = sched.at(t)
    x0_hat = ddim_x0(x_t, eps, t, sched)
    feats = cfg.projector(x0_hat)
    g_feat = _chamfer_feat_grad(cfg, feats, labels)
    g_x0 = cfg.projector.vjp(x0_hat, g_feat)
    return g_x0 / np.sqrt(ab)  # d x0_hat / d x_t with the noise prediction frozen


def _grad_wrt_xt_full(cfg, x_t, t, sched, model, labels):
    _, ab, _ = sched.at(t)
    tape = Tape()
    x = tape.var(x_t)
    eps_c = model.forward_var(tape, x, t, labels)
    if cfg.omega != 1.0:
        null = np.full(len(x_t), model.null_token, dtype=np.intp)
        eps_u = model.forward_var(tape, x, t, null)
        eps_v = eps_u + cfg.omega * (eps_c - eps_u)
    else:
        eps_v = eps_c
    x0_var = (x - np.sqrt(1 - ab) * eps_v) * (1.0 / np.sqrt(ab))
    feat_var = cfg.projector.forward_var(tape, x0_var)
    g_feat = _chamfer_feat_grad(cfg, feat_var.value, labels)
    tape.backward_from(feat_var, g_feat)
    return x.grad


def guidance_step(x_t, t, eps_guided, model, sched: NoiseSchedule, cfg: GuidanceConfig,
                  labels=None):
    """Apply the Chamfer adjustment at one scheduled step.

    Returns (adjusted eps, adjusted x_t); exactly one of the two changes,
    depending on cfg.space. gamma=0 returns the inputs untouched.
    """
    if cfg.gamma == 0.0:
        return eps_guided, x_t
    if cfg.grad_mode == "full":
        if model is None:
            raise GuidanceError("full grad mode needs the model")
        g_xt = _grad_wrt_xt_full(cfg, x_t, t, sched, model, labels)
    else:
        g_xt = _grad_wrt_xt_stopgrad(cfg, x_t, eps_guided, t, sched, labels)
    _, ab, _ = sched.at(t)
    if cfg.space == "x":
        return eps_guided, x_t - cfg.gamma * g_xt
    # score-space form: score' = score - gamma * grad, and eps = -sqrt(1-ab) * score
    return eps_guided + cfg.gamma * np.sqrt(1 - ab) * g_xt, x_t


def reward_guidance(eps, grad_reward_x0, gamma, t, sched: NoiseSchedule):
    """Generic reward guidance: ascend a reward whose gradient is given
    w.r.t. the x0 estimate, using the same eps-space mapping as
    guidance_step's stopgrad path."""
    if eps.shape != grad_reward_x0.shape:
        raise GuidanceError("shape mismatch")
    if gamma == 0.0:
        return eps
    _, ab, _ = sched.at(t)
    return eps - gamma * np.sqrt((1 - ab) / ab) * grad_reward_x0


def cads_anneal(cond_embedding, t: int, T: int, tau1: float, tau2: float, s: float,
                gen: np.random.Generator):
    """Condition annealing baseline: add scheduled Gaussian noise to the
    conditioning embedding. Noise weight is 1 below tau1*T, 0 above
    tau2*T, linear in between; s scales the noise."""
    if tau1 >= tau2:
        raise GuidanceError("need tau1 < tau2")
    if not 1 <= t <= T:
        raise GuidanceError(f"t={t} outside [1, {T}]")
    frac = t / T
    if frac <= tau1:
        w = 1.0
    elif frac >= tau2:
        w = 0.0
    else:
        w = (tau2 - frac) / (tau2 - tau1)
    if s == 0.0 or w == 0.0:
        return cond_embedding
    noise = gen.standard_normal(size=cond_embedding.shape)
    return cond_embedding + s * w * noise


def load_guidance_config(path, exemplars=None, projector=None) -> GuidanceConfig:
    """Read a guidance config from TOML; exemplar/projector paths in the
    file are resolved relative to it unless the objects are passed in."""
    if sys.version_info >= (3, 11):
        import tomllib as toml
    else:
        import tomli as toml
    from pathlib import Path

    path = Path(path)
    with open(path, "rb") as f:
        raw = toml.load(f)
    if projector is None:
        projector = Projector.load(path.parent / raw["projector"])
    if exemplars is None:
        exemplars = FeatureSet.load(path.parent / raw["exemplars"])
    window = tuple(raw["window"]) if "window" in raw else None
    return GuidanceConfig(
        exemplars=exemplars,
        projector=projector,
        gamma=float(raw.get("gamma", 0.5)),
        g_freq=int(raw.get("g_freq", 5)),
        omega=float(raw.get("omega", 1.0)),
        grad_mode=raw.get("grad_mode", "stopgrad"),
        window=window,
        space=raw.get("space", "eps"),
    )
