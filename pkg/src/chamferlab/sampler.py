"""DDPM reverse-process sampling with CFG, Chamfer guidance, and CADS.

Sampling is a pure function of (weights, seed, config): repeated runs are
byte-identical. With omega == 1 the unconditional branch is never
evaluated, so plain conditional sampling costs T model calls, not 2T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .chamfer import GuidanceConfig, cads_anneal, guidance_step
from .denoiser import ConditionalDenoiser
from .schedule import NoiseSchedule, RangeError


@dataclass
class CadsParams:
    tau1: float = 0.2
    tau2: float = 0.8
    s: float = 0.1


def cfg_combine(eps_c: np.ndarray, eps_u: np.ndarray, omega: float) -> np.ndarray:
    """Classifier-free guidance blend; omega=1 is conditional-only."""
    if eps_c.shape != eps_u.shape:
        raise RangeError("shape mismatch")
    return eps_u + omega * (eps_c - eps_u)


def ddpm_step(x_t: np.ndarray, eps_guided: np.ndarray, t: int, sched: NoiseSchedule,
              gen: np.random.Generator) -> np.ndarray:
    alpha, ab, sigma = sched.at(t)
    mean = (x_t - (1 - alpha) / np.sqrt(1 - ab) * eps_guided) / np.sqrt(alpha)
    if sigma == 0.0:
        return mean
    return mean + sigma * rng.gauss(gen, x_t.shape)


def sample(model: ConditionalDenoiser, sched: NoiseSchedule, labels,
           guidance: GuidanceConfig | None = None, seed: int = 0,
           omega: float | None = None, cads: CadsParams | None = None,
           stream_id: int = 0) -> np.ndarray:
    """Run the full reverse process for one batch of class labels.

    omega defaults to guidance.omega if a guidance config is given, else 1.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if labels.max() >= model.n_classes:
        raise RangeError("label out of range")
    if omega is None:
        omega = guidance.omega if guidance is not None else 1.0
    n = labels.shape[0]
    gen = rng.stream(seed, "sample", stream_id)
    x_t = rng.gauss(gen, (n, model.dim))
    null = np.full(n, model.null_token, dtype=np.intp)
    for t in range(sched.T, 0, -1):
        cond_emb = None
        if cads is not None:
            cond_emb = cads_anneal(model.params["cemb"][labels], t, sched.T,
                                   cads.tau1, cads.tau2, cads.s, gen)
        eps_c = model.predict_eps(x_t, t, labels, cond_emb=cond_emb)
        if omega != 1.0:
            eps = cfg_combine(eps_c, model.predict_eps(x_t, t, null), omega)
        else:
            eps = eps_c
        if guidance is not None and guidance.gamma != 0.0 and guidance.scheduled(t):
            try:
                eps, x_t = guidance_step(x_t, t, eps, model, sched, guidance, labels=labels)
            except Exception as e:
                raise RuntimeError(f"guidance failed at step t={t}") from e
        x_t = ddpm_step(x_t, eps, t, sched, gen)
    return x_t
