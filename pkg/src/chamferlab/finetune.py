"""Training-based baselines: vanilla fine-tuning on exemplars, and
reward fine-tuning where the reward is the negative Chamfer distance to
the exemplar features.

The reward fine-tuner samples to a late stopping timestep without
gradients, then backpropagates the Chamfer loss through the final
denoiser call only (the usual stability trick for reward feedback
learning). Plain SGD keeps runs bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import Tape
from .chamfer import FeatureSet, chamfer, chamfer_grad
from .datasets import ExemplarSet
from .denoiser import ConditionalDenoiser, TrainConfig, train
from .featspace import Projector
from .sampler import ddpm_step
from .schedule import NoiseSchedule


class FinetuneError(Exception):
    pass


@dataclass
class ReflConfig:
    lam: float = 1e-3
    t1: int = 30          # earliest number of denoising steps before reward eval
    t2: int = 39          # latest; both counted from t=T downward
    steps: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def validate(self, T: int) -> None:
        if not 1 <= self.t1 <= self.t2 <= T:
            raise FinetuneError(f"need 1 <= t1 <= t2 <= {T}, got ({self.t1}, {self.t2})")
        if self.t2 > T - 1:
            raise FinetuneError("t2 must leave at least one timestep for the reward call")


def vanilla_finetune(model: ConditionalDenoiser, exemplars: ExemplarSet,
                     sched: NoiseSchedule, cfg: TrainConfig):
    """Continue the denoising-loss optimization on the exemplar set only."""
    if exemplars.points.shape[0] == 0:
        raise FinetuneError("empty exemplar set")
    if cfg.steps == 0:
        return model, np.zeros(0)
    return train(model, exemplars.points, exemplars.class_labels, sched, cfg)


def refl_chamfer_finetune(model: ConditionalDenoiser, exemplars: ExemplarSet,
                          projector: Projector, sched: NoiseSchedule, cfg: ReflConfig):
    """Reward fine-tuning with r = -(Chamfer distance to exemplar features).

    Each iteration rolls the sampler forward a random number of steps in
    [t1, t2], evaluates the x0 estimate from one gradient-carrying
    denoiser call, and descends lam * chamfer(exemplars, projected x0).
    """
    cfg.validate(sched.T)
    ex_feats = projector.project(exemplars.points, source="real")
    pid = projector.projector_id
    classes = np.unique(exemplars.class_labels)
    gen = rng.stream(cfg.seed, "refl")
    losses = np.zeros(cfg.steps)
    for step in range(cfg.steps):
        labels = classes[np.arange(cfg.batch_size) % classes.size]
        x_t = rng.gauss(gen, (cfg.batch_size, model.dim))
        n_steps = int(gen.integers(cfg.t1, cfg.t2 + 1))
        for i in range(n_steps):
            t = sched.T - i
            eps = model.predict_eps(x_t, t, labels)
            x_t = ddpm_step(x_t, eps, t, sched, gen)
        t_stop = sched.T - n_steps
        _, ab, _ = sched.at(t_stop)
        tape = Tape()
        eps_var = model.forward_var(tape, tape.constant(x_t), t_stop, labels)
        x0_var = (tape.constant(x_t) - np.sqrt(1 - ab) * eps_var) * (1.0 / np.sqrt(ab))
        feat_var = projector.forward_var(tape, x0_var)
        gen_feats = FeatureSet(feat_var.value, pid)
        losses[step] = cfg.lam * chamfer(ex_feats, gen_feats).total
        g_feat = cfg.lam * chamfer_grad(ex_feats, gen_feats)
        tape.backward_from(feat_var, g_feat)
        grads = model.param_grads()
        for k in model.params:
            model.params[k] -= cfg.learning_rate * grads[k]
    return model, losses
