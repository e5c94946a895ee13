"""Symbolic FLOP accounting for sampling configurations.

All costs are inputs, never measured, so published totals are exactly
checkable arithmetic. Units are FLOPs; the shipped presets use the
published per-module constants for the two reference latent diffusion
models.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

TERA = 1e12
GIGA = 1e9


@dataclass
class CostSpec:
    denoiser_flops: float          # per forward pass
    decode_flops: float            # per generated batch (final decode)
    projector_flops: float         # per image, feature extraction
    steps: int = 40
    cfg_enabled: bool = False      # doubles denoiser cost per step in the guided run
    g_freq: int = 5
    k_exemplars: int = 32
    exemplar_encode_flops: float = None  # defaults to projector_flops

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        for name in ("denoiser_flops", "decode_flops", "projector_flops"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.exemplar_encode_flops is None:
            self.exemplar_encode_flops = self.projector_flops

    @property
    def guidance_steps(self) -> int:
        return self.steps // self.g_freq

    @classmethod
    def from_file(cls, path) -> "CostSpec":
        if sys.version_info >= (3, 11):
            import tomllib as toml
        else:
            import tomli as toml
        with open(path, "rb") as f:
            raw = toml.load(f)
        raw.pop("name", None)
        return cls(**raw)


@dataclass
class CostReport:
    baseline_total: float  # plain conditional sampling, no CFG, no guidance
    cfg_total: float       # CFG sampling (two denoiser passes per step)
    guided_total: float    # Chamfer-guided sampling, CFG per the cfg_enabled flag
    efficiency_gain: float # 1 - guided/cfg

    def to_dict(self) -> dict:
        return {
            "baseline_total_flops": self.baseline_total,
            "cfg_total_flops": self.cfg_total,
            "guided_total_flops": self.guided_total,
            "efficiency_gain": self.efficiency_gain,
        }


def total_flops(spec: CostSpec) -> CostReport:
    base = spec.steps * spec.denoiser_flops + spec.decode_flops
    cfg_total = spec.steps * 2 * spec.denoiser_flops + spec.decode_flops
    denoise = spec.steps * spec.denoiser_flops * (2 if spec.cfg_enabled else 1)
    guided = (denoise + spec.decode_flops
              + spec.k_exemplars * spec.exemplar_encode_flops
              + spec.guidance_steps * (spec.decode_flops + spec.projector_flops))
    return CostReport(base, cfg_total, guided, 1.0 - guided / cfg_total)


def write_report(path, spec: CostSpec, report: CostReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


LDM15 = CostSpec(denoiser_flops=800 * GIGA, decode_flops=2 * TERA,
                 projector_flops=160 * GIGA)
LDM35 = CostSpec(denoiser_flops=6 * TERA, decode_flops=10 * TERA,
                 projector_flops=160 * GIGA)

PRESETS = {"ldm15": LDM15, "ldm35": LDM35}


def preset_toml(name: str) -> str:
    spec = PRESETS[name]
    return (
        f'name = "{name}"\n'
        f"denoiser_flops = {spec.denoiser_flops:.1f}\n"
        f"decode_flops = {spec.decode_flops:.1f}\n"
        f"projector_flops = {spec.projector_flops:.1f}\n"
        f"steps = {spec.steps}\n"
        f"cfg_enabled = false\n"
        f"g_freq = {spec.g_freq}\n"
        f"k_exemplars = {spec.k_exemplars}\n"
    )
