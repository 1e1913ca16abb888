from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule over ``steps`` diffusion steps, indexed t = 0 .. steps-1."""

    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    shape: str = "linear"
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alphas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("need at least 2 diffusion steps")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError(f"invalid beta range [{self.beta_start}, {self.beta_end}]")
        if self.shape != "linear":
            raise ValueError(f"unsupported schedule shape {self.shape!r}")
        betas = np.linspace(self.beta_start, self.beta_end, self.steps, dtype=np.float64)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def to_json(self) -> dict:
        return {"steps": self.steps, "beta_start": self.beta_start, "beta_end": self.beta_end, "shape": self.shape}

    @classmethod
    def from_json(cls, d: dict) -> "NoiseSchedule":
        return cls(int(d["steps"]), float(d["beta_start"]), float(d["beta_end"]), d.get("shape", "linear"))


def make_schedule(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                  shape: str = "linear") -> NoiseSchedule:
    return NoiseSchedule(steps, beta_start, beta_end, shape)


def _gather(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    v = torch.tensor(values, dtype=like.dtype)[torch.as_tensor(t, dtype=torch.long)]
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def forward_noise(x0, t, eps, schedule: NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    Works on numpy arrays with scalar ``t`` and on torch tensors with a per-sample
    ``t`` vector (leading batch axis).
    """
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    if isinstance(x0, torch.Tensor):
        ab = _gather(schedule.alpha_bars, t, x0)
        return ab.sqrt() * x0 + (1 - ab).sqrt() * eps
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
