"""
Condition encoder and the reference noise-prediction network.

The denoiser never downsamples: every layer is a 1x1 or 3x3 "same" convolution
over the (qubit, slot) grid, so one set of weights runs on any N and T.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

TASK_IDS = {"ghz": 0, "ml": 1, None: 2}
NULL_TASK = 2
ROUNDING = {"ghz": 4, "ml": 1}


@dataclass(frozen=True)
class Condition:
    task: str | None = None
    target: float | None = None

    def __post_init__(self):
        if self.task is None:
            object.__setattr__(self, "target", None)
            return
        if self.task not in ROUNDING:
            raise ValueError(f"unknown task {self.task!r}")
        if self.target is None:
            raise ValueError("a task condition needs a target value")
        digits = ROUNDING[self.task]
        object.__setattr__(self, "target", float(f"{float(self.target):.{digits}f}"))

    @classmethod
    def null(cls) -> "Condition":
        return cls(None, None)

    @property
    def is_null(self) -> bool:
        return self.task is None

    def render(self) -> str:
        if self.task == "ghz":
            return "Generate GHZ fidelity: %.4f" % self.target
        if self.task == "ml":
            return "Generate Accuracy: %.1f" % self.target
        return ""


@dataclass(frozen=True)
class DenoiserConfig:
    d_c: int = 16
    d_p: int = 1
    width: int = 64
    blocks: int = 6
    cond_tokens: int = 8
    cond_dim: int = 64
    heads: int = 4
    value_features: int = 8
    groups: int = 8

    @property
    def channels(self) -> int:
        return self.d_c + self.d_p

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def sinusoidal(x: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=x.dtype) / half)
    args = x[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ConditionEncoder(nn.Module):
    """(task, rounded target) -> L x D token matrix for cross-attention."""

    def __init__(self, tokens: int = 8, dim: int = 64, features: int = 8):
        super().__init__()
        self.tokens, self.dim, self.features = tokens, dim, features
        self.task = nn.Embedding(2, dim)
        self.value = nn.Linear(2 * features, (tokens - 1) * dim)
        self.null = nn.Parameter(torch.randn(tokens, dim) * 0.02)

    def value_features(self, target: torch.Tensor) -> torch.Tensor:
        freqs = math.pi * 2.0 ** torch.arange(self.features, dtype=target.dtype)
        args = target[:, None] * freqs[None]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)

    def forward(self, task: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        b = task.shape[0]
        is_null = task == NULL_TASK
        head = self.task(task.clamp(max=1))[:, None]
        tail = self.value(self.value_features(target)).view(b, self.tokens - 1, self.dim)
        tokens = torch.cat([head, tail], dim=1)
        return torch.where(is_null[:, None, None], self.null.expand(b, -1, -1), tokens)


def condition_tensors(conds: list[Condition]) -> tuple[torch.Tensor, torch.Tensor]:
    task = torch.tensor([TASK_IDS[c.task] for c in conds], dtype=torch.long)
    target = torch.tensor([0.0 if c.is_null else c.target for c in conds], dtype=torch.float64)
    return task, target


class ResBlock(nn.Module):
    def __init__(self, width: int, cond_dim: int, heads: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.time = nn.Linear(width, width)
        self.norm_attn = nn.GroupNorm(groups, width)
        self.attn = nn.MultiheadAttention(width, heads, kdim=cond_dim, vdim=cond_dim, batch_first=True)
        self.norm2 = nn.GroupNorm(groups, width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, h, temb, cond):
        x = self.conv1(F.silu(self.norm1(h)))
        x = x + self.time(temb)[:, :, None, None]
        b, c, n, t = x.shape
        q = self.norm_attn(x).flatten(2).transpose(1, 2)
        a, _ = self.attn(q, cond, cond, need_weights=False)
        x = x + a.transpose(1, 2).reshape(b, c, n, t)
        x = self.conv2(F.silu(self.norm2(x)))
        return h + x


class Denoiser(nn.Module):
    """Predicts the injected noise of x_t given t and condition tokens."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.cond = ConditionEncoder(config.cond_tokens, config.cond_dim, config.value_features)
        self.time_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
        self.inp = nn.Conv2d(config.channels, w, 1)
        self.blocks = nn.ModuleList(
            ResBlock(w, config.cond_dim, config.heads, config.groups) for _ in range(config.blocks))
        self.out_norm = nn.GroupNorm(config.groups, w)
        self.out = nn.Conv2d(w, config.channels, 1)
        # starts as the zero predictor
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def encode_condition(self, task: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        return self.cond(task, target.to(self.out.weight.dtype))

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond_tokens: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.channels:
            raise ValueError(f"expected (B, {self.config.channels}, N, T) input, got {tuple(x.shape)}")
        if cond_tokens.shape[0] != x.shape[0]:
            raise ValueError("condition batch does not match input batch")
        temb = self.time_mlp(sinusoidal(t.to(x.dtype), self.config.width))
        h = self.inp(x)
        for block in self.blocks:
            h = block(h, temb, cond_tokens)
        return self.out(F.silu(self.out_norm(h)))


def build_denoiser(config: DenoiserConfig, seed: int = 0) -> Denoiser:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Denoiser(config)
