from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..codec import EmbeddingTable, encode
from ..dataset import LabeledCircuit
from .checkpoint import Checkpoint
from .model import Condition, Denoiser, DenoiserConfig, NULL_TASK, build_denoiser, condition_tensors
from .schedule import NoiseSchedule, forward_noise

log = logging.getLogger(__name__)


@dataclass
class TrainHyper:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-3
    warmup_fraction: float = 0.3
    p_uncond: float = 0.10
    seed: int = 0
    divergence_factor: float = 10.0
    smoothing_window: int = 50
    gate_scale: float | None = None  # None: sqrt(d_c), i.e. unit variance per gate entry

    def to_json(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)
    smoothed: list[float] = field(default_factory=list)


def epsilon_loss(model: Denoiser, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                 task: torch.Tensor, target: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Per-sample squared error ||eps - eps_hat||^2 summed over the tensor, averaged over the batch."""
    xt = forward_noise(x0, t, eps, schedule)
    eps_hat = model(xt, t, model.encode_condition(task, target))
    return ((eps - eps_hat) ** 2).flatten(1).sum(1).mean()


def encode_corpus(corpus: Sequence[LabeledCircuit], table: EmbeddingTable, slots: int,
                  gate_scale: float = 1.0) -> np.ndarray:
    data = np.stack([encode(rec.circuit, table, slots) for rec in corpus])
    data[:, : table.d_c] *= gate_scale
    return data.astype(np.float32)


def smoothed_series(losses: Sequence[float], window: int) -> list[float]:
    out, acc = [], 0.0
    for i, v in enumerate(losses):
        acc += v
        if i >= window:
            acc -= losses[i - window]
        out.append(acc / min(i + 1, window))
    return out


def train(corpus: Sequence[LabeledCircuit], table: EmbeddingTable, schedule: NoiseSchedule,
          config: DenoiserConfig, hyper: TrainHyper | None = None, slots: int | None = None,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    hyper = hyper or TrainHyper()
    if not corpus:
        raise ValueError("empty corpus")
    n = corpus[0].circuit.num_qubits
    if any(rec.circuit.num_qubits != n for rec in corpus):
        raise ValueError("all corpus circuits must share one qubit count")
    slots = slots or max(rec.circuit.depth for rec in corpus)
    if config.d_c != table.d_c:
        raise ValueError(f"config d_c={config.d_c} does not match table d_c={table.d_c}")

    gate_scale = float(np.sqrt(table.d_c)) if hyper.gate_scale is None else float(hyper.gate_scale)
    data = torch.from_numpy(encode_corpus(corpus, table, slots, gate_scale))
    conds = [Condition(rec.task, rec.value) for rec in corpus]
    all_task, all_target = condition_tensors(conds)
    all_target = all_target.float()

    gen = torch.Generator().manual_seed(hyper.seed)
    model = build_denoiser(config, seed=hyper.seed)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=hyper.lr, total_steps=hyper.steps, pct_start=hyper.warmup_fraction,
        anneal_strategy="cos", cycle_momentum=False)

    losses: list[float] = []
    reference = None
    for step in range(hyper.steps):
        idx = torch.randint(len(data), (hyper.batch_size,), generator=gen)
        x0 = data[idx]
        t = torch.randint(schedule.steps, (hyper.batch_size,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        drop = torch.rand(hyper.batch_size, generator=gen) < hyper.p_uncond
        task = torch.where(drop, torch.full_like(all_task[idx], NULL_TASK), all_task[idx])
        loss = epsilon_loss(model, x0, t, eps, task, all_target[idx], schedule)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        value = loss.item()
        losses.append(value)
        if len(losses) == min(10, hyper.steps):
            reference = float(np.mean(losses))
        if reference is not None and (not np.isfinite(value) or value > hyper.divergence_factor * reference):
            raise TrainingDiverged(f"loss {value:.4g} at step {step} exceeds "
                                   f"{hyper.divergence_factor}x initial average {reference:.4g}")
        if callback is not None:
            callback({"step": step, "loss": value, "lr": sched.get_last_lr()[0]})

    smoothed = smoothed_series(losses, hyper.smoothing_window)
    meta = {"steps": hyper.steps, "final_loss": losses[-1], "final_smoothed_loss": smoothed[-1],
            "initial_smoothed_loss": smoothed[min(hyper.smoothing_window, len(smoothed)) - 1],
            "num_qubits": n, "slots": slots, "corpus_size": len(corpus), "hyper": hyper.to_json()}
    state = {k: v.detach().clone().float() for k, v in model.state_dict().items()}
    ckpt = Checkpoint(table.gateset_id, table.d_c, table.seed, schedule, config, state, meta, gate_scale)
    log.info("trained %d steps, smoothed loss %.3f -> %.3f", hyper.steps, meta["initial_smoothed_loss"], smoothed[-1])
    return TrainResult(ckpt, losses, smoothed)
