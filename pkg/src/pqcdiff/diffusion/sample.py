from __future__ import annotations

import numpy as np
import torch

from .checkpoint import Checkpoint
from .model import Condition, Denoiser, condition_tensors
from .schedule import NoiseSchedule


def guided_epsilon(eps_null: torch.Tensor, eps_cond: torch.Tensor, w: float) -> torch.Tensor:
    """Classifier-free guidance mix; w=0 is unconditional, w=1 purely conditional."""
    if w == 0:
        return eps_null
    if w == 1:
        return eps_cond
    return eps_null + w * (eps_cond - eps_null)


def sample_streams(seed: int, count: int) -> list[torch.Generator]:
    """One generator per sample, seeded from (seed, index) so results don't depend on batching."""
    return [torch.Generator().manual_seed(int(np.random.SeedSequence([seed, i]).generate_state(1, np.uint64)[0] >> 1))
            for i in range(count)]


def _normal(gens: list[torch.Generator], shape) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g) for g in gens])


@torch.inference_mode()
def sample_tensors(model: Denoiser, schedule: NoiseSchedule, cond: Condition, guidance: float,
                   count: int, num_qubits: int, slots: int, seed: int = 0,
                   batch_size: int = 256, gate_scale: float = 1.0) -> np.ndarray:
    """Ancestral DDPM sampling under classifier-free guidance.

    Returns ``count`` tensors in codec units: gate channels are divided by
    ``gate_scale`` so they can be decoded directly.
    """
    if guidance < 0:
        raise ValueError("guidance must be >= 0")
    if num_qubits < 1 or slots < 1:
        raise ValueError("need num_qubits >= 1 and slots >= 1")
    model.eval()
    shape = (model.config.channels, num_qubits, slots)
    gens = sample_streams(seed, count)
    out = []
    for start in range(0, count, batch_size):
        out.append(_sample_batch(model, schedule, cond, guidance, gens[start:start + batch_size], shape))
    if not out:
        return np.zeros((0,) + shape, dtype=np.float32)
    x = np.concatenate(out)
    x[:, : shape[0] - 1] /= gate_scale
    return x


def _sample_batch(model, schedule, cond, w, gens, shape) -> np.ndarray:
    b = len(gens)
    dtype = model.out.weight.dtype
    task, target = condition_tensors([cond] * b + [Condition.null()] * b)
    tokens = model.encode_condition(task, target)
    cond_tok, null_tok = tokens[:b], tokens[b:]
    betas = torch.tensor(schedule.betas, dtype=dtype)
    alphas = torch.tensor(schedule.alphas, dtype=dtype)
    abars = torch.tensor(schedule.alpha_bars, dtype=dtype)
    x = _normal(gens, shape).to(dtype)
    for t in range(schedule.steps - 1, -1, -1):
        tt = torch.full((b,), t, dtype=torch.long)
        if w == 0:
            eps = model(x, tt, null_tok)
        elif w == 1:
            eps = model(x, tt, cond_tok)
        else:
            both = model(torch.cat([x, x]), torch.cat([tt, tt]), tokens)
            eps = guided_epsilon(both[b:], both[:b], w)
        x = (x - betas[t] / torch.sqrt(1 - abars[t]) * eps) / torch.sqrt(alphas[t])
        if t > 0:
            x = x + torch.sqrt(betas[t]) * _normal(gens, shape).to(dtype)
    return x.numpy().astype(np.float32)


def sample(checkpoint: Checkpoint, cond: Condition, guidance: float, count: int,
           num_qubits: int, slots: int, seed: int = 0) -> np.ndarray:
    return sample_tensors(checkpoint.model(), checkpoint.schedule, cond, guidance, count,
                          num_qubits, slots, seed, gate_scale=checkpoint.gate_scale)
