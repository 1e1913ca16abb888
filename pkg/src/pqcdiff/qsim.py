"""
Dense statevector simulation and the two task evaluators (GHZ fidelity, linear
classification accuracy).

Qubit 0 is the most significant bit of a basis-state index, i.e. axis 0 of the
state reshaped to ``[2] * N``. States may carry leading batch axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, Placement

SQRT1_2 = 1.0 / math.sqrt(2.0)

_FIXED = {
    "id": np.eye(2, dtype=complex),
    "h": np.array([[1, 1], [1, -1]], dtype=complex) * SQRT1_2,
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "sx": 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex),
    "cx": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    "cz": np.diag([1, 1, 1, -1]).astype(complex),
    "swap": np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex),
}


def _rx(t):
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def _ry(t):
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(t):
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


def _controlled(u):
    m = np.eye(4, dtype=complex)
    m[2:, 2:] = u
    return m


def _rzz(t):
    a, b = np.exp(-0.5j * t), np.exp(0.5j * t)
    return np.diag([a, b, b, a])


_PARAM = {
    "rx": _rx,
    "ry": _ry,
    "rz": _rz,
    "rzz": _rzz,
    "crx": lambda t: _controlled(_rx(t)),
    "cry": lambda t: _controlled(_ry(t)),
}


def gate_matrix(gate: str, param: float | None = None) -> np.ndarray:
    """Unitary on the placement's qubits in operand order (first operand = high bit)."""
    if gate in _FIXED:
        return _FIXED[gate]
    if gate in _PARAM:
        if param is None:
            raise ValueError(f"{gate} requires an angle")
        return _PARAM[gate](param)
    raise ValueError(f"no matrix for gate {gate!r}")


def zero_state(n: int, batch: tuple[int, ...] = ()) -> np.ndarray:
    psi = np.zeros(batch + (2**n,), dtype=complex)
    psi[..., 0] = 1.0
    return psi


def apply(state: np.ndarray, placement: Placement, num_qubits: int) -> np.ndarray:
    """Apply one placement to a (possibly batched) flat state vector."""
    q = placement.qubits
    if any(x >= num_qubits or x < 0 for x in q):
        raise ValueError(f"placement {placement.gate}{list(q)} outside {num_qubits}-qubit register")
    if state.shape[-1] != 2**num_qubits:
        raise ValueError(f"state length {state.shape[-1]} does not match N={num_qubits}")
    k = len(q)
    batch = state.shape[:-1]
    nb = len(batch)
    psi = state.reshape(batch + (2,) * num_qubits)
    u = gate_matrix(placement.gate, placement.param).reshape((2,) * (2 * k))
    axes = [nb + x for x in q]
    # contract gate input indices with the operand axes, then move the new axes back
    out = np.tensordot(psi, u, axes=(axes, list(range(k, 2 * k))))
    out = np.moveaxis(out, list(range(out.ndim - k, out.ndim)), axes)
    return out.reshape(state.shape)


def simulate(circuit: Circuit, initial: np.ndarray | None = None) -> np.ndarray:
    n = circuit.num_qubits
    psi = zero_state(n) if initial is None else np.array(initial, dtype=complex)
    for _, p in circuit.placements():
        psi = apply(psi, p, n)
    return psi


def ghz_state(n: int) -> np.ndarray:
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = psi[-1] = SQRT1_2
    return psi


def ghz_fidelity(circuit: Circuit) -> float:
    psi = simulate(circuit)
    amp = (psi[0] + psi[-1]) * SQRT1_2
    return float(min(1.0, max(0.0, abs(amp) ** 2)))


# --- linear classification ------------------------------------------------------

@dataclass(frozen=True)
class ClassifierTask:
    num_features: int
    x: np.ndarray  # (count, d)
    y: np.ndarray  # (count,) in {-1, +1}
    margin: float
    seed: int
    w: np.ndarray  # unit-norm separating direction

    @property
    def count(self) -> int:
        return len(self.y)


DEFAULT_ML = dict(d=4, count=300, margin=0.1, seed=274)


def make_linear_dataset(d: int = 4, count: int = 300, margin: float = 0.1, seed: int = 274) -> ClassifierTask:
    if d < 1 or count < 1 or margin < 0:
        raise ValueError("need d >= 1, count >= 1, margin >= 0")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    kept_x: list[np.ndarray] = []
    kept = drawn = 0
    while kept < count:
        x = rng.uniform(-1.0, 1.0, size=(1024, d))
        s = x @ w
        ok = np.abs(s) >= margin
        drawn += len(x)
        kept_x.append(x[ok])
        kept += int(ok.sum())
        if drawn >= 10_240 and kept / drawn < 0.01:
            raise ValueError(f"margin {margin} too large for d={d}: acceptance {kept / drawn:.4%} < 1%")
    x = np.concatenate(kept_x)[:count]
    y = np.where(x @ w >= 0, 1, -1)
    return ClassifierTask(d, x, y, float(margin), seed, w)


def encoding_slots(d: int, n: int) -> list[list[tuple[int, int]]]:
    """Feature-to-qubit schedule: slot s holds (feature, qubit) pairs for features s*N .. s*N+N-1."""
    return [[(i, i % n) for i in range(s * n, min(d, (s + 1) * n))] for s in range(math.ceil(d / n))]


def z0_expectations(circuit: Circuit, task: ClassifierTask) -> np.ndarray:
    n = circuit.num_qubits
    batch = task.count
    psi = zero_state(n, (batch,))
    psi_t = psi.reshape((batch,) + (2,) * n)
    for slot in encoding_slots(task.num_features, n):
        for i, q in slot:
            c = np.cos(0.5 * np.pi * task.x[:, i])
            s = np.sin(0.5 * np.pi * task.x[:, i])
            psi_t = np.moveaxis(psi_t, q + 1, 1)
            a0, a1 = psi_t[:, 0].copy(), psi_t[:, 1].copy()
            shape = (batch,) + (1,) * (n - 1)
            cc, ss = c.reshape(shape), s.reshape(shape)
            psi_t = np.stack([cc * a0 - 1j * ss * a1, -1j * ss * a0 + cc * a1], axis=1)
            psi_t = np.moveaxis(psi_t, 1, q + 1)
    psi = psi_t.reshape(batch, 2**n)
    for _, p in circuit.placements():
        psi = apply(psi, p, n)
    probs = np.abs(psi.reshape(batch, 2, -1)) ** 2
    return probs[:, 0].sum(-1) - probs[:, 1].sum(-1)


TIE_TOL = 1e-12


def predict(expectations: np.ndarray) -> np.ndarray:
    # ties (|<Z>| at round-off level) predict +1
    return np.where(expectations >= -TIE_TOL, 1, -1)


def classify_accuracy(circuit: Circuit, task: ClassifierTask) -> float:
    pred = predict(z0_expectations(circuit, task))
    return float(np.mean(pred == task.y))
