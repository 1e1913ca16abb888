"""
Circuit <-> tensor codec.

A circuit over N qubits padded to T slots becomes a real array of shape
``(d_c + 1, N, T)``: the first ``d_c`` channels hold the role-token embedding of
whatever occupies (qubit, slot), the last channel holds the normalized angle
``p = (theta mod 2pi) / pi - 1``. Decoding snaps each position to the token with
the highest cosine similarity and re-pairs multi-qubit roles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import NOOP, Circuit, GateSet, Placement, normalize_angle

D_P = 1
MAX_COSINE = 0.5
MAX_ROUNDS = 100_000


class TableConstructionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    gateset_id: str
    vocabulary: tuple[str, ...]
    vectors: np.ndarray  # (V, d_c), rows unit norm
    seed: int

    @property
    def d_c(self) -> int:
        return self.vectors.shape[1]

    @property
    def channels(self) -> int:
        return self.d_c + D_P

    def index(self, token: str) -> int:
        return self.vocabulary.index(token)

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.index(token)]


def build_table(gateset: GateSet, d_c: int = 16, seed: int = 1) -> EmbeddingTable:
    """Draw one unit vector per vocabulary token, rejecting draws too close to earlier ones."""
    if d_c < 1:
        raise ValueError("d_c must be positive")
    rng = np.random.default_rng(seed)
    chosen: list[np.ndarray] = []
    rounds = 0
    while len(chosen) < len(gateset.vocabulary):
        if rounds >= MAX_ROUNDS:
            raise TableConstructionError(
                f"could not place {len(gateset.vocabulary)} vectors with |cos| <= {MAX_COSINE} "
                f"in {d_c} dimensions after {MAX_ROUNDS} rounds")
        rounds += 1
        v = rng.standard_normal(d_c)
        norm = np.linalg.norm(v)
        if norm == 0:
            continue
        v = v / norm
        if all(abs(float(v @ u)) <= MAX_COSINE for u in chosen):
            chosen.append(v)
    vectors = np.stack(chosen)
    vectors.setflags(write=False)
    return EmbeddingTable(gateset.id, gateset.vocabulary, vectors, seed)


def normalize_param(theta: float) -> float:
    return normalize_angle(theta) / np.pi - 1.0


def denormalize_param(p: float) -> float:
    return normalize_angle((min(1.0, max(-1.0, p)) + 1.0) * np.pi)


def encode(circuit: Circuit, table: EmbeddingTable, slots: int | None = None) -> np.ndarray:
    T = circuit.depth if slots is None else slots
    if circuit.depth > T:
        raise ValueError(f"circuit depth {circuit.depth} exceeds tensor width {T}")
    n = circuit.num_qubits
    out = np.zeros((table.channels, n, T))
    out[: table.d_c] = table.vector(NOOP)[:, None, None]
    for t, p in circuit.placements():
        kind = p.kind
        for pos, q in enumerate(p.qubits):
            out[: table.d_c, q, t] = table.vector(kind.role_of(pos))
        if p.param is not None:
            value = normalize_param(p.param)
            if kind.arity == 1 or kind.symmetric:
                out[-1, list(p.qubits), t] = value
            else:
                out[-1, p.qubits[1], t] = value
    return out


@dataclass(frozen=True)
class DecodeError:
    kind: str  # "unpaired-role" | "ambiguous-pairing"
    slot: int
    qubits: tuple[int, ...]
    token: str = ""

    def to_json(self) -> dict:
        return {"kind": self.kind, "slot": self.slot, "qubits": list(self.qubits), "token": self.token}

    @classmethod
    def from_json(cls, d: dict) -> "DecodeError":
        return cls(d["kind"], int(d["slot"]), tuple(d["qubits"]), d.get("token", ""))


DecodeOutcome = Circuit | DecodeError


def nearest_tokens(tensor: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Index of the most cosine-similar vocabulary entry at each (qubit, slot); ties go to the lowest index."""
    g = np.nan_to_num(np.asarray(tensor, dtype=np.float64)[: table.d_c], nan=0.0, posinf=0.0, neginf=0.0)
    norms = np.linalg.norm(g, axis=0)
    sims = np.einsum("vc,cnt->vnt", table.vectors, g) / np.where(norms > 0, norms, 1.0)
    return np.argmax(sims, axis=0)  # argmax returns the first maximum


def decode(tensor: np.ndarray, table: EmbeddingTable, gateset: GateSet) -> DecodeOutcome:
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3 or tensor.shape[0] != table.channels:
        raise ValueError(f"expected tensor of shape ({table.channels}, N, T), got {tensor.shape}")
    _, n, T = tensor.shape
    tokens = nearest_tokens(tensor, table)
    params = np.nan_to_num(tensor[-1], nan=0.0, posinf=1.0, neginf=-1.0)
    vocab = table.vocabulary
    slots = []
    for t in range(T):
        by_token: dict[str, list[int]] = {}
        for q in range(n):
            tok = vocab[tokens[q, t]]
            if tok != NOOP:
                by_token.setdefault(tok, []).append(q)
        placements: list[Placement] = []
        for kind in gateset.kinds:
            if kind.arity == 1:
                for q in by_token.get(kind.name, []):
                    theta = denormalize_param(params[q, t]) if kind.num_params else None
                    placements.append(Placement(kind.name, (q,), theta))
            elif kind.symmetric:
                qs = by_token.get(kind.role_tokens[0], [])
                if len(qs) % 2:
                    return DecodeError("unpaired-role", t, tuple(qs), kind.role_tokens[0])
                for a, b in zip(qs[0::2], qs[1::2]):
                    theta = None
                    if kind.num_params:
                        theta = denormalize_param(0.5 * (params[a, t] + params[b, t]))
                    placements.append(Placement(kind.name, (a, b), theta))
            else:
                ctl_tok, tgt_tok = kind.role_tokens
                cs, ts = by_token.get(ctl_tok, []), by_token.get(tgt_tok, [])
                if not cs and not ts:
                    continue
                if len(cs) != len(ts) or len(cs) == 0:
                    return DecodeError("unpaired-role", t, tuple(sorted(cs + ts)),
                                       ctl_tok if len(cs) > len(ts) else tgt_tok)
                if len(cs) > 1:
                    return DecodeError("ambiguous-pairing", t, tuple(sorted(cs + ts)), kind.name)
                c, tq = cs[0], ts[0]
                theta = denormalize_param(params[tq, t]) if kind.num_params else None
                placements.append(Placement(kind.name, (c, tq), theta))
        slots.append(tuple(placements))
    return Circuit(n, tuple(slots))


def decode_batch(tensors, table: EmbeddingTable, gateset: GateSet) -> list[DecodeOutcome]:
    return [decode(x, table, gateset) for x in tensors]
