"""
Native construction of labeled circuit corpora.

Candidates come from two sources: uniformly random structures, and a GHZ
skeleton (h + cx chain, or its native-gate equivalent) with random gates
inserted. Candidates are optionally parameter-optimized, labeled with the
simulator, and fed to a quota-based balancer that fills a high-label pool and
per-length-bin low-label pools.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .circuit import (
    GATE_KINDS, GATESETS, Circuit, GateSet, Placement, get_gateset, normalize_angle, validate,
)
from .qsim import ClassifierTask, classify_accuracy, ghz_fidelity, make_linear_dataset, DEFAULT_ML

log = logging.getLogger(__name__)

PROVENANCES = ("random", "optimized", "imported")
TASKS = ("ghz", "ml")


@dataclass(frozen=True)
class LabeledCircuit:
    circuit: Circuit
    task: str
    value: float
    provenance: str = "random"

    @property
    def gate_count(self) -> int:
        return self.circuit.gate_count

    def to_json(self) -> dict:
        return {"circuit": self.circuit.to_json(), "task": self.task, "value": self.value,
                "gate_count": self.gate_count, "provenance": self.provenance}


# --- structure sampling ---------------------------------------------------------

def pack(num_qubits: int, gates: Iterable[Placement]) -> Circuit:
    """ASAP-schedule an ordered gate list into slots.

    Each gate goes to the first slot after the last one touching its qubits. Two
    gates of the same two-qubit kind never share a slot, since the codec cannot
    tell which role tokens belong together.
    """
    last = [-1] * num_qubits
    slots: list[list[Placement]] = []
    for p in gates:
        t = max(last[q] for q in p.qubits) + 1
        kind = p.kind
        if kind.arity == 2:
            while t < len(slots) and any(o.gate == p.gate for o in slots[t]):
                t += 1
        while len(slots) <= t:
            slots.append([])
        slots[t].append(p)
        for q in p.qubits:
            last[q] = t
    return Circuit(num_qubits, tuple(tuple(s) for s in slots))


def random_gate(gateset: GateSet, num_qubits: int, rng: np.random.Generator) -> Placement:
    kinds = [k for k in gateset.kinds if k.arity <= num_qubits]
    kind = kinds[rng.integers(len(kinds))]
    qubits = tuple(int(q) for q in rng.choice(num_qubits, size=kind.arity, replace=False))
    param = float(rng.uniform(0.0, 2 * math.pi)) if kind.num_params else None
    return Placement(kind.name, qubits, param)


def sample_structure(gateset: GateSet, num_qubits: int, gate_count: int, rng: np.random.Generator) -> Circuit:
    if num_qubits < max(k.arity for k in gateset.kinds) and not any(k.arity == 1 for k in gateset.kinds):
        raise ValueError("too few qubits for this gate set")
    return pack(num_qubits, [random_gate(gateset, num_qubits, rng) for _ in range(gate_count)])


def _h_equivalent(gateset: GateSet, q: int) -> list[Placement]:
    if "h" in gateset:
        return [Placement("h", (q,))]
    if not ("rz" in gateset and "sx" in gateset):
        raise ValueError(f"gate set {gateset.id} cannot express a Hadamard")
    # rz(pi/2) sx rz(pi/2) equals h up to a global phase
    return [Placement("rz", (q,), math.pi / 2), Placement("sx", (q,)), Placement("rz", (q,), math.pi / 2)]


def ghz_skeleton(gateset: GateSet, num_qubits: int) -> list[Placement]:
    """Gate list preparing the GHZ state exactly using only the gate set's kinds."""
    gates = _h_equivalent(gateset, 0)
    for q in range(1, num_qubits):
        if "cx" in gateset:
            gates.append(Placement("cx", (q - 1, q)))
        elif "cz" in gateset:
            gates += _h_equivalent(gateset, q) + [Placement("cz", (q - 1, q))] + _h_equivalent(gateset, q)
        else:
            raise ValueError(f"gate set {gateset.id} has no entangling gate for a GHZ skeleton")
    return gates


def sample_skeleton_variant(gateset: GateSet, num_qubits: int, gate_count: int, rng: np.random.Generator) -> Circuit:
    gates = ghz_skeleton(gateset, num_qubits)
    for _ in range(max(0, gate_count - len(gates))):
        gates.insert(int(rng.integers(len(gates) + 1)), random_gate(gateset, num_qubits, rng))
    return pack(num_qubits, gates)


# --- parameter optimization -------------------------------------------------------

SINUSOIDAL = frozenset({"rx", "ry", "rz", "rzz"})
GRID_POINTS = 32


def make_objective(objective: str, task: ClassifierTask | None = None) -> Callable[[Circuit], float]:
    if objective == "ghz":
        return ghz_fidelity
    if objective == "ml":
        if task is None:
            task = make_linear_dataset(**DEFAULT_ML)
        return lambda c: classify_accuracy(c, task)
    raise ValueError(f"unknown objective {objective!r}")


def rotosolve_angle(f: Callable[[float], float], theta: float) -> float:
    """Maximizer of f(x) = c + A cos x + B sin x from three evaluations around theta."""
    f0, fp, fm = f(theta), f(theta + math.pi / 2), f(theta - math.pi / 2)
    lo = theta - math.pi / 2 - math.atan2(2 * f0 - fp - fm, fp - fm)
    a, b = normalize_angle(lo), normalize_angle(lo + math.pi)
    return a if f(a) >= f(b) else b


def grid_refine_angle(f: Callable[[float], float], theta: float, points: int = GRID_POINTS) -> float:
    """Best of a ``points``-angle grid, refined by one parabola through the best and its neighbours."""
    step = 2 * math.pi / points
    grid = [i * step for i in range(points)]
    vals = [f(x) for x in grid]
    i = int(np.argmax(vals))
    best, best_val = grid[i], vals[i]
    y0, y1, y2 = vals[i - 1], vals[i], vals[(i + 1) % points]
    denom = y0 - 2 * y1 + y2
    if denom < 0:
        offset = 0.5 * (y0 - y2) / denom * step
        cand = normalize_angle(best + offset)
        v = f(cand)
        if v > best_val:
            best, best_val = cand, v
    return best


def optimize_params(circuit: Circuit, objective: str | Callable[[Circuit], float] = "ghz",
                    task: ClassifierTask | None = None, passes: int = 2) -> Circuit:
    """Coordinate-wise sweep over the circuit's angles in time order.

    Sinusoidal gates under the GHZ objective get the closed-form Rotosolve update;
    everything else gets a grid scan. An update is only kept if it does not lower
    the objective, so the result is never worse than the input.
    """
    if isinstance(objective, str):
        analytic = objective == "ghz"
        fn = make_objective(objective, task)
    else:
        analytic, fn = False, objective
    gates = [p.gate for _, p in circuit.placements() if p.param is not None]
    if not gates:
        return circuit
    values = list(circuit.params)
    current = fn(circuit)
    for _ in range(passes):
        for i, gate in enumerate(gates):
            def f(x, i=i):
                trial = values.copy()
                trial[i] = x
                return fn(circuit.with_params(trial))
            if analytic and gate in SINUSOIDAL:
                new = rotosolve_angle(f, values[i])
            else:
                new = grid_refine_angle(f, values[i])
            v = f(new)
            if v > current:
                values[i], current = new, v
    return circuit.with_params(values)


# --- balancing ---------------------------------------------------------------------

def split_range(lo: int, hi: int, bins: int = 4) -> list[tuple[int, int]]:
    """Split the inclusive range lo..hi into ``bins`` contiguous, near-equal bins (larger first)."""
    size = hi - lo + 1
    bins = min(bins, size)
    base, extra = divmod(size, bins)
    out, start = [], lo
    for i in range(bins):
        width = base + (1 if i < extra else 0)
        out.append((start, start + width - 1))
        start += width
    return out


@dataclass(frozen=True)
class BalanceSpec:
    high_threshold: float
    high_fraction: float
    gate_range: tuple[int, int]
    low_length_bins: tuple[tuple[int, int], ...] = ()
    high_inclusive: bool = False  # True: high means value >= threshold

    def __post_init__(self):
        if not 0 <= self.high_fraction <= 1:
            raise ValueError("high_fraction must be in [0, 1]")
        lo, hi = self.gate_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad gate range {self.gate_range}")
        bins = tuple(tuple(b) for b in self.low_length_bins) or tuple(split_range(lo, hi))
        object.__setattr__(self, "low_length_bins", bins)
        expected = lo
        for a, b in sorted(bins):
            if a != expected or b < a:
                raise ValueError(f"length bins {bins} must tile {self.gate_range} without gaps or overlap")
            expected = b + 1
        if expected != hi + 1:
            raise ValueError(f"length bins {bins} must tile {self.gate_range}")

    def is_high(self, value: float) -> bool:
        return value >= self.high_threshold if self.high_inclusive else value > self.high_threshold

    def quotas(self, count: int) -> tuple[int, list[int]]:
        high = math.ceil(self.high_fraction * count - 1e-9)
        low = count - high
        base, extra = divmod(low, len(self.low_length_bins))
        return high, [base + (1 if i < extra else 0) for i in range(len(self.low_length_bins))]

    def bin_of(self, gate_count: int) -> int | None:
        for i, (a, b) in enumerate(self.low_length_bins):
            if a <= gate_count <= b:
                return i
        return None

    def to_json(self) -> dict:
        return {"high_threshold": self.high_threshold, "high_fraction": self.high_fraction,
                "gate_range": list(self.gate_range),
                "low_length_bins": [list(b) for b in self.low_length_bins],
                "high_inclusive": self.high_inclusive}

    @classmethod
    def from_json(cls, d: dict) -> "BalanceSpec":
        return cls(float(d["high_threshold"]), float(d["high_fraction"]), tuple(d["gate_range"]),
                   tuple(tuple(b) for b in d.get("low_length_bins", ())), bool(d.get("high_inclusive", False)))


def default_balance(gateset_id: str) -> BalanceSpec:
    if gateset_id == "gs1":
        return BalanceSpec(0.9, 0.75, (3, 16))
    if gateset_id == "gs2":
        return BalanceSpec(0.9, 0.90, (3, 24))
    if gateset_id == "ml":
        return BalanceSpec(0.7, 0.50, (3, 24), high_inclusive=True)
    raise ValueError(f"no default balance for {gateset_id!r}")


@dataclass
class GeneratorConfig:
    skeleton_fraction: float = 0.5
    optimize_fraction: float = 1.0  # share of random (non-skeleton) candidates that get optimized
    budget_factor: int = 100
    max_slots: int | None = None
    passes: int = 2


class BalanceError(RuntimeError):
    pass


def build_corpus(task: str, gateset: GateSet | str, num_qubits: int, count: int,
                 balance: BalanceSpec | None = None, seed: int = 0,
                 config: GeneratorConfig | None = None,
                 classifier: ClassifierTask | None = None) -> list[LabeledCircuit]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    gs = get_gateset(gateset) if isinstance(gateset, str) else gateset
    balance = balance or default_balance(gs.id)
    config = config or GeneratorConfig()
    if task == "ml" and classifier is None:
        classifier = make_linear_dataset(**DEFAULT_ML)
    label = make_objective(task, classifier)
    rng = np.random.default_rng(seed)
    lo, hi = balance.gate_range
    high_quota, low_quotas = balance.quotas(count)
    high: list[LabeledCircuit] = []
    low: list[list[LabeledCircuit]] = [[] for _ in low_quotas]
    skeleton_len = None
    if task == "ghz":
        try:
            skeleton_len = len(ghz_skeleton(gs, num_qubits))
        except ValueError:
            log.warning("gate set %s has no GHZ skeleton; using random candidates only", gs.id)
    budget = config.budget_factor * count

    def full() -> bool:
        return len(high) >= high_quota and all(len(b) >= q for b, q in zip(low, low_quotas))

    tried = 0
    while not full():
        if tried >= budget:
            raise BalanceError(_diagnose(balance, high, low, high_quota, low_quotas, tried))
        tried += 1
        want_high = len(high) < high_quota
        use_skeleton = (skeleton_len is not None and want_high and skeleton_len <= hi
                        and rng.random() < config.skeleton_fraction)
        if use_skeleton:
            n_gates = int(rng.integers(max(lo, skeleton_len), hi + 1))
            circ = sample_skeleton_variant(gs, num_qubits, n_gates, rng)
            optimize = True
        else:
            n_gates = int(rng.integers(lo, hi + 1))
            circ = sample_structure(gs, num_qubits, n_gates, rng)
            optimize = rng.random() < config.optimize_fraction
        if config.max_slots is not None and circ.depth > config.max_slots:
            continue
        provenance = "random"
        if optimize and circ.params:
            circ = optimize_params(circ, task, classifier, passes=config.passes)
            provenance = "optimized"
        value = float(label(circ))
        rec = LabeledCircuit(circ, task, value, provenance)
        if balance.is_high(value):
            if len(high) < high_quota:
                high.append(rec)
        else:
            b = balance.bin_of(circ.gate_count)
            if b is not None and len(low[b]) < low_quotas[b]:
                low[b].append(rec)
    log.info("corpus of %d built from %d candidates", count, tried)
    corpus = high + [r for b in low for r in b]
    order = rng.permutation(len(corpus))
    return [corpus[i] for i in order]


def _diagnose(balance, high, low, high_quota, low_quotas, tried) -> str:
    parts = [f"high {len(high)}/{high_quota}"]
    for (a, b), got, want in zip(balance.low_length_bins, low, low_quotas):
        parts.append(f"low[{a}-{b}] {len(got)}/{want}")
    return f"could not fill balance quotas after {tried} candidates: " + ", ".join(parts)


# --- persistence -----------------------------------------------------------------

class CorpusFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def write_corpus(path: str | Path, corpus: Iterable[LabeledCircuit]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in corpus:
            f.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def parse_record(obj, gateset: GateSet | None = None) -> LabeledCircuit:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    for key in ("circuit", "task", "value", "gate_count", "provenance"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    if obj["task"] not in TASKS:
        raise ValueError(f"unknown task {obj['task']!r}")
    if obj["provenance"] not in PROVENANCES:
        raise ValueError(f"unknown provenance {obj['provenance']!r}")
    value = obj["value"]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise ValueError(f"value must be a number in [0, 1], got {value!r}")
    try:
        circ = Circuit.from_json(obj["circuit"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad circuit: {exc}") from None
    check = validate(circ, gateset or _ALL_KINDS)
    if not check.ok:
        raise ValueError("invalid circuit: " + "; ".join(map(str, check.violations)))
    if obj["gate_count"] != circ.gate_count:
        raise ValueError(f"gate_count {obj['gate_count']} does not match circuit ({circ.gate_count})")
    return LabeledCircuit(circ, obj["task"], float(value), obj["provenance"])


_ALL_KINDS = GateSet("any", tuple(GATE_KINDS.values()))


def iter_corpus(path: str | Path, gateset: GateSet | None = None) -> Iterator[LabeledCircuit]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"malformed JSON ({exc.msg})", lineno) from None
            try:
                yield parse_record(obj, gateset)
            except ValueError as exc:
                raise CorpusFormatError(str(exc), lineno) from None


def read_corpus(path: str | Path, gateset: GateSet | None = None) -> list[LabeledCircuit]:
    return list(iter_corpus(path, gateset))


def infer_gateset(corpus: Sequence[LabeledCircuit]) -> GateSet:
    used = {p.gate for rec in corpus for _, p in rec.circuit.placements()}
    for gs in GATESETS.values():
        if used <= set(gs.names):
            return gs
    raise ValueError(f"no gate set contains all of {sorted(used)}")
