"""
Circuit IR: gate kinds, gate sets, time-sliced circuits, validation and text/JSON I/O.

A circuit is a tuple of timesteps ("slots"); each slot holds placements on
disjoint qubits. Wholly idle slots carry no information and are dropped on
construction, so two circuits that differ only by idle timesteps compare equal.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

TWO_PI = 2.0 * math.pi
NOOP = "noop"


@dataclass(frozen=True)
class GateKind:
    name: str
    arity: int
    num_params: int = 0
    symmetric: bool = False
    role_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ValueError(f"{self.name}: arity must be 1 or 2")
        if self.num_params not in (0, 1):
            raise ValueError(f"{self.name}: at most one parameter is supported")
        if not self.role_tokens:
            if self.arity == 1:
                roles = (self.name,)
            elif self.symmetric:
                roles = (self.name,)
            else:
                roles = (f"{self.name}_c", f"{self.name}_t")
            object.__setattr__(self, "role_tokens", roles)
        n = len(self.role_tokens)
        if self.arity == 1 and n != 1:
            raise ValueError(f"{self.name}: single-qubit gate needs one role token")
        if self.arity == 2 and self.symmetric and n != 1:
            raise ValueError(f"{self.name}: symmetric gate shares one role token")
        if self.arity == 2 and not self.symmetric and (n != 2 or self.role_tokens[0] == self.role_tokens[1]):
            raise ValueError(f"{self.name}: asymmetric gate needs distinct control/target tokens")

    def role_of(self, position: int) -> str:
        """Role token placed on the ``position``-th operand qubit."""
        if len(self.role_tokens) == 1:
            return self.role_tokens[0]
        return self.role_tokens[position]


GATE_KINDS: dict[str, GateKind] = {
    k.name: k
    for k in [
        GateKind("id", 1),
        GateKind("h", 1),
        GateKind("x", 1),
        GateKind("sx", 1),
        GateKind("rx", 1, 1),
        GateKind("ry", 1, 1),
        GateKind("rz", 1, 1),
        GateKind("cx", 2),
        GateKind("cz", 2, symmetric=True),
        GateKind("swap", 2, symmetric=True),
        GateKind("rzz", 2, 1, symmetric=True),
        GateKind("crx", 2, 1),
        GateKind("cry", 2, 1),
    ]
}


@dataclass(frozen=True)
class GateSet:
    id: str
    kinds: tuple[GateKind, ...]
    vocabulary: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        vocab = [NOOP]
        for kind in self.kinds:
            for tok in kind.role_tokens:
                if tok in vocab:
                    raise ValueError(f"duplicate role token {tok!r} in gate set {self.id}")
                vocab.append(tok)
        object.__setattr__(self, "vocabulary", tuple(vocab))

    def __contains__(self, name: str) -> bool:
        return any(k.name == name for k in self.kinds)

    def kind(self, name: str) -> GateKind:
        for k in self.kinds:
            if k.name == name:
                return k
        raise KeyError(f"gate {name!r} not in gate set {self.id}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(k.name for k in self.kinds)

    def token_owner(self, token: str) -> tuple[GateKind, int]:
        """Return (kind, role position) for a role token."""
        for k in self.kinds:
            if token in k.role_tokens:
                return k, k.role_tokens.index(token)
        raise KeyError(token)


def _make_gateset(gs_id: str, names: Sequence[str]) -> GateSet:
    return GateSet(gs_id, tuple(GATE_KINDS[n] for n in names))


GATESETS: dict[str, GateSet] = {
    "gs1": _make_gateset("gs1", ["cx", "h", "rx", "ry", "rz", "id"]),
    "gs2": _make_gateset("gs2", ["cz", "id", "rx", "rz", "rzz", "sx", "x"]),
    "ml": _make_gateset("ml", ["cx", "h", "rx", "ry", "swap", "crx", "cry"]),
}


def get_gateset(gs_id: str) -> GateSet:
    try:
        return GATESETS[gs_id]
    except KeyError:
        raise ValueError(f"unknown gate set {gs_id!r}; expected one of {sorted(GATESETS)}") from None


def normalize_angle(theta: float) -> float:
    theta = math.fmod(float(theta), TWO_PI)
    if theta < 0:
        theta += TWO_PI
    # fmod can land exactly on 2pi after the shift for tiny negative inputs
    return 0.0 if theta >= TWO_PI else theta


@dataclass(frozen=True)
class Placement:
    gate: str
    qubits: tuple[int, ...]
    param: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        kind = GATE_KINDS.get(self.gate)
        if kind is not None and kind.symmetric:
            object.__setattr__(self, "qubits", tuple(sorted(self.qubits)))
        if self.param is not None:
            object.__setattr__(self, "param", normalize_angle(self.param))

    @property
    def kind(self) -> GateKind:
        return GATE_KINDS[self.gate]

    def to_json(self) -> dict:
        d: dict = {"gate": self.gate, "qubits": list(self.qubits)}
        if self.param is not None:
            d["param"] = self.param
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Placement":
        return cls(d["gate"], tuple(d["qubits"]), d.get("param"))


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    slots: tuple[tuple[Placement, ...], ...] = ()

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError("num_qubits must be >= 1")
        slots = tuple(
            tuple(sorted(slot, key=lambda p: (min(p.qubits) if p.qubits else -1, p.gate)))
            for slot in self.slots
        )
        object.__setattr__(self, "slots", tuple(s for s in slots if s))

    @property
    def depth(self) -> int:
        return len(self.slots)

    @property
    def gate_count(self) -> int:
        return sum(len(s) for s in self.slots)

    def placements(self) -> Iterable[tuple[int, Placement]]:
        for t, slot in enumerate(self.slots):
            for p in slot:
                yield t, p

    @property
    def params(self) -> list[float]:
        return [p.param for _, p in self.placements() if p.param is not None]

    def with_params(self, values: Sequence[float]) -> "Circuit":
        """Copy with the parameterized placements' angles replaced in time order."""
        it = iter(values)
        slots = []
        for slot in self.slots:
            slots.append(tuple(
                Placement(p.gate, p.qubits, next(it)) if p.param is not None else p for p in slot
            ))
        rest = list(it)
        if rest:
            raise ValueError(f"{len(rest)} surplus parameter values")
        return Circuit(self.num_qubits, tuple(slots))

    def to_json(self) -> dict:
        return {"num_qubits": self.num_qubits,
                "slots": [[p.to_json() for p in slot] for slot in self.slots]}

    @classmethod
    def from_json(cls, d: dict) -> "Circuit":
        return cls(int(d["num_qubits"]),
                   tuple(tuple(Placement.from_json(p) for p in slot) for slot in d["slots"]))


@dataclass(frozen=True)
class Violation:
    kind: str
    slot: int
    qubits: tuple[int, ...]
    detail: str = ""

    def __str__(self):
        return f"{self.kind} at slot {self.slot} qubits {list(self.qubits)}: {self.detail}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(circuit: Circuit, gateset: GateSet) -> ValidationResult:
    out: list[Violation] = []
    n = circuit.num_qubits
    for t, slot in enumerate(circuit.slots):
        used: set[int] = set()
        for p in slot:
            q = p.qubits
            kind = GATE_KINDS.get(p.gate)
            if kind is None:
                out.append(Violation("unknown kind", t, q, p.gate))
                continue
            if p.gate not in gateset:
                out.append(Violation("kind not in gateset", t, q, f"{p.gate} not in {gateset.id}"))
            if len(q) != kind.arity:
                out.append(Violation("arity mismatch", t, q, f"{p.gate} takes {kind.arity} qubit(s)"))
            if len(set(q)) != len(q):
                out.append(Violation("repeated qubit", t, q, p.gate))
            if any(x < 0 or x >= n for x in q):
                out.append(Violation("qubit out of range", t, q, f"N={n}"))
            if (p.param is not None) != (kind.num_params == 1):
                out.append(Violation("parameter mismatch", t, q, p.gate))
            elif p.param is not None and not (0.0 <= p.param < TWO_PI):
                out.append(Violation("angle out of range", t, q, repr(p.param)))
            clash = used.intersection(q)
            if clash:
                out.append(Violation("qubit collision", t, tuple(sorted(clash)), p.gate))
            used.update(q)
    return ValidationResult(tuple(out))


# --- keys -------------------------------------------------------------------

def _placement_key(p: Placement) -> str:
    return p.gate + ":" + ",".join(map(str, p.qubits))


def structural_key(circuit: Circuit) -> str:
    slots = ("|".join(sorted(_placement_key(p) for p in slot)) for slot in circuit.slots)
    return f"n={circuit.num_qubits};" + ";".join(slots)


def param_key(circuit: Circuit) -> str:
    def one(p: Placement) -> str:
        s = _placement_key(p)
        if p.param is not None:
            # 2pi - tiny rounds to 6.2832 which is the same angle as 0.0000
            r = round(p.param, 4)
            s += "@" + format(0.0 if r >= round(TWO_PI, 4) else r, ".4f")
        return s
    slots = ("|".join(sorted(one(p) for p in slot)) for slot in circuit.slots)
    return f"n={circuit.num_qubits};" + ";".join(slots)


# --- text format --------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def serialize(circuit: Circuit) -> str:
    lines = [f"qubits {circuit.num_qubits}"]
    for t, p in circuit.placements():
        parts = [f"{t}:", p.gate, *map(str, p.qubits)]
        if p.param is not None:
            parts.append("%.12f" % p.param)
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


_HEADER = re.compile(r"qubits (\d+)$")
_LINE = re.compile(r"(\d+): ([a-z_]+)((?: -?\d+)+)(?: (-?\d+\.\d+))?$")


def parse(text: str) -> Circuit:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing 'qubits <N>' header", 1, 1)
    m = _HEADER.match(lines[0])
    if not m:
        raise ParseError("expected 'qubits <N>' header", 1, 1)
    n = int(m.group(1))
    if n < 1:
        raise ParseError("qubit count must be >= 1", 1, 8)
    slots: dict[int, list[Placement]] = {}
    last_slot = -1
    for lineno, line in enumerate(lines[1:], start=2):
        m = _LINE.match(line)
        if not m:
            col = _first_bad_column(line)
            raise ParseError(f"malformed placement line {line!r}", lineno, col)
        slot = int(m.group(1))
        if slot < last_slot:
            raise ParseError("slots must be ascending", lineno, 1)
        last_slot = slot
        gate = m.group(2)
        kind = GATE_KINDS.get(gate)
        if kind is None:
            raise ParseError(f"unknown gate {gate!r}", lineno, m.start(2) + 1)
        qubits = tuple(int(x) for x in m.group(3).split())
        if len(qubits) != kind.arity:
            raise ParseError(f"{gate} takes {kind.arity} qubit(s), got {len(qubits)}", lineno, m.start(3) + 2)
        angle = m.group(4)
        if (angle is not None) != (kind.num_params == 1):
            col = m.start(4) + 1 if angle is not None else len(line) + 1
            raise ParseError(f"{gate} {'takes no' if angle is not None else 'requires an'} angle", lineno, col)
        slots.setdefault(slot, []).append(Placement(gate, qubits, float(angle) if angle else None))
    ordered = tuple(tuple(slots[k]) for k in sorted(slots))
    return Circuit(n, ordered)


def _first_bad_column(line: str) -> int:
    m = re.match(r"\d+: ", line)
    return m.end() + 1 if m else 1


def circuit_to_json_text(circuit: Circuit) -> str:
    return json.dumps(circuit.to_json(), separators=(",", ":"))
