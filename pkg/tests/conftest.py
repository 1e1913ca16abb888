import math

import numpy as np
import pytest
from hypothesis import strategies as st

from pqcdiff.circuit import GATESETS, Circuit, Placement
from pqcdiff.dataset import sample_structure


def ghz_circuit(n: int = 3) -> Circuit:
    slots = [(Placement("h", (0,)),)] + [(Placement("cx", (q - 1, q)),) for q in range(1, n)]
    return Circuit(n, tuple(slots))


def circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def random_circuits(gs_id: str, count: int, n: int = 3, gates=(3, 24), seed: int = 0):
    rng = np.random.default_rng(seed)
    gs = GATESETS[gs_id]
    return [sample_structure(gs, n, int(rng.integers(gates[0], gates[1] + 1)), rng) for _ in range(count)]


@st.composite
def circuits(draw, gs_id=None, max_qubits=4, max_gates=12):
    gs_id = gs_id or draw(st.sampled_from(sorted(GATESETS)))
    n = draw(st.integers(2, max_qubits))
    count = draw(st.integers(0, max_gates))
    seed = draw(st.integers(0, 2**32 - 1))
    return GATESETS[gs_id], sample_structure(GATESETS[gs_id], n, count, np.random.default_rng(seed))


@pytest.fixture
def ghz3():
    return ghz_circuit(3)


# --- acceptance verdicts ----------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_verdict(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
