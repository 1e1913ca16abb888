"""
Evaluation of sampled tensors: decode, score, and aggregate into a report.

Aggregates are always recomputed from the per-sample records, so a report
loaded from JSON reproduces them exactly.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit, GateSet, param_key, structural_key
from .codec import DecodeError, EmbeddingTable, decode
from .qsim import ClassifierTask, classify_accuracy, ghz_fidelity

REPORT_VERSION = 1
BIN_WIDTH = 0.05
NUM_BINS = 20
CSV_COLUMNS = ["qubits", "max_gates", "gen_time_s", "conv_time_s", "high_count",
               "uniq_struct", "uniq_hash", "error_count"]
DEFAULT_GHZ_THRESHOLD = 0.99
DEFAULT_ML_TOLERANCE = 0.05


@dataclass
class SampleRecord:
    index: int
    status: str  # "ok" | "error"
    value: float | None = None
    gate_count: int | None = None
    structural_key: str | None = None
    param_key: str | None = None
    high: bool = False
    conv_time_s: float = 0.0
    error: dict | None = None


@dataclass
class EvalReport:
    task: str
    qubits: int
    max_gates: int
    threshold: float
    target: float | None
    gen_time_s: float
    records: list[SampleRecord] = field(default_factory=list)

    # --- aggregates ---
    @property
    def sample_count(self) -> int:
        return len(self.records)

    @property
    def error_count(self) -> int:
        return sum(r.status == "error" for r in self.records)

    @property
    def decoded_count(self) -> int:
        return sum(r.status == "ok" for r in self.records)

    @property
    def high_count(self) -> int:
        return sum(r.high for r in self.records)

    @property
    def unique_structures(self) -> int:
        return len({r.structural_key for r in self.records if r.high})

    @property
    def unique_hashes(self) -> int:
        return len({r.param_key for r in self.records if r.high})

    @property
    def conv_time_s(self) -> float:
        return float(sum(r.conv_time_s for r in self.records))

    @property
    def histogram(self) -> list[int]:
        counts = [0] * NUM_BINS
        for r in self.records:
            if r.status == "ok":
                counts[min(NUM_BINS - 1, int(r.value / BIN_WIDTH + 1e-9))] += 1
        return counts

    @property
    def mean_value(self) -> float | None:
        vals = [r.value for r in self.records if r.status == "ok"]
        return float(np.mean(vals)) if vals else None

    def aggregates(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "decoded_count": self.decoded_count,
            "error_count": self.error_count,
            "high_count": self.high_count,
            "unique_structures": self.unique_structures,
            "unique_hashes": self.unique_hashes,
            "mean_value": self.mean_value,
            "histogram": {"bin_width": BIN_WIDTH, "counts": self.histogram},
            "gen_time_s": self.gen_time_s,
            "conv_time_s": self.conv_time_s,
        }

    def row(self) -> dict:
        return {"qubits": self.qubits, "max_gates": self.max_gates,
                "gen_time_s": round(self.gen_time_s, 3), "conv_time_s": round(self.conv_time_s, 3),
                "high_count": self.high_count, "uniq_struct": self.unique_structures,
                "uniq_hash": self.unique_hashes, "error_count": self.error_count}

    # --- JSON ---
    def to_json(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "task": self.task, "qubits": self.qubits, "max_gates": self.max_gates,
            "threshold": self.threshold, "target": self.target, "gen_time_s": self.gen_time_s,
            "aggregates": self.aggregates(),
            "records": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        return cls(d["task"], int(d["qubits"]), int(d["max_gates"]), float(d["threshold"]),
                   d.get("target"), float(d["gen_time_s"]),
                   [SampleRecord(**r) for r in d["records"]])


def is_high(task: str, value: float, threshold: float, target: float | None) -> bool:
    if task == "ml" and target is not None:
        return abs(value - target) <= threshold + 1e-12
    return value >= threshold


def score(circuit: Circuit, task: str, classifier: ClassifierTask | None = None) -> float:
    if task == "ghz":
        return ghz_fidelity(circuit)
    if task == "ml":
        if classifier is None:
            raise ValueError("ml evaluation needs a classifier task")
        return classify_accuracy(circuit, classifier)
    raise ValueError(f"unknown task {task!r}")


def record_for(index: int, outcome: Circuit | DecodeError, task: str, threshold: float,
               target: float | None, classifier: ClassifierTask | None, conv_time: float = 0.0) -> SampleRecord:
    if isinstance(outcome, DecodeError):
        return SampleRecord(index, "error", conv_time_s=conv_time, error=outcome.to_json())
    value = score(outcome, task, classifier)
    return SampleRecord(index, "ok", value, outcome.gate_count, structural_key(outcome), param_key(outcome),
                        is_high(task, value, threshold, target), conv_time)


def evaluate(tensors, table: EmbeddingTable, gateset: GateSet, task: str = "ghz",
             threshold: float | None = None, target: float | None = None,
             classifier: ClassifierTask | None = None, gen_time_s: float = 0.0) -> EvalReport:
    tensors = np.asarray(tensors)
    if tensors.ndim != 4:
        raise ValueError(f"expected a (count, C, N, T) array, got shape {tensors.shape}")
    if threshold is None:
        threshold = DEFAULT_ML_TOLERANCE if task == "ml" else DEFAULT_GHZ_THRESHOLD
    _, _, n, T = tensors.shape
    records = []
    for i, x in enumerate(tensors):
        t0 = time.perf_counter()
        outcome = decode(x, table, gateset)
        conv = time.perf_counter() - t0
        records.append(record_for(i, outcome, task, threshold, target, classifier, conv))
    return EvalReport(task, n, T, threshold, target, gen_time_s, records)


def evaluate_outcomes(outcomes: Sequence[Circuit | DecodeError], num_qubits: int, max_gates: int,
                      task: str = "ghz", threshold: float | None = None, target: float | None = None,
                      classifier: ClassifierTask | None = None, gen_time_s: float = 0.0) -> EvalReport:
    """Same as :func:`evaluate` for already-decoded samples (conversion time is not measured)."""
    if threshold is None:
        threshold = DEFAULT_ML_TOLERANCE if task == "ml" else DEFAULT_GHZ_THRESHOLD
    records = [record_for(i, o, task, threshold, target, classifier) for i, o in enumerate(outcomes)]
    return EvalReport(task, num_qubits, max_gates, threshold, target, gen_time_s, records)


# --- emission ---------------------------------------------------------------------

def emit(reports: EvalReport | Sequence[EvalReport], fmt: str = "json") -> str:
    if isinstance(reports, EvalReport):
        reports = [reports]
    rows = [r.row() for r in reports if r.sample_count]
    if fmt == "json":
        docs = [r.to_json() for r in reports]
        return json.dumps(docs[0] if len(docs) == 1 else docs, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "md":
        return _markdown(reports, rows)
    raise ValueError(f"unknown format {fmt!r}")


def _markdown(reports, rows) -> str:
    lines = ["| " + " | ".join(CSV_COLUMNS) + " |", "|" + "---|" * len(CSV_COLUMNS)]
    lines += ["| " + " | ".join(str(row[c]) for c in CSV_COLUMNS) + " |" for row in rows]
    for rep in reports:
        if not rep.sample_count:
            continue
        hist = rep.histogram
        peak = max(hist) or 1
        lines += ["", f"Histogram ({rep.task}, N={rep.qubits}, max_gates={rep.max_gates})", "",
                  "| bin         | count | bar                                      |",
                  "|-------------|-------|------------------------------------------|"]
        for i, c in enumerate(hist):
            lo, hi = i * BIN_WIDTH, (i + 1) * BIN_WIDTH
            bar = "#" * round(40 * c / peak)
            lines.append(f"| [{lo:.2f},{hi:.2f}) | {c:5d} | {bar:<40} |")
    return "\n".join(lines) + "\n"
