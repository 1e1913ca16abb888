"""Command-line entry point: ``pqcd {dataset generate, train, sample, evaluate, report}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import GATESETS, Circuit, get_gateset
from .codec import DecodeError, build_table, decode
from .dataset import (
    BalanceError, BalanceSpec, CorpusFormatError, GeneratorConfig, build_corpus, default_balance,
    infer_gateset, read_corpus, write_corpus,
)
from .metrics import EvalReport, emit, evaluate, evaluate_outcomes
from .qsim import DEFAULT_ML, make_linear_dataset

log = logging.getLogger("pqcd")

TENSOR_MAGIC = b"PQCT"
TENSOR_VERSION = 1


class UsageError(Exception):
    pass


# --- tensor dump -------------------------------------------------------------------------

def write_tensors(path, tensors: np.ndarray, meta: dict) -> None:
    tensors = np.ascontiguousarray(tensors, dtype="<f4")
    head = dict(meta, count=int(tensors.shape[0]), shape=list(tensors.shape[1:]), dtype="<f4")
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, len(blob)) + blob + tensors.tobytes())


def read_tensors(path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor dump")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != TENSOR_VERSION:
        raise ValueError(f"{path}: unsupported tensor dump version {version}")
    head = json.loads(data[12:12 + hlen].decode("utf-8"))
    shape = (head["count"], *head["shape"])
    arr = np.frombuffer(data, dtype="<f4", offset=12 + hlen).reshape(shape).astype(np.float32)
    return arr, head


def write_sidecar(out: str | Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {"command": command, "version": __version__, "args": resolved}
    if extra:
        doc.update(extra)
    Path(f"{out}.config.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _classifier(args):
    return make_linear_dataset(args.features, args.samples, args.margin, args.data_seed)


def _add_classifier_flags(p):
    p.add_argument("--features", type=int, default=DEFAULT_ML["d"], help="ml task: feature count")
    p.add_argument("--samples", type=int, default=DEFAULT_ML["count"], help="ml task: sample count")
    p.add_argument("--margin", type=float, default=DEFAULT_ML["margin"], help="ml task: class margin")
    p.add_argument("--data-seed", type=int, default=DEFAULT_ML["seed"], help="ml task: dataset seed")


# --- subcommands --------------------------------------------------------------------------

def cmd_dataset_generate(args) -> int:
    gs = get_gateset(args.gateset)
    balance = default_balance(gs.id)
    if args.balance:
        balance = BalanceSpec.from_json(json.loads(Path(args.balance).read_text()))
    lo, hi = balance.gate_range
    if args.min_gates is not None or args.max_gates is not None:
        lo = args.min_gates if args.min_gates is not None else lo
        hi = args.max_gates if args.max_gates is not None else hi
        bins = balance.low_length_bins if (lo, hi) == balance.gate_range else ()
        balance = BalanceSpec(balance.high_threshold, balance.high_fraction, (lo, hi), bins, balance.high_inclusive)
    config = GeneratorConfig(skeleton_fraction=args.skeleton_fraction, optimize_fraction=args.optimize_fraction,
                             max_slots=args.max_slots)
    classifier = _classifier(args) if args.task == "ml" else None
    corpus = build_corpus(args.task, gs, args.qubits, args.count, balance, args.seed, config, classifier)
    write_corpus(args.out, corpus)
    write_sidecar(args.out, "dataset generate", args, {"balance": balance.to_json()})
    high = sum(balance.is_high(r.value) for r in corpus)
    print(f"wrote {len(corpus)} records ({high} high) to {args.out}", file=sys.stderr)
    return 0


TRAIN_DEFAULTS = {
    "gateset": None, "slots": None, "d_c": 16, "table_seed": 1,
    "diffusion_steps": 1000, "beta_start": 1e-4, "beta_end": 0.02,
    "width": 64, "blocks": 6, "cond_tokens": 8, "cond_dim": 64, "heads": 4, "value_features": 8,
    "steps": 2000, "batch_size": 64, "lr": 3e-3, "warmup_fraction": 0.3, "p_uncond": 0.1, "seed": 0,
    "gate_scale": None, "log_every": 50,
}


def resolve_train_config(path: str | None) -> dict:
    cfg = dict(TRAIN_DEFAULTS)
    if path:
        user = json.loads(Path(path).read_text())
        unknown = set(user) - set(cfg)
        if unknown:
            raise UsageError(f"unknown training config keys: {sorted(unknown)}")
        cfg.update(user)
    return cfg


def cmd_train(args) -> int:
    from .diffusion import DenoiserConfig, TrainHyper, make_schedule, train

    if not Path(args.data).is_file():
        raise UsageError(f"corpus not found: {args.data}")
    cfg = resolve_train_config(args.config)
    gs = get_gateset(cfg["gateset"]) if cfg["gateset"] else None
    corpus = read_corpus(args.data, gs)
    gs = gs or infer_gateset(corpus)
    cfg["gateset"] = gs.id
    table = build_table(gs, cfg["d_c"], cfg["table_seed"])
    schedule = make_schedule(cfg["diffusion_steps"], cfg["beta_start"], cfg["beta_end"])
    config = DenoiserConfig(d_c=cfg["d_c"], width=cfg["width"], blocks=cfg["blocks"], cond_tokens=cfg["cond_tokens"],
                            cond_dim=cfg["cond_dim"], heads=cfg["heads"], value_features=cfg["value_features"])
    hyper = TrainHyper(steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                       warmup_fraction=cfg["warmup_fraction"], p_uncond=cfg["p_uncond"], seed=cfg["seed"],
                       gate_scale=cfg["gate_scale"])
    metrics_path = args.metrics or f"{args.out}.metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as mf:
        def on_step(rec):
            mf.write(json.dumps(rec) + "\n")
            if rec["step"] % cfg["log_every"] == 0 or rec["step"] == hyper.steps - 1:
                print(f"step {rec['step']:6d}  loss {rec['loss']:.4f}  lr {rec['lr']:.2e}", file=sys.stderr)
        result = train(corpus, table, schedule, config, hyper, slots=cfg["slots"], callback=on_step)
    result.checkpoint.save(args.out)
    write_sidecar(args.out, "train", args, {"train_config": cfg, "metrics": str(metrics_path)})
    print(f"saved checkpoint to {args.out} (final loss {result.checkpoint.meta['final_loss']:.4f})", file=sys.stderr)
    return 0


def cmd_sample(args) -> int:
    from .diffusion import Checkpoint, Condition, sample

    if not Path(args.ckpt).is_file():
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    ckpt = Checkpoint.load(args.ckpt)
    cond = Condition(args.task, args.target)
    trained_n = ckpt.meta.get("num_qubits")
    n = args.qubits or trained_n or 3
    slots = args.max_gates or ckpt.meta.get("slots") or 16
    if trained_n and n != trained_n:
        print(f"zero-shot: sampling N={n} with a checkpoint trained on N={trained_n}", file=sys.stderr)
    print(f"prompt: {cond.render()!r}  guidance={args.guidance}", file=sys.stderr)
    t0 = time.perf_counter()
    tensors = sample(ckpt, cond, args.guidance, args.count, n, slots, args.seed)
    gen_time = time.perf_counter() - t0
    meta = {"gateset": ckpt.gateset_id, "table": {"d_c": ckpt.d_c, "seed": ckpt.table_seed},
            "condition": {"task": cond.task, "target": cond.target, "prompt": cond.render()},
            "guidance": args.guidance, "seed": args.seed, "gen_time_s": gen_time}
    if args.out:
        write_tensors(args.out, tensors, meta)
    if args.circuits:
        table, gs = ckpt.table(), get_gateset(ckpt.gateset_id)
        with open(args.circuits, "w", encoding="utf-8", newline="\n") as f:
            for i, x in enumerate(tensors):
                outcome = decode(x, table, gs)
                rec = {"index": i, "qubits": n, "max_gates": slots, "gateset": gs.id,
                       "prompt": cond.render(), "target": cond.target}
                if isinstance(outcome, DecodeError):
                    rec.update(status="error", error=outcome.to_json())
                else:
                    rec.update(status="ok", circuit=outcome.to_json())
                f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    for out in filter(None, (args.out, args.circuits)):
        write_sidecar(out, "sample", args, {"prompt": cond.render(), "qubits": n, "max_gates": slots})
    print(f"sampled {args.count} tensors in {gen_time:.2f}s", file=sys.stderr)
    return 0


def _load_outcomes(path) -> tuple[list, int, int, float | None, str]:
    outcomes, n, slots, target, gs_id = [], 0, 0, None, ""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                n, slots, target, gs_id = rec["qubits"], rec["max_gates"], rec.get("target"), rec.get("gateset", "")
                if rec["status"] == "ok":
                    outcomes.append(Circuit.from_json(rec["circuit"]))
                elif rec["status"] == "error":
                    outcomes.append(DecodeError.from_json(rec["error"]))
                else:
                    raise ValueError(f"unknown status {rec['status']!r}")
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"bad sample record: {exc}", lineno) from None
    return outcomes, n, slots, target, gs_id


def cmd_evaluate(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input not found: {src}")
    classifier = _classifier(args) if args.task == "ml" else None
    with open(src, "rb") as f:
        is_tensor = f.read(4) == TENSOR_MAGIC
    if is_tensor:
        tensors, head = read_tensors(src)
        gs = get_gateset(head["gateset"])
        table = build_table(gs, head["table"]["d_c"], head["table"]["seed"])
        target = args.target if args.target is not None else head["condition"].get("target")
        report = evaluate(tensors, table, gs, args.task, args.threshold, target, classifier, head.get("gen_time_s", 0.0))
    else:
        outcomes, n, slots, target, _ = _load_outcomes(src)
        target = args.target if args.target is not None else target
        report = evaluate_outcomes(outcomes, n, slots, args.task, args.threshold, target, classifier)
    Path(args.report).write_text(emit(report, "json"))
    write_sidecar(args.report, "evaluate", args)
    print(f"{report.sample_count} samples: {report.error_count} errors, {report.high_count} high, "
          f"{report.unique_structures} unique structures, {report.unique_hashes} unique hashes", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.input:
        if not Path(path).is_file():
            raise UsageError(f"report not found: {path}")
        doc = json.loads(Path(path).read_text())
        for d in doc if isinstance(doc, list) else [doc]:
            reports.append(EvalReport.from_json(d))
    text = emit(reports, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --- parser ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqcd", description="Diffusion-based parameterized quantum circuit synthesis")
    parser.add_argument("--threads", type=int, default=None, help="worker thread cap (env PQCD_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="corpus construction")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    gen = ds_sub.add_parser("generate", help="build a balanced, labeled corpus")
    gen.add_argument("--task", choices=["ghz", "ml"], default="ghz")
    gen.add_argument("--gateset", choices=sorted(GATESETS), default="gs1")
    gen.add_argument("--qubits", type=int, default=3)
    gen.add_argument("--min-gates", type=int, default=None)
    gen.add_argument("--max-gates", type=int, default=None)
    gen.add_argument("--max-slots", type=int, default=None, help="discard candidates deeper than this")
    gen.add_argument("--count", type=int, default=1000)
    gen.add_argument("--balance", default=None, help="balance spec JSON file")
    gen.add_argument("--skeleton-fraction", type=float, default=0.5)
    gen.add_argument("--optimize-fraction", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    _add_classifier_flags(gen)
    gen.set_defaults(func=cmd_dataset_generate)

    tr = sub.add_parser("train", help="train the denoiser")
    tr.add_argument("--data", required=True)
    tr.add_argument("--config", default=None, help="training config JSON")
    tr.add_argument("--out", required=True)
    tr.add_argument("--metrics", default=None, help="per-step loss JSONL (default <out>.metrics.jsonl)")
    tr.set_defaults(func=cmd_train)

    sm = sub.add_parser("sample", help="generate circuits from a checkpoint")
    sm.add_argument("--ckpt", required=True)
    sm.add_argument("--task", choices=["ghz", "ml"], default="ghz")
    sm.add_argument("--target", type=float, required=True)
    sm.add_argument("--guidance", type=float, default=0.0)
    sm.add_argument("--count", type=int, default=100)
    sm.add_argument("--qubits", type=int, default=None)
    sm.add_argument("--max-gates", type=int, default=None, help="tensor width (time slots)")
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out", default=None, help="raw tensor dump")
    sm.add_argument("--circuits", default=None, help="decoded circuits JSONL")
    sm.set_defaults(func=cmd_sample)

    ev = sub.add_parser("evaluate", help="score sampled tensors or decoded circuits")
    ev.add_argument("--in", dest="input", required=True)
    ev.add_argument("--task", choices=["ghz", "ml"], default="ghz")
    ev.add_argument("--threshold", type=float, default=None,
                    help="ghz: min fidelity (default 0.99); ml: max |acc - target| (default 0.05)")
    ev.add_argument("--target", type=float, default=None)
    ev.add_argument("--report", required=True)
    _add_classifier_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report", help="render evaluation reports")
    rp.add_argument("--in", dest="input", nargs="+", required=True)
    rp.add_argument("--format", choices=["csv", "md", "json"], default="csv")
    rp.add_argument("--out", default=None)
    rp.set_defaults(func=cmd_report)
    return parser


def _set_threads(n: int | None) -> None:
    if n is None and os.environ.get("PQCD_THREADS"):
        n = int(os.environ["PQCD_THREADS"])
    if n:
        import torch
        torch.set_num_threads(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pqcd: error: {exc}", file=sys.stderr)
        return 2
    except (BalanceError, CorpusFormatError, ValueError, RuntimeError, OSError) as exc:
        print(f"pqcd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
