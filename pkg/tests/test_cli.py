import json

import numpy as np
import pytest

from pqcdiff.cli import TENSOR_MAGIC, main, read_tensors
from pqcdiff.diffusion import Checkpoint

TINY = {"width": 16, "blocks": 2, "cond_tokens": 4, "cond_dim": 16, "heads": 2,
        "steps": 20, "batch_size": 8, "diffusion_steps": 50, "slots": 8, "log_every": 5}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def corpus(workdir):
    out = workdir / "corpus.jsonl"
    assert main(["dataset", "generate", "--count", "40", "--max-gates", "12", "--max-slots", "8",
                 "--seed", "5", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def ckpt(workdir, corpus):
    cfg = workdir / "train.json"
    cfg.write_text(json.dumps(TINY))
    out = workdir / "model.ckpt"
    assert main(["train", "--data", str(corpus), "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_generate_outputs_and_sidecar(corpus):
    lines = corpus.read_text().splitlines()
    assert len(lines) == 40
    recs = [json.loads(line) for line in lines]
    assert all(sum(len(s) for s in r["circuit"]["slots"]) <= 12 for r in recs)
    side = json.loads((corpus.parent / "corpus.jsonl.config.json").read_text())
    assert side["command"] == "dataset generate" and side["args"]["seed"] == 5


def test_generate_is_byte_identical(workdir, corpus):
    again = workdir / "again.jsonl"
    assert main(["dataset", "generate", "--count", "40", "--max-gates", "12", "--max-slots", "8",
                 "--seed", "5", "--out", str(again)]) == 0
    assert again.read_bytes() == corpus.read_bytes()


def test_generate_infeasible_exits_1(workdir, capsys):
    spec = workdir / "bad.json"
    spec.write_text(json.dumps({"high_threshold": 1.5, "high_fraction": 0.5, "gate_range": [3, 4]}))
    rc = main(["dataset", "generate", "--count", "4", "--balance", str(spec),
               "--out", str(workdir / "x.jsonl")])
    assert rc == 1
    assert "BalanceError" in capsys.readouterr().err


def test_train_writes_checkpoint_and_metrics(ckpt, capsys):
    c = Checkpoint.load(ckpt)
    metrics = [json.loads(line) for line in open(f"{ckpt}.metrics.jsonl")]
    assert len(metrics) == TINY["steps"]
    assert c.meta["final_loss"] == metrics[-1]["loss"]
    assert c.meta["num_qubits"] == 3 and c.meta["slots"] == 8
    assert json.loads(open(f"{ckpt}.config.json").read())["train_config"]["width"] == 16


def test_train_missing_corpus_is_usage_error(workdir, capsys):
    assert main(["train", "--data", str(workdir / "nope.jsonl"), "--out", str(workdir / "m.ckpt")]) == 2


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["sample", "--nonsense"])
    assert e.value.code == 2


def test_sample_prompt_and_outputs(workdir, ckpt, capsys):
    out, circ = workdir / "s.bin", workdir / "s.jsonl"
    assert main(["sample", "--ckpt", str(ckpt), "--target", "1.0", "--count", "6", "--seed", "1",
                 "--out", str(out), "--circuits", str(circ)]) == 0
    assert "Generate GHZ fidelity: 1.0000" in capsys.readouterr().err
    assert out.read_bytes()[:4] == TENSOR_MAGIC
    x, head = read_tensors(out)
    assert x.shape == (6, 17, 3, 8) and head["dtype"] == "<f4"
    assert head["condition"]["prompt"] == "Generate GHZ fidelity: 1.0000"
    recs = [json.loads(line) for line in circ.read_text().splitlines()]
    assert [r["index"] for r in recs] == list(range(6))
    assert all(r["status"] in ("ok", "error") for r in recs)


def test_sample_zero_shot_and_guidance(workdir, ckpt, capsys):
    paths = {}
    for w, n in [(0, 4), (7.5, 4), (0, 5)]:
        p = workdir / f"z{w}_{n}.bin"
        assert main(["sample", "--ckpt", str(ckpt), "--target", "1.0", "--guidance", str(w), "--qubits", str(n),
                     "--count", "3", "--seed", "2", "--out", str(p)]) == 0
        paths[w, n] = p
    assert "zero-shot" in capsys.readouterr().err
    a, _ = read_tensors(paths[0, 4])
    b, _ = read_tensors(paths[7.5, 4])
    assert a.shape == (3, 17, 4, 8) and not np.array_equal(a, b)
    assert read_tensors(paths[0, 5])[0].shape == (3, 17, 5, 8)


def test_sample_rejects_corrupt_checkpoint(workdir):
    bad = workdir / "bad.ckpt"
    bad.write_bytes(b"XXXX" + b"\0" * 16)
    assert main(["sample", "--ckpt", str(bad), "--target", "1.0", "--count", "1"]) == 1


def test_evaluate_and_report(workdir, ckpt, capsys):
    out, circ = workdir / "e.bin", workdir / "e.jsonl"
    main(["sample", "--ckpt", str(ckpt), "--target", "1.0", "--count", "5", "--out", str(out),
          "--circuits", str(circ)])
    r1, r2 = workdir / "r1.json", workdir / "r2.json"
    assert main(["evaluate", "--in", str(out), "--report", str(r1)]) == 0
    assert main(["evaluate", "--in", str(circ), "--report", str(r2)]) == 0
    a, b = json.loads(r1.read_text()), json.loads(r2.read_text())
    strip = lambda d: [{k: v for k, v in r.items() if k != "conv_time_s"} for r in d["records"]]
    assert strip(a) == strip(b)
    assert a["aggregates"]["sample_count"] == 5
    capsys.readouterr()
    assert main(["report", "--in", str(r1), str(r2), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "qubits,max_gates,gen_time_s,conv_time_s,high_count,uniq_struct,uniq_hash,error_count"
    assert len(lines) == 3


def test_report_md_of_empty(workdir, capsys):
    empty = workdir / "empty.jsonl"
    empty.write_text("")
    rep = workdir / "empty.json"
    assert main(["evaluate", "--in", str(empty), "--report", str(rep)]) == 0
    capsys.readouterr()
    assert main(["report", "--in", str(rep), "--format", "md"]) == 0
    assert len(capsys.readouterr().out.strip().split("\n")) == 2


def test_evaluate_bad_schema(workdir):
    bad = workdir / "bad.jsonl"
    bad.write_text('{"hello": 1}\n')
    assert main(["evaluate", "--in", str(bad), "--report", str(workdir / "o.json")]) == 1


def test_threads_env(monkeypatch, workdir, corpus):
    import torch
    before = torch.get_num_threads()
    monkeypatch.setenv("PQCD_THREADS", "1")
    try:
        assert main(["report", "--in", str(workdir / "r1.json")]) in (0, 2)
        assert torch.get_num_threads() == 1
    finally:
        torch.set_num_threads(before)
