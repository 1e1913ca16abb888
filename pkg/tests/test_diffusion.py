import copy
import types

import numpy as np
import pytest
import torch

from pqcdiff.circuit import GATESETS
from pqcdiff.codec import build_table
from pqcdiff.dataset import GeneratorConfig, build_corpus
from pqcdiff.diffusion import (
    Checkpoint, CheckpointError, Condition, DenoiserConfig, TrainHyper, TrainingDiverged, build_denoiser,
    epsilon_loss, forward_noise, guided_epsilon, make_schedule, sample, sample_tensors, train,
)
from pqcdiff.diffusion.model import condition_tensors
from pqcdiff.diffusion.train import encode_corpus

# exact rational product of (1 - beta_i), evaluated with fractions.Fraction and frozen
ALPHA_BAR_LAST = 4.0358297653756835e-05
SMALL = DenoiserConfig(width=16, blocks=2, cond_tokens=4, cond_dim=16, heads=2, groups=4)


@pytest.fixture(scope="module")
def schedule():
    return make_schedule(1000)


@pytest.fixture(scope="module")
def tiny_corpus():
    return build_corpus("ghz", "gs1", 3, 40, seed=0, config=GeneratorConfig(max_slots=8))


# --- schedule & forward process ------------------------------------------------------

def test_schedule_defaults(schedule):
    assert schedule.alpha_bars[0] == 1 - 1e-4
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    assert np.all((schedule.betas > 0) & (schedule.betas < 1))
    assert schedule.alpha_bars[-1] < 0.01
    assert schedule.alpha_bars[-1] == pytest.approx(ALPHA_BAR_LAST, rel=1e-12)


def test_schedule_errors():
    with pytest.raises(ValueError):
        make_schedule(1)
    with pytest.raises(ValueError):
        make_schedule(10, beta_end=1.0)


def test_forward_noise_limits(schedule):
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(17, 3, 8))
    eps = rng.normal(size=x0.shape)
    identity = types.SimpleNamespace(alpha_bars=np.array([1.0]))
    assert np.array_equal(forward_noise(x0, 0, eps, identity), x0)
    t = 500
    assert np.array_equal(forward_noise(x0, t, np.zeros_like(x0), schedule), np.sqrt(schedule.alpha_bars[t]) * x0)
    with pytest.raises(ValueError):
        forward_noise(x0, 0, eps[:, :2], schedule)


def test_forward_noise_inversion(schedule):
    rng = np.random.default_rng(1)
    for t in (0, 10, 500, 999):
        x0 = rng.normal(size=(17, 3, 8))
        eps = rng.normal(size=x0.shape)
        xt = forward_noise(x0, t, eps, schedule)
        ab = schedule.alpha_bars[t]
        assert np.max(np.abs((xt - np.sqrt(1 - ab) * eps) / np.sqrt(ab) - x0)) <= 1e-9


def test_forward_noise_torch_matches_numpy(schedule):
    x0 = torch.randn(4, 17, 3, 8, dtype=torch.float64)
    eps = torch.randn_like(x0)
    t = torch.tensor([0, 3, 500, 999])
    xt = forward_noise(x0, t, eps, schedule)
    for i in range(4):
        assert np.allclose(xt[i].numpy(), forward_noise(x0[i].numpy(), int(t[i]), eps[i].numpy(), schedule))


def test_final_step_decorrelates(schedule):
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(1000, 64))
    eps = rng.normal(size=x0.shape)
    xt = forward_noise(x0, 999, eps, schedule)
    slope = np.sum(xt * x0) / np.sum(x0 * x0)
    assert slope == pytest.approx(np.sqrt(ALPHA_BAR_LAST), abs=5e-3)
    assert slope < 0.1


def test_zero_predictor_loss_is_element_count(schedule):
    g = torch.Generator().manual_seed(0)
    x0 = torch.from_numpy(encode_corpus(build_corpus("ghz", "gs1", 3, 8, seed=1), build_table(GATESETS["gs1"]), 8))
    losses = []
    for _ in range(1000):
        eps = torch.randn((4,) + x0.shape[1:], generator=g)
        losses.append(float((eps ** 2).flatten(1).sum(1).mean()))
    assert np.mean(losses) == pytest.approx(17 * 3 * 8, rel=0.05)


# --- conditioning --------------------------------------------------------------------

def test_condition_render():
    assert Condition("ghz", 1.0).render() == "Generate GHZ fidelity: 1.0000"
    assert Condition("ghz", 0.123456).render() == "Generate GHZ fidelity: 0.1235"
    assert Condition("ml", 0.8).render() == "Generate Accuracy: 0.8"
    assert Condition("ml", 0.77).target == 0.8
    assert Condition.null().render() == ""
    with pytest.raises(ValueError):
        Condition("vqe", 0.5)


def test_condition_tokens():
    model = build_denoiser(DenoiserConfig(), seed=0)
    enc = lambda *conds: model.encode_condition(*condition_tensors(list(conds)))
    a, b = enc(Condition("ghz", 0.99991), Condition("ghz", 0.99994))
    assert torch.equal(a, b)
    c, d = enc(Condition("ghz", 0.9999), Condition("ghz", 1.0))
    assert not torch.equal(c, d)
    n, g = enc(Condition.null(), Condition("ghz", 1.0))
    assert not torch.equal(n, g)
    assert n.shape == (8, 64)


# --- denoiser --------------------------------------------------------------------------

@pytest.mark.parametrize("n,T", [(3, 16), (4, 16), (5, 24), (1, 1)])
def test_denoiser_shape(n, T):
    model = build_denoiser(DenoiserConfig(), seed=0)
    x = torch.randn(2, 17, n, T)
    tok = model.encode_condition(*condition_tensors([Condition("ghz", 1.0)] * 2))
    assert model(x, torch.tensor([5, 900]), tok).shape == x.shape


def test_denoiser_rejects_bad_channels():
    model = build_denoiser(SMALL, seed=0)
    tok = model.encode_condition(*condition_tensors([Condition.null()]))
    with pytest.raises(ValueError):
        model(torch.randn(1, 5, 3, 8), torch.tensor([1]), tok)


def _randomize(model, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


def test_conditioning_changes_output():
    model = _randomize(build_denoiser(DenoiserConfig(), seed=0)).eval()
    x = torch.randn(1, 17, 3, 8)
    t = torch.tensor([300])
    outs = [model(x, t, model.encode_condition(*condition_tensors([c])))
            for c in (Condition("ghz", 1.0), Condition("ghz", 0.5), Condition.null())]
    assert not torch.allclose(outs[0], outs[1])
    assert not torch.allclose(outs[0], outs[2])


def test_zero_init_predicts_zero(schedule):
    model = build_denoiser(DenoiserConfig(), seed=0)
    x = torch.randn(3, 17, 3, 8)
    tok = model.encode_condition(*condition_tensors([Condition("ghz", 1.0)] * 3))
    assert torch.count_nonzero(model(x, torch.tensor([1, 2, 3]), tok)) == 0


def test_guidance_identities():
    null, cond = torch.randn(2, 17, 3, 8), torch.randn(2, 17, 3, 8)
    assert torch.equal(guided_epsilon(null, cond, 1.0), cond)
    assert torch.equal(guided_epsilon(null, cond, 0.0), null)
    assert torch.allclose(guided_epsilon(null, cond, 2.5), null + 2.5 * (cond - null))


# --- training ---------------------------------------------------------------------------

def test_train_smoke_and_determinism(tiny_corpus, schedule):
    table = build_table(GATESETS["gs1"])
    hyper = TrainHyper(steps=30, batch_size=8, seed=3)
    a = train(tiny_corpus, table, schedule, SMALL, hyper, slots=8)
    b = train(tiny_corpus, table, schedule, SMALL, hyper, slots=8)
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
    assert len(a.losses) == 30
    assert a.checkpoint.meta["final_loss"] == a.losses[-1]
    # output layer is zero-initialized, so the first loss is the noise energy of the batch
    assert a.losses[0] == pytest.approx(17 * 3 * 8, rel=0.25)


def test_train_divergence_guard(tiny_corpus, schedule):
    table = build_table(GATESETS["gs1"])
    with pytest.raises(TrainingDiverged):
        train(tiny_corpus, table, schedule, SMALL, TrainHyper(steps=20, batch_size=4, divergence_factor=1e-6), slots=8)


def test_train_rejects_mismatched_inputs(tiny_corpus, schedule):
    table = build_table(GATESETS["gs1"], d_c=8)
    with pytest.raises(ValueError):
        train(tiny_corpus, table, schedule, SMALL, TrainHyper(steps=1), slots=8)
    with pytest.raises(ValueError):
        train([], table, schedule, SMALL)


# --- checkpoint & sampling ----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_ckpt(tiny_corpus):
    sched = make_schedule(50)
    return train(tiny_corpus, build_table(GATESETS["gs1"]), sched, SMALL,
                 TrainHyper(steps=20, batch_size=8), slots=8).checkpoint


def test_checkpoint_roundtrip(small_ckpt, tmp_path):
    path = tmp_path / "m.ckpt"
    small_ckpt.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"PQCD"
    assert int.from_bytes(raw[4:8], "little") == 1
    loaded = Checkpoint.load(path)
    assert loaded.to_bytes() == raw
    c = Condition("ghz", 1.0)
    a = sample(small_ckpt, c, 2.5, 4, 3, 8, seed=7)
    b = sample(loaded, c, 2.5, 4, 3, 8, seed=7)
    assert np.array_equal(a, b)


def test_checkpoint_rejects_bad_files(small_ckpt):
    raw = small_ckpt.to_bytes()
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(CheckpointError, match="truncated"):
        Checkpoint.from_bytes(raw[:-8])


def test_sampling_deterministic_and_batch_independent(small_ckpt):
    c = Condition("ghz", 1.0)
    model = small_ckpt.model()
    a = sample_tensors(model, small_ckpt.schedule, c, 7.5, 5, 3, 8, seed=1, gate_scale=small_ckpt.gate_scale)
    b = sample_tensors(model, small_ckpt.schedule, c, 7.5, 5, 3, 8, seed=1, gate_scale=small_ckpt.gate_scale)
    assert np.array_equal(a, b)
    first = sample_tensors(model, small_ckpt.schedule, c, 7.5, 2, 3, 8, seed=1, gate_scale=small_ckpt.gate_scale)
    assert np.allclose(first, a[:2], atol=1e-5)


def test_guidance_changes_samples(small_ckpt):
    c = Condition("ghz", 1.0)
    assert not np.array_equal(sample(small_ckpt, c, 0.0, 3, 3, 8, seed=2), sample(small_ckpt, c, 7.5, 3, 3, 8, seed=2))


@pytest.mark.parametrize("n", [4, 5])
def test_zero_shot_shapes(small_ckpt, n):
    x = sample(small_ckpt, Condition("ghz", 1.0), 2.0, 3, n, 10, seed=0)
    assert x.shape == (3, 17, n, 10)
    assert np.all(np.isfinite(x))


def test_sample_rejects_negative_guidance(small_ckpt):
    with pytest.raises(ValueError):
        sample(small_ckpt, Condition("ghz", 1.0), -1.0, 1, 3, 8)
