import math

import numpy as np
import pytest

from qppwg import tensor as T
from qppwg.errors import ConfigurationError, NumericalError, UsageError
from qppwg.models import preset
from qppwg.synthetic import random_specs, synthetic_utterances
from qppwg.training import RAdam, TrainConfig, Trainer, read_loss_log, sample_batch
from qppwg.vocoder import fit_normalizer, prepare


def scalar_param(value=1.0):
    return T.Parameter(np.array([value]), "w", dtype=np.float64)


def hand_radam(grads, lr=0.1, b1=0.9, b2=0.999, eps=1e-6, w=1.0):
    """Scalar RAdam recurrence written out step by step."""
    m = v = 0.0
    rho_inf = 2 / (1 - b2) - 1
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        rho = rho_inf - 2 * t * b2 ** t / (1 - b2 ** t)
        if rho > 4:
            r = math.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))
            w -= lr * r * m_hat / (math.sqrt(v / (1 - b2 ** t)) + eps)
        else:
            w -= lr * m_hat
        out.append(w)
    return out


def test_radam_zero_gradient_leaves_parameter_unchanged():
    p = scalar_param(0.7)
    opt = RAdam([p], lr=0.1)
    for _ in range(10):
        p.grad = np.zeros(1)
        opt.step()
    assert p.data[0] == 0.7
    assert opt.step_count == 10


def test_radam_first_steps_are_momentum_only():
    opt = RAdam([scalar_param()], lr=0.1)
    assert [opt.rectification(t) is None for t in range(1, 7)] == [True] * 4 + [False] * 2
    p = scalar_param()
    opt = RAdam([p], lr=0.1)
    grads = [0.5, -0.2, 1.3, 0.8, 0.1, -0.4, 2.0]
    expected = hand_radam(grads)
    m = 0.0
    for t, g in enumerate(grads, start=1):
        p.grad = np.array([g])
        opt.step()
        assert p.data[0] == pytest.approx(expected[t - 1], rel=1e-12)
        if t <= 4:
            m = 0.9 * m + 0.1 * g
            assert opt.exp_avg["w"][0] == pytest.approx(m, rel=1e-12)


def test_radam_constant_gradient_decreases_monotonically():
    p = scalar_param(5.0)
    opt = RAdam([p], lr=0.01)
    values = []
    for _ in range(200):
        p.grad = np.array([1.0])
        opt.step()
        values.append(p.data[0])
    assert np.all(np.diff(values) < 0)


def test_radam_rejects_misshapen_gradient():
    p = scalar_param()
    opt = RAdam([p])
    p.grad = np.zeros(2)
    with pytest.raises(Exception, match="shape"):
        opt.step()


def test_learning_rate_halves_at_decay_boundaries():
    cfg = TrainConfig.desk()
    assert cfg.learning_rates(999) == (cfg.lr_g, cfg.lr_d)
    assert cfg.learning_rates(1000) == (cfg.lr_g / 2, cfg.lr_d / 2)
    full = TrainConfig()
    assert full.learning_rates(200_000)[0] == 5e-5
    assert full.learning_rates(400_000)[0] == 2.5e-5


def test_config_invariants():
    with pytest.raises(ConfigurationError):
        TrainConfig(total_steps=10, warmup_steps=20)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_length=1000)
    with pytest.raises(ConfigurationError):
        TrainConfig.desk(batch_length=1100)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"nonsense": 1})
    assert TrainConfig.from_dict(TrainConfig.desk().to_dict()) == TrainConfig.desk()


@pytest.fixture(scope="module")
def utterances():
    return synthetic_utterances(random_specs(3, seed=11, duration=1.3))


def test_full_scale_batches_are_frame_aligned(utterances):
    long = synthetic_utterances(random_specs(2, seed=3, duration=2.0))
    data = [prepare(u, fit_normalizer(long)) for u in long]
    cfg = TrainConfig(batch_size=4)
    batch = sample_batch(data, cfg, np.random.default_rng(0))
    assert batch.x.shape == (4, 1, 25520) and batch.aux.shape == (4, 39, 25520)
    assert cfg.batch_length // cfg.hop_samples == 232
    for (i, start), x in zip(batch.items, batch.x):
        assert start + 232 <= data[i].frame_count
        np.testing.assert_array_equal(x[0], data[i].audio[start * 110:start * 110 + 25520])
        np.testing.assert_array_equal(batch.f0[batch.items.index((i, start))][::110], data[i].f0[start:start + 232])


def test_batches_are_deterministic_given_rng(utterances):
    data = [prepare(u, fit_normalizer(utterances)) for u in utterances]
    cfg = TrainConfig.desk(batch_size=2)
    a = sample_batch(data, cfg, np.random.default_rng(3))
    b = sample_batch(data, cfg, np.random.default_rng(3))
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.items == b.items


def test_short_utterances_are_padded_and_masked():
    short = synthetic_utterances(random_specs(1, seed=2, duration=0.1))
    data = [prepare(u, fit_normalizer(short)) for u in short]
    batch = sample_batch(data, TrainConfig.desk(), np.random.default_rng(0))
    n = data[0].frame_count * 110
    assert batch.mask is not None
    assert batch.mask[0, 0, :n].all() and not batch.mask[0, 0, n:].any()
    assert not batch.x[0, 0, n:].any()


def test_empty_dataset_is_usage_error():
    with pytest.raises(UsageError):
        sample_batch([], TrainConfig.desk(), np.random.default_rng(0))


def small_trainer(utts, seed=0, **train):
    base = dict(total_steps=6, warmup_steps=3, batch_length=1320, decay_every=4)
    base.update(train)
    gen = preset("desk", residual_channels=4, gate_channels=4, skip_channels=4)
    return Trainer(gen, TrainConfig.desk(**base), utts, seed=seed)


def test_warmup_leaves_discriminator_untouched(utterances):
    tr = small_trainer(utterances)
    before = tr.disc.state_dict()
    records = tr.run(3)
    for name, arr in tr.disc.state_dict().items():
        np.testing.assert_array_equal(arr, before[name])
    assert tr.opt_d.step_count == 0
    assert all(r["l_d"] is None and r["l_adv"] is None for r in records)
    rec = tr.train_step()
    assert rec["l_d"] is not None and tr.opt_d.step_count == 1
    assert any(not np.array_equal(arr, before[n]) for n, arr in tr.disc.state_dict().items())


def test_non_finite_loss_aborts_with_diagnostic(utterances):
    tr = small_trainer(utterances)
    tr.gen.head2_b.data[...] = np.nan
    with pytest.raises(NumericalError, match="step 0"):
        tr.train_step()


def test_loss_log_and_reproducibility(utterances, tmp_path):
    a, b = small_trainer(utterances, seed=4), small_trainer(utterances, seed=4)
    a.run(log_path=tmp_path / "a.csv")
    b.run(log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = read_loss_log(tmp_path / "a.csv")
    assert [int(r["step"]) for r in rows] == list(range(6))
    assert rows[0]["l_d"] == "" and rows[-1]["l_d"] != ""
    assert float(rows[-1]["lr_g"]) == TrainConfig.desk().lr_g / 2


def test_checkpoint_resume_reproduces_uninterrupted_run(utterances, tmp_path):
    straight = small_trainer(utterances, seed=9)
    straight.run()
    paused = small_trainer(utterances, seed=9)
    paused.run(4)
    path = paused.save(tmp_path / "ck.qppwg")
    resumed = Trainer.load(path, utterances)
    resumed.run()
    assert resumed.history == straight.history[4:]
    for name, arr in straight.gen.state_dict().items():
        np.testing.assert_array_equal(resumed.gen.state_dict()[name], arr)


@pytest.mark.slow
def test_short_warmup_lowers_spectral_loss():
    utts = synthetic_utterances(random_specs(2, seed=21, duration=1.0))
    first, last = [], []
    for seed in range(5):
        tr = Trainer(preset("desk"), TrainConfig.desk(total_steps=200, warmup_steps=200), utts, seed=seed)
        records = tr.run()
        first.append(records[0]["l_sp"])
        last.append(records[-1]["l_sp"])
    assert np.mean(last) < np.mean(first)
