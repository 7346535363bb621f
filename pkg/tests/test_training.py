import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unsupmap.domains import get_pair, sample
from unsupmap.exceptions import ContractError
from unsupmap.nncore import Architecture, MlpNetwork, forward
from unsupmap.training import (
    TRACE_HEADER,
    AdversaryTrainer,
    EvalSet,
    NetMapper,
    TrainConfig,
    WganTrainer,
    empirical_risk,
    init_generator,
    pair_risk_term,
    per_sample_batch_sampler,
    point_loss_term,
    train_adversary,
    train_generator,
    train_per_sample_adversary,
    write_trace_csv,
)

PAIR = get_pair("twin-gaussians")
ARCH = Architecture.mlp(2, 2, 2, 8)
FAST = TrainConfig(epochs=3, n_train=128, batch_size=32, n_div=64, n_gt=64, critic_hidden=(16,))


def test_config_validation():
    for bad in [dict(epochs=0), dict(batch_size=1), dict(lam=-1.0), dict(restarts=0), dict(average_decay=1.0), dict(n_train=16, batch_size=32)]:
        with pytest.raises(ContractError):
            TrainConfig(**bad)


@given(st.floats(0.0, 10.0), st.sampled_from([-1.0, 1.0]), st.integers(0, 1000))
def test_pair_risk_term_gradient_matches_finite_differences(lam, sign, seed):
    rng = np.random.default_rng(seed)
    xa = rng.normal(size=(6, 2))
    out = rng.normal(size=(6, 2))
    ref = rng.normal(size=(6, 2))
    term = pair_risk_term(lambda _: ref, lam, sign)
    value, grad, _ = term(xa, out, None)
    if lam == 0:
        assert value == 0.0 and grad is None
        return
    step = 1e-6
    for i in range(6):
        for j in range(2):
            bump = np.zeros_like(out)
            bump[i, j] = step
            fd = (term(xa, out + bump, None)[0] - term(xa, out - bump, None)[0]) / (2 * step)
            assert grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_point_loss_term_gradient_matches_finite_differences(rng):
    net = MlpNetwork.initialize(ARCH, rng)
    mapper = NetMapper(net)
    x = np.array([0.5, -1.0])
    target = np.array([[0.2, 0.3]])
    term = point_loss_term(mapper, target, x, 2.0)
    _, _, grad = term(None, None, None)
    step = 1e-6
    fd = np.empty_like(net.params)
    for k in range(net.params.size):
        keep = net.params[k]
        net.params[k] = keep + step
        plus = term(None, None, None)[0]
        net.params[k] = keep - step
        minus = term(None, None, None)[0]
        net.params[k] = keep
        fd[k] = (plus - minus) / (2 * step)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_empirical_risk_by_hand():
    xs = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert empirical_risk(lambda x: x, lambda x: 2 * x, xs) == pytest.approx(1.0)


def test_training_is_deterministic_and_seed_sensitive():
    a, rec_a = train_generator(PAIR, ARCH, FAST)
    b, rec_b = train_generator(PAIR, ARCH, FAST)
    c, _ = train_generator(PAIR, ARCH, FAST.replace(seed=1))
    assert np.array_equal(a.params, b.params)
    assert [r.div_h for r in rec_a] == [r.div_h for r in rec_b]
    assert not np.array_equal(a.params, c.params)


def test_averaged_parameters_follow_the_decay():
    net = init_generator(ARCH, 0)
    start = net.params.copy()
    trainer = WganTrainer(PAIR, NetMapper(net), FAST, (11, 0))
    trainer.run_epoch()
    np.testing.assert_allclose(trainer.average, 0.9 * start + 0.1 * net.params)


def test_restarts_pick_the_lowest_final_divergence():
    cfg = FAST.replace(restarts=3)
    _, records = train_generator(PAIR, ARCH, cfg)
    _, first_only = train_generator(PAIR, ARCH, FAST)
    assert records[-1].div_h <= first_only[-1].div_h


def test_generator_training_reduces_divergence():
    cfg = TrainConfig(epochs=40, n_train=256, batch_size=32, n_div=128, n_gt=128, gen_lr=3e-3)
    net, records = train_generator(PAIR, ARCH, cfg)
    evalset = EvalSet.for_pair(PAIR, cfg)
    assert records[-1].div_h < 0.5 * evalset.divergence(init_generator(ARCH, 0))


def test_adversary_never_modifies_h1():
    h1 = init_generator(ARCH, 0)
    snapshot = h1.params.copy()
    adversary = AdversaryTrainer(h1, PAIR, ARCH, FAST.replace(lam=1.0))
    h2 = adversary.train(2)
    assert np.array_equal(h1.params, snapshot)
    assert h2 is not adversary.h2
    assert not np.shares_memory(h2.params, h1.params)
    train_adversary(h1, PAIR, ARCH, FAST)
    assert np.array_equal(h1.params, snapshot)


def test_per_sample_sampler_mixes_half_and_half():
    pool = sample(PAIR, "A", 500, 0)
    x = np.array([9.0, 9.0])
    draw = per_sample_batch_sampler(x, pool)
    batch = draw(np.random.default_rng(0), 4000)
    share = np.mean(np.all(batch == x, axis=1))
    assert abs(share - 0.5) < 0.03
    assert draw(np.random.default_rng(0), 4000).tolist() == batch.tolist()
    assert not np.any(pool == 9.0)


def test_per_sample_adversary_validates_the_probe():
    h1 = init_generator(ARCH, 0)
    with pytest.raises(ContractError):
        train_per_sample_adversary(h1, PAIR, np.zeros(3), ARCH, FAST)
    with pytest.raises(ContractError):
        train_per_sample_adversary(h1, PAIR, np.array([100.0, 0.0]), ARCH, FAST)


def test_per_sample_adversary_separates_more_with_larger_lambda():
    h1, _ = train_generator(PAIR, ARCH, FAST)
    x = sample(PAIR, "A", 1, 5)[0]
    gaps = []
    for lam in (0.0, 50.0):
        h2 = train_per_sample_adversary(h1, PAIR, x, ARCH, FAST.replace(epochs=2, lam=lam))
        gaps.append(float(np.sum((forward(h1, x) - forward(h2, x)) ** 2)))
    assert gaps[1] > gaps[0]


def test_trace_csv(tmp_path):
    _, records = train_generator(PAIR, ARCH, FAST)
    write_trace_csv(tmp_path / "t.csv", records)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == TRACE_HEADER
    assert len(lines) == FAST.epochs + 1


def test_dimension_mismatch_is_rejected():
    with pytest.raises(ContractError):
        train_generator(PAIR, Architecture.mlp(2, 3, 2, 8), FAST)
