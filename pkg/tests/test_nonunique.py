import math

import numpy as np
import pytest

from unsupmap.domains import RotationMap, get_pair
from unsupmap.exceptions import ContractError, NoFeasibleEpochError
from unsupmap.nncore import Architecture
from unsupmap.nonunique import SharedEncoderPair, _encoder_risk_term, _PartMapper, alg5_train, multi_target_gt_risk
from unsupmap.training import TrainConfig, empirical_risk

PAIR = get_pair("multi-target")
ARCH = Architecture.mlp(2, 2, 4, 6)
FAST = TrainConfig(epochs=3, n_train=128, batch_size=32, n_div=64, n_gt=64, critic_hidden=(16,), t2=1)


def test_encoder_update_is_seen_by_both_networks():
    shared = SharedEncoderPair.initialize(ARCH, 2, seed=0)
    before = (shared.h1.params.copy(), shared.h2.params.copy())
    encoder = _PartMapper(shared, "encoder", 0)
    encoder.params[:] += 0.5
    h1, h2 = shared.h1, shared.h2
    cut = shared.split.boundary
    assert np.array_equal(h1.params[:cut], h2.params[:cut])
    assert not np.array_equal(h1.params[:cut], before[0][:cut])
    assert np.array_equal(h1.params[cut:], before[0][cut:])
    assert np.array_equal(h2.params[cut:], before[1][cut:])


def test_decoders_are_independent():
    shared = SharedEncoderPair.initialize(ARCH, 2, seed=0)
    h2_before = shared.h2.params.copy()
    _PartMapper(shared, "decoder", 0).params[:] = 0.0
    assert np.array_equal(shared.h2.params, h2_before)
    clone = shared.copy()
    clone.omega[:] = 1.0
    assert not np.array_equal(clone.omega, shared.omega)


def test_encoder_risk_gradient_matches_finite_differences(rng):
    shared = SharedEncoderPair.initialize(ARCH, 2, seed=1)
    xa = rng.normal(size=(7, 2))
    mapper = _PartMapper(shared, "encoder", 0)
    term = _encoder_risk_term(shared)
    out, cache = mapper.forward(xa)
    value, grad_out, grad_params = term(xa, out, cache)
    grad = mapper.backward(cache, grad_out) + grad_params
    assert value == pytest.approx(empirical_risk(shared.h1, shared.h2, xa))
    step = 1e-6
    fd = np.empty_like(shared.omega)
    for k in range(shared.omega.size):
        keep = shared.omega[k]
        shared.omega[k] = keep + step
        plus = empirical_risk(shared.h1, shared.h2, xa)
        shared.omega[k] = keep - step
        minus = empirical_risk(shared.h1, shared.h2, xa)
        shared.omega[k] = keep
        fd[k] = (plus - minus) / (2 * step)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)


def test_shared_pair_validates_block_sizes():
    with pytest.raises(ContractError):
        SharedEncoderPair(ARCH, 2, np.zeros(3), np.zeros(10), np.zeros(10))


def test_multi_target_risk_takes_the_nearest_target():
    assert multi_target_gt_risk(RotationMap(-math.pi / 4), PAIR, 256, 0) == 0.0
    assert multi_target_gt_risk(RotationMap(math.pi / 4), PAIR, 256, 0) == 0.0
    assert multi_target_gt_risk(RotationMap(math.pi), PAIR, 256, 0) > 1.0
    with pytest.raises(ContractError):
        multi_target_gt_risk(RotationMap(0.0), PAIR, 8, 0, targets=())


def test_alternating_training_is_deterministic_and_selects_a_feasible_epoch():
    cfg = FAST.replace(epsilon0=100.0)
    first = alg5_train(PAIR, ARCH, None, cfg)
    second = alg5_train(PAIR, ARCH, None, cfg)
    assert np.array_equal(first.h1.params, second.h1.params)
    assert len(first.reports) == cfg.epochs
    assert first.selected.feasible
    assert first.selected.bound_value == min(r.bound_value for r in first.reports)
    encoder_size = (2 * 6 + 6) + (6 * 6 + 6)
    assert np.array_equal(first.h1.params[:encoder_size], first.h2.params[:encoder_size])
    with pytest.raises(NoFeasibleEpochError):
        alg5_train(PAIR, ARCH, 2, FAST.replace(epsilon0=0.0))
