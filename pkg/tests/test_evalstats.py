import csv

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats

from unsupmap.bounds import BoundReport
from unsupmap.evalstats import (
    LEDGER_HEADER,
    correlation_ledger,
    p_value,
    pearson_r,
    r_squared,
    write_ledger_csv,
    write_scatter_csv,
)
from unsupmap.exceptions import ContractError

series = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30)


def paired(draw_series):
    return draw_series.flatmap(lambda xs: st.tuples(st.just(xs), st.lists(st.floats(-100, 100, allow_nan=False), min_size=len(xs), max_size=len(xs))))


def varied(xs):
    return np.std(xs) > 1e-6 * max(1.0, np.max(np.abs(xs)))


def test_hand_example():
    assert pearson_r([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    assert r_squared([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.64)


@given(paired(series))
def test_pearson_matches_scipy(pair):
    xs, ys = pair
    assume(varied(xs) and varied(ys))
    assert pearson_r(xs, ys) == pytest.approx(stats.pearsonr(xs, ys)[0], abs=1e-9)


@given(paired(series), st.floats(0.1, 10), st.floats(-50, 50), st.floats(0.1, 10), st.floats(-50, 50))
def test_pearson_is_invariant_under_positive_affine_maps(pair, a, b, c, d):
    xs, ys = (np.array(v) for v in pair)
    assume(varied(xs) and varied(ys))
    r = pearson_r(xs, ys)
    assert pearson_r(a * xs + b, c * ys + d) == pytest.approx(r, abs=1e-7)
    assert pearson_r(-a * xs + b, ys) == pytest.approx(-r, abs=1e-7)
    assert pearson_r(ys, xs) == pytest.approx(r, abs=1e-12)
    assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12


def test_zero_variance_and_length_mismatch_raise():
    with pytest.raises(ContractError, match="zero variance"):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(ContractError):
        pearson_r([1, 2], [1, 2, 3])


def test_p_value_floor_and_determinism():
    xs = np.arange(20.0)
    assert p_value(xs, 2 * xs + 1, n_perms=999) == pytest.approx(1 / 1000)
    assert p_value(xs, np.sin(xs), 999, seed=3) == p_value(xs, np.sin(xs), 999, seed=3)
    with pytest.raises(ContractError):
        p_value(xs, xs, n_perms=10)


def test_p_value_is_calibrated_under_the_null():
    rng = np.random.default_rng(0)
    ps = [p_value(rng.normal(size=15), rng.normal(size=15), n_perms=199, seed=k) for k in range(200)]
    rejected = np.mean(np.array(ps) <= 0.05)
    assert 0.01 <= rejected <= 0.10


def test_p_value_agrees_with_the_t_test_on_moderate_samples():
    rng = np.random.default_rng(1)
    xs = rng.normal(size=40)
    ys = 0.3 * xs + rng.normal(size=40)
    assert p_value(xs, ys, n_perms=9999) == pytest.approx(stats.pearsonr(xs, ys)[1], abs=0.01)


def _reports(bounds, gts):
    return [BoundReport.risk_only(i, b, 0.1, 0.1, g, 0.2) for i, (b, g) in enumerate(zip(bounds, gts))]


def test_ledger_lists_bound_first_and_flags_constant_signals(tmp_path):
    gts = [0.5, 0.4, 0.3, 0.2, 0.1]
    reports = _reports([5, 4, 3, 2, 1], gts)
    rows = correlation_ledger(reports, {"loss_gen": [1, 1, 1, 1, 1], "loss_critic": [1, 3, 2, 5, 4]}, n_perms=99)
    assert [r.signal for r in rows] == ["bound", "loss_gen", "loss_critic"]
    assert rows[0].is_bound and rows[0].r == pytest.approx(1.0)
    assert rows[1].note == "zero variance" and rows[1].r is None
    write_ledger_csv(tmp_path / "ledger.csv", rows)
    with open(tmp_path / "ledger.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == LEDGER_HEADER
    assert table[2] == ["loss_gen", "", "", "5"]


def test_ledger_names_a_misaligned_series():
    reports = _reports([1, 2, 3], [1, 2, 4])
    with pytest.raises(ContractError, match="loss_gen"):
        correlation_ledger(reports, {"loss_gen": [1, 2]}, n_perms=99)


def test_scatter_csv(tmp_path):
    write_scatter_csv(tmp_path / "s.csv", [1.0, 2.0], [3.0, 4.0])
    assert (tmp_path / "s.csv").read_text() == "x,y\n1.0,3.0\n2.0,4.0\n"
    with pytest.raises(ContractError):
        write_scatter_csv(tmp_path / "t.csv", [1.0], [1.0, 2.0])
