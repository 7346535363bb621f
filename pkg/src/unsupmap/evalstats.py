"""Correlation statistics for bound-versus-error studies.

Pearson correlation with a two-sided permutation p-value, the coefficient
of determination, and a ledger that ranks an estimated bound against
competing training signals.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from unsupmap.exceptions import ContractError

# Relative slack when comparing a permuted |r| with the observed |r|, so that
# permutations that reproduce the observed value up to rounding count as ties.
TIE_TOLERANCE = 1e-12


def _standardized(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"series {name!r} contains non-finite values")
    centered = arr - arr.mean()
    norm = math.sqrt(float(centered @ centered))
    if norm == 0.0 or norm <= 1e-15 * max(1.0, float(np.abs(arr).max())) * math.sqrt(arr.size):
        raise ContractError(f"series {name!r} has zero variance, correlation is undefined")
    return centered / norm


def _check_lengths(xs, ys) -> None:
    if len(xs) != len(ys):
        raise ContractError(f"series lengths differ: {len(xs)} and {len(ys)}")
    if len(xs) < 3:
        raise ContractError("correlation needs at least 3 points")


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    _check_lengths(xs, ys)
    r = float(_standardized(xs, "xs") @ _standardized(ys, "ys"))
    return max(-1.0, min(1.0, r))


def p_value(xs: Sequence[float], ys: Sequence[float], n_perms: int = 9999, seed: int = 0, chunk: int = 1024) -> float:
    """Two-sided permutation p-value ``(1 + #{|r_π| ≥ |r|}) / (n_perms + 1)``."""
    _check_lengths(xs, ys)
    if n_perms < 99:
        raise ContractError("n_perms must be at least 99")
    zx = _standardized(xs, "xs")
    zy = _standardized(ys, "ys")
    observed = abs(float(zx @ zy))
    threshold = observed - TIE_TOLERANCE * max(1.0, observed)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    n = zy.size
    while done < n_perms:
        size = min(chunk, n_perms - done)
        perms = np.argsort(rng.random((size, n)), axis=1)
        hits += int(np.count_nonzero(np.abs(zy[perms] @ zx) >= threshold))
        done += size
    return (hits + 1) / (n_perms + 1)


def r_squared(xs: Sequence[float], ys: Sequence[float]) -> float:
    r = pearson_r(xs, ys)
    return r * r


@dataclass
class LedgerRow:
    signal: str
    r: float | None
    p: float | None
    n: int
    is_bound: bool = False
    note: str = ""


def correlation_ledger(
    reports,
    competing_signals: Mapping[str, Sequence[float]],
    target: Sequence[float] | None = None,
    n_perms: int = 9999,
    seed: int = 0,
) -> list[LedgerRow]:
    """Correlate the bound and each competing signal with the ground-truth risk.

    ``reports`` is a list of :class:`~unsupmap.bounds.BoundReport` (their
    ``bound_value`` forms the bound series and their ``gt_risk`` the target
    unless ``target`` is given).  Signals with zero variance are listed with
    the note ``"zero variance"`` and no statistics.
    """
    bound = [rep.bound_value for rep in reports]
    if target is None:
        target = [rep.gt_risk for rep in reports]
    if any(value is None for value in target):
        raise ContractError("reports lack ground-truth risk values")
    series = {"bound": bound, **dict(competing_signals)}
    for name, values in series.items():
        if len(values) != len(target):
            raise ContractError(f"series {name!r} has {len(values)} entries but the target has {len(target)}")
    _standardized(target, "gt_risk")
    rows = []
    for name, values in series.items():
        try:
            r = pearson_r(values, target)
        except ContractError as exc:
            if "zero variance" not in str(exc):
                raise
            rows.append(LedgerRow(name, None, None, len(values), name == "bound", "zero variance"))
            continue
        rows.append(LedgerRow(name, r, p_value(values, target, n_perms, seed), len(values), name == "bound"))
    return rows


LEDGER_HEADER = ["signal", "r", "p", "n"]


def write_ledger_csv(path, rows: Sequence[LedgerRow]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LEDGER_HEADER)
        for row in rows:
            if row.r is None:
                writer.writerow([row.signal, "", "", row.n])
            else:
                writer.writerow([row.signal, repr(row.r), repr(row.p), row.n])


def write_scatter_csv(path, xs: Sequence[float], ys: Sequence[float]) -> None:
    if len(xs) != len(ys):
        raise ContractError("scatter series differ in length")
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y"])
        for x, y in zip(xs, ys):
            writer.writerow([repr(float(x)), repr(float(y))])
