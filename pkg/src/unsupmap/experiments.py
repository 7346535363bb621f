"""Multi-run pipelines shared by the command line and the acceptance suite.

Each pipeline fans out over independent seeds or configurations, optionally
across worker processes, and returns plain rows that the writers below turn
into CSV.  Results are ordered by their inputs, never by completion time, so
the files do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from unsupmap.bounds import BoundReport, NoFeasibleEpochError, per_sample_bound, stopping_criterion
from unsupmap.distill import distill_train
from unsupmap.domains import DomainPair, get_pair, sample
from unsupmap.evalstats import LedgerRow, correlation_ledger, p_value, pearson_r
from unsupmap.nncore import Architecture
from unsupmap.training import TrainConfig, gt_risk, train_generator


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``[fn(item) for item in items]``, optionally on ``jobs`` worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_rows(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------- depth sweep


@dataclass(frozen=True)
class SweepRun:
    depth: int
    seed: int
    div: float
    gt_risk: float


def _sweep_one(args) -> SweepRun:
    pair_name, depth, seed, width, cfg = args
    pair = get_pair(pair_name)
    arch = Architecture.mlp(pair.dim_a, pair.dim_b, depth, width)
    run_cfg = cfg.replace(seed=seed)
    net, records = train_generator(pair, arch, run_cfg)
    return SweepRun(depth, seed, records[-1].div_h, gt_risk(net, pair, run_cfg))


def depth_sweep(pair_name: str, depths: Sequence[int], seeds: Sequence[int], cfg: TrainConfig, width: int = 16, jobs: int = 1) -> list[SweepRun]:
    """One trained generator per ``(depth, seed)``; final held-out divergence and risk."""
    tasks = [(pair_name, d, s, width, cfg) for d in depths for s in seeds]
    return parallel_map(_sweep_one, tasks, jobs)


def sweep_table(runs: Sequence[SweepRun]) -> list[tuple[int, float, float]]:
    """Per-depth medians ``(depth, div, gt_risk)`` in ascending depth order."""
    table = []
    for depth in sorted({r.depth for r in runs}):
        sel = [r for r in runs if r.depth == depth]
        table.append((depth, float(np.median([r.div for r in sel])), float(np.median([r.gt_risk for r in sel]))))
    return table


def simplicity_check(table: Sequence[tuple[int, float, float]], epsilon0: float, offset: int = 4) -> dict:
    """Compare the smallest depth with median divergence ``≤ ε₀`` against ``depth + offset``.

    ``holds`` requires both depths to be feasible and the shallower one to have
    strictly lower median ground-truth risk.
    """
    by_depth = {d: (div, gt) for d, div, gt in table}
    feasible = [d for d, div, _ in table if div <= epsilon0]
    if not feasible:
        return {"minimal_depth": None, "compare_depth": None, "holds": False}
    k = min(feasible)
    deeper = k + offset
    out = {"minimal_depth": k, "compare_depth": deeper, "div_minimal": by_depth[k][0], "gt_minimal": by_depth[k][1]}
    if deeper not in by_depth:
        out.update(holds=False)
        return out
    div_d, gt_d = by_depth[deeper]
    out.update(div_compare=div_d, gt_compare=gt_d, holds=bool(div_d <= epsilon0 and by_depth[k][1] < gt_d))
    return out


def write_sweep_csv(path, table) -> None:
    _write_rows(path, ["depth", "div", "gt_risk"], table)


def write_sweep_runs_csv(path, runs: Sequence[SweepRun]) -> None:
    _write_rows(path, ["depth", "seed", "div", "gt_risk"], [(r.depth, r.seed, r.div, r.gt_risk) for r in runs])


# ---------------------------------------------------------------- bound correlation


def _stop_one(args) -> list[BoundReport]:
    pair_name, depth, width, seed, cfg = args
    pair = get_pair(pair_name)
    arch = Architecture.mlp(pair.dim_a, pair.dim_b, depth, width)
    try:
        reports = stopping_criterion(pair, arch, cfg.replace(seed=seed)).reports
    except NoFeasibleEpochError as exc:
        reports = exc.reports
    for rep in reports:
        rep.signals["seed"] = float(seed)
    return reports


@dataclass
class CorrelationStudy:
    reports: list[BoundReport]
    feasible: list[BoundReport]
    ledger: list[LedgerRow]

    def row(self, signal: str) -> LedgerRow:
        return next(r for r in self.ledger if r.signal == signal)

    @property
    def bound_dominates(self) -> bool:
        bound = self.row("bound").r
        others = [r.r for r in self.ledger if r.signal != "bound" and r.r is not None]
        return bound is not None and all(bound > r for r in others)


COMPETING_SIGNALS = ("loss_gen", "loss_critic")


def bound_correlation(
    pair_name: str,
    depth: int,
    seeds: Sequence[int],
    cfg: TrainConfig,
    width: int = 16,
    n_perms: int = 9999,
    jobs: int = 1,
) -> CorrelationStudy:
    """Stopping-criterion runs over ``seeds`` with feasible checkpoints pooled.

    The bound series and the competing training signals of every feasible
    checkpoint are correlated with the checkpoint's ground-truth risk.
    """
    tasks = [(pair_name, depth, width, s, cfg) for s in seeds]
    reports = [rep for chunk in parallel_map(_stop_one, tasks, jobs) for rep in chunk]
    feasible = [rep for rep in reports if rep.feasible]
    ledger = []
    if len(feasible) >= 3:
        signals = {name: [rep.signals[name] for rep in feasible] for name in COMPETING_SIGNALS}
        ledger = correlation_ledger(feasible, signals, n_perms=n_perms, seed=cfg.seed)
    return CorrelationStudy(reports, feasible, ledger)


# ---------------------------------------------------------------- per-sample bound


@dataclass(frozen=True)
class ProbeResult:
    index: int
    point: tuple
    bound: float
    true_loss: float


def _probe_one(args) -> ProbeResult:
    pair_name, h1, index, point, cfg = args
    pair = get_pair(pair_name)
    res = per_sample_bound(h1, pair, np.asarray(point), cfg)
    return ProbeResult(index, tuple(float(v) for v in point), res["bound"], res["true_loss"])


@dataclass
class PerSampleStudy:
    h1_div: float
    h1_gt: float
    probes: list[ProbeResult] = field(default_factory=list)

    @property
    def r(self) -> float:
        return pearson_r([p.bound for p in self.probes], [p.true_loss for p in self.probes])

    @property
    def r2(self) -> float:
        return self.r**2

    def p(self, n_perms: int = 9999, seed: int = 0) -> float:
        return p_value([p.bound for p in self.probes], [p.true_loss for p in self.probes], n_perms, seed)


def per_sample_study(
    pair_name: str,
    depth: int,
    h1_cfg: TrainConfig,
    probe_cfg: TrainConfig,
    n_points: int = 30,
    point_seed: int = 4242,
    width: int = 16,
    jobs: int = 1,
) -> PerSampleStudy:
    """Per-sample bound against the true per-sample loss of one trained ``h1``."""
    pair = get_pair(pair_name)
    arch = Architecture.mlp(pair.dim_a, pair.dim_b, depth, width)
    h1, records = train_generator(pair, arch, h1_cfg)
    points = sample(pair, "A", n_points, point_seed)
    tasks = [(pair_name, h1, i, tuple(points[i]), probe_cfg) for i in range(n_points)]
    probes = parallel_map(_probe_one, tasks, jobs)
    return PerSampleStudy(records[-1].div_h, gt_risk(h1, pair, h1_cfg), probes)


def write_probes_csv(path, probes: Sequence[ProbeResult]) -> None:
    rows = [(p.index, *p.point, p.bound, p.true_loss) for p in probes]
    dims = len(probes[0].point) if probes else 0
    _write_rows(path, ["index", *[f"x{k + 1}" for k in range(dims)], "bound", "true_loss"], rows)


# ---------------------------------------------------------------- distillation


@dataclass(frozen=True)
class DistillRun:
    seed: int
    div_g: float
    div_h: float
    risk_h_g: float
    gt_risk_g: float
    gt_risk_h: float
    gt_risk_baseline: float
    div_baseline: float


def _distill_one(args) -> DistillRun:
    pair_name, k1, k2, width, seed, cfg = args
    pair = get_pair(pair_name)
    run_cfg = cfg.replace(seed=seed)
    res = distill_train(pair, k1, k2, run_cfg, width)
    arch = Architecture.mlp(pair.dim_a, pair.dim_b, k2, width)
    base, records = train_generator(pair, arch, run_cfg, role="h")
    return DistillRun(seed, res.div_g, res.div_h, res.risk_h_g, res.gt_risk_g, res.gt_risk_h, gt_risk(base, pair, run_cfg), records[-1].div_h)


def distill_study(pair_name: str, k1: int, k2: int, seeds: Sequence[int], cfg: TrainConfig, width: int = 16, jobs: int = 1) -> list[DistillRun]:
    """Distilled student next to the unregularized student-depth baseline, per seed."""
    return parallel_map(_distill_one, [(pair_name, k1, k2, width, s, cfg) for s in seeds], jobs)


def distill_summary(runs: Sequence[DistillRun]) -> dict:
    med = {name: float(np.median([getattr(r, name) for r in runs])) for name in DistillRun.__dataclass_fields__ if name != "seed"}
    med["student_fits_better"] = med["div_h"] <= med["div_g"]
    med["student_beats_baseline"] = med["gt_risk_h"] <= med["gt_risk_baseline"]
    return med


def write_distill_runs_csv(path, runs: Sequence[DistillRun]) -> None:
    names = list(DistillRun.__dataclass_fields__)
    _write_rows(path, names, [tuple(getattr(r, n) for n in names) for r in runs])


def finite_or_none(value) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)
