"""Bound estimation and numeric checks of the risk inequalities.

Two kinds of routines live here.  The estimators (:func:`stopping_criterion`,
:func:`thm1_surrogate`, :func:`per_sample_bound`) train or evaluate an
adversarial pair of hypotheses and report the estimable risk bound next to
the ground-truth risk.  The verifiers enumerate finite hypothesis families or
closed-form affine settings and check the inequalities directly.

All inequality checks use the L2-squared loss, which obeys only the relaxed
triangle inequality ``ℓ(a,c) ≤ 3(ℓ(a,b) + ℓ(b,c))``; hence the constants 3
and 6.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from unsupmap.domains import AffineMap, DomainPair, GaussianMixture, RotationMap, TargetMap, sample
from unsupmap.exceptions import ContractError, NoFeasibleEpochError
from unsupmap.nncore import Architecture, MlpNetwork, forward
from unsupmap.training import (
    AdversaryTrainer,
    choose_restart,
    EvalSet,
    NetMapper,
    TrainConfig,
    WganTrainer,
    empirical_risk,
    init_generator,
    train_per_sample_adversary,
    trainer_stream,
)
from unsupmap.transport import exact_w1, ipm_quadratic, quadratic_critic_gap

# Relative slack for inequalities that hold exactly on a shared sample and can
# only be violated by floating-point rounding.
ROUNDING_SLACK = 1e-9


# ---------------------------------------------------------------- reports


@dataclass
class BoundReport:
    epoch: int
    pair_risk: float
    div_h1: float
    div_h2: float
    bound_value: float
    feasible: bool
    gt_risk: float
    signals: dict = field(default_factory=dict)

    @classmethod
    def risk_only(cls, epoch, pair_risk, div_h1, div_h2, gt_risk, epsilon0, signals=None) -> "BoundReport":
        """Report whose bound is the pair risk alone; ``ε₀`` is a constant offset left out."""
        feasible = div_h1 <= epsilon0 and div_h2 <= epsilon0
        return cls(epoch, pair_risk, div_h1, div_h2, pair_risk, feasible, gt_risk, dict(signals or {}))

    @classmethod
    def surrogate(cls, epoch, pair_risk, div_h1, div_h2, gt_risk, epsilon0, signals=None) -> "BoundReport":
        """Report whose bound is pair risk plus the divergence of ``h1``."""
        feasible = div_h1 <= epsilon0 and div_h2 <= epsilon0
        return cls(epoch, pair_risk, div_h1, div_h2, pair_risk + div_h1, feasible, gt_risk, dict(signals or {}))


REPORT_HEADER = ["epoch", "pair_risk", "div_h1", "div_h2", "bound", "feasible", "gt_risk"]


def report_row(rep: BoundReport) -> list[str]:
    return [
        str(rep.epoch),
        repr(float(rep.pair_risk)),
        repr(float(rep.div_h1)),
        repr(float(rep.div_h2)),
        repr(float(rep.bound_value)),
        "1" if rep.feasible else "0",
        repr(float(rep.gt_risk)),
    ]


def write_reports_csv(path, reports: Sequence[BoundReport], extra_columns: Sequence[str] = ()) -> None:
    """Write reports with the standard header plus optional signal columns."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER + list(extra_columns))
        for rep in reports:
            writer.writerow(report_row(rep) + [repr(float(rep.signals[c])) for c in extra_columns])


def read_reports_csv(path) -> list[BoundReport]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        signals = {k: float(v) for k, v in row.items() if k not in REPORT_HEADER}
        out.append(
            BoundReport(
                int(row["epoch"]),
                float(row["pair_risk"]),
                float(row["div_h1"]),
                float(row["div_h2"]),
                float(row["bound"]),
                row["feasible"] == "1",
                float(row["gt_risk"]),
                signals,
            )
        )
    return out


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------- selection


def select_epoch(reports: Sequence[BoundReport], epsilon0: float | None = None) -> BoundReport:
    """The feasible report with the smallest bound; earliest epoch wins ties.

    With ``epsilon0`` given, feasibility is recomputed from the divergences;
    otherwise each report's own flag is used.
    """

    def feasible(rep):
        if epsilon0 is None:
            return rep.feasible
        return rep.div_h1 <= epsilon0 and rep.div_h2 <= epsilon0

    candidates = [rep for rep in reports if feasible(rep)]
    if not candidates:
        raise NoFeasibleEpochError(
            f"none of {len(reports)} checkpoints has both divergences within the threshold", reports
        )
    return min(candidates, key=lambda rep: (rep.bound_value, rep.epoch))


@dataclass
class StoppingResult:
    h1: MlpNetwork
    h2: MlpNetwork
    selected: BoundReport
    reports: list[BoundReport]


def stopping_criterion(
    pair: DomainPair,
    arch: Architecture,
    cfg: TrainConfig,
    h1_init: MlpNetwork | None = None,
    h2_init: MlpNetwork | None = None,
) -> StoppingResult:
    """Decide when to stop training ``h1`` by the adversarial pair risk.

    For ``t = 1..cfg.epochs``: one WGAN epoch on ``h1``, then ``cfg.t2``
    epochs of the adversary ``h2`` on ``W(h2) − λ·R[h1, h2]``.  Both networks
    persist across ``t``.  With ``cfg.adversaries > 1`` several independent
    adversaries run side by side and each epoch reports the feasible one with
    the largest pair risk, a better estimate of the supremum over ``h2``.  The returned ``h1`` is the snapshot minimizing the
    held-out pair risk among epochs where both held-out divergences are at
    most ``ε₀``.  Competing signals (generator and critic losses of ``h1``)
    are recorded in each report for correlation analysis.

    Without explicit initializations and with ``cfg.restarts > 1``, ``h1``
    replays the restart that plain WGAN training ranks best by held-out
    divergence, and the first adversary starts from the same initial
    parameters.  Further adversaries start from fresh seeded draws.
    """
    evalset = EvalSet.for_pair(pair, cfg)
    restart = 0
    if h1_init is None:
        restart = choose_restart(pair, arch, cfg, "h1")
        h1_init = init_generator(arch, cfg.seed, "h1", restart)
        if h2_init is None and cfg.restarts > 1:
            h2_init = h1_init
    h1 = h1_init.copy()
    trainer = WganTrainer(pair, NetMapper(h1), cfg, trainer_stream("h1", restart))
    h1_ref = trainer.averaged_network(arch)
    adversaries = []
    for k in range(cfg.adversaries):
        if k == 0 and h2_init is not None:
            start = h2_init.copy()
        else:
            start = init_generator(arch, cfg.seed, "h2", k)
        adversaries.append(AdversaryTrainer(h1_ref, pair, arch, cfg, "h2", h2=start, stream=trainer_stream("h2", k)))
    reports: list[BoundReport] = []
    snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for t in range(1, cfg.epochs + 1):
        stats = trainer.run_epoch()
        h1_ref.set_params(trainer.average)
        candidates = []
        for adversary in adversaries:
            h2 = adversary.train(cfg.t2)
            div = evalset.divergence(h2)
            candidates.append((div <= cfg.epsilon0, empirical_risk(h1_ref, h2, evalset.xa_gt), -div, h2))
        # The bound is a supremum over feasible h2: keep the feasible adversary
        # farthest from h1, or the least infeasible one when none qualifies.
        feasible_h2, risk, neg_div, h2 = max(candidates, key=lambda c: (c[0], c[1] if c[0] else c[2]))
        rep = BoundReport.risk_only(
            t,
            risk,
            evalset.divergence(h1_ref),
            -neg_div,
            _gt(h1_ref, pair, evalset),
            cfg.epsilon0,
            {"loss_gen": stats["loss_gen"], "loss_critic": stats["loss_critic"]},
        )
        reports.append(rep)
        if rep.feasible:
            snapshots[t] = (h1_ref.params.copy(), h2.params.copy())
    chosen = select_epoch(reports)
    p1, p2 = snapshots[chosen.epoch]
    return StoppingResult(MlpNetwork(arch, p1), MlpNetwork(arch, p2), chosen, reports)


def _gt(h, pair: DomainPair, evalset: EvalSet) -> float:
    diff = forward(h, evalset.xa_gt) - pair.y(evalset.xa_gt)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def thm1_surrogate(h1: MlpNetwork, h2: MlpNetwork, pair: DomainPair, n_div: int = 256, seed: int = 7919, n_risk: int = 1024, epsilon0: float = 0.2, epoch: int = 0) -> BoundReport:
    """Pair risk on a held-out source sample plus the held-out divergence of ``h1``."""
    cfg = TrainConfig(n_div=n_div, n_gt=n_risk, eval_seed=seed, epsilon0=epsilon0)
    evalset = EvalSet.for_pair(pair, cfg)
    return BoundReport.surrogate(
        epoch,
        empirical_risk(h1, h2, evalset.xa_gt),
        evalset.divergence(h1),
        evalset.divergence(h2),
        _gt(h1, pair, evalset),
        epsilon0,
    )


def per_sample_bound(h1: MlpNetwork, pair: DomainPair, x, cfg: TrainConfig, init: MlpNetwork | None = None) -> dict:
    """Train a per-sample adversary at ``x`` and return ``ℓ(h1(x), h2(x))``."""
    x = np.asarray(x, dtype=float)
    h2 = train_per_sample_adversary(h1, pair, x, h1.arch, cfg, init=init)
    diff = forward(h1, x) - forward(h2, x)
    true_diff = forward(h1, x) - pair.y(x)
    return {
        "bound": float(diff @ diff),
        "true_loss": float(true_diff @ true_diff),
        "h2": h2,
    }


# ---------------------------------------------------------------- grid families


@dataclass
class GridHypothesisFamily:
    """A finite parametric family evaluated on fixed samples.

    ``members[i]`` maps a batch of source points to target points.  The
    divergence of each member is the exact 1-Wasserstein distance between its
    image of a held-out source sample and a target sample (``n_div`` points
    each); risks are empirical over a separate shared source sample.
    """

    name: str
    labels: list
    members: list[Callable[[np.ndarray], np.ndarray]]

    @classmethod
    def rotations(cls, step_degrees: float = 1.0, dim: int = 2) -> "GridHypothesisFamily":
        angles = np.arange(0.0, 360.0, step_degrees)
        return cls(
            f"rotation(step={step_degrees}deg)",
            [float(a) for a in angles],
            [RotationMap(math.radians(a), dim) for a in angles],
        )

    @classmethod
    def rotations_after(cls, y: TargetMap, step_degrees: float = 1.0) -> "GridHypothesisFamily":
        """``rot(θ)∘y``: a grid through the target map even when it is nonlinear."""
        angles = np.arange(0.0, 360.0, step_degrees)

        def member(a):
            rot = RotationMap(math.radians(a), y.dim)
            return lambda x: rot(y(x))

        return cls(f"rotation-after-target(step={step_degrees}deg)", [float(a) for a in angles], [member(a) for a in angles])

    @classmethod
    def affine_grid(cls, angles_deg: Sequence[float], scales: Sequence[float], dim: int = 2) -> "GridHypothesisFamily":
        """Scaled rotations ``s·rot(θ)`` over a product grid."""
        labels, members = [], []
        for a in angles_deg:
            for s in scales:
                labels.append((float(a), float(s)))
                members.append(AffineMap(s * RotationMap(math.radians(a), dim).matrix))
        return cls("scaled-rotation", labels, members)

    def evaluate(self, pair: DomainPair, n_div: int = 256, n_risk: int = 512, seed: int = 0) -> "EvaluatedFamily":
        xa_div = sample(pair, "A", n_div, seed)
        xb_div = sample(pair, "B", n_div, seed)
        xa_risk = sample(pair, "A", n_risk, seed + 1)
        divs = np.array([exact_w1(np.asarray(m(xa_div)), xb_div).value for m in self.members])
        outputs = np.stack([np.asarray(m(xa_risk), dtype=float) for m in self.members])
        return EvaluatedFamily(self, pair, xa_risk, divs, outputs, pair.y(xa_risk))


@dataclass
class EvaluatedFamily:
    family: GridHypothesisFamily
    pair: DomainPair
    xa_risk: np.ndarray
    divergences: np.ndarray
    outputs: np.ndarray  # (members, n, d)
    target_outputs: np.ndarray  # (n, d)

    def members_within(self, epsilon0: float) -> np.ndarray:
        """Indices of the members whose divergence is at most ``epsilon0``."""
        return np.flatnonzero(self.divergences <= epsilon0)

    def pair_risks(self, idx: np.ndarray, point: int | None = None) -> np.ndarray:
        """Matrix of ``R[h_i, h_j]`` over ``idx`` (or ``ℓ`` at one sample row)."""
        out = self.outputs[idx]
        if point is not None:
            out = out[:, point : point + 1]
        diff = out[:, None, :, :] - out[None, :, :, :]
        return np.mean(np.sum(diff * diff, axis=-1), axis=-1)

    def target_risks(self, idx: np.ndarray, point: int | None = None) -> np.ndarray:
        out = self.outputs[idx]
        tgt = self.target_outputs
        if point is not None:
            out = out[:, point : point + 1]
            tgt = tgt[point : point + 1]
        diff = out - tgt[None]
        return np.mean(np.sum(diff * diff, axis=-1), axis=-1)


@dataclass
class GridCheck:
    holds: bool
    vacuous: bool
    n_members: int
    violations: int
    worst_margin: float
    witnesses: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _relaxed_check(lhs: np.ndarray, rhs: np.ndarray) -> tuple[int, float]:
    slack = ROUNDING_SLACK * (1.0 + np.abs(rhs))
    margins = rhs + slack - lhs
    return int(np.sum(margins < 0)), float(np.min(margins))


def _grid_checks(pair_r: np.ndarray, target_r: np.ndarray, labels, idx) -> GridCheck:
    if len(idx) == 0:
        return GridCheck(True, True, 0, 0, math.inf, {"reason": "no member within the threshold"})
    rhs_point = 3.0 * pair_r.max(axis=1) + 3.0 * target_r.min()
    bad_point, margin_point = _relaxed_check(target_r, rhs_point)
    diameter = float(pair_r.max())
    rhs_diam = 6.0 * float(target_r.max())
    bad_diam, margin_diam = _relaxed_check(np.array([diameter]), np.array([rhs_diam]))
    worst = int(np.argmin(rhs_point - target_r))
    return GridCheck(
        bad_point + bad_diam == 0,
        False,
        len(idx),
        bad_point + bad_diam,
        min(margin_point, margin_diam),
        {
            "tightest_member": labels[int(idx[worst])],
            "tightest_lhs": float(target_r[worst]),
            "tightest_rhs": float(rhs_point[worst]),
            "diameter": diameter,
            "diameter_rhs": rhs_diam,
            "min_target_risk": float(target_r.min()),
            "max_target_risk": float(target_r.max()),
        },
    )


def verify_lemma1_grid(evaluated: EvaluatedFamily, epsilon0: float) -> GridCheck:
    """Check ``R[h1,y] ≤ 3·max_P R[h1,h2] + 3·min_P R[h,y]`` for every ``h1`` in
    ``P`` and the diameter bound ``max_P R[h1,h2] ≤ 6·max_P R[h,y]``."""
    idx = evaluated.members_within(epsilon0)
    if len(idx) == 0:
        return _grid_checks(None, None, evaluated.family.labels, idx)
    return _grid_checks(evaluated.pair_risks(idx), evaluated.target_risks(idx), evaluated.family.labels, idx)


def verify_per_sample_lemma_grid(evaluated: EvaluatedFamily, point: int, epsilon0: float) -> GridCheck:
    """The same two checks for the loss at the single source point ``xa_risk[point]``."""
    idx = evaluated.members_within(epsilon0)
    if len(idx) == 0:
        return _grid_checks(None, None, evaluated.family.labels, idx)
    return _grid_checks(
        evaluated.pair_risks(idx, point), evaluated.target_risks(idx, point), evaluated.family.labels, idx
    )


def nesting_holds(evaluated: EvaluatedFamily, thresholds: Sequence[float]) -> bool:
    """``P_ε ⊆ P_ε'`` for consecutive thresholds, with monotone diameter and minimum divergence."""
    thresholds = sorted(thresholds)
    prev_set: set = set()
    prev_diam = -math.inf
    for eps in thresholds:
        idx = evaluated.members_within(eps)
        current = set(idx.tolist())
        if not prev_set <= current:
            return False
        diam = float(evaluated.pair_risks(idx).max()) if len(idx) else -math.inf
        if diam < prev_diam:
            return False
        prev_set, prev_diam = current, diam
    return True


# ---------------------------------------------------------------- closed-form affine checks


def _support_sup(delta: Callable[[np.ndarray], np.ndarray], sampler, samples: np.ndarray, resolution: int = 8192, seed: int = 0) -> float:
    """Largest ``‖delta(u)‖`` over the sampler's support.

    ``delta`` is affine, so its norm is convex and peaks on the boundary of
    each convex support piece.  For a truncated Gaussian mixture the pieces
    are the truncation ellipsoids; otherwise the support ball is used.  The
    boundary is probed on a dense grid (a circle in 2-D, random directions
    otherwise) and the result is never below the largest sampled value.
    """
    dim = samples.shape[1]
    if dim == 2:
        theta = np.linspace(0.0, 2 * math.pi, resolution, endpoint=False)
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        dirs = np.random.default_rng(seed).standard_normal((resolution, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if isinstance(sampler, GaussianMixture):
        pieces = [mean + sampler.truncation * dirs @ chol.T for mean, chol in zip(sampler.means, sampler._chols)]
    else:
        pieces = [sampler.support_radius * dirs]
    boundary = np.vstack(pieces)
    best = float(np.max(np.linalg.norm(delta(boundary), axis=1)))
    return max(best, float(np.max(np.linalg.norm(delta(samples), axis=1))))


@dataclass
class IpmBoundCheck:
    lhs: float
    rhs: float
    holds: bool
    rho: float
    beta: float
    sup_gap: float
    gradient_mismatch: float

    def to_dict(self) -> dict:
        return asdict(self)


def verify_ipm_bound_affine(
    h: AffineMap,
    y: AffineMap,
    m: np.ndarray,
    b: np.ndarray,
    pair: DomainPair,
    n: int = 4096,
    seed: int = 0,
    beta_cap: float | None = None,
    b_cap: float | None = None,
) -> IpmBoundCheck:
    """Check the risk bound through a smooth critic for affine ``h`` and ``y``.

    With ``d(z) = ½zᵀMz + bᵀz`` and ``β(d) = ‖M‖₂ < 2`` the inequality reads::

        R[h,y] ≤ 2ρ/(2−β) + 2·sup‖h−y‖/(2−β) · sqrt(E_B‖∇d(z) − (h∘y⁻¹(z) − z)‖²)

    where ``ρ`` is the integral probability metric between ``h∘D_A`` and
    ``D_B`` over the quadratic class with caps ``beta_cap`` (default ``β``)
    and ``b_cap`` (default ten times the support radius).  Every expectation
    uses one shared source sample ``x``, with ``z = y(x)`` as the target
    sample, and the supremum runs over the truncated source support.
    """
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    m = 0.5 * (m + m.T)
    beta = float(np.linalg.norm(m, 2))
    if not beta < 2.0:
        raise ContractError(f"the critic's curvature bound must be below 2, got {beta}")
    beta_cap = beta if beta_cap is None else float(beta_cap)
    b_cap = 10.0 * pair.support_radius if b_cap is None else float(b_cap)
    if beta > beta_cap + 1e-12 or np.linalg.norm(b) > b_cap + 1e-12:
        raise ContractError("the critic lies outside the quadratic class defined by the caps")
    x = sample(pair, "A", n, seed)
    hx, yx = h(x), y(x)
    gap = hx - yx
    lhs = float(np.mean(np.sum(gap * gap, axis=1)))
    rho, _, _ = ipm_quadratic(hx, yx, beta_cap, b_cap)
    # ∇d(z) − (h(y⁻¹ z) − z) at z = y(x) is M·y(x) + b − (h(x) − y(x)).
    mismatch = yx @ m.T + b - gap
    grad_term = float(np.mean(np.sum(mismatch * mismatch, axis=1)))
    sup_gap = _support_sup(lambda u: h(u) - y(u), pair.sampler_a, x)
    rhs = 2.0 * rho / (2.0 - beta) + 2.0 * sup_gap / (2.0 - beta) * math.sqrt(grad_term)
    return IpmBoundCheck(lhs, rhs, lhs <= rhs + 1e-6, float(rho), beta, sup_gap, grad_term)


def random_affine_ipm_trials(pair: DomainPair, trials: int = 100, seed: int = 0, n: int = 4096) -> list[IpmBoundCheck]:
    """Random affine ``h``, invertible affine ``y`` and quadratic critics with ``β < 2``."""
    rng = np.random.default_rng(seed)
    dim = pair.dim_a
    out = []
    for t in range(trials):
        y_mat = rng.normal(size=(dim, dim))
        while abs(np.linalg.det(y_mat)) < 0.1:
            y_mat = rng.normal(size=(dim, dim))
        y = AffineMap(y_mat, rng.normal(scale=0.5, size=dim))
        h = AffineMap(y_mat + rng.normal(scale=0.3, size=(dim, dim)), y.offset + rng.normal(scale=0.5, size=dim))
        raw = rng.normal(size=(dim, dim))
        raw = 0.5 * (raw + raw.T)
        m = raw * rng.uniform(0.0, 1.95) / max(np.linalg.norm(raw, 2), 1e-12)
        b = rng.normal(size=dim)
        # The tightest quadratic class that still contains d keeps the check sharp.
        out.append(verify_ipm_bound_affine(h, y, m, b, pair, n=n, seed=seed + t, b_cap=float(np.linalg.norm(b))))
    return out


def quadratic_gap_matches(h: AffineMap, y: AffineMap, m: np.ndarray, b: np.ndarray, pair: DomainPair, n: int = 4096, seed: int = 0) -> tuple[float, float]:
    """``E[d(h(x)) − d(y(x))]`` for one critic next to the class supremum it must not exceed."""
    x = sample(pair, "A", n, seed)
    beta = float(np.linalg.norm(0.5 * (m + m.T), 2))
    value = quadratic_critic_gap(h(x), y(x), m, b)
    rho, _, _ = ipm_quadratic(h(x), y(x), beta, max(float(np.linalg.norm(b)), 0.0))
    return value, float(rho)


@dataclass
class LipschitzCheck:
    premise: bool
    conclusion: bool
    implication_holds: bool
    premise_lhs: float
    premise_rhs: float
    conclusion_value: float

    def to_dict(self) -> dict:
        return asdict(self)


def verify_lipschitz_lemma(h: AffineMap, y: AffineMap) -> LipschitzCheck:
    """For affine maps: ``‖J_h − J_y‖ ≤ 1/‖J_y⁻¹‖`` implies ``‖J_h J_y⁻¹ − I‖ ≤ 1``."""
    jh, jy = np.asarray(h.matrix, dtype=float), np.asarray(y.matrix, dtype=float)
    if jh.shape != jy.shape:
        raise ContractError("the two maps have different Jacobian shapes")
    if np.linalg.cond(jy) > 1e12:
        raise ContractError("the target Jacobian is singular")
    jy_inv = np.linalg.inv(jy)
    premise_lhs = float(np.linalg.norm(jh - jy, 2))
    premise_rhs = 1.0 / float(np.linalg.norm(jy_inv, 2))
    conclusion_value = float(np.linalg.norm(jh @ jy_inv - np.eye(jh.shape[0]), 2))
    premise = premise_lhs <= premise_rhs
    conclusion = conclusion_value <= 1.0 + ROUNDING_SLACK
    return LipschitzCheck(premise, conclusion, (not premise) or conclusion, premise_lhs, premise_rhs, conclusion_value)


def random_lipschitz_trials(trials: int = 500, dim: int = 2, seed: int = 0) -> list[LipschitzCheck]:
    """Random invertible ``y`` with perturbations ``h`` that satisfy the premise."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        jy = rng.normal(size=(dim, dim))
        while np.linalg.cond(jy) > 1e3:
            jy = rng.normal(size=(dim, dim))
        allowed = 1.0 / np.linalg.norm(np.linalg.inv(jy), 2)
        pert = rng.normal(size=(dim, dim))
        pert *= rng.uniform(0.0, 1.0) * allowed / np.linalg.norm(pert, 2)
        out.append(verify_lipschitz_lemma(AffineMap(jy + pert), AffineMap(jy)))
    return out


# ---------------------------------------------------------------- suite


def default_families(pair: DomainPair) -> list[GridHypothesisFamily]:
    """Grid families that pass through the target map of ``pair``."""
    families = [GridHypothesisFamily.rotations_after(pair.y, 1.0)]
    if isinstance(pair.y, AffineMap):
        families.append(GridHypothesisFamily.rotations(1.0, pair.dim_a))
        families.append(GridHypothesisFamily.affine_grid(np.arange(0.0, 360.0, 5.0), [0.8, 0.9, 1.0, 1.1, 1.2], pair.dim_a))
    return families


def verification_suite(pairs: Sequence[DomainPair], epsilon0: float = 0.2, ipm_trials: int = 100, lipschitz_trials: int = 500, probe_points: int = 5, seed: int = 0) -> dict:
    """Run every inequality check; ``result["passed"]`` is true iff none is violated."""
    results: dict = {"pairs": {}}
    passed = True
    for pair in pairs:
        entry = {"families": {}}
        for family in default_families(pair):
            evaluated = family.evaluate(pair, seed=seed)
            fam = {"lemma1": verify_lemma1_grid(evaluated, epsilon0).to_dict()}
            fam["per_sample"] = [
                verify_per_sample_lemma_grid(evaluated, p, epsilon0).to_dict() for p in range(probe_points)
            ]
            fam["nesting"] = nesting_holds(evaluated, [0.05, 0.1, epsilon0, 0.5, 1.0])
            ok = fam["lemma1"]["holds"] and all(c["holds"] for c in fam["per_sample"]) and fam["nesting"]
            fam["passed"] = ok
            passed &= ok
            entry["families"][family.name] = fam
        if isinstance(pair.sampler_a, GaussianMixture):
            ipm = random_affine_ipm_trials(pair, ipm_trials, seed)
            entry["ipm_bound"] = {
                "trials": len(ipm),
                "violations": sum(not c.holds for c in ipm),
                "min_margin": min(c.rhs - c.lhs for c in ipm),
            }
            passed &= entry["ipm_bound"]["violations"] == 0
        results["pairs"][pair.name] = entry
    lip = random_lipschitz_trials(lipschitz_trials, seed=seed)
    results["lipschitz"] = {
        "trials": len(lip),
        "premise_true": sum(c.premise for c in lip),
        "violations": sum(not c.implication_holds for c in lip),
    }
    passed &= results["lipschitz"]["violations"] == 0
    results["passed"] = bool(passed)
    return results
