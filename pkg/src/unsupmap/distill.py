"""Complexity-regularized alignment by distillation.

A shallow teacher ``g`` of the smallest depth that already matches the target
distribution fixes the alignment.  A deeper student ``h`` is then trained on
``W(h∘D_A, D_B) + λ·R[h, g]``: the divergence term lets it fit the target
more sharply than the teacher can, and the risk term keeps it close to the
teacher's alignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from unsupmap.domains import DomainPair
from unsupmap.exceptions import ContractError, NoMinimalDepthError
from unsupmap.nncore import Architecture, MlpNetwork, forward
from unsupmap.training import (
    EvalSet,
    NetMapper,
    TrainConfig,
    WganTrainer,
    empirical_risk,
    init_generator,
    pair_risk_term,
    train_generator,
    trainer_stream,
)

LIBERAL_FACTOR = 1.5
DEPTH_BUDGET = 150


def find_minimal_complexity(
    pair: DomainPair,
    depth_range: Sequence[int],
    cfg: TrainConfig,
    width: int = 16,
    budget: int = DEPTH_BUDGET,
    threshold: float | None = None,
) -> int:
    """Smallest depth whose generator reaches a held-out divergence ``≤ threshold``.

    Each depth gets the same epoch budget.  The threshold defaults to
    ``1.5·ε₀``, a deliberately liberal cut so that a depth that is merely slow
    to converge within the budget still counts as sufficient.
    """
    depths = list(depth_range)
    if not depths or depths != sorted(depths):
        raise ContractError("depth_range must be nonempty and ascending")
    threshold = LIBERAL_FACTOR * cfg.epsilon0 if threshold is None else threshold
    probe_cfg = cfg.replace(epochs=budget)
    table: dict[int, float] = {}
    for depth in depths:
        arch = Architecture.mlp(pair.dim_a, pair.dim_b, depth, width)
        _, records = train_generator(pair, arch, probe_cfg, role="g")
        table[depth] = records[-1].div_h
        if records[-1].div_h <= threshold:
            return depth
    raise NoMinimalDepthError(f"no depth in {depths} reached divergence {threshold!r}", table)


@dataclass
class DistillResult:
    teacher: MlpNetwork
    student: MlpNetwork
    k1: int
    k2: int
    lam: float
    div_g: float
    div_h: float
    risk_h_g: float
    gt_risk_g: float
    gt_risk_h: float

    def to_dict(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "lambda": self.lam,
            "div_g": self.div_g,
            "div_h": self.div_h,
            "risk_h_g": self.risk_h_g,
            "gt_risk_g": self.gt_risk_g,
            "gt_risk_h": self.gt_risk_h,
        }


def train_student(
    teacher: MlpNetwork,
    pair: DomainPair,
    arch: Architecture,
    cfg: TrainConfig,
) -> MlpNetwork:
    """Fit ``h`` to ``W(h∘D_A, D_B) + λ·R[h, g]`` with the teacher frozen.

    With several restarts the one with the lowest held-out value of the same
    objective wins.  ``λ = 0`` reproduces :func:`train_generator` for the
    ``"h"`` role exactly.
    """
    frozen = teacher.copy()
    evalset = EvalSet.for_pair(pair, cfg)
    best = None
    for restart in range(cfg.restarts):
        net = init_generator(arch, cfg.seed, "h", restart)
        trainer = WganTrainer(
            pair,
            NetMapper(net),
            cfg,
            trainer_stream("h", restart),
            extra=pair_risk_term(lambda xa: forward(frozen, xa), cfg.lam, sign=1.0),
        )
        for _ in range(cfg.epochs):
            trainer.run_epoch()
        student = trainer.averaged_network(arch)
        score = evalset.divergence(student) + cfg.lam * empirical_risk(student, frozen, evalset.xa_gt)
        if best is None or score < best[0]:
            best = (score, student)
    return best[1]


def distill_train(pair: DomainPair, k1: int, k2: int, cfg: TrainConfig, width: int = 16) -> DistillResult:
    """Teacher of depth ``k1`` by plain WGAN fitting, then a depth-``k2`` student."""
    if not k2 > k1 >= 1:
        raise ContractError("need k2 > k1 >= 1")
    arch_g = Architecture.mlp(pair.dim_a, pair.dim_b, k1, width)
    arch_h = Architecture.mlp(pair.dim_a, pair.dim_b, k2, width)
    teacher, _ = train_generator(pair, arch_g, cfg, role="g")
    before = teacher.params.copy()
    student = train_student(teacher, pair, arch_h, cfg)
    if not np.array_equal(before, teacher.params):
        raise AssertionError("teacher parameters changed while training the student")
    evalset = EvalSet.for_pair(pair, cfg)
    target = pair.y(evalset.xa_gt)

    def gt(net):
        diff = forward(net, evalset.xa_gt) - target
        return float(np.mean(np.sum(diff * diff, axis=1)))

    return DistillResult(
        teacher,
        student,
        k1,
        k2,
        cfg.lam,
        evalset.divergence(teacher),
        evalset.divergence(student),
        empirical_risk(student, teacher, evalset.xa_gt),
        gt(teacher),
        gt(student),
    )
