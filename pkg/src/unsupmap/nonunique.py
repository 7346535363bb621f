"""Alignment when several target maps are equally valid.

Hypotheses share an encoder ``f_ω`` (the first ``l1`` layers) and differ only
in their decoders ``g_θ``.  Fixing ``ω`` fixes an equivalence class of
mappings; the adversarial pair ``h1 = g_θ1∘f_ω`` and ``h2 = g_θ2∘f_ω`` then
measures how much freedom is left inside that class.  Training alternates
between the encoder (pulled towards a low bound), the first decoder (WGAN
fit) and the second decoder (pushed away from ``h1``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from unsupmap.bounds import BoundReport, select_epoch
from unsupmap.domains import DomainPair, TargetMap, sample
from unsupmap.exceptions import ContractError
from unsupmap.nncore import Architecture, EncoderDecoderSplit, MlpNetwork, backward_trace, forward, forward_trace
from unsupmap.training import (
    ROLE_STREAMS,
    EvalSet,
    TrainConfig,
    WganTrainer,
    empirical_risk,
    init_generator,
    pair_risk_term,
)


class SharedEncoderPair:
    """Two networks of one architecture that share the parameters of their first layers.

    ``omega`` is a single array read by both networks; every call to
    :meth:`network` assembles the current ``ω`` with the requested decoder,
    so an update of ``ω`` is visible to ``h1`` and ``h2`` alike.
    """

    def __init__(self, arch: Architecture, encoder_layers: int, omega: np.ndarray, theta1: np.ndarray, theta2: np.ndarray):
        self.split = EncoderDecoderSplit(arch, encoder_layers)
        self.arch = arch
        self.omega = np.array(omega, dtype=float)
        self.thetas = [np.array(theta1, dtype=float), np.array(theta2, dtype=float)]
        if self.omega.size != self.split.boundary:
            raise ContractError("encoder parameter count does not match the split")
        if any(t.size != arch.n_params - self.split.boundary for t in self.thetas):
            raise ContractError("decoder parameter count does not match the split")

    @classmethod
    def initialize(cls, arch: Architecture, encoder_layers: int, seed: int) -> "SharedEncoderPair":
        split = EncoderDecoderSplit(arch, encoder_layers)
        first = init_generator(arch, seed, "h1").params
        second = init_generator(arch, seed, "h2").params
        return cls(arch, encoder_layers, first[split.encoder_slice], first[split.decoder_slice], second[split.decoder_slice])

    def network(self, which: int) -> MlpNetwork:
        """``h1`` for ``which=0``, ``h2`` for ``which=1``, built from the current parameters."""
        return MlpNetwork(self.arch, np.concatenate([self.omega, self.thetas[which]]))

    @property
    def h1(self) -> MlpNetwork:
        return self.network(0)

    @property
    def h2(self) -> MlpNetwork:
        return self.network(1)

    def copy(self) -> "SharedEncoderPair":
        return SharedEncoderPair(self.arch, self.split.encoder_layers, self.omega, *self.thetas)


class _PartMapper:
    """Trainable view of one parameter block of a shared pair, read through one network."""

    def __init__(self, shared: SharedEncoderPair, part: str, which: int):
        self.shared = shared
        self.which = which
        self.block = shared.split.encoder_slice if part == "encoder" else shared.split.decoder_slice
        self._params = shared.omega if part == "encoder" else shared.thetas[which]

    @property
    def params(self) -> np.ndarray:
        return self._params

    def forward(self, x):
        net = self.shared.network(self.which)
        trace = forward_trace(net, x)
        return trace[-1][1], (net, trace)

    def backward(self, cache, grad_out):
        net, trace = cache
        return backward_trace(net, trace, grad_out)[0][self.block]

    def __call__(self, x):
        return forward(self.shared.network(self.which), x)


def _encoder_risk_term(shared: SharedEncoderPair):
    """``R[h1, h2]`` on the batch, differentiated with respect to ``ω`` along both networks."""
    block = shared.split.encoder_slice

    def term(xa, out, cache):
        h2 = shared.network(1)
        trace2 = forward_trace(h2, xa)
        diff = out - trace2[-1][1]
        n = xa.shape[0]
        value = float(np.mean(np.sum(diff * diff, axis=1)))
        grad_h2 = backward_trace(h2, trace2, -2.0 * diff / n)[0][block]
        return value, 2.0 * diff / n, grad_h2

    return term


def multi_target_gt_risk(h, pair: DomainPair, n: int, seed: int, targets: Sequence[TargetMap] | None = None) -> float:
    """Smallest mean squared distance from ``h`` to any admissible target, on one shared sample."""
    targets = tuple(pair.targets if targets is None else targets)
    if not targets:
        raise ContractError("need at least one target map")
    x = sample(pair, "A", n, seed)
    out = forward(h, x) if isinstance(h, MlpNetwork) else np.asarray(h(x), dtype=float)
    risks = [float(np.mean(np.sum((out - y(x)) ** 2, axis=1))) for y in targets]
    return min(risks)


@dataclass
class NonUniqueResult:
    h1: MlpNetwork
    h2: MlpNetwork
    selected: BoundReport
    reports: list[BoundReport]


def alg5_train(pair: DomainPair, arch: Architecture, encoder_layers: int | None, cfg: TrainConfig) -> NonUniqueResult:
    """Three-way alternating training of a shared-encoder adversarial pair.

    Per outer epoch: one epoch on ``ω`` minimizing ``R[h1, h2]`` plus the
    critic divergence of ``h1`` (decoders frozen); ``cfg.t1`` WGAN epochs on
    ``θ1``; ``cfg.t2`` epochs on ``θ2`` minimizing ``W(h2) − λ·R[h1, h2]``.
    The returned ``h1`` is the feasible snapshot with the smallest
    ``R[h1, h2] + W(h1)``.  Readouts use parameter averages of each block.
    """
    l1 = arch.depth // 2 if encoder_layers is None else encoder_layers
    shared = SharedEncoderPair.initialize(arch, l1, cfg.seed)
    enc = WganTrainer(pair, _PartMapper(shared, "encoder", 0), cfg, (ROLE_STREAMS["shared"], 0), extra=_encoder_risk_term(shared))
    dec1 = WganTrainer(pair, _PartMapper(shared, "decoder", 0), cfg, (ROLE_STREAMS["h1"], 0))
    dec2 = WganTrainer(
        pair,
        _PartMapper(shared, "decoder", 1),
        cfg,
        (ROLE_STREAMS["h2"], 0),
        extra=pair_risk_term(lambda xa: forward(shared.network(0), xa), cfg.lam, sign=-1.0),
    )
    evalset = EvalSet.for_pair(pair, cfg)
    reports: list[BoundReport] = []
    snapshots = {}
    for t in range(1, cfg.epochs + 1):
        enc.run_epoch()
        stats = {}
        for _ in range(cfg.t1):
            stats = dec1.run_epoch()
        for _ in range(cfg.t2):
            dec2.run_epoch()
        readout = SharedEncoderPair(arch, l1, enc.average, dec1.average, dec2.average)
        h1, h2 = readout.h1, readout.h2
        rep = BoundReport.surrogate(
            t,
            empirical_risk(h1, h2, evalset.xa_gt),
            evalset.divergence(h1),
            evalset.divergence(h2),
            float(np.mean(np.sum((forward(h1, evalset.xa_gt) - pair.y(evalset.xa_gt)) ** 2, axis=1))),
            cfg.epsilon0,
            {
                "min_target_risk": min(
                    float(np.mean(np.sum((forward(h1, evalset.xa_gt) - y(evalset.xa_gt)) ** 2, axis=1)))
                    for y in pair.targets
                ),
                "loss_gen": stats.get("loss_gen", 0.0),
                "loss_critic": stats.get("loss_critic", 0.0),
            },
        )
        reports.append(rep)
        if rep.feasible:
            snapshots[t] = readout
    chosen = select_epoch(reports)
    best = snapshots[chosen.epoch]
    return NonUniqueResult(best.h1, best.h2, chosen, reports)
