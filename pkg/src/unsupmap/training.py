"""Gradient-based training loops: WGAN generator fitting, the adversarial
second hypothesis, and its per-sample variant.

Every loop shares one engine, :class:`WganTrainer`.  It owns a weight-clipped
critic, the fixed training samples, and the optimizers.  It alternates
``critic_steps`` critic ascent steps with one generator descent step.  Extra
objective terms (the pair risk, the per-sample loss, a teacher risk) plug in as
callables so the same update sequence is reused everywhere.

Weight-clipped adversarial training never settles: the generator keeps
circling the optimum as the critic chases it.  Each trainer therefore keeps an
exponential moving average of the generator parameters, updated once per
epoch, and every readout (checkpoints, returned networks, the reference
``h1`` an adversary is pushed away from) uses the averaged parameters.
``average_decay=0`` turns the averaging off.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from unsupmap.domains import DomainPair, ground_truth_risk, sample
from unsupmap.exceptions import ContractError, NumericError
from unsupmap.nncore import (
    Architecture,
    MlpNetwork,
    backward_trace,
    clip_weights,
    forward,
    forward_trace,
    lipschitz_upper_bound,
    make_optimizer,
)
from unsupmap.transport import InputScaling, critic_ascent_step, default_critic_arch, exact_w1

ROLE_STREAMS = {"h1": 11, "h2": 12, "g": 13, "h": 14, "shared": 15}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    critic_steps: int = 5
    optimizer: str = "rmsprop"
    gen_lr: float = 1e-3
    critic_lr: float = 1e-3
    clip_c: float = 0.1
    lam: float = 1.0
    epsilon0: float = 0.2
    seed: int = 0
    n_train: int = 512
    n_div: int = 256
    n_gt: int = 1024
    eval_seed: int = 7919
    critic_hidden: tuple = (64, 64)
    t1: int = 1
    t2: int = 20
    restarts: int = 1
    adversaries: int = 1
    average_decay: float = 0.9

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ContractError("batch_size must be at least 2")
        if self.lam < 0:
            raise ContractError("lambda must be nonnegative")
        if self.epsilon0 < 0:
            raise ContractError("epsilon0 must be nonnegative")
        if self.restarts < 1:
            raise ContractError("restarts must be at least 1")
        if self.adversaries < 1:
            raise ContractError("adversaries must be at least 1")
        if not 0.0 <= self.average_decay < 1.0:
            raise ContractError("average_decay must lie in [0, 1)")
        if self.critic_steps < 1 or self.n_train < self.batch_size:
            raise ContractError("need at least one critic step and one full batch")
        object.__setattr__(self, "critic_hidden", tuple(self.critic_hidden))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class CheckpointRecord:
    """Per-epoch snapshot.  The held-out divergence is computed on first access."""

    def __init__(self, epoch: int, params: np.ndarray, div_h=None, aux=None, div_fn=None):
        self.epoch = epoch
        self.params = params
        self.aux = dict(aux or {})
        self._div = div_h
        self._div_fn = div_fn

    @property
    def div_h(self) -> float:
        if self._div is None:
            self._div = float(self._div_fn(self.params))
            self._div_fn = None
        return self._div

    def __repr__(self):
        return f"CheckpointRecord(epoch={self.epoch}, div_h={self.div_h!r})"


def empirical_risk(f1, f2, samples) -> float:
    """Mean squared Euclidean distance between two maps over a sample."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    diff = _apply(f1, x) - _apply(f2, x)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def _apply(f, x):
    if isinstance(f, MlpNetwork):
        return forward(f, x)
    return np.asarray(f(x), dtype=float)


def init_generator(arch: Architecture, seed: int, role: str = "h1", restart: int = 0) -> MlpNetwork:
    return MlpNetwork.initialize(arch, np.random.default_rng([int(seed), ROLE_STREAMS[role], int(restart)]))


def trainer_stream(role: str, restart: int = 0) -> tuple[int, int]:
    return (ROLE_STREAMS[role], int(restart))


@dataclass
class EvalSet:
    """Fixed held-out samples used for every divergence and risk readout."""

    xa: np.ndarray
    xb: np.ndarray
    xa_gt: np.ndarray

    @classmethod
    def for_pair(cls, pair: DomainPair, cfg: TrainConfig) -> "EvalSet":
        return cls(
            sample(pair, "A", cfg.n_div, cfg.eval_seed),
            sample(pair, "B", cfg.n_div, cfg.eval_seed),
            sample(pair, "A", cfg.n_gt, cfg.eval_seed + 1),
        )

    def divergence(self, f) -> float:
        return exact_w1(_apply(f, self.xa), self.xb).value

    def divergence_of_params(self, arch: Architecture):
        return lambda params: self.divergence(MlpNetwork(arch, params))


# ---------------------------------------------------------------- mappers


class NetMapper:
    """Trainable view of a single network."""

    def __init__(self, net: MlpNetwork):
        self.net = net

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    def forward(self, x):
        trace = forward_trace(self.net, x)
        return trace[-1][1], trace

    def backward(self, cache, grad_out):
        return backward_trace(self.net, cache, grad_out)[0]

    def __call__(self, x):
        return forward(self.net, x)


# An extra term receives (generator batch input, generator batch output, forward
# cache) and returns (value, gradient w.r.t. batch output or None,
# gradient w.r.t. trainable params or None).
ExtraTerm = Callable[[np.ndarray, np.ndarray, object], tuple]


class WganTrainer:
    """Alternating clipped-critic / generator updates for one mapper.

    The generator term of the objective is the critic's divergence estimate
    normalized by the critic's current Lipschitz bound, so it is measured in
    the same distance units as the exact 1-Wasserstein readout and the
    trade-off weight of any extra term has a scale-free meaning.
    """

    def __init__(
        self,
        pair: DomainPair,
        mapper,
        cfg: TrainConfig,
        stream,
        extra: Optional[ExtraTerm] = None,
        batch_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
    ):
        self.pair = pair
        self.mapper = mapper
        self.cfg = cfg
        self.extra = extra
        stream = tuple(stream) if isinstance(stream, (tuple, list)) else (int(stream),)
        self.rng = np.random.default_rng([int(cfg.seed), *stream])
        self.xa_train = sample(pair, "A", cfg.n_train, cfg.seed)
        self.xb_train = sample(pair, "B", cfg.n_train, cfg.seed)
        self.scaling = InputScaling.fit(self.xb_train)
        self.critic = MlpNetwork.initialize(
            default_critic_arch(pair.dim_b, cfg.critic_hidden), self.rng
        )
        clip_weights(self.critic, cfg.clip_c)
        self.critic_opt = make_optimizer(cfg.optimizer, cfg.critic_lr, self.critic)
        self.gen_opt = make_optimizer(cfg.optimizer, cfg.gen_lr, mapper.params.size)
        self.batch_sampler = batch_sampler or self._training_batch
        self.epochs_done = 0
        self.average = mapper.params.copy()

    def _training_batch(self, rng, size):
        return self.xa_train[rng.choice(self.cfg.n_train, size, replace=False)]

    def _critic_phase(self) -> float:
        cfg = self.cfg
        objective = 0.0
        for _ in range(cfg.critic_steps):
            xa = self.batch_sampler(self.rng, cfg.batch_size)
            xb = self.xb_train[self.rng.choice(cfg.n_train, cfg.batch_size, replace=False)]
            fake = self.mapper(xa)
            objective = critic_ascent_step(
                self.critic, self.critic_opt, self.scaling(xb), self.scaling(fake), cfg.clip_c
            )
        return objective

    def _generator_step(self) -> tuple[float, float]:
        cfg = self.cfg
        xa = self.batch_sampler(self.rng, cfg.batch_size)
        xb = self.xb_train[self.rng.choice(cfg.n_train, cfg.batch_size, replace=False)]
        out, cache = self.mapper.forward(xa)
        lip = lipschitz_upper_bound(self.critic) / self.scaling.scale
        lip = lip if lip > 0 else 1.0
        fake_trace = forward_trace(self.critic, self.scaling(out))
        real_out = forward_trace(self.critic, self.scaling(xb))[-1][1][:, 0]
        fake_out = fake_trace[-1][1][:, 0]
        div_estimate = float(real_out.mean() - fake_out.mean()) / lip
        n = xa.shape[0]
        # d(div)/d(out) = -(1/n) ∇d(out) / lip, with the scaling's chain factor.
        _, grad_scaled = backward_trace(self.critic, fake_trace, np.full((n, 1), -1.0 / n))
        grad_out = grad_scaled / (self.scaling.scale * lip)
        extra_value = 0.0
        grad_params = None
        if self.extra is not None:
            extra_value, extra_grad_out, extra_grad_params = self.extra(xa, out, cache)
            if extra_grad_out is not None:
                grad_out = grad_out + extra_grad_out
            grad_params = extra_grad_params
        grad = self.mapper.backward(cache, grad_out)
        if grad_params is not None:
            grad = grad + grad_params
        if not np.all(np.isfinite(grad)):
            raise NumericError(
                f"non-finite generator gradient in epoch {self.epochs_done + 1}",
                epoch=self.epochs_done + 1,
            )
        self.gen_opt.step(self.mapper.params, grad)
        return div_estimate + extra_value, extra_value

    def averaged_network(self, arch: Architecture) -> MlpNetwork:
        return MlpNetwork(arch, self.average.copy())

    def run_epoch(self) -> dict:
        """One pass of ``n_train // batch_size`` generator steps."""
        steps = self.cfg.n_train // self.cfg.batch_size
        loss_gen = loss_critic = extra = 0.0
        try:
            for _ in range(steps):
                loss_critic = self._critic_phase()
                loss_gen, extra = self._generator_step()
        except NumericError as exc:
            exc.epoch = self.epochs_done + 1
            raise NumericError(f"training diverged in epoch {exc.epoch}: {exc}", exc.layer, exc.epoch) from exc
        self.epochs_done += 1
        decay = self.cfg.average_decay
        self.average *= decay
        self.average += (1.0 - decay) * self.mapper.params
        return {"loss_gen": loss_gen, "loss_critic": loss_critic, "extra": extra}


# ---------------------------------------------------------------- extra terms


def pair_risk_term(h1_outputs: Callable[[np.ndarray], np.ndarray], lam: float, sign: float = -1.0) -> ExtraTerm:
    """``sign·λ·mean‖h(x) − h1(x)‖²`` with ``h1`` frozen.

    ``sign=-1`` pushes away from the reference (adversary); ``sign=+1`` pulls
    towards it (distillation student).
    """

    def term(xa, out, cache):
        if lam == 0:
            return 0.0, None, None
        ref = h1_outputs(xa)
        diff = out - ref
        n = xa.shape[0]
        value = sign * lam * float(np.mean(np.sum(diff * diff, axis=1)))
        return value, sign * lam * 2.0 * diff / n, None

    return term


def point_loss_term(mapper, h1_at_x: np.ndarray, x: np.ndarray, lam: float) -> ExtraTerm:
    """``−λ·‖h(x) − h1(x)‖²`` at one fixed source point."""
    x_row = np.asarray(x, dtype=float)[None, :]

    def term(xa, out, cache):
        if lam == 0:
            return 0.0, None, None
        out_x, cache_x = mapper.forward(x_row)
        diff = out_x - h1_at_x
        value = -lam * float(np.sum(diff * diff))
        return value, None, mapper.backward(cache_x, -lam * 2.0 * diff)

    return term


# ---------------------------------------------------------------- public loops


def _record(epoch, arch, params, evalset, stats, risk_aux=0.0):
    return CheckpointRecord(
        epoch,
        params.copy(),
        aux={
            "risk_aux": risk_aux,
            "loss_gen": stats["loss_gen"],
            "loss_critic": stats["loss_critic"],
        },
        div_fn=evalset.divergence_of_params(arch),
    )


def _train_once(pair, arch, cfg, role, restart, evalset):
    net = init_generator(arch, cfg.seed, role, restart)
    trainer = WganTrainer(pair, NetMapper(net), cfg, trainer_stream(role, restart))
    records = []
    for epoch in range(1, cfg.epochs + 1):
        stats = trainer.run_epoch()
        records.append(_record(epoch, arch, trainer.average, evalset, stats))
    return trainer.averaged_network(arch), records


def train_generator(
    pair: DomainPair, arch: Architecture, cfg: TrainConfig, role: str = "h1"
) -> tuple[MlpNetwork, list[CheckpointRecord]]:
    """Fit a generator to the target distribution with the WGAN objective.

    With ``cfg.restarts > 1`` several independent initializations are trained
    and the one with the lowest final held-out divergence is returned, a
    purely unsupervised choice that guards against poor local optima.
    """
    if (arch.input_dim, arch.output_dim) != (pair.dim_a, pair.dim_b):
        raise ContractError("architecture does not map the source to the target dimension")
    evalset = EvalSet.for_pair(pair, cfg)
    best = None
    for restart in range(cfg.restarts):
        net, records = _train_once(pair, arch, cfg, role, restart, evalset)
        score = records[-1].div_h
        if best is None or score < best[0]:
            best = (score, net, records)
    return best[1], best[2]


def choose_restart(pair: DomainPair, arch: Architecture, cfg: TrainConfig, role: str = "h1") -> int:
    """Index of the restart whose plain WGAN run ends with the lowest held-out divergence."""
    if cfg.restarts == 1:
        return 0
    evalset = EvalSet.for_pair(pair, cfg)
    scores = []
    for restart in range(cfg.restarts):
        _, records = _train_once(pair, arch, cfg, role, restart, evalset)
        scores.append(records[-1].div_h)
    return int(np.argmin(scores))


def best_initialization(pair: DomainPair, arch: Architecture, cfg: TrainConfig, role: str = "h1") -> MlpNetwork:
    """Initial network of the restart that :func:`train_generator` would pick.

    Lets stateful procedures start from a random draw whose plain WGAN
    training is known to end in the lowest-divergence basin.
    """
    return init_generator(arch, cfg.seed, role, choose_restart(pair, arch, cfg, role))


class AdversaryTrainer:
    """Persistent second hypothesis trained on ``W(h2) − λ·R[h1, h2]``.

    ``h1`` is read at every step but never modified; swapping in a newer
    ``h1`` between calls to :meth:`train` continues the same ``h2``.
    """

    def __init__(self, h1: MlpNetwork, pair: DomainPair, arch: Architecture, cfg: TrainConfig, role: str = "h2", h2: MlpNetwork | None = None, stream=None):
        self.h1 = h1
        self.h2 = h2 if h2 is not None else init_generator(arch, cfg.seed, role)
        self.trainer = WganTrainer(
            pair,
            NetMapper(self.h2),
            cfg,
            trainer_stream(role) if stream is None else stream,
            extra=pair_risk_term(lambda xa: forward(self.h1, xa), cfg.lam, sign=-1.0),
        )
        self.last_stats = {"loss_gen": 0.0, "loss_critic": 0.0, "extra": 0.0}

    def train(self, epochs: int) -> MlpNetwork:
        """Continue training; returns the averaged ``h2``."""
        for _ in range(epochs):
            self.last_stats = self.trainer.run_epoch()
        return self.averaged()

    def averaged(self) -> MlpNetwork:
        return self.trainer.averaged_network(self.h2.arch)


def train_adversary(
    h1: MlpNetwork,
    pair: DomainPair,
    arch: Architecture,
    cfg: TrainConfig,
    role: str = "h2",
    init: MlpNetwork | None = None,
) -> MlpNetwork:
    """Train ``h2`` for ``cfg.epochs`` epochs against the frozen ``h1``.

    ``h2`` starts from ``init`` when given (copied), else from the seeded
    draw for ``role``.
    """
    if cfg.lam < 0:
        raise ContractError("lambda must be nonnegative")
    start = init.copy() if init is not None else None
    return AdversaryTrainer(h1.copy(), pair, arch, cfg, role, h2=start).train(cfg.epochs)


def per_sample_batch_sampler(x: np.ndarray, pool: np.ndarray) -> Callable:
    """Batches from the half/half mixture of a point mass at ``x`` and the pool."""
    x = np.asarray(x, dtype=float)

    def draw(rng, size):
        pick_point = rng.random(size) < 0.5
        batch = pool[rng.integers(0, pool.shape[0], size)]
        batch[pick_point] = x
        return batch

    return draw


def train_per_sample_adversary(
    h1: MlpNetwork,
    pair: DomainPair,
    x,
    arch: Architecture,
    cfg: TrainConfig,
    role: str = "h2",
    init: MlpNetwork | None = None,
) -> MlpNetwork:
    """Train ``h2`` on ``W(h2 ∘ D^x_A, D_B) − λ·ℓ(h1(x), h2(x))``.

    ``h2`` starts as a copy of ``init`` (by default ``h1`` itself, so the
    adversary begins inside the feasible set and only has to move away from
    ``h1`` where the distribution constraint allows it).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (pair.dim_a,):
        raise ContractError("probe point has the wrong dimension")
    if np.linalg.norm(x) > pair.support_radius:
        raise ContractError("probe point lies outside the source support")
    if arch != h1.arch and init is None:
        raise ContractError("without an explicit init the adversary must share h1's architecture")
    h2 = (init if init is not None else h1).copy()
    mapper = NetMapper(h2)
    h1_at_x = forward(h1, x[None, :])
    trainer = WganTrainer(pair, mapper, cfg, trainer_stream(role), extra=point_loss_term(mapper, h1_at_x, x, cfg.lam))
    trainer.batch_sampler = per_sample_batch_sampler(x, trainer.xa_train)
    for _ in range(cfg.epochs):
        trainer.run_epoch()
    return trainer.averaged_network(h2.arch)


def select_lambda(
    pair: DomainPair,
    h1: MlpNetwork,
    arch: Architecture,
    cfg: TrainConfig,
    low_exp: float = -6.0,
    high_exp: float = 6.0,
    probes: int = 8,
    init: MlpNetwork | None = None,
) -> tuple[float, list[tuple[float, float]]]:
    """Largest ``λ = 2^e`` whose adversary still reaches divergence ≤ ε₀.

    Bisection on the exponent, assuming feasibility is monotone in ``λ``.
    Returns the chosen ``λ`` and the ``(λ, divergence)`` probe log; when no
    probe is feasible the lower end of the range is returned.
    """
    evalset = EvalSet.for_pair(pair, cfg)
    lo, hi = low_exp, high_exp
    log = []
    best = None
    for _ in range(probes):
        mid = 0.5 * (lo + hi)
        lam = float(2.0**mid)
        h2 = train_adversary(h1, pair, arch, cfg.replace(lam=lam), init=init)
        div = evalset.divergence(h2)
        log.append((lam, div))
        if div <= cfg.epsilon0:
            best = lam
            lo = mid
        else:
            hi = mid
    return (best if best is not None else float(2.0**low_exp)), log


TRACE_HEADER = ["epoch", "div_h", "risk_aux", "loss_gen", "loss_critic"]


def write_trace_csv(path, records: list[CheckpointRecord]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for rec in records:
            writer.writerow(
                [rec.epoch, repr(rec.div_h), repr(rec.aux.get("risk_aux", 0.0)), repr(rec.aux.get("loss_gen", 0.0)), repr(rec.aux.get("loss_critic", 0.0))]
            )


def gt_risk(net, pair: DomainPair, cfg: TrainConfig) -> float:
    """Ground-truth risk on the fixed evaluation seed of ``cfg``."""
    return ground_truth_risk(net, pair, cfg.n_gt, cfg.eval_seed + 1)
