"""Unsupervised hyperparameter search.

The validation loss handed to successive halving is the estimable bound
``R[h1, h2] + W(h1∘D_A, D_B)``: ``h1`` is fitted with the WGAN objective,
``h2`` is pushed away from it with the relaxed adversarial objective, and the
divergence is the exact transport distance on fixed held-out samples.  Models
persist in an on-disk store so that a configuration promoted to a larger
budget resumes where it stopped.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from unsupmap.domains import DomainPair
from unsupmap.exceptions import ContractError
from unsupmap.nncore import Architecture, MlpNetwork, checkpoint_load, checkpoint_save
from unsupmap.training import (
    ROLE_STREAMS,
    AdversaryTrainer,
    EvalSet,
    NetMapper,
    TrainConfig,
    WganTrainer,
    empirical_risk,
)


@dataclass(frozen=True, order=True)
class HyperConfig:
    depth: int
    width: int
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if not 1 <= self.depth <= 8:
            raise ContractError("depth must lie in [1, 8]")
        if self.width < 1 or self.batch_size < 2 or not self.learning_rate > 0:
            raise ContractError("width, batch size and learning rate must be positive")

    @property
    def key(self) -> str:
        return f"d{self.depth}-w{self.width}-b{self.batch_size}-lr{self.learning_rate!r}"

    @classmethod
    def from_key(cls, key: str) -> "HyperConfig":
        parts = key.split("-", 3)
        try:
            return cls(int(parts[0][1:]), int(parts[1][1:]), int(parts[2][1:]), float(parts[3][2:]))
        except (IndexError, ValueError):
            raise ContractError(f"malformed configuration key {key!r}") from None

    def architecture(self, dim_in: int, dim_out: int) -> Architecture:
        return Architecture.mlp(dim_in, dim_out, self.depth, self.width)

    def stream_id(self) -> int:
        return zlib.crc32(self.key.encode("utf-8"))


@dataclass(frozen=True)
class SearchSpace:
    depths: tuple = tuple(range(1, 9))
    widths: tuple = (16,)
    batch_sizes: tuple = (32, 64, 128)
    learning_rates: tuple = (5e-4, 1e-3, 2e-3)

    def configs(self) -> list[HyperConfig]:
        return sorted(
            HyperConfig(d, w, b, lr)
            for d in self.depths
            for w in self.widths
            for b in self.batch_sizes
            for lr in self.learning_rates
        )

    def sample(self, n: int, rng: np.random.Generator) -> list[HyperConfig]:
        """``n`` distinct configurations, or the whole grid when it is smaller."""
        grid = self.configs()
        if not grid:
            raise ContractError("the search space is empty")
        if n >= len(grid):
            return list(grid)
        picks = rng.choice(len(grid), size=n, replace=False)
        return [grid[i] for i in sorted(picks)]


@dataclass
class StoredModels:
    h1: MlpNetwork
    h2: MlpNetwork
    t_last: int


class ModelStore:
    """Directory-backed map from configuration key to ``(h1, h2, T_last)``.

    Layout: ``<root>/<key>/{h1.model, h2.model, meta.json}``.  An unknown key
    yields freshly initialized networks, seeded by the store seed and the key,
    with ``T_last = 0``.
    """

    def __init__(self, root, seed: int = 0):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.seed = int(seed)

    def _dir(self, omega: HyperConfig) -> Path:
        return self.root / omega.key

    def t_last(self, omega: HyperConfig) -> int:
        meta = self._dir(omega) / "meta.json"
        if not meta.exists():
            return 0
        return int(json.loads(meta.read_text(encoding="utf-8"))["t_last"])

    def retrieve(self, omega: HyperConfig, pair: DomainPair) -> StoredModels:
        arch = omega.architecture(pair.dim_a, pair.dim_b)
        folder = self._dir(omega)
        if not (folder / "meta.json").exists():
            stream = omega.stream_id()
            h1 = MlpNetwork.initialize(arch, np.random.default_rng([self.seed, ROLE_STREAMS["h1"], stream]))
            h2 = MlpNetwork.initialize(arch, np.random.default_rng([self.seed, ROLE_STREAMS["h2"], stream]))
            return StoredModels(h1, h2, 0)
        return StoredModels(
            checkpoint_load(folder / "h1.model", arch),
            checkpoint_load(folder / "h2.model", arch),
            self.t_last(omega),
        )

    def store(self, omega: HyperConfig, models: StoredModels, extra: dict | None = None) -> None:
        folder = self._dir(omega)
        folder.mkdir(parents=True, exist_ok=True)
        checkpoint_save(models.h1, folder / "h1.model")
        checkpoint_save(models.h2, folder / "h2.model")
        meta = {"key": omega.key, "t_last": models.t_last, **(extra or {})}
        (folder / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class Evaluation:
    omega: HyperConfig
    resource: int
    loss: float
    pair_risk: float
    div_h1: float
    gt_risk: float


def run_then_return_val_loss(
    omega: HyperConfig,
    T: int,
    pair: DomainPair,
    lam: float,
    store: ModelStore,
    base: TrainConfig | None = None,
) -> Evaluation:
    """Bring the stored pair for ``omega`` to ``T`` epochs and return its bound.

    ``h1`` trains ``T − T_last`` WGAN epochs, then ``h2`` trains the same
    number of epochs against the updated ``h1``.  Each resumption starts new
    critics on a random stream indexed by ``T_last``, so a fixed schedule of
    calls is reproducible.
    """
    base = base or TrainConfig()
    models = store.retrieve(omega, pair)
    if T < models.t_last:
        raise ContractError(f"{omega.key} was already trained for {models.t_last} epochs, cannot go back to {T}")
    epochs = T - models.t_last
    cfg = base.replace(batch_size=omega.batch_size, gen_lr=omega.learning_rate, lam=lam, epochs=max(epochs, 1))
    arch = omega.architecture(pair.dim_a, pair.dim_b)
    h1, h2 = models.h1, models.h2
    if epochs > 0:
        stream = (omega.stream_id(), models.t_last)
        trainer = WganTrainer(pair, NetMapper(h1), cfg, (ROLE_STREAMS["h1"], *stream))
        for _ in range(epochs):
            trainer.run_epoch()
        h1 = trainer.averaged_network(arch)
        adversary = AdversaryTrainer(h1, pair, arch, cfg, "h2", h2=h2, stream=(ROLE_STREAMS["h2"], *stream))
        h2 = adversary.train(epochs)
    evalset = EvalSet.for_pair(pair, base)
    pair_risk = empirical_risk(h1, h2, evalset.xa_gt)
    div_h1 = evalset.divergence(h1)
    gt = float(np.mean(np.sum((h1(evalset.xa_gt) - pair.y(evalset.xa_gt)) ** 2, axis=1)))
    loss = pair_risk + div_h1
    store.store(omega, StoredModels(h1, h2, T), {"loss": loss, "pair_risk": pair_risk, "div_h1": div_h1})
    return Evaluation(omega, T, loss, pair_risk, div_h1, gt)


def bracket_schedule(max_resource: int, eta: int) -> list[dict]:
    """Bracket sizes and rung resources of the standard hyperband schedule."""
    if max_resource < 1 or eta < 2:
        raise ContractError("need max_resource >= 1 and eta >= 2")
    s_max = 0
    while eta ** (s_max + 1) <= max_resource:
        s_max += 1
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1) * eta**s)
        r = max_resource * eta ** (-s)
        rungs = [(math.floor(n * eta ** (-i)), r * eta**i) for i in range(s + 1)]
        brackets.append({"s": s, "n": n, "r": r, "rungs": rungs})
    return brackets


def _as_epochs(r: float) -> int:
    return max(1, int(round(r)))


@dataclass
class SearchResult:
    ranking: list[Evaluation]
    history: list[Evaluation] = field(default_factory=list)

    @property
    def best(self) -> Evaluation:
        return self.ranking[0]


def hyperband_search(
    space: SearchSpace,
    max_resource: int,
    eta: int,
    pair: DomainPair,
    lam: float,
    seed: int,
    store: ModelStore,
    base: TrainConfig | None = None,
) -> SearchResult:
    """Hyperband driven by the unsupervised bound.

    Configurations are drawn without replacement inside each bracket.  A
    configuration drawn again in a later bracket shares its stored models;
    when it already holds more epochs than a rung asks for, it is evaluated
    at its stored budget instead of being retrained.  The ranking lists every
    evaluated configuration once, at its last evaluation, by increasing loss.
    """
    base = base or TrainConfig(seed=seed)
    if not space.configs():
        raise ContractError("the search space is empty")
    rng = np.random.default_rng([int(seed), 2718])
    latest: dict[str, Evaluation] = {}
    history: list[Evaluation] = []
    for bracket in bracket_schedule(max_resource, eta):
        configs = space.sample(bracket["n"], rng)
        for i, (_, r_i) in enumerate(bracket["rungs"]):
            evals = []
            for omega in configs:
                T = max(_as_epochs(r_i), store.t_last(omega))
                ev = run_then_return_val_loss(omega, T, pair, lam, store, base)
                evals.append(ev)
                history.append(ev)
                latest[omega.key] = ev
            keep = max(1, math.floor(len(configs) / eta)) if i < len(bracket["rungs"]) - 1 else len(configs)
            order = sorted(range(len(evals)), key=lambda j: (evals[j].loss, evals[j].omega.key))
            configs = [configs[j] for j in order[:keep]]
    ranking = sorted(latest.values(), key=lambda ev: (ev.loss, ev.omega.key))
    return SearchResult(ranking, history)


REPORT_HEADER = ["config_key", "depth", "width", "batch", "lr", "final_T", "loss", "gt_risk"]


def write_search_report(path, evaluations: Sequence[Evaluation]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for ev in evaluations:
            o = ev.omega
            writer.writerow([o.key, o.depth, o.width, o.batch_size, repr(o.learning_rate), ev.resource, repr(ev.loss), repr(ev.gt_risk)])
