"""scikit-learn style wrapper around WGAN mapping between two unpaired samples.

``WassersteinMapper().fit(X_source, Y_target)`` learns a network whose
pushforward of the source sample matches the target sample; ``transform``
applies it.  The two arrays are unpaired: they may differ in length and row
order carries no meaning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from unsupmap.nncore import Architecture, forward
from unsupmap.training import TrainConfig, train_generator
from unsupmap.transport import exact_w1


@dataclass(frozen=True, eq=False)
class EmpiricalPair:
    """Domain pair backed by two finite samples; draws rows instead of sampling a model.

    Draws are without replacement while the sample is large enough, with
    replacement otherwise.  The true map is unknown, so ground-truth risks are
    unavailable for this pair.
    """

    xa: np.ndarray
    xb: np.ndarray
    name: str = "empirical"

    @property
    def dim_a(self) -> int:
        return self.xa.shape[1]

    @property
    def dim_b(self) -> int:
        return self.xb.shape[1]

    @property
    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.xa, axis=1)))

    def draw(self, which: str, n: int, rng: np.random.Generator) -> np.ndarray:
        pool = self.xa if which == "A" else self.xb
        idx = rng.choice(pool.shape[0], size=n, replace=n > pool.shape[0])
        return pool[idx].copy()


class WassersteinMapper(TransformerMixin, BaseEstimator):
    """Fit ``h`` minimizing the WGAN divergence between ``h(X)`` and ``Y``.

    Parameters mirror :class:`~unsupmap.training.TrainConfig`; ``restarts``
    trains several initializations and keeps the one with the lowest held-out
    divergence.  After fitting, ``network_`` holds the learned network and
    ``divergence_`` its final exact transport distance on held-out rows.
    """

    def __init__(self, depth=2, width=16, epochs=200, batch_size=64, restarts=1, gen_lr=1e-3, n_div=256, random_state=0):
        self.depth = depth
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.restarts = restarts
        self.gen_lr = gen_lr
        self.n_div = n_div
        self.random_state = random_state

    def fit(self, X, y):
        xa = check_array(X, dtype=float)
        xb = check_array(y, dtype=float)
        pair = EmpiricalPair(xa, xb)
        n_train = min(xa.shape[0], xb.shape[0])
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=min(self.batch_size, n_train),
            restarts=self.restarts,
            gen_lr=self.gen_lr,
            seed=int(self.random_state),
            n_train=n_train,
            n_div=min(self.n_div, n_train),
            n_gt=min(self.n_div, n_train),
        )
        arch = Architecture.mlp(xa.shape[1], xb.shape[1], self.depth, self.width)
        self.network_, records = train_generator(pair, arch, cfg)
        self.divergence_ = records[-1].div_h
        self.n_features_in_ = xa.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        return forward(self.network_, check_array(X, dtype=float))

    def score(self, X, y):
        """Negative exact transport distance between ``transform(X)`` and ``y``, on equal-size prefixes."""
        mapped = self.transform(X)
        target = check_array(y, dtype=float)
        n = min(mapped.shape[0], target.shape[0])
        return -exact_w1(mapped[:n], target[:n]).value
