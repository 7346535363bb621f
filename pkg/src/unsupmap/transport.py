"""Divergences between empirical distributions.

Exact 1-Wasserstein via the assignment problem, log-domain Sinkhorn, a
weight-clipped critic estimate, and the closed-form integral probability
metric over a class of quadratic critics.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from unsupmap.exceptions import ContractError, NumericError
from unsupmap.nncore import (
    Architecture,
    MlpNetwork,
    backward_trace,
    clip_weights,
    forward_trace,
    lipschitz_upper_bound,
    make_optimizer,
)


@dataclass
class DivergenceEstimate:
    value: float
    method: str
    n_samples: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "n": self.n_samples, "diagnostics": self.diagnostics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DivergenceEstimate":
        data = json.loads(text)
        return cls(data["value"], data["method"], data["n"], data.get("diagnostics", {}))


def _pair(s1, s2) -> tuple[np.ndarray, np.ndarray]:
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    if s1.shape[1] != s2.shape[1]:
        raise ContractError("sample sets live in different dimensions")
    return s1, s2


def exact_w1(s1, s2) -> DivergenceEstimate:
    """1-Wasserstein distance between two equal-size uniform empirical measures.

    With uniform weights on equal-size supports an optimal coupling is a
    permutation (Birkhoff), so the assignment problem is exact.
    """
    s1, s2 = _pair(s1, s2)
    if s1.shape[0] != s2.shape[0]:
        raise ContractError(
            f"exact_w1 needs equal sample sizes, got {s1.shape[0]} and {s2.shape[0]}"
        )
    cost = cdist(s1, s2)
    rows, cols = linear_sum_assignment(cost)
    value = float(cost[rows, cols].mean())
    return DivergenceEstimate(value, "exact_assignment", s1.shape[0], {"matching": cols.tolist()} if s1.shape[0] <= 16 else {})


def _round_to_coupling(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a nearly feasible plan onto the exact coupling polytope."""
    row_scale = np.minimum(a / np.maximum(plan.sum(axis=1), 1e-300), 1.0)
    plan = plan * row_scale[:, None]
    col_scale = np.minimum(b / np.maximum(plan.sum(axis=0), 1e-300), 1.0)
    plan = plan * col_scale[None, :]
    err_a = a - plan.sum(axis=1)
    err_b = b - plan.sum(axis=0)
    total = err_a.sum()
    if total > 0:
        plan = plan + np.outer(err_a, err_b) / total
    return plan


def _sinkhorn_stage(cost, log_a, log_b, f, g, epsilon, max_iters, tol):
    iters = 0
    violation = np.inf
    for iters in range(1, max_iters + 1):
        f = -epsilon * logsumexp((g[None, :] - cost) / epsilon + log_b[None, :], axis=1)
        g = -epsilon * logsumexp((f[:, None] - cost) / epsilon + log_a[:, None], axis=0)
        if iters % 10 == 0 or iters == max_iters:
            log_rows = logsumexp((f[:, None] + g[None, :] - cost) / epsilon + log_b[None, :], axis=1)
            violation = float(np.abs(np.exp(log_rows + log_a) - np.exp(log_a)).sum())
            if violation < tol:
                break
    return f, g, iters, violation


def sinkhorn_w1(s1, s2, epsilon: float = 0.01, max_iters: int = 5000, tol: float = 1e-8) -> DivergenceEstimate:
    """Transport cost of the entropic optimal plan, computed in the log domain.

    The regularization is annealed geometrically from the cost scale down to
    ``epsilon`` with warm-started potentials, which makes small ``epsilon``
    affordable.  The returned value is the linear cost of the final plan after
    rounding it to an exact coupling, so it never falls below the exact
    distance.
    """
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    s1, s2 = _pair(s1, s2)
    n, m = s1.shape[0], s2.shape[0]
    cost = cdist(s1, s2)
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    schedule = []
    eps = max(float(cost.max()), epsilon)
    while eps > epsilon:
        schedule.append(eps)
        eps *= 0.5
    total = 0
    for eps in schedule:
        f, g, used, _ = _sinkhorn_stage(cost, log_a, log_b, f, g, eps, 200, tol)
        total += used
    f, g, used, _ = _sinkhorn_stage(cost, log_a, log_b, f, g, epsilon, max_iters, tol)
    total += used
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon + log_a[:, None] + log_b[None, :])
    violation = float(np.abs(plan.sum(axis=1) - 1.0 / n).sum() + np.abs(plan.sum(axis=0) - 1.0 / m).sum())
    converged = violation < tol
    if not converged:
        warnings.warn(
            f"sinkhorn stopped after {used} final-stage iterations with marginal violation {violation:.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    plan = _round_to_coupling(plan, np.full(n, 1.0 / n), np.full(m, 1.0 / m))
    value = float(np.sum(plan * cost))
    return DivergenceEstimate(
        value,
        f"sinkhorn(epsilon={epsilon!r})",
        n,
        {"iterations": total, "marginal_violation": violation, "converged": converged},
    )


def default_critic_arch(dim: int, hidden=(64,), slope: float = 0.2) -> Architecture:
    return Architecture(dim, tuple(hidden), 1, activation="leaky_relu", slope=slope)


@dataclass(frozen=True)
class InputScaling:
    """Fixed affine rescaling ``(x − center) / scale`` in front of a critic.

    Clipped weights and biases share one bound, so raw inputs of magnitude
    much larger than the bias range push half of the leaky units into their
    shallow branch and the spectral normalization then badly underestimates.
    Shrinking the data into a ball of radius ``1/margin`` keeps the
    pre-activations comparable to the bias range.  The Lipschitz constant
    with respect to the original inputs is the critic's bound divided by
    ``scale``.
    """

    center: np.ndarray
    scale: float

    @classmethod
    def fit(cls, samples: np.ndarray, margin: float = 2.0) -> "InputScaling":
        samples = np.atleast_2d(samples)
        center = samples.mean(axis=0)
        radius = float(np.max(np.linalg.norm(samples - center, axis=1)))
        return cls(center, margin * radius if radius > 0 else 1.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) / self.scale


def critic_ascent_step(critic: MlpNetwork, optimizer, s1: np.ndarray, s2: np.ndarray, clip_c: float) -> float:
    """One clipped ascent step on ``mean d(s1) − mean d(s2)``; returns the pre-step objective."""
    batch = np.vstack([s1, s2])
    trace = forward_trace(critic, batch)
    out = trace[-1][1][:, 0]
    n1 = s1.shape[0]
    objective = float(out[:n1].mean() - out[n1:].mean())
    if not np.isfinite(objective):
        raise NumericError("critic objective is not finite")
    seed = np.concatenate([np.full(n1, 1.0 / n1), np.full(s2.shape[0], -1.0 / s2.shape[0])])
    grad, _ = backward_trace(critic, trace, -seed[:, None])
    optimizer.step(critic.params, grad)
    clip_weights(critic, clip_c)
    return objective


def critic_divergence(
    s1,
    s2,
    critic_arch: Architecture | None = None,
    steps: int = 1000,
    clip_c: float = 0.1,
    seed: int = 0,
    learning_rate: float = 5e-3,
    optimizer: str = "rmsprop",
) -> DivergenceEstimate:
    """Weight-clipped critic estimate of the 1-Wasserstein distance.

    The critic sees inputs through an :class:`InputScaling` fitted on the
    pooled samples.  Its final objective is divided by its Lipschitz upper
    bound in original coordinates, which makes the normalized critic
    1-Lipschitz and the estimate a lower bound on the empirical distance.
    """
    if steps < 1:
        raise ContractError("critic needs at least one step")
    s1, s2 = _pair(s1, s2)
    arch = critic_arch or default_critic_arch(s1.shape[1])
    if arch.input_dim != s1.shape[1] or arch.output_dim != 1:
        raise ContractError("critic architecture must map the sample dimension to a scalar")
    scaling = InputScaling.fit(np.vstack([s1, s2]))
    t1, t2 = scaling(s1), scaling(s2)
    rng = np.random.default_rng(seed)
    critic = MlpNetwork.initialize(arch, rng)
    clip_weights(critic, clip_c)
    opt = make_optimizer(optimizer, learning_rate, critic)
    for _ in range(steps):
        critic_ascent_step(critic, opt, t1, t2, clip_c)
    out1 = forward_trace(critic, t1)[-1][1][:, 0]
    out2 = forward_trace(critic, t2)[-1][1][:, 0]
    raw = float(out1.mean() - out2.mean())
    lip = lipschitz_upper_bound(critic) / scaling.scale
    value = raw / lip if lip > 0 else 0.0
    return DivergenceEstimate(
        value,
        f"critic(critic_steps={steps}, clip_c={clip_c!r})",
        s1.shape[0],
        {"raw_objective": raw, "lipschitz_bound": lip, "input_scale": scaling.scale},
    )


def second_moment(samples: np.ndarray) -> np.ndarray:
    return samples.T @ samples / samples.shape[0]


def ipm_quadratic(s1, s2, beta_cap: float, b_cap: float = 60.0):
    """Supremum of ``E_{s1} d − E_{s2} d`` over ``d(z) = ½zᵀMz + bᵀz``.

    The objective splits as ``½⟨M, Δ₂⟩ + ⟨b, Δ₁⟩`` with Δ₁ the mean gap and
    Δ₂ the (symmetric) second-moment gap.  Over ``‖b‖₂ ≤ b_cap`` the linear
    part peaks at ``b_cap·‖Δ₁‖``; over symmetric ``‖M‖₂ ≤ beta_cap`` the
    quadratic part peaks at ``beta_cap`` times the nuclear norm of Δ₂, reached
    by ``M = beta_cap·U·sign(Λ)·Uᵀ``.

    Returns ``(value, M, b)``.
    """
    if beta_cap < 0 or b_cap < 0:
        raise ContractError("norm caps must be nonnegative")
    s1, s2 = _pair(s1, s2)
    mean_gap = s1.mean(axis=0) - s2.mean(axis=0)
    moment_gap = second_moment(s1) - second_moment(s2)
    moment_gap = 0.5 * (moment_gap + moment_gap.T)
    eigvals, eigvecs = np.linalg.eigh(moment_gap)
    signs = np.where(eigvals >= 0, 1.0, -1.0)
    m_opt = beta_cap * (eigvecs * signs) @ eigvecs.T
    norm_gap = float(np.linalg.norm(mean_gap))
    b_opt = b_cap * mean_gap / norm_gap if norm_gap > 0 else np.zeros_like(mean_gap)
    value = b_cap * norm_gap + 0.5 * beta_cap * float(np.abs(eigvals).sum())
    return value, m_opt, b_opt


def quadratic_critic_gap(s1, s2, m: np.ndarray, b: np.ndarray) -> float:
    """``E_{s1} d − E_{s2} d`` for one explicit quadratic critic."""
    s1, s2 = _pair(s1, s2)

    def value(z):
        return 0.5 * np.einsum("ni,ij,nj->n", z, m, z) + z @ b

    return float(value(s1).mean() - value(s2).mean())
