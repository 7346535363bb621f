"""Synthetic domain pairs with analytically known target maps.

A domain pair couples a seeded sampler for the source distribution with an
invertible target map ``y``.  The target distribution is defined as the
pushforward of the source under ``y``, so every learned mapping can be scored
against the truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from unsupmap.exceptions import ContractError, UnsupportedError
from unsupmap.nncore import MlpNetwork, forward

STREAM_A = 0
STREAM_B = 1


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


# ---------------------------------------------------------------- target maps


class TargetMap:
    """Invertible C¹ map with closed-form inverse and Jacobian.

    Subclasses implement ``_forward``, ``_inverse`` and ``_jacobian`` on 2-D
    row batches; the public methods accept a single vector too.
    """

    kind = "abstract"
    dim: int

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        rows, single = _rows(x)
        out = self._forward(rows)
        return out[0] if single else out

    def inverse(self, z):
        rows, single = _rows(z)
        out = self._inverse(rows)
        return out[0] if single else out

    def jacobian(self, x):
        """Jacobian ``dy/dx`` of shape ``(d, d)`` or ``(n, d, d)``."""
        rows, single = _rows(x)
        out = self._jacobian(rows)
        return out[0] if single else out

    def is_affine(self) -> bool:
        return False


class AffineMap(TargetMap):
    kind = "affine"

    def __init__(self, matrix, offset=None):
        self.matrix = np.array(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ContractError("affine target maps must be square")
        self.dim = self.matrix.shape[0]
        self.offset = np.zeros(self.dim) if offset is None else np.array(offset, dtype=float)
        if abs(np.linalg.det(self.matrix)) < 1e-12:
            raise ContractError("affine target map is singular")
        self._inv = np.linalg.inv(self.matrix)

    def _forward(self, x):
        return x @ self.matrix.T + self.offset

    def _inverse(self, z):
        return (z - self.offset) @ self._inv.T

    def _jacobian(self, x):
        return np.broadcast_to(self.matrix, (x.shape[0], self.dim, self.dim)).copy()

    def is_affine(self) -> bool:
        return True

    def __repr__(self):
        return f"AffineMap(matrix={self.matrix.tolist()}, offset={self.offset.tolist()})"


class RotationMap(AffineMap):
    """Rotation by ``angle`` in the plane of the first two coordinates."""

    kind = "rotation"

    def __init__(self, angle: float, dim: int = 2):
        if dim < 2:
            raise ContractError("rotations need at least two dimensions")
        matrix = np.eye(dim)
        matrix[:2, :2] = rotation_matrix(angle)
        self.angle = float(angle)
        super().__init__(matrix)

    def __repr__(self):
        return f"RotationMap(angle={self.angle!r}, dim={self.dim})"


class SmoothWarpMap(TargetMap):
    """Rotation applied after two coordinate-wise tanh shears.

    With ``a = alpha``: first ``x2 += a·tanh(x1)``, then ``x1 += a·tanh(x2)``,
    then rotate by ``angle``.  Each shear is a C¹ diffeomorphism whose inverse
    subtracts the same term, so the composition inverts in closed form.
    Coordinates beyond the first two pass through unchanged.
    """

    kind = "smooth_warp"

    def __init__(self, alpha: float, angle: float = math.pi / 4, dim: int = 2):
        if dim < 2:
            raise ContractError("smooth warps need at least two dimensions")
        self.alpha = float(alpha)
        self.angle = float(angle)
        self.dim = dim
        self._rot = rotation_matrix(angle)

    def _forward(self, x):
        out = x.copy()
        out[:, 1] = x[:, 1] + self.alpha * np.tanh(x[:, 0])
        out[:, 0] = x[:, 0] + self.alpha * np.tanh(out[:, 1])
        out[:, :2] = out[:, :2] @ self._rot.T
        return out

    def _inverse(self, z):
        out = z.copy()
        out[:, :2] = z[:, :2] @ self._rot
        out[:, 0] = out[:, 0] - self.alpha * np.tanh(out[:, 1])
        out[:, 1] = out[:, 1] - self.alpha * np.tanh(out[:, 0])
        return out

    def _jacobian(self, x):
        n = x.shape[0]
        a = self.alpha
        first = np.tile(np.eye(self.dim), (n, 1, 1))
        first[:, 1, 0] = a * (1.0 - np.tanh(x[:, 0]) ** 2)
        u2 = x[:, 1] + a * np.tanh(x[:, 0])
        second = np.tile(np.eye(self.dim), (n, 1, 1))
        second[:, 0, 1] = a * (1.0 - np.tanh(u2) ** 2)
        rot = np.eye(self.dim)
        rot[:2, :2] = self._rot
        return rot @ second @ first

    def __repr__(self):
        return f"SmoothWarpMap(alpha={self.alpha!r}, angle={self.angle!r})"


# ---------------------------------------------------------------- samplers


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of truncated Gaussians.

    Each component is truncated to Mahalanobis radius ``truncation`` and the
    whole mixture to the Euclidean ball of ``support_radius``; truncation is by
    rejection.  Component counts are stratified: each component receives the
    integer part of its expected count and the leftover draws are assigned at
    random in proportion to the fractional parts.  This removes the
    multinomial imbalance that would otherwise dominate the small-sample
    divergence floor.
    """

    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    truncation: float = 3.0
    support_radius: float = 6.0

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        k, d = means.shape
        covs = np.asarray(self.covariances, dtype=float)
        if covs.shape != (k, d, d):
            raise ContractError("covariances must have shape (k, d, d)")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (k,) or np.any(weights <= 0):
            raise ContractError("weights must be positive, one per component")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", weights / weights.sum())
        object.__setattr__(self, "_chols", np.linalg.cholesky(covs))
        reach = np.linalg.norm(means, axis=1) + self.truncation * np.sqrt(
            np.linalg.eigvalsh(covs)[:, -1]
        )
        if np.any(reach > self.support_radius + 1e-12):
            raise ContractError("a truncated component extends beyond the support radius")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_counts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        expected = self.weights * n
        counts = np.floor(expected).astype(int)
        leftover = n - counts.sum()
        if leftover:
            frac = expected - counts
            chosen = rng.choice(len(counts), size=leftover, replace=False, p=frac / frac.sum())
            counts[chosen] += 1
        return counts

    def _draw_component(self, j: int, count: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((0, self.dim))
        while out.shape[0] < count:
            need = count - out.shape[0]
            z = rng.standard_normal((2 * need + 4, self.dim))
            z = z[np.linalg.norm(z, axis=1) <= self.truncation]
            out = np.vstack([out, z[:need]])
        return self.means[j] + out @ self._chols[j].T

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        counts = self.component_counts(n, rng)
        parts = [self._draw_component(j, c, rng) for j, c in enumerate(counts) if c]
        x = np.vstack(parts) if parts else np.empty((0, self.dim))
        return x[rng.permutation(n)]

    def mahalanobis(self, j: int, x: np.ndarray) -> np.ndarray:
        solved = np.linalg.solve(self._chols[j], (x - self.means[j]).T)
        return np.linalg.norm(solved, axis=0)


@dataclass(frozen=True)
class UnitCircleSampler:
    """Uniform distribution on the unit circle in the plane."""

    support_radius: float = 1.0
    dim: int = 2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(0.0, 2 * math.pi, size=n)
        return np.column_stack([np.cos(theta), np.sin(theta)])


# ---------------------------------------------------------------- symmetries


@dataclass(frozen=True)
class Symmetry:
    """Declared measure-preserving involution of the source distribution.

    ``kind`` is ``point_reflection`` (``center`` required) or
    ``component_swap`` (component indices ``i`` and ``j``).
    """

    kind: str
    center: tuple[float, ...] | None = None
    components: tuple[int, int] | None = None


class SourceInvolution:
    """Closed-form involution of the source space that preserves the source law."""

    def __init__(self, sampler, symmetry: Symmetry):
        self.symmetry = symmetry
        self.sampler = sampler
        if symmetry.kind == "point_reflection":
            self.center = np.asarray(symmetry.center, dtype=float)
        elif symmetry.kind == "component_swap":
            if not isinstance(sampler, GaussianMixture):
                raise UnsupportedError("component swaps need a Gaussian mixture source")
            i, j = symmetry.components
            if not np.isclose(sampler.weights[i], sampler.weights[j]):
                raise UnsupportedError("swapped components must carry equal weight")
            chol = sampler._chols
            self.i, self.j = i, j
            self.to_j = chol[j] @ np.linalg.inv(chol[i])
            self.to_i = chol[i] @ np.linalg.inv(chol[j])
        else:
            raise UnsupportedError(f"unknown symmetry kind {symmetry.kind!r}")

    def __call__(self, x):
        rows, single = _rows(x)
        if self.symmetry.kind == "point_reflection":
            out = 2.0 * self.center - rows
        else:
            mix = self.sampler
            out = rows.copy()
            in_i = mix.mahalanobis(self.i, rows) <= mix.truncation
            in_j = mix.mahalanobis(self.j, rows) <= mix.truncation
            out[in_i] = mix.means[self.j] + (rows[in_i] - mix.means[self.i]) @ self.to_j.T
            out[in_j] = mix.means[self.i] + (rows[in_j] - mix.means[self.j]) @ self.to_i.T
        return out[0] if single else out

    forward = __call__

    def inverse(self, x):
        return self(x)


# ---------------------------------------------------------------- composition


@dataclass(frozen=True)
class MapChain:
    """Composition of invertible primitives, listed in application order.

    Each step is ``(primitive, inverted)``.  Adjacent steps that are the same
    primitive with opposite orientation cancel symbolically, so compositions
    such as ``y⁻¹∘y`` collapse to the empty chain (the exact identity).
    """

    steps: tuple[tuple[object, bool], ...] = ()

    @classmethod
    def of(cls, primitive, inverted: bool = False) -> "MapChain":
        return cls(((primitive, inverted),))

    def then(self, other: "MapChain") -> "MapChain":
        """Apply ``self`` first, then ``other``; cancellations applied."""
        stack = list(self.steps)
        for prim, inv in other.steps:
            if stack and stack[-1][0] is prim and stack[-1][1] != inv:
                stack.pop()
            elif stack and stack[-1][0] is prim and _is_involution(prim):
                stack.pop()
            else:
                stack.append((prim, inv))
        return MapChain(tuple(stack))

    def invert(self) -> "MapChain":
        return MapChain(tuple((p, not inv) for p, inv in reversed(self.steps)))

    @property
    def is_identity(self) -> bool:
        return not self.steps

    def __call__(self, x):
        out = np.asarray(x, dtype=float)
        for prim, inv in self.steps:
            out = prim.inverse(out) if inv else prim.forward(out)
        return out


def _is_involution(prim) -> bool:
    return isinstance(prim, SourceInvolution)


# ---------------------------------------------------------------- pairs


@dataclass(frozen=True)
class DomainPair:
    name: str
    sampler_a: object
    y: TargetMap
    targets: tuple[TargetMap, ...] = ()
    symmetry: Symmetry | None = None
    support_radius: float = 6.0

    def __post_init__(self):
        if not self.targets:
            object.__setattr__(self, "targets", (self.y,))

    @property
    def dim_a(self) -> int:
        return self.sampler_a.dim

    @property
    def dim_b(self) -> int:
        return self.y.dim

    def sample(self, which: str, n: int, seed: int) -> np.ndarray:
        return sample(self, which, n, seed)


def sample(pair: DomainPair, which: str, n: int, seed: int) -> np.ndarray:
    """Seeded sample from the source ("A") or target ("B") distribution.

    The two sides use independent random streams, so an A-sample and a
    B-sample drawn with the same seed are unrelated.
    """
    if n < 1:
        raise ContractError("sample size must be at least 1")
    if which not in ("A", "B"):
        raise ContractError("which must be 'A' or 'B'")
    stream = STREAM_A if which == "A" else STREAM_B
    rng = np.random.default_rng([int(seed), stream])
    draw = getattr(pair, "draw", None)
    if draw is not None:
        return draw(which, n, rng)
    x = pair.sampler_a.sample(n, rng)
    return x if which == "A" else pair.y(x)


def _evaluate(h, x):
    if isinstance(h, MlpNetwork):
        return forward(h, x)
    return np.asarray(h(x), dtype=float)


def ground_truth_risk(h, pair: DomainPair, n: int, seed: int, target: TargetMap | None = None) -> float:
    """Mean squared distance between ``h`` and the true map on a seeded source sample."""
    x = sample(pair, "A", n, seed)
    target = pair.y if target is None else target
    if isinstance(h, MlpNetwork) and (h.arch.input_dim, h.arch.output_dim) != (pair.dim_a, pair.dim_b):
        raise ContractError("hypothesis dimensions do not match the domain pair")
    diff = _evaluate(h, x) - target(x)
    return float(np.mean(np.sum(diff * diff, axis=1)))


@dataclass(frozen=True)
class SymmetryPermutation:
    """A target-side map ``Π = y∘Π_A∘y⁻¹`` that preserves the target law."""

    source: SourceInvolution
    y: TargetMap
    chain: MapChain = field(repr=False)

    def __call__(self, z):
        return self.chain(z)

    def inverse(self, z):
        return self.chain.invert()(z)


def make_symmetry_permutation(pair: DomainPair) -> SymmetryPermutation:
    if pair.symmetry is None:
        raise UnsupportedError(f"domain pair {pair.name!r} declares no symmetry")
    involution = SourceInvolution(pair.sampler_a, pair.symmetry)
    chain = MapChain.of(pair.y, True).then(MapChain.of(involution)).then(MapChain.of(pair.y))
    return SymmetryPermutation(involution, pair.y, chain)


def ambiguity_demo(pair: DomainPair, n: int = 512, seed: int = 0) -> dict:
    """Evaluate the distribution-preserving wrong pair ``ĥ = Π∘y``, ``ĥ' = y⁻¹∘Π⁻¹``.

    Circularity risks are computed from the symbolically simplified
    compositions: an empty chain gives exactly zero.  The raw numeric residual
    of evaluating the unsimplified composition is reported alongside.
    """
    from unsupmap.transport import exact_w1

    perm = make_symmetry_permutation(pair)
    y_chain = MapChain.of(pair.y)
    h_hat = y_chain.then(perm.chain)
    h_hat_prime = perm.chain.invert().then(y_chain.invert())
    round_a = h_hat.then(h_hat_prime)
    round_b = h_hat_prime.then(h_hat)

    xa = sample(pair, "A", n, seed)
    xb = sample(pair, "B", n, seed)
    xa_ref = sample(pair, "A", n, seed + 1)
    xb_ref = sample(pair, "B", n, seed + 1)

    def chain_risk(chain, x):
        if chain.is_identity:
            return 0.0
        diff = chain(x) - x
        return float(np.mean(np.sum(diff * diff, axis=1)))

    def raw_residual(first, second, x):
        diff = second(first(x)) - x
        return float(np.max(np.abs(diff)))

    wrong = h_hat(xa)
    truth = pair.y(xa)
    return {
        "divergence_of_wrong_map": exact_w1(wrong, xb_ref).value,
        "divergence_of_wrong_inverse": exact_w1(h_hat_prime(xb), xa_ref).value,
        "circularity_losses": {
            "cycle_a": chain_risk(round_a, xa),
            "cycle_b": chain_risk(round_b, xb),
        },
        "numeric_residual": {
            "cycle_a": raw_residual(h_hat, h_hat_prime, xa),
            "cycle_b": raw_residual(h_hat_prime, h_hat, xb),
        },
        "gt_risk_of_wrong_map": float(np.mean(np.sum((wrong - truth) ** 2, axis=1))),
        "n": n,
    }


# ---------------------------------------------------------------- registry


def _rotated_cov(stds: Sequence[float], angle: float) -> np.ndarray:
    rot = rotation_matrix(angle)
    return rot @ np.diag(np.square(stds)) @ rot.T


def twin_moons_source(support_radius: float = 6.0) -> GaussianMixture:
    """Two equally weighted components at (±2, 0) with different shapes.

    The right component is a tight isotropic blob and the left one an
    elongated tilted ellipse.  No nontrivial affine map preserves this
    mixture, yet swapping the two truncated components is a (nonlinear)
    measure-preserving involution.
    """
    return GaussianMixture(
        means=np.array([[2.0, 0.0], [-2.0, 0.0]]),
        covariances=np.stack([_rotated_cov([0.2, 0.2], 0.0), _rotated_cov([0.8, 0.1], math.pi / 4)]),
        weights=np.array([0.5, 0.5]),
        support_radius=support_radius,
    )


def pinwheel_source(support_radius: float = 6.0) -> GaussianMixture:
    """Four elongated components at (±2,0), (0,±2), each tilted by the same
    angle from the radial direction.  Invariant under quarter turns but under
    no reflection."""
    means, covs = [], []
    for k in range(4):
        phi = k * math.pi / 2
        means.append([2 * math.cos(phi), 2 * math.sin(phi)])
        covs.append(_rotated_cov([0.5, 0.12], phi + math.pi / 6))
    return GaussianMixture(np.array(means), np.stack(covs), np.full(4, 0.25), support_radius=support_radius)


def twin_gaussians_source(support_radius: float = 6.0) -> GaussianMixture:
    cov = _rotated_cov([0.3, 0.3], 0.0)
    return GaussianMixture(
        np.array([[2.0, 0.0], [-2.0, 0.0]]), np.stack([cov, cov]), np.array([0.5, 0.5]),
        support_radius=support_radius,
    )


def _twin_moons_rotation(angle=math.pi / 4, support_radius=6.0):
    return DomainPair(
        "twin-moons-rotation",
        twin_moons_source(support_radius),
        RotationMap(angle),
        symmetry=Symmetry("component_swap", components=(0, 1)),
        support_radius=support_radius,
    )


def _warp(alpha=0.3, angle=math.pi / 4, support_radius=6.0):
    return DomainPair(
        "warp",
        twin_moons_source(support_radius),
        SmoothWarpMap(alpha, angle),
        symmetry=Symmetry("component_swap", components=(0, 1)),
        support_radius=support_radius,
    )


def _multi_target(angle=math.pi / 4, support_radius=6.0):
    plus, minus = RotationMap(angle), RotationMap(-angle)
    return DomainPair(
        "multi-target",
        pinwheel_source(support_radius),
        plus,
        targets=(plus, minus),
        symmetry=Symmetry("point_reflection", center=(0.0, 0.0)),
        support_radius=support_radius,
    )


def _twin_gaussians(angle=math.pi / 4, support_radius=6.0):
    return DomainPair(
        "twin-gaussians",
        twin_gaussians_source(support_radius),
        RotationMap(angle),
        symmetry=Symmetry("point_reflection", center=(0.0, 0.0)),
        support_radius=support_radius,
    )


REGISTRY: dict[str, Callable[..., DomainPair]] = {
    "twin-moons-rotation": _twin_moons_rotation,
    "warp": _warp,
    "multi-target": _multi_target,
    "twin-gaussians": _twin_gaussians,
}


def get_pair(name: str, **overrides) -> DomainPair:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ContractError(f"unknown domain pair {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**overrides)


def write_samples_csv(path, samples: np.ndarray) -> None:
    samples = np.atleast_2d(samples)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k + 1}" for k in range(samples.shape[1])])
        for row in samples:
            writer.writerow([repr(float(v)) for v in row])


def read_samples_csv(path) -> np.ndarray:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return np.array(rows, dtype=float).reshape(-1, len(header))
