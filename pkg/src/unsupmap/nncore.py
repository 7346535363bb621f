"""Dense networks with explicit parameter vectors and hand-written gradients.

Parameters live in one flat float64 vector.  The layout is layer-major: for
each layer the weight matrix of shape ``(fan_out, fan_in)`` in row-major
order, immediately followed by that layer's bias of length ``fan_out``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from unsupmap.exceptions import CheckpointError, ContractError, NumericError

ACTIVATIONS = ("tanh", "leaky_relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    output_activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ContractError("input_dim and output_dim must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ContractError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ContractError(f"unknown output activation {self.output_activation!r}")
        if not 0.0 < self.slope < 1.0:
            raise ContractError("leaky_relu slope must lie in (0, 1)")

    @classmethod
    def mlp(cls, input_dim, output_dim, depth, width, **kwargs) -> "Architecture":
        """Architecture with ``depth`` weight layers, all hidden layers ``width`` wide."""
        if depth < 1:
            raise ContractError("depth must be at least 1")
        return cls(input_dim, (width,) * (depth - 1), output_dim, **kwargs)

    @property
    def depth(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per weight layer."""
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_sizes)

    def descriptor(self) -> str:
        hidden = ",".join(str(w) for w in self.hidden_widths)
        act = self.activation
        if act == "leaky_relu":
            act = f"leaky_relu:{self.slope!r}"
        return (
            f"in={self.input_dim} hidden={hidden} out={self.output_dim} "
            f"act={act} outact={self.output_activation}"
        )

    @classmethod
    def from_descriptor(cls, text: str) -> "Architecture":
        fields = {}
        for token in text.split():
            key, sep, value = token.partition("=")
            if not sep:
                raise ContractError(f"malformed descriptor token {token!r}")
            fields[key] = value
        missing = {"in", "hidden", "out", "act", "outact"} - fields.keys()
        if missing:
            raise ContractError(f"descriptor lacks {sorted(missing)}")
        act, _, slope = fields["act"].partition(":")
        hidden = tuple(int(w) for w in fields["hidden"].split(",") if w)
        return cls(
            int(fields["in"]),
            hidden,
            int(fields["out"]),
            activation=act,
            output_activation=fields["outact"],
            slope=float(slope) if slope else 0.2,
        )


def _act(name, z, slope):
    if name == "tanh":
        return np.tanh(z)
    if name == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    return z


def _act_grad(name, z, a, slope):
    """Derivative of the activation given pre-activation z and output a."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, slope)
    return np.ones_like(z)


@dataclass
class MlpNetwork:
    """A dense feed-forward network.

    ``params`` is the only state.  Weight and bias accessors return views into
    it, so in-place edits through them modify the network.
    """

    arch: Architecture
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.n_params,):
            raise ContractError(
                f"expected {self.arch.n_params} parameters, got {self.params.size}"
            )
        if not np.all(np.isfinite(self.params)):
            raise NumericError("non-finite parameter")

    @classmethod
    def zeros(cls, arch: Architecture) -> "MlpNetwork":
        return cls(arch, np.zeros(arch.n_params))

    @classmethod
    def initialize(cls, arch: Architecture, rng: np.random.Generator) -> "MlpNetwork":
        """Glorot-uniform weights and zero biases."""
        chunks = []
        for fan_in, fan_out in arch.layer_sizes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(arch, np.concatenate(chunks))

    @classmethod
    def from_layers(cls, arch: Architecture, layers) -> "MlpNetwork":
        """Build from a list of ``(W, b)`` pairs, W shaped ``(fan_out, fan_in)``."""
        chunks = []
        for (fan_in, fan_out), (weight, bias) in zip(arch.layer_sizes, layers, strict=True):
            weight = np.asarray(weight, dtype=float)
            bias = np.asarray(bias, dtype=float)
            if weight.shape != (fan_out, fan_in) or bias.shape != (fan_out,):
                raise ContractError("layer shape does not match architecture")
            chunks.extend([weight.ravel(), bias])
        return cls(arch, np.concatenate(chunks))

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.arch, self.params.copy())

    def _offsets(self):
        start = 0
        for fan_in, fan_out in self.arch.layer_sizes:
            w_end = start + fan_in * fan_out
            yield start, w_end, w_end + fan_out, fan_in, fan_out
            start = w_end + fan_out

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(W, b)`` views per layer."""
        return [
            (self.params[s:w].reshape(o, i), self.params[w:e])
            for s, w, e, i, o in self._offsets()
        ]

    def set_params(self, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != self.params.shape:
            raise ContractError("parameter vector shape mismatch")
        self.params[:] = values

    def __call__(self, x):
        return forward(self, x)


def _as_batch(net: MlpNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.arch.input_dim:
        raise ContractError(
            f"input has dimension {x.shape[-1]}, network expects {net.arch.input_dim}"
        )
    return x, single


def forward_trace(net: MlpNetwork, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Run a batched forward pass and keep ``(pre, post)`` activations per layer.

    ``x`` must already be a 2-D batch.  The returned list starts with the
    input as ``(x, x)``.
    """
    arch = net.arch
    trace = [(x, x)]
    layers = net.layers()
    last = len(layers) - 1
    a = x
    for idx, (weight, bias) in enumerate(layers):
        z = a @ weight.T + bias
        name = arch.output_activation if idx == last else arch.activation
        a = _act(name, z, arch.slope)
        trace.append((z, a))
    return trace


def backward_trace(net: MlpNetwork, trace, grad_out: np.ndarray):
    """Reverse pass over a stored trace.  Returns ``(grad_params, grad_input)``."""
    arch = net.arch
    layers = net.layers()
    last = len(layers) - 1
    grad = np.empty_like(net.params)
    offsets = list(net._offsets())
    delta = grad_out
    for idx in range(last, -1, -1):
        z, a = trace[idx + 1]
        name = arch.output_activation if idx == last else arch.activation
        delta = delta * _act_grad(name, z, a, arch.slope)
        a_prev = trace[idx][1]
        s, w, e, _, _ = offsets[idx]
        grad[s:w] = (delta.T @ a_prev).ravel()
        grad[w:e] = delta.sum(axis=0)
        delta = delta @ layers[idx][0]
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite gradient at layer {idx}", layer=idx)
    return grad, delta


def forward(net: MlpNetwork, x) -> np.ndarray:
    """Evaluate the network on one vector or a batch of row vectors."""
    batch, single = _as_batch(net, x)
    out = forward_trace(net, batch)[-1][1]
    return out[0] if single else out


def backward(net: MlpNetwork, loss_grad_at_output, x) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum(loss_grad_at_output * net(x))`` w.r.t. params and input.

    Works for a single vector or a batch; for a batch the parameter gradient is
    summed over rows and the input gradient is returned per row.
    """
    batch, single = _as_batch(net, x)
    seed = np.asarray(loss_grad_at_output, dtype=float).reshape(batch.shape[0], -1)
    if seed.shape[1] != net.arch.output_dim:
        raise ContractError("output gradient has the wrong dimension")
    trace = forward_trace(net, batch)
    for idx, (z, _) in enumerate(trace[1:]):
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activation at layer {idx}", layer=idx)
    grad_params, grad_x = backward_trace(net, trace, seed)
    return grad_params, (grad_x[0] if single else grad_x)


def clip_weights(net: MlpNetwork, c: float) -> None:
    """Clamp every parameter into ``[-c, c]`` in place."""
    if c <= 0:
        raise ContractError("clip constant must be positive")
    np.clip(net.params, -c, c, out=net.params)


def spectral_norm(matrix: np.ndarray, iterations: int = 200, tol: float = 1e-10) -> float:
    """Largest singular value by power iteration on ``MᵀM``."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.any(matrix):
        return 0.0
    start = np.random.default_rng(0).standard_normal(matrix.shape[1])
    v = start / np.linalg.norm(start)
    sigma = 0.0
    for _ in range(iterations):
        u = matrix @ v
        w = matrix.T @ u
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            break
        v = w / norm_w
        new_sigma = float(np.linalg.norm(matrix @ v))
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1.0):
            sigma = new_sigma
            break
        sigma = new_sigma
    # Power iteration approaches from below; the exact value is cheap at
    # these sizes and guarantees the result is a true upper bound.
    exact = float(np.linalg.norm(matrix, 2))
    return max(sigma, exact)


def lipschitz_upper_bound(net: MlpNetwork) -> float:
    """Product of layer spectral norms, valid since every activation has slope at most 1."""
    bound = 1.0
    for weight, _ in net.layers():
        bound *= spectral_norm(weight)
    return float(bound)


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step_count: int = 0
    first: np.ndarray = field(default=None, repr=False)
    second: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop", "adam"):
            raise ContractError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ContractError("learning rate must be positive")
        if self.first is None:
            self.first = np.zeros(self.n_params)
        if self.second is None:
            self.second = np.zeros(self.n_params)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Descend along ``grad`` in place."""
        if grad.shape != params.shape or params.shape != (self.n_params,):
            raise ContractError("gradient shape does not match optimizer state")
        self.step_count += 1
        if self.kind == "sgd":
            params -= self.learning_rate * grad
        elif self.kind == "rmsprop":
            self.second *= self.decay
            self.second += (1 - self.decay) * grad * grad
            params -= self.learning_rate * grad / (np.sqrt(self.second) + self.eps)
        else:
            self.first *= self.beta1
            self.first += (1 - self.beta1) * grad
            self.second *= self.beta2
            self.second += (1 - self.beta2) * grad * grad
            m_hat = self.first / (1 - self.beta1**self.step_count)
            v_hat = self.second / (1 - self.beta2**self.step_count)
            params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        if not np.all(np.isfinite(params)):
            raise NumericError("optimizer step produced non-finite parameters")

    def clone(self) -> "OptimizerState":
        return dataclasses.replace(self, first=self.first.copy(), second=self.second.copy())


def make_optimizer(kind: str, learning_rate: float, net_or_size) -> OptimizerState:
    size = net_or_size.params.size if isinstance(net_or_size, MlpNetwork) else int(net_or_size)
    return OptimizerState(kind, learning_rate, size)


# ---------------------------------------------------------------- encoder split


@dataclass(frozen=True)
class EncoderDecoderSplit:
    """Partition of a flat parameter vector into the first ``encoder_layers``
    layers and the remaining decoder layers."""

    arch: Architecture
    encoder_layers: int

    def __post_init__(self):
        if not 1 <= self.encoder_layers < self.arch.depth:
            raise ContractError("encoder must own at least one layer and leave one for the decoder")

    @property
    def decoder_layers(self) -> int:
        return self.arch.depth - self.encoder_layers

    @property
    def boundary(self) -> int:
        """Index of the first decoder parameter."""
        return sum(i * o + o for i, o in self.arch.layer_sizes[: self.encoder_layers])

    @property
    def encoder_slice(self) -> slice:
        return slice(0, self.boundary)

    @property
    def decoder_slice(self) -> slice:
        return slice(self.boundary, self.arch.n_params)


# ---------------------------------------------------------------- checkpoints

HEADER = "MODELv1"
FOOTER = "END"


def checkpoint_dumps(net: MlpNetwork) -> str:
    lines = [HEADER, net.arch.descriptor()]
    lines.extend(repr(float(p)) for p in net.params)
    lines.append(FOOTER)
    return "\n".join(lines) + "\n"


def checkpoint_loads(text: str, expected: Architecture | None = None) -> MlpNetwork:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise CheckpointError(f"expected header {HEADER!r}", line=1)
    if len(lines) < 2:
        raise CheckpointError("missing architecture descriptor", line=2)
    try:
        arch = Architecture.from_descriptor(lines[1])
    except (ContractError, ValueError) as exc:
        raise CheckpointError(f"bad architecture descriptor: {exc}", line=2) from exc
    body = lines[2:]
    try:
        end = body.index(FOOTER)
    except ValueError:
        raise CheckpointError(
            f"missing {FOOTER!r}: expected {arch.n_params} parameters, "
            f"found {sum(1 for b in body if b.strip())}",
            line=len(lines) + 1,
        ) from None
    values = []
    for offset, raw in enumerate(body[:end]):
        try:
            values.append(float(raw))
        except ValueError:
            raise CheckpointError(f"cannot parse parameter {raw!r}", line=offset + 3) from None
    if len(values) != arch.n_params:
        raise CheckpointError(
            f"expected {arch.n_params} parameters, found {len(values)}", line=end + 3
        )
    if any(b.strip() for b in body[end + 1 :]):
        raise CheckpointError("content after END", line=end + 4)
    if expected is not None and expected != arch:
        raise ContractError(
            f"checkpoint architecture {arch.descriptor()!r} does not fit slot {expected.descriptor()!r}"
        )
    return MlpNetwork(arch, np.array(values))


def checkpoint_save(net: MlpNetwork, path) -> None:
    Path(path).write_text(checkpoint_dumps(net), encoding="utf-8")


def checkpoint_load(path, expected: Architecture | None = None) -> MlpNetwork:
    return checkpoint_loads(Path(path).read_text(encoding="utf-8"), expected)


def finite_difference_gradient(
    net: MlpNetwork, loss_grad_at_output: Sequence[float], x, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``sum(seed * net(x))`` w.r.t. params."""
    seed = np.asarray(loss_grad_at_output, dtype=float)
    probe = net.copy()
    grad = np.empty_like(net.params)
    for k in range(net.params.size):
        original = probe.params[k]
        probe.params[k] = original + step
        plus = np.sum(seed * forward(probe, x))
        probe.params[k] = original - step
        minus = np.sum(seed * forward(probe, x))
        probe.params[k] = original
        grad[k] = (plus - minus) / (2 * step)
    return grad
