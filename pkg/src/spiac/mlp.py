"""Dense feedforward networks with hand-written reverse-mode gradients.

All parameters of a network live in one flat float64 vector (``ParamVector``)
so that proximal penalties, target averaging and optimizer steps are plain
vector algebra. Layer ``l`` stores its weight matrix (fan_in x fan_out,
row-major) followed by its bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ParamVector = np.ndarray

IDENTITY = "identity"
TANH = "tanh"
_OUTPUT_ACTIVATIONS = (IDENTITY, TANH)


class ShapeError(ValueError):
    """Raised on any dimension or length mismatch."""


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    output_activation: str
    params: ParamVector
    # per-dimension scale of the tanh head; ignored for identity outputs
    bound: np.ndarray | float = 1.0

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_params(self) -> int:
        return self.params.size

    def layers(self, params: ParamVector | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``params`` (defaults to the network's own)."""
        return _layer_views(self.params if params is None else params, self.layer_sizes)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.output_activation, self.params.copy(), self.bound)


@dataclass
class GradientBundle:
    param_grad: ParamVector | None
    input_grad: np.ndarray | None


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(m * n + n for m, n in zip(layer_sizes[:-1], layer_sizes[1:]))


def _layer_views(params: np.ndarray, sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    views = []
    offset = 0
    for m, n in zip(sizes[:-1], sizes[1:]):
        w = params[offset:offset + m * n].reshape(m, n)
        offset += m * n
        b = params[offset:offset + n]
        offset += n
        views.append((w, b))
    return views


def _check_sizes(layer_sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ShapeError(f"need at least two positive layer sizes, got {list(layer_sizes)}")
    return sizes


def mlp_init(layer_sizes: Sequence[int], output_activation: str = IDENTITY, seed: int = 0,
             bound: np.ndarray | float = 1.0) -> Mlp:
    """Uniform fan-in initialisation of weights, zero biases; deterministic in ``seed``."""
    sizes = _check_sizes(layer_sizes)
    if output_activation not in _OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(sizes))
    for m, (w, _) in zip(sizes[:-1], _layer_views(params, sizes)):
        limit = 1.0 / np.sqrt(m)
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return Mlp(sizes, output_activation, params, np.asarray(bound, dtype=np.float64))


def _as_batch(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    return x2, single


def forward_cache(net: Mlp, x: np.ndarray, params: ParamVector | None = None):
    """Batched forward pass keeping the activations needed by :func:`backward_cache`.

    ``x`` must be 2-d (batch, in_dim). Returns ``(output, cache)``.
    """
    layers = net.layers(params)
    acts = [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
        elif net.output_activation == TANH:
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    out = acts[-1] * net.bound if net.output_activation == TANH else acts[-1]
    return out, acts


def backward_cache(net: Mlp, acts: list[np.ndarray], upstream: np.ndarray,
                   params: ParamVector | None = None, *, want_params: bool = True,
                   want_input: bool = True) -> GradientBundle:
    """Reverse pass for a batch; parameter gradients are summed over the batch.

    Gradients that are not wanted come back as ``None`` and are never computed.
    """
    layers = net.layers(params)
    grad = np.zeros(net.num_params) if want_params else None
    gviews = _layer_views(grad, net.layer_sizes) if want_params else None
    delta = upstream
    if net.output_activation == TANH:
        t = acts[-1]
        delta = delta * net.bound * (1.0 - t * t)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = acts[i]
        if want_params:
            gw, gb = gviews[i]
            np.matmul(h_in.T, delta, out=gw)
            gb[...] = delta.sum(axis=0)
        if i == 0 and not want_input:
            delta = None
            break
        delta = delta @ w.T
        if i > 0:
            # relu'(z) is (h > 0) with h = relu(z)
            delta = delta * (h_in > 0.0)
    return GradientBundle(grad, delta)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, in_dim) array."""
    x2, single = _as_batch(net, x)
    out, _ = forward_cache(net, x2)
    return out[0] if single else out


def backward(net: Mlp, x: np.ndarray, upstream_grad: np.ndarray) -> GradientBundle:
    """Exact gradient of ``upstream_grad . forward(net, x)`` w.r.t. params and input."""
    x2, single = _as_batch(net, x)
    up = np.asarray(upstream_grad, dtype=np.float64)
    up2 = up[None, :] if single else up
    if up2.shape != (x2.shape[0], net.out_dim):
        raise ShapeError(f"upstream shape {up.shape} does not match output dim {net.out_dim}")
    _, acts = forward_cache(net, x2)
    g = backward_cache(net, acts, up2)
    if single:
        g.input_grad = g.input_grad[0]
    return g


def _check_same_length(a: ParamVector, b: ParamVector) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")


def polyak_update(target: ParamVector, source: ParamVector, tau: float) -> ParamVector:
    """``tau * source + (1 - tau) * target``.

    Evaluated as ``target + tau * (source - target)`` so that coincident inputs
    are returned unchanged; ``tau == 1`` copies ``source`` exactly.
    """
    _check_same_length(target, source)
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if tau == 1.0:
        return source.copy()
    return target + tau * (source - target)


def param_axpy(dst: ParamVector, scale: float, src: ParamVector) -> ParamVector:
    _check_same_length(dst, src)
    return dst + scale * src


def finite_difference_check(net: Mlp, x: np.ndarray, h: float = 1e-6) -> float:
    """Worst relative error between :func:`backward` and central differences.

    The scalar differentiated is a fixed projection ``c . forward(net, x)`` with
    ``c`` evenly spaced in [1, 2]. The error of a gradient vector is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``, taken as 0
    when both sides vanish; the worse of the param and input errors is returned.
    """
    if not h > 0.0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    c = np.linspace(1.0, 2.0, net.out_dim)
    analytic = backward(net, x, c)

    def scalar(params: ParamVector, inp: np.ndarray) -> float:
        return float(c @ forward(Mlp(net.layer_sizes, net.output_activation, params, net.bound), inp))

    num_p = np.empty(net.num_params)
    for i in range(net.num_params):
        p_plus, p_minus = net.params.copy(), net.params.copy()
        p_plus[i] += h
        p_minus[i] -= h
        num_p[i] = (scalar(p_plus, x) - scalar(p_minus, x)) / (2.0 * h)
    num_x = np.empty(x.size)
    for i in range(x.size):
        x_plus, x_minus = x.copy(), x.copy()
        x_plus[i] += h
        x_minus[i] -= h
        num_x[i] = (scalar(net.params, x_plus) - scalar(net.params, x_minus)) / (2.0 * h)
    return max(relative_error(analytic.param_grad, num_p),
               relative_error(analytic.input_grad, num_x))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def serialize_params(vec: ParamVector) -> bytes:
    """uint32 little-endian length followed by little-endian float64 values."""
    vec = np.ascontiguousarray(vec, dtype="<f8")
    return struct.pack("<I", vec.size) + vec.tobytes()


def deserialize_params(data: bytes, offset: int = 0) -> tuple[ParamVector, int]:
    """Inverse of :func:`serialize_params`; returns the vector and the next offset."""
    (n,) = struct.unpack_from("<I", data, offset)
    start = offset + 4
    end = start + 8 * n
    if end > len(data):
        raise ShapeError("truncated parameter vector")
    vec = np.frombuffer(data[start:end], dtype="<f8").astype(np.float64)
    return vec, end
