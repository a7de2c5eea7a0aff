"""Fully connected tanh networks with exact input-derivative jets.

The forward pass carries, for every unit, its value together with its
gradient and Hessian with respect to the network inputs. All of these are
stacked along a "channel" axis so one matrix product per layer moves every
derivative order through the linear maps::

    channel 0                  value
    channels 1 .. d            d/dx_k
    channels 1+d .. d+d*d      d2/dx_k dx_l   (row-major in k, l)

The reverse pass is the hand-derived adjoint of that propagation and gives
the gradient of any linear functional of the jets with respect to the flat
parameter vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InvalidWidths, ShapeMismatch


def n_channels(d: int, order: int) -> int:
    return (1, 1 + d, 1 + d + d * d)[order]


@dataclass
class JetBundle:
    """Values and input derivatives of a vector-valued map at a batch of points.

    Shapes are ``value (N, q)``, ``grad (N, q, d)``, ``hess (N, q, d, d)``.
    Entries above the requested order are ``None``.
    """

    value: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None

    @property
    def order(self) -> int:
        if self.hess is not None:
            return 2
        if self.grad is not None:
            return 1
        return 0

    @property
    def n_points(self) -> int:
        return self.value.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.value.shape[1]

    def to_channels(self) -> np.ndarray:
        """Stack into the ``(N, channels, q)`` layout used internally."""
        n, q = self.value.shape
        parts = [self.value[:, None, :]]
        if self.grad is not None:
            parts.append(np.moveaxis(self.grad, 2, 1))
        if self.hess is not None:
            d = self.hess.shape[-1]
            parts.append(np.moveaxis(self.hess.reshape(n, q, d * d), 2, 1))
        return np.concatenate(parts, axis=1)

    @classmethod
    def from_channels(cls, ch: np.ndarray, d: int, order: int) -> "JetBundle":
        n, _, q = ch.shape
        value = ch[:, 0, :]
        grad = hess = None
        if order >= 1:
            grad = np.moveaxis(ch[:, 1 : 1 + d, :], 1, 2)
        if order >= 2:
            hess = np.moveaxis(ch[:, 1 + d : 1 + d + d * d, :], 1, 2).reshape(n, q, d, d)
        return cls(value, grad, hess)

    def output(self, o: int) -> "JetBundle":
        """Jets of a single output, keeping a length-1 output axis."""
        sl = slice(o, o + 1)
        return JetBundle(
            self.value[:, sl],
            None if self.grad is None else self.grad[:, sl],
            None if self.hess is None else self.hess[:, sl],
        )

    def zeros_like(self) -> "JetBundle":
        return JetBundle(
            np.zeros_like(self.value),
            None if self.grad is None else np.zeros_like(self.grad),
            None if self.hess is None else np.zeros_like(self.hess),
        )


class AdjointSeed(JetBundle):
    """Cotangent weights on each entry of a ``JetBundle`` (same shapes)."""


@dataclass
class MeanNetwork:
    """Feed-forward network, tanh on hidden layers and identity on the output.

    Parameters live in a single flat vector ``theta`` ordered layer by layer,
    each layer as its weight matrix ``(w_out, w_in)`` in row-major order
    followed by its bias.
    """

    widths: tuple[int, ...]
    theta: np.ndarray
    seed: int | None = None
    _shapes: list = field(init=False, repr=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        _check_widths(self.widths)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (parameter_count(self.widths),):
            raise ShapeMismatch(
                f"theta has shape {self.theta.shape}, widths need {parameter_count(self.widths)}"
            )
        self._shapes = list(zip(self.widths[:-1], self.widths[1:]))

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def q(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def layers(self, theta: np.ndarray | None = None):
        """Yield ``(W, b)`` views into ``theta`` (defaults to the network's own)."""
        theta = self.theta if theta is None else theta
        pos = 0
        for w_in, w_out in self._shapes:
            W = theta[pos : pos + w_in * w_out].reshape(w_out, w_in)
            pos += w_in * w_out
            b = theta[pos : pos + w_out]
            pos += w_out
            yield W, b

    def with_theta(self, theta) -> "MeanNetwork":
        return MeanNetwork(self.widths, np.array(theta, dtype=np.float64), self.seed)

    def __call__(self, x) -> np.ndarray:
        return forward_jet(self, x, order=0).value


def _check_widths(widths: Sequence[int]) -> None:
    if len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise InvalidWidths(f"need at least input and output widths, all >= 1; got {list(widths)}")


def parameter_count(widths: Sequence[int]) -> int:
    _check_widths(widths)
    return sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))


def init_network(widths: Sequence[int], seed: int) -> MeanNetwork:
    """Glorot-uniform weights and zero biases drawn from a PCG64 stream.

    Identical ``(widths, seed)`` give bit-identical parameters.
    """
    widths = tuple(int(w) for w in widths)
    _check_widths(widths)
    rng = np.random.Generator(np.random.PCG64(seed))
    chunks = []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (w_in + w_out))
        chunks.append(rng.uniform(-bound, bound, size=w_out * w_in))
        chunks.append(np.zeros(w_out))
    return MeanNetwork(widths, np.concatenate(chunks), seed)


@dataclass
class Tape:
    """Intermediate quantities kept by the forward pass for the adjoint."""

    d: int
    order: int
    inputs: list          # channel stack entering each linear map, (N, C, w_in)
    pre: list             # pre-activation stacks of hidden layers, (N, C, w)
    tanh: list            # tanh of pre-activation values, (N, w)


def _input_channels(x: np.ndarray, order: int) -> np.ndarray:
    n, d = x.shape
    ch = np.zeros((n, n_channels(d, order), d))
    ch[:, 0, :] = x
    if order >= 1:
        ch[:, 1 : 1 + d, :] = np.eye(d)
    return ch


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _squeeze(jets: JetBundle) -> JetBundle:
    return JetBundle(
        jets.value[0],
        None if jets.grad is None else jets.grad[0],
        None if jets.hess is None else jets.hess[0],
    )


def forward_tape(net: MeanNetwork, x: np.ndarray, order: int = 2, theta=None) -> tuple[np.ndarray, Tape]:
    """Run the jet propagation on a batch ``x (N, d)``.

    Returns the output channel stack ``(N, C, q)`` and the tape needed by
    :func:`backprop`.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    n, d = x.shape
    if d != net.d:
        raise ShapeMismatch(f"points have dimension {d}, network expects {net.d}")
    layers = list(net.layers(theta))
    tape = Tape(d=d, order=order, inputs=[], pre=[], tanh=[])
    a = _input_channels(x, order)
    for i, (W, b) in enumerate(layers):
        tape.inputs.append(a)
        z = (a.reshape(-1, a.shape[2]) @ W.T).reshape(n, a.shape[1], W.shape[0])
        z[:, 0, :] += b
        if i == len(layers) - 1:
            return z, tape
        h, s = _kernels.tanh_forward(z, d, order)
        tape.pre.append(z)
        tape.tanh.append(s)
        a = h
    raise AssertionError("unreachable")


def backprop(net: MeanNetwork, tape: Tape, seed_channels: np.ndarray, theta=None) -> np.ndarray:
    """Gradient of ``sum(seed * jets)`` with respect to the flat parameters.

    ``seed_channels`` has the ``(N, C, q)`` channel layout of the forward
    output for the same tape.
    """
    d, order = tape.d, tape.order
    layers = list(net.layers(theta))
    grads: list[np.ndarray] = []
    g = seed_channels
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a = tape.inputs[i]
        n, c, w_in = a.shape
        w_out = W.shape[0]
        gW = g.reshape(n * c, w_out).T @ a.reshape(n * c, w_in)
        gb = g[:, 0, :].sum(axis=0)
        grads.append(gb)
        grads.append(gW.ravel())
        if i == 0:
            break
        ga = (g.reshape(n * c, w_out) @ W).reshape(n, c, w_in)  # adjoint of the activation output
        g = _kernels.tanh_adjoint(ga, tape.pre[i - 1], tape.tanh[i - 1], d, order)
    return np.concatenate(grads[::-1])


def forward_jet(net: MeanNetwork, x, order: int = 2) -> JetBundle:
    """Value, input gradient and input Hessian of the network at ``x``.

    ``x`` is one point ``(d,)`` or a batch ``(N, d)``; the leading batch axis
    of the result follows the input.
    """
    xb, single = _as_batch(x)
    out, _ = forward_tape(net, xb, order)
    jets = JetBundle.from_channels(out, net.d, order)
    return _squeeze(jets) if single else jets


def param_gradient(net: MeanNetwork, points, seeds: JetBundle) -> np.ndarray:
    """Gradient with respect to ``theta`` of ``sum(seeds * jets(points))``.

    The derivative order is taken from the highest seed entry present.
    """
    xb, single = _as_batch(points)
    if single:
        seeds = JetBundle(
            seeds.value[None],
            None if seeds.grad is None else seeds.grad[None],
            None if seeds.hess is None else seeds.hess[None],
        )
    order = seeds.order
    n = xb.shape[0]
    expect = {"value": (n, net.q), "grad": (n, net.q, net.d), "hess": (n, net.q, net.d, net.d)}
    for name, shape in expect.items():
        arr = getattr(seeds, name)
        if arr is not None and arr.shape != shape:
            raise ShapeMismatch(f"seed {name} has shape {arr.shape}, expected {shape}")
    _, tape = forward_tape(net, xb, order)
    return backprop(net, tape, seeds.to_channels())


def save_checkpoint(net: MeanNetwork, path) -> None:
    """Write the network as text: a ``widths`` header then one float per line.

    Floats use ``repr`` so they round-trip exactly.
    """
    lines = ["widths " + " ".join(str(w) for w in net.widths)]
    if net.seed is not None:
        lines.append(f"seed {net.seed}")
    lines.extend(repr(float(v)) for v in net.theta)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> MeanNetwork:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if head[0] != "widths":
        raise ValueError(f"{path}: first line must start with 'widths'")
    widths = tuple(int(w) for w in head[1:])
    seed = None
    body = lines[1:]
    if body and body[0].startswith("seed "):
        seed = int(body[0].split()[1])
        body = body[1:]
    theta = np.array([float(v) for v in body if v.strip()])
    return MeanNetwork(widths, theta, seed)
