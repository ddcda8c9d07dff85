"""Smooth multilayer perceptrons with exact input jets and weight gradients.

A network maps a point ``(t, x)`` to a scalar.  The forward pass carries a
second-order Taylor jet ``(u, u_t, u_x, u_xx)`` through every layer, so the
input derivatives are exact rather than finite-difference approximations.
Weight gradients of any loss built from jet entries come from a hand-written
reverse pass over the jet computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Activation",
    "ACTIVATIONS",
    "NetworkArch",
    "NetworkState",
    "Jet2",
    "JetTerm",
    "NumericalOverflowError",
    "forward_jet",
    "forward_value",
    "value_and_gradient",
    "loss_gradient",
    "per_point_gradient_sq",
    "init_state",
]


class NumericalOverflowError(FloatingPointError):
    """Raised when a forward pass produces a non-finite intermediate."""


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Scalar activation with closed-form derivatives up to third order.

    ``derivs(a)`` returns ``(g, g', g'', g''')`` evaluated at ``a``;
    ``second`` and ``first`` are the truncated versions.
    """

    name: str
    derivs: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    second: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]
    first: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

    def __call__(self, a):
        return self.first(np.asarray(a, dtype=float))[0]


def _tanh_derivs(a):
    g = np.tanh(a)
    g1 = 1.0 - g * g
    g2 = -2.0 * g * g1
    g3 = -2.0 * g1 * (g1 - 2.0 * g * g)
    return g, g1, g2, g3


def _tanh_second(a):
    g = np.tanh(a)
    g1 = 1.0 - g * g
    return g, g1, -2.0 * g * g1


def _sin_second(a):
    s = np.sin(a)
    return s, np.cos(a), -s


def _sin_derivs(a):
    s, c = np.sin(a), np.cos(a)
    return s, c, -s, -c


def _tanh_first(a):
    g = np.tanh(a)
    return g, 1.0 - g * g


def _sin_first(a):
    return np.sin(a), np.cos(a)


def _identity_first(a):
    return a, np.ones_like(a)


def _identity_derivs(a):
    zero = np.zeros_like(a)
    return a, np.ones_like(a), zero, zero


ACTIVATIONS = {
    "tanh": Activation("tanh", _tanh_derivs, _tanh_second, _tanh_first),
    "sin": Activation("sin", _sin_derivs, _sin_second, _sin_first),
    "identity": Activation("identity", _identity_derivs, lambda a: _identity_derivs(a)[:3], _identity_first),
}


# --------------------------------------------------------------------------
# architecture and state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkArch:
    """Fully connected architecture ``p_0 -> p_1 -> ... -> p_depth``.

    The input dimension ``p_0`` must be 2 (coordinates ``t, x``) and the
    output dimension 1.  Hidden layers use ``activation``; the last layer is
    the identity.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(p) for p in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output entry")
        if any(p < 1 for p in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[0] != 2:
            raise ValueError(f"input dimension must be 2 (t, x), got {sizes[0]}")
        if sizes[-1] != 1:
            raise ValueError(f"output dimension must be 1, got {sizes[-1]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}"
            )

    @classmethod
    def mlp(cls, depth: int = 4, width: int = 64, activation: str = "tanh") -> "NetworkArch":
        """``depth`` weight layers with ``depth - 1`` hidden layers of ``width`` units."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        return cls((2,) + (width,) * (depth - 1) + (1,), activation)

    @property
    def depth(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def q(self) -> int:
        """Total number of weights and biases."""
        s = self.layer_sizes
        return sum(s[i] * (1 + s[i - 1]) for i in range(1, len(s)))

    def layer_slices(self) -> list[tuple[slice, slice, tuple[int, int]]]:
        """Per layer: slice of the weight matrix, slice of the bias, matrix shape.

        Layout is layer 1 first; within a layer the row-major ``p_i x p_{i-1}``
        matrix is followed by the ``p_i`` bias entries.
        """
        out = []
        offset = 0
        s = self.layer_sizes
        for i in range(1, len(s)):
            shape = (s[i], s[i - 1])
            n_w = shape[0] * shape[1]
            w_sl = slice(offset, offset + n_w)
            b_sl = slice(offset + n_w, offset + n_w + s[i])
            out.append((w_sl, b_sl, shape))
            offset = b_sl.stop
        return out

    def layer_of(self, j: int) -> int:
        """1-based layer index that owns flat coordinate ``j``."""
        for i, (w_sl, b_sl, _) in enumerate(self.layer_slices(), start=1):
            if j < b_sl.stop:
                return i
        raise IndexError(j)

    def fan_in(self) -> np.ndarray:
        """Per-coordinate fan-in ``p_{i-1}`` of the owning layer."""
        out = np.empty(self.q)
        for w_sl, b_sl, shape in self.layer_slices():
            out[w_sl.start : b_sl.stop] = shape[1]
        return out


@dataclass(frozen=True)
class NetworkState:
    """Weights ``W``, inclusion mask ``Λ`` and architecture.

    The network is always evaluated at the masked vector ``W * Λ``; the
    masked-out entries of ``weights`` still carry their spike-component values.
    """

    weights: np.ndarray
    mask: np.ndarray
    arch: NetworkArch

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.mask, dtype=bool)
        if w.shape != (self.arch.q,) or m.shape != (self.arch.q,):
            raise ValueError(
                f"weights and mask must have shape ({self.arch.q},), "
                f"got {w.shape} and {m.shape}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mask", m)

    @classmethod
    def dense(cls, arch: NetworkArch, weights) -> "NetworkState":
        return cls(np.asarray(weights, dtype=float), np.ones(arch.q, dtype=bool), arch)

    @property
    def effective(self) -> np.ndarray:
        return np.where(self.mask, self.weights, 0.0)

    @property
    def active_count(self) -> int:
        return int(self.mask.sum())

    def replace(self, weights=None, mask=None) -> "NetworkState":
        return NetworkState(
            self.weights if weights is None else weights,
            self.mask if mask is None else mask,
            self.arch,
        )

    def layers(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        w = self.effective
        for w_sl, b_sl, shape in self.arch.layer_slices():
            yield w[w_sl].reshape(shape), w[b_sl]

    # field protocol shared with analytic stand-ins
    def jet(self, points) -> "Jet2":
        return forward_jet(self, points)

    def value(self, points) -> np.ndarray:
        return forward_value(self, points)


def init_state(arch: NetworkArch, rng: np.random.Generator, mask=None) -> NetworkState:
    """Chain-start state: active weights ``N(0, 1/p_{i-1})``, dense mask by default."""
    w = rng.standard_normal(arch.q) / np.sqrt(arch.fan_in())
    if mask is None:
        mask = np.ones(arch.q, dtype=bool)
    return NetworkState(w, mask, arch)


# --------------------------------------------------------------------------
# jets
# --------------------------------------------------------------------------


@dataclass
class Jet2:
    """Second-order jet ``(u, u_t, u_x, u_xx)``; entries are scalars or arrays."""

    value: np.ndarray
    d_t: np.ndarray
    d_x: np.ndarray
    d_xx: np.ndarray

    def apply(self, act: Activation) -> "Jet2":
        g, g1, g2 = act.second(np.asarray(self.value, dtype=float))
        return Jet2(g, g1 * self.d_t, g1 * self.d_x, g2 * self.d_x**2 + g1 * self.d_xx)

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.value, self.d_t, self.d_x, self.d_xx))

    @classmethod
    def from_array(cls, arr) -> "Jet2":
        return cls(arr[0], arr[1], arr[2], arr[3])


def _as_points(points) -> tuple[np.ndarray, bool]:
    p = np.asarray(points, dtype=float)
    scalar = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 2:
        raise ValueError(f"points must have trailing dimension 2 (t, x), got {p.shape}")
    return p, scalar


def _check_finite(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericalOverflowError(f"non-finite value in layer {layer} of the forward pass")


def forward_value(state: NetworkState, points) -> np.ndarray:
    """Network output at ``points`` (shape ``(P, 2)`` or ``(2,)``)."""
    p, scalar = _as_points(points)
    act = ACTIVATIONS[state.arch.activation]
    z = p
    layers = list(state.layers())
    for i, (w, b) in enumerate(layers, start=1):
        z = z @ w.T + b
        if i < len(layers):
            z = act(z)
        _check_finite(z, i)
    out = z[:, 0]
    return out[0] if scalar else out


def _jet_forward(state: NetworkState, p: np.ndarray, keep: bool):
    """Propagate stacked jets ``Z[c, k, :]`` with ``c`` in (value, t, x, xx)."""
    act = ACTIVATIONS[state.arch.activation]
    n_pts = p.shape[0]
    z = np.zeros((4, n_pts, 2))
    z[0] = p
    z[1, :, 0] = 1.0
    z[2, :, 1] = 1.0
    layers = list(state.layers())
    cache = []
    for i, (w, b) in enumerate(layers, start=1):
        a = z @ w.T
        a[0] += b
        if i == len(layers):
            if keep:
                cache.append((z, None))
            z = a
        else:
            # the third derivative is only needed by the backward pass
            g, g1, g2, g3 = act.derivs(a[0]) if keep else (*act.second(a[0]), None)
            h = np.empty_like(a)
            h[0] = g
            h[1] = g1 * a[1]
            h[2] = g1 * a[2]
            h[3] = g2 * a[2] * a[2] + g1 * a[3]
            if keep:
                cache.append((z, (a, g1, g2, g3)))
            z = h
        _check_finite(z, i)
    return z[:, :, 0], cache


def forward_jet(state: NetworkState, points) -> Jet2:
    """Exact ``(u, u_t, u_x, u_xx)`` of the masked network at ``points``."""
    p, scalar = _as_points(points)
    out, _ = _jet_forward(state, p, keep=False)
    if scalar:
        out = out[:, 0]
    return Jet2.from_array(out)


# --------------------------------------------------------------------------
# weight gradients
# --------------------------------------------------------------------------


@dataclass
class JetTerm:
    """One additive loss term evaluated on a point set.

    ``fn(jet)`` returns ``(loss, adjoint)`` where ``adjoint`` is a ``Jet2`` of
    partial derivatives of the loss with respect to each jet entry at each
    point (use ``0.0`` for entries the term does not read).  With
    ``order=0`` only ``jet.value`` is populated and only ``adjoint.value`` is
    read, which skips the derivative propagation.
    """

    points: np.ndarray
    fn: Callable[[Jet2], tuple[float, Jet2]]
    order: int = 2


def _backward_value(state, p, adjoint_fn, grad, square=False):
    """Value-only forward pass, adjoint evaluation and reverse pass."""
    act = ACTIVATIONS[state.arch.activation]
    layers = list(state.layers())
    zs, slopes = [p], []
    z = p
    for i, (w, b) in enumerate(layers, start=1):
        z = z @ w.T + b
        if i < len(layers):
            z, g1 = act.first(z)
            slopes.append(g1)
        _check_finite(z, i)
        zs.append(z)
    u = zs[-1][:, 0]
    loss, adj = adjoint_fn(Jet2(u, 0.0, 0.0, 0.0))
    dz = np.broadcast_to(np.asarray(adj.value, dtype=float), u.shape).reshape(-1, 1)
    slices = state.arch.layer_slices()
    for i in range(len(layers), 0, -1):
        w, _ = layers[i - 1]
        if i < len(layers):
            dz = dz * slopes[i - 1]
        w_sl, b_sl, shape = slices[i - 1]
        if square:
            grad[w_sl] += ((dz * dz).T @ (zs[i - 1] * zs[i - 1])).ravel()
            grad[b_sl] += (dz * dz).sum(axis=0)
        else:
            grad[w_sl] += (dz.T @ zs[i - 1]).ravel()
            grad[b_sl] += dz.sum(axis=0)
        if i > 1:
            dz = dz @ w
    return loss


def _backward_jet(state, p, adjoint_fn, grad, square=False):
    out, cache = _jet_forward(state, p, keep=True)
    jet = Jet2.from_array(out)
    loss, adj = adjoint_fn(jet)
    n_pts = p.shape[0]
    dz = np.zeros((4, n_pts, 1))
    for c, entry in enumerate((adj.value, adj.d_t, adj.d_x, adj.d_xx)):
        dz[c, :, 0] = entry
    layers = list(state.layers())
    slices = state.arch.layer_slices()
    for i in range(len(layers), 0, -1):
        z_in, extra = cache[i - 1]
        if extra is not None:
            a, g1, g2, g3 = extra
            h0, h1, h2, h3 = dz
            da = np.empty_like(dz)
            da[0] = (
                h0 * g1
                + (h1 * a[1] + h2 * a[2]) * g2
                + h3 * (g3 * a[2] * a[2] + g2 * a[3])
            )
            da[1] = h1 * g1
            da[2] = h2 * g1 + 2.0 * h3 * g2 * a[2]
            da[3] = h3 * g1
            dz = da
        w, _ = layers[i - 1]
        w_sl, b_sl, shape = slices[i - 1]
        if square:
            per_point = np.einsum("cki,ckj->kij", dz, z_in)
            grad[w_sl] += np.einsum("kij,kij->ij", per_point, per_point).ravel()
            grad[b_sl] += (dz[0] * dz[0]).sum(axis=0)
        else:
            flat_dz = dz.reshape(-1, shape[0])
            grad[w_sl] += (flat_dz.T @ z_in.reshape(-1, shape[1])).ravel()
            grad[b_sl] += dz[0].sum(axis=0)
        if i > 1:
            dz = dz @ w
    return loss


def value_and_gradient(state: NetworkState, terms: Sequence[JetTerm]) -> tuple[float, np.ndarray]:
    """Total loss over ``terms`` and its gradient with respect to ``W``.

    The gradient is taken through the masked vector, so coordinates with
    ``Λ_j = 0`` get exactly zero.
    """
    grad = np.zeros(state.arch.q)
    total = 0.0
    for term in terms:
        p, _ = _as_points(term.points)
        if term.order == 0:
            loss = _backward_value(state, p, term.fn, grad)
        else:
            loss = _backward_jet(state, p, term.fn, grad)
        total += float(loss)
    grad *= state.mask
    return total, grad


def per_point_gradient_sq(state: NetworkState, terms: Sequence[JetTerm]) -> np.ndarray:
    """``Σ_k (∂ℓ_k/∂W)²`` summed over all points of all terms.

    Here ``ℓ_k`` is the per-point functional whose jet partials are the
    adjoint returned by ``term.fn``.  Seeding with ``∂r_k/∂jet`` scaled by
    the square root of each point's weight gives the diagonal of the
    Gauss-Newton matrix of a weighted least-squares loss.
    """
    acc = np.zeros(state.arch.q)
    for term in terms:
        p, _ = _as_points(term.points)
        if term.order == 0:
            _backward_value(state, p, term.fn, acc, square=True)
        else:
            _backward_jet(state, p, term.fn, acc, square=True)
    return acc * state.mask


def loss_gradient(state: NetworkState, terms: Sequence[JetTerm], out: np.ndarray | None = None) -> np.ndarray:
    """Gradient of ``sum(term losses)`` with respect to the flat weight vector."""
    _, grad = value_and_gradient(state, terms)
    if out is not None:
        if out.shape != grad.shape:
            raise ValueError(f"gradient buffer has shape {out.shape}, expected {grad.shape}")
        out[...] = grad
        return out
    return grad
