"""Parameter-linear PDE problems ``H0 u + θᵀ H1 u = f`` on axis-aligned boxes.

Both operators are linear combinations of the jet entries
``(u, u_t, u_x, u_xx)``, which is what the reverse pass in :mod:`bpinn.net`
needs to differentiate residuals with respect to the network weights.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .net import Jet2

__all__ = [
    "BoundarySegment",
    "PdeSpec",
    "AnalyticField",
    "DataSet",
    "CollocationSet",
    "UnsupportedProblemError",
    "NOISE_PRESETS",
    "heat_spec",
    "generate_data",
    "sample_collocation",
]

#: noise level (percent) -> observation sd, scaled linearly from 10% ≈ 0.025
NOISE_PRESETS = {1: 0.0025, 10: 0.025, 25: 0.0625, 50: 0.125}


class UnsupportedProblemError(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySegment:
    """A piece of the boundary with its Dirichlet target.

    ``sampler(u)`` maps uniforms ``u`` in [0, 1) (one per point) to points on
    the segment.  Segments sharing a ``group`` reuse the same uniforms, so
    e.g. ``x = 0`` and ``x = π`` are evaluated at the same times.
    """

    name: str
    group: str
    sampler: Callable[[np.ndarray], np.ndarray]
    target: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form stand-in for a network: anything with ``jet`` and ``value``."""

    jet_fn: Callable[[np.ndarray], Jet2]

    def jet(self, points) -> Jet2:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        j = self.jet_fn(p)
        if np.asarray(points).ndim == 1:
            return Jet2(*(np.asarray(c)[0] for c in (j.value, j.d_t, j.d_x, j.d_xx)))
        return j

    def value(self, points):
        return self.jet(points).value


@dataclass(frozen=True)
class PdeSpec:
    """Problem definition.

    ``h0`` is a length-4 coefficient vector and ``h1`` a ``d x 4`` matrix over
    the jet entries ``(u, u_t, u_x, u_xx)``.  The residual of a field ``u`` at
    parameter ``θ`` is ``f - H0 u - θᵀ H1 u``.
    """

    name: str
    bounds: tuple[tuple[float, float], tuple[float, float]]
    h0: np.ndarray
    h1: np.ndarray
    forcing: Callable[[np.ndarray], np.ndarray]
    boundary_segments: tuple[BoundarySegment, ...]
    true_theta: np.ndarray
    analytic_solution: Callable[[np.ndarray], AnalyticField] | None = None
    order: int = 2

    def __post_init__(self):
        h0 = np.asarray(self.h0, dtype=float).reshape(4)
        h1 = np.atleast_2d(np.asarray(self.h1, dtype=float))
        if h1.shape[1] != 4:
            raise ValueError("h1 must have 4 columns (u, u_t, u_x, u_xx)")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "true_theta", np.atleast_1d(np.asarray(self.true_theta, float)))
        orders = np.array([0, 1, 1, 2])
        used = (h0 != 0) | np.any(h1 != 0, axis=0)
        if used.any() and orders[used].max() > self.order:
            raise ValueError("operators read jet entries above the declared order")

    @property
    def d(self) -> int:
        return self.h1.shape[0]

    @property
    def volume(self) -> float:
        """Lebesgue volume of the box; Monte-Carlo averages are scaled by it."""
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @property
    def center(self) -> np.ndarray:
        return np.array([(lo + hi) / 2 for lo, hi in self.bounds])

    def apply_h0(self, jet: Jet2) -> np.ndarray:
        return np.tensordot(self.h0, jet.as_array(), axes=(0, 0))

    def apply_h1(self, jet: Jet2) -> np.ndarray:
        """``H1 u`` with shape ``(P, d)``."""
        return np.tensordot(jet.as_array(), self.h1, axes=(0, 1))

    def residual(self, jet: Jet2, theta, points) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return self.forcing(points) - self.apply_h0(jet) - self.apply_h1(jet) @ theta

    def contains(self, points, strict: bool = True) -> np.ndarray:
        p = np.atleast_2d(points)
        ok = np.ones(p.shape[0], dtype=bool)
        for k, (lo, hi) in enumerate(self.bounds):
            ok &= (p[:, k] > lo) & (p[:, k] < hi) if strict else (p[:, k] >= lo) & (p[:, k] <= hi)
        return ok


# --------------------------------------------------------------------------
# heat equation
# --------------------------------------------------------------------------


def _heat_solution(theta) -> AnalyticField:
    th = float(np.atleast_1d(theta)[0])

    def jet_fn(p):
        t, x = p[:, 0], p[:, 1]
        e = np.exp(-th * t)
        s, c = np.sin(x), np.cos(x)
        return Jet2(s * e, -th * s * e, c * e, -s * e)

    return AnalyticField(jet_fn)


def heat_spec(theta_star: float = 0.5, t_max: float = 1.0, length: float = math.pi) -> PdeSpec:
    """``u_t - θ u_xx = 0`` on ``(0, t_max) x (0, length)`` with ``u(0, x) = sin x``.

    The default geometry has ``u_θ(t, x) = sin(x) exp(-θ t)`` as exact
    solution; ``length`` other than π breaks that, so the analytic solution
    is dropped in that case.
    """
    h0 = np.array([0.0, 1.0, 0.0, 0.0])  # u_t
    h1 = np.array([[0.0, 0.0, 0.0, -1.0]])  # -u_xx, so the residual is θ u_xx - u_t

    def zero(p):
        return np.zeros(np.atleast_2d(p).shape[0])

    segments = (
        BoundarySegment(
            "x=0", "space", lambda u: np.column_stack([t_max * u, np.zeros_like(u)]), zero
        ),
        BoundarySegment(
            "x=L", "space", lambda u: np.column_stack([t_max * u, np.full_like(u, length)]), zero
        ),
        BoundarySegment(
            "t=0",
            "time",
            lambda u: np.column_stack([np.zeros_like(u), length * u]),
            lambda p: np.sin(np.atleast_2d(p)[:, 1]),
        ),
    )
    exact = _heat_solution if math.isclose(length, math.pi) else None
    return PdeSpec(
        name="heat",
        bounds=((0.0, t_max), (0.0, length)),
        h0=h0,
        h1=h1,
        forcing=zero,
        boundary_segments=segments,
        true_theta=np.array([theta_star]),
        analytic_solution=exact,
        order=2,
    )


# --------------------------------------------------------------------------
# data and collocation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DataSet:
    sensors: np.ndarray
    observations: np.ndarray
    noise_sd: float

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sensors, dtype=float))
        y = np.atleast_1d(np.asarray(self.observations, dtype=float))
        if s.shape[0] != y.shape[0]:
            raise ValueError(f"{s.shape[0]} sensors but {y.shape[0]} observations")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be non-negative")
        object.__setattr__(self, "sensors", s)
        object.__setattr__(self, "observations", y)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y"])
            for (t, x), y in zip(self.sensors, self.observations):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, noise_sd: float) -> "DataSet":
        rows = list(csv.DictReader(open(path, newline="")))
        s = np.array([[float(r["t"]), float(r["x"])] for r in rows])
        y = np.array([float(r["y"]) for r in rows])
        return cls(s, y, noise_sd)


@dataclass(frozen=True)
class CollocationSet:
    interior: np.ndarray
    boundary: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.interior.shape[0]

    @property
    def B(self) -> int:
        sizes = {v.shape[0] for v in self.boundary.values()}
        return sizes.pop() if len(sizes) == 1 else 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "tag"])
            for t, x in self.interior:
                w.writerow([repr(float(t)), repr(float(x)), "interior"])
            for name, pts in self.boundary.items():
                for t, x in pts:
                    w.writerow([repr(float(t)), repr(float(x)), name])

    @classmethod
    def from_csv(cls, path) -> "CollocationSet":
        interior, boundary = [], {}
        for r in csv.DictReader(open(path, newline="")):
            pt = [float(r["t"]), float(r["x"])]
            if r["tag"] == "interior":
                interior.append(pt)
            else:
                boundary.setdefault(r["tag"], []).append(pt)
        return cls(
            np.array(interior).reshape(-1, 2),
            {k: np.array(v) for k, v in boundary.items()},
        )


def _sensor_grid(spec: PdeSpec, n: int) -> np.ndarray:
    """Near-square grid of ``n`` points with half-cell offsets (row-major fill)."""
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    (t0, t1), (x0, x1) = spec.bounds
    tt = t0 + (np.arange(rows) + 0.5) * (t1 - t0) / rows
    xx = x0 + (np.arange(cols) + 0.5) * (x1 - x0) / cols
    grid = np.array([(t, x) for t in tt for x in xx])
    return grid[:n]


def generate_data(spec: PdeSpec, n: int, sigma: float, seed: int) -> DataSet:
    """Noisy observations of ``u_{θ*}`` on an evenly spaced interior grid.

    ``sigma = 0`` gives exact values (usable by the ERM baseline, not by the
    Gaussian likelihood).
    """
    if spec.analytic_solution is None:
        raise UnsupportedProblemError(f"problem {spec.name!r} has no analytic solution")
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    sensors = _sensor_grid(spec, n)
    u = spec.analytic_solution(spec.true_theta).value(sensors)
    eps = np.random.default_rng(seed).standard_normal(n)
    y = u + sigma * eps
    return DataSet(sensors, y, float(sigma))


def sample_collocation(spec: PdeSpec, N: int = 10_000, B: int = 128, seed: int = 0) -> CollocationSet:
    """``N`` uniform interior points and ``B`` uniform points per boundary group."""
    if N < 1 or B < 1:
        raise ValueError("N and B must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in spec.bounds])
    hi = np.array([b[1] for b in spec.bounds])
    interior = lo + (hi - lo) * rng.random((N, len(spec.bounds)))
    # uniforms in [0, 1) can hit the lower face exactly; resample those
    bad = ~spec.contains(interior)
    while bad.any():
        interior[bad] = lo + (hi - lo) * rng.random((int(bad.sum()), len(spec.bounds)))
        bad = ~spec.contains(interior)
    uniforms: dict[str, np.ndarray] = {}
    boundary = {}
    for seg in spec.boundary_segments:
        if seg.group not in uniforms:
            uniforms[seg.group] = rng.random(B)
        boundary[seg.name] = seg.sampler(uniforms[seg.group])
    return CollocationSet(interior, boundary)
