"""Deterministic numeric substrate.

Normal CDF, Gaussian expectations (Gauss-Hermite and an adaptive composite
Gauss-Legendre rule for kinked integrands), a global-then-local 1-D
maximizer and value-derived random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import BracketFailure, NonFiniteIntegrand

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

_UINT64_MAX = 2**64 - 1


# ---------------------------------------------------------------------------
# Normal distribution


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function.

    Raises ``ValueError("invalid argument")`` on NaN.
    """
    z = float(z)
    if math.isnan(z):
        raise ValueError("invalid argument")
    return 0.5 * math.erfc(-z / SQRT2)


def normal_cdf(z):
    """Vectorised :func:`std_normal_cdf`."""
    z = np.asarray(z, dtype=float)
    if np.isnan(z).any():
        raise ValueError("invalid argument")
    return 0.5 * special.erfc(-z / SQRT2)


def log_normal_cdf(z):
    """``log Phi(z)``, accurate far into the lower tail."""
    return special.log_ndtr(z)


def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / SQRT2PI


# ---------------------------------------------------------------------------
# Matrices


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive-definite matrix (information or moment covariance)."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        scale = max(np.max(np.abs(a)), 1e-300)
        if np.max(np.abs(a - a.T)) > 1e-12 * scale:
            raise ValueError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ValueError("matrix is not positive definite") from exc
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def cholesky(self) -> np.ndarray:
        return self._chol.copy()

    def inv(self) -> np.ndarray:
        return np.linalg.inv(self.entries)

    def _eig(self):
        w, v = np.linalg.eigh(self.entries)
        return w, v

    def sqrt(self) -> np.ndarray:
        w, v = self._eig()
        return (v * np.sqrt(w)) @ v.T

    def inv_sqrt(self) -> np.ndarray:
        """Symmetric inverse square root."""
        w, v = self._eig()
        return (v / np.sqrt(w)) @ v.T


# ---------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations under the standard normal."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be positive")
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-D arrays of equal length")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        weights = weights / weights.sum()
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)


@lru_cache(maxsize=32)
def gauss_hermite(order: int = 80) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule, weights normalised to sum to one."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    # symmetrise against round-off in the eigen-solver
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(order, x, w)


def gaussian_expectation(
    f: Callable,
    mean: float,
    variance: float,
    rule: QuadratureRule | None = None,
    vectorized: bool = True,
) -> float:
    """``E[f(X)]`` for ``X ~ N(mean, variance)`` by a fixed quadrature rule."""
    if not variance > 0:
        raise ValueError("variance must be positive")
    rule = rule if rule is not None else gauss_hermite(80)
    x = mean + math.sqrt(variance) * rule.nodes
    if vectorized:
        vals = np.asarray(f(x), dtype=float)
    else:
        vals = np.array([f(xi) for xi in x], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("non-finite integrand")
    return float(np.dot(rule.weights, vals))


@lru_cache(maxsize=4)
def _legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


# Gaussian mass beyond |z| = 40 is below exp(-800); with tilted integrands
# capped at exp(700) that tail is negligible.
_Z_LIMIT = 40.0
_MAX_ACTIVE_PANELS = 4096
_ANCHORS = (-20.0, -10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0, 20.0)


def gaussian_expectation_adaptive(
    f: Callable,
    mean: float,
    variance: float,
    breakpoints: Sequence[float] = (),
    rtol: float = 1e-13,
    max_levels: int = 40,
) -> float:
    """``E[f(X)]`` for kinked or sharply peaked ``f`` (vectorised).

    Composite Gauss-Legendre on panels of the standardised variable, split
    at ``breakpoints`` (given in the original ``x`` scale) and bisected
    wherever the 8- and 16-point panel estimates disagree.
    """
    if not variance > 0:
        raise ValueError("variance must be positive")
    sd = math.sqrt(variance)
    cuts = {-_Z_LIMIT, _Z_LIMIT, *_ANCHORS}
    for b in breakpoints:
        z = (float(b) - mean) / sd
        if math.isfinite(z) and -_Z_LIMIT < z < _Z_LIMIT:
            cuts.add(z)
    edges = np.array(sorted(cuts))
    # seed panels no wider than one standard deviation
    pieces = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil(b - a)))
        pieces.append(np.linspace(a, b, k + 1)[:-1])
    left = np.concatenate(pieces)
    right = np.append(left[1:], edges[-1])

    x8, w8 = _legendre(8)
    x16, w16 = _legendre(16)

    def panel(a, b, xs, ws):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        z = mid[:, None] + half[:, None] * xs[None, :]
        vals = np.asarray(f(mean + sd * z), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteIntegrand("non-finite integrand")
        dens = np.exp(-0.5 * z * z) / SQRT2PI
        return half * np.sum(ws[None, :] * vals * dens, axis=1)

    done = []
    for _ in range(max_levels):
        coarse = panel(left, right, x8, w8)
        fine = panel(left, right, x16, w16)
        err = np.abs(fine - coarse)
        scale = abs(math.fsum(done)) + np.sum(np.abs(fine))
        share = (right - left) / (2.0 * _Z_LIMIT)
        ok = err <= rtol * scale * share + 1e-14 * np.abs(fine) + 1e-300
        done.extend(fine[ok].tolist())
        if ok.all():
            return math.fsum(done)
        left, right = left[~ok], right[~ok]
        if len(left) > _MAX_ACTIVE_PANELS:
            break
        mid = 0.5 * (left + right)
        left, right = np.concatenate([left, mid]), np.concatenate([mid, right])
        order = np.argsort(left, kind="stable")
        left, right = left[order], right[order]
    # accept the finest estimate; remaining disagreement is round-off level
    done.extend(panel(left, right, x16, w16).tolist())
    return math.fsum(done)


# ---------------------------------------------------------------------------
# 1-D optimisation


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float):
    """Golden-section search for a maximum of ``f`` on ``[a, b]``.

    Returns ``(x, f(x))`` for the best point evaluated.
    """
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    if fc >= fd:
        return c, fc
    return d, fd


def maximize_1d(
    f: Callable,
    lo: float,
    hi: float,
    tol: float = 1e-8,
    n_grid: int = 1025,
    vectorized: bool = False,
    allow_boundary: bool = False,
) -> tuple[float, float]:
    """Global-then-local maximisation of ``f`` on ``[lo, hi]``.

    A grid scan of ``n_grid`` points (ties go to the smallest argument)
    brackets the global maximum; golden-section search then refines inside
    the two grid cells around the grid winner. Raises
    :class:`BracketFailure` when the grid winner is ``lo`` or ``hi`` unless
    ``allow_boundary`` is set. A constant ``f`` returns the leftmost point.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if n_grid < 1024:
        raise ValueError("grid phase needs at least 1024 points")
    grid = np.linspace(lo, hi, n_grid)
    if vectorized:
        vals = np.asarray(f(grid), dtype=float)
    else:
        vals = np.array([f(float(x)) for x in grid], dtype=float)
    if np.isnan(vals).any() or np.isposinf(vals).any():
        raise NonFiniteIntegrand("objective is NaN or +inf on the grid")
    i = int(np.argmax(vals))
    if vals[i] == vals.min():
        return float(grid[0]), float(vals[0])
    if (i == 0 or i == n_grid - 1) and not allow_boundary:
        raise BracketFailure("bracket failure")

    if vectorized:
        def g(x):
            return float(np.asarray(f(np.array([x])), dtype=float)[0])
    else:
        g = f
    a = float(grid[max(i - 1, 0)])
    b = float(grid[min(i + 1, n_grid - 1)])
    x, fx = golden_section_max(g, a, b, tol)
    if i == 0 or i == n_grid - 1:
        # boundary winner: the refinement may only improve on the edge value
        edge = float(grid[i])
        if not fx > vals[i]:
            return edge, float(vals[i])
    if fx < vals[i]:
        return float(grid[i]), float(vals[i])
    return float(x), float(fx)


# ---------------------------------------------------------------------------
# Random streams


@dataclass(frozen=True)
class StreamSeed:
    root_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("root_seed", "stream_index"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= int(v) <= _UINT64_MAX:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")
            object.__setattr__(self, name, int(v))

    def child(self, index: int) -> "StreamSeed":
        return StreamSeed(self.root_seed, index)


def derive_stream(seed: StreamSeed) -> np.random.Generator:
    """Generator whose output depends only on ``(root_seed, stream_index)``.

    PCG64 seeded through ``SeedSequence`` with the stream index as spawn key;
    normals come from NumPy's ziggurat sampler.
    """
    ss = np.random.SeedSequence(seed.root_seed, spawn_key=(seed.stream_index,))
    return np.random.Generator(np.random.PCG64(ss))


def bernoulli(rng: np.random.Generator, p: float, size) -> np.ndarray:
    """Bernoulli(p) draws as int8 via uniform comparison."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return (rng.random(size) < p).astype(np.int8)
