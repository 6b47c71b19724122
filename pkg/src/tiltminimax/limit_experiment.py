"""Optimal rules and minimax values in the Gaussian limit experiment.

The limit experiment observes ``x ~ N(I^{1/2} h, I_d)``. The efficient signal
``s = mu_dot' I^{-1/2} x`` is ``N(mu_dot' h, sigma^2)`` with
``sigma^2 = mu_dot' I^{-1} mu_dot``, and every rule considered here is a
function of ``s`` alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .errors import BracketFailure, EmptyZeroSet, NoInteriorMaximum, OverflowGuard
from .stat_core import (
    SpdMatrix,
    gaussian_expectation_adaptive,
    log_normal_cdf,
    maximize_1d,
    std_normal_cdf,
)
from .tilt import EXP_GUARD, DiscretePrior, TiltedLossSpec

DELTA_TOL = 1e-8


@dataclass(frozen=True)
class LimitSpec:
    """Geometry of the limit experiment: information ``I`` and gradient ``mu_dot``."""

    info: SpdMatrix
    mu_dot: np.ndarray
    dim: int = field(init=False)
    sigma: float = field(init=False)

    def __post_init__(self):
        info = self.info if isinstance(self.info, SpdMatrix) else SpdMatrix(np.atleast_2d(self.info))
        g = np.atleast_1d(np.asarray(self.mu_dot, dtype=float)).copy()
        if g.shape != (info.dim,):
            raise ValueError("mu_dot must have length dim")
        if not np.any(g != 0):
            raise ValueError("mu_dot must be nonzero")
        g.setflags(write=False)
        object.__setattr__(self, "info", info)
        object.__setattr__(self, "mu_dot", g)
        object.__setattr__(self, "dim", info.dim)
        object.__setattr__(self, "sigma", math.sqrt(float(g @ info.inv() @ g)))

    @classmethod
    def scalar(cls, sigma: float) -> "LimitSpec":
        """One-dimensional spec with ``mu_dot = 1`` and information ``1/sigma^2``."""
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        return cls(SpdMatrix(np.array([[1.0 / sigma**2]])), np.array([1.0]))

    @property
    def signal_weights(self) -> np.ndarray:
        """``I^{-1/2} mu_dot`` so that ``s = signal_weights' x``."""
        return self.info.inv_sqrt() @ self.mu_dot

    def h_for_effect(self, delta: float) -> np.ndarray:
        """Least-norm local parameter with ``mu_dot' h = delta``: ``(delta/sigma^2) I^{-1} mu_dot``."""
        return (delta / self.sigma**2) * (self.info.inv() @ self.mu_dot)


@dataclass(frozen=True)
class LimitValue:
    value: float
    delta_star: float | None = None
    lf_prior: DiscretePrior | None = None


def signal(spec: LimitSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise ValueError("x must have length dim")
    return float(spec.signal_weights @ x)


def efficient_estimation_rule(spec: LimitSpec, x) -> float:
    return signal(spec, x)


def efficient_treatment_rule(spec: LimitSpec, x) -> int:
    # weak inequality: a zero signal treats
    return int(signal(spec, x) >= 0.0)


# ---------------------------------------------------------------------------
# Treatment assignment


def treatment_risk(effect, lam: float, sigma: float, trunc_K: float | None = None):
    """Tilted risk of the sign rule at effect ``effect``.

    ``exp(|D|/lam) Phi(-|D|/sigma) + 1 - Phi(-|D|/sigma)``, written as
    ``1 + expm1(|D|/lam) Phi(-|D|/sigma)``. With ``trunc_K`` the loss is
    ``min(|D|, K)``.
    """
    if not (lam > 0 and sigma > 0):
        raise ValueError("lambda and sigma must be positive")
    a = np.abs(np.asarray(effect, dtype=float))
    loss = a if trunc_K is None else np.minimum(a, trunc_K)
    if np.any(loss / lam > EXP_GUARD):
        raise OverflowGuard("overflow guard: loss/lambda exceeds 700")
    out = 1.0 + np.expm1(loss / lam) * special.ndtr(-a / sigma)
    return float(out) if out.ndim == 0 else out


def _log_expm1(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        small = np.log(np.expm1(np.minimum(x, 1.0)))
        large = x + np.log1p(-np.exp(-np.maximum(x, 1.0)))
    return np.where(x > 1.0, large, small)


def delta_objective(delta, lam: float, sigma: float):
    """``(exp(D/lam) - 1) Phi(-D/sigma)``, the nature-side objective."""
    d = np.asarray(delta, dtype=float)
    out = np.expm1(d / lam) * special.ndtr(-d / sigma)
    return float(out) if out.ndim == 0 else out


def solve_delta_star(lam: float, sigma: float, tol: float = DELTA_TOL) -> tuple[float, float]:
    """Maximiser of ``(exp(D/lam) - 1) Phi(-D/sigma)`` over ``D >= 0``.

    The search runs on the log of the objective, which keeps large ``lam``
    (tiny objective values) and small ``lam`` (huge exponentials) stable.
    The upper end starts at ``10 max(1, lam log(1 + 1/lam), sigma)`` and
    doubles until the grid maximum is interior.
    """
    if not (lam > 0 and sigma > 0):
        raise ValueError("lambda and sigma must be positive")

    def log_g(d):
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore"):
            return _log_expm1(d / lam) + log_normal_cdf(-d / sigma)

    hi = 10.0 * max(1.0, lam * math.log1p(1.0 / lam), sigma)
    cap = 1e3 * max(1.0, lam, sigma)
    while True:
        try:
            d_star, _ = maximize_1d(log_g, 0.0, hi, tol=tol, vectorized=True)
            break
        except BracketFailure:
            if hi >= cap:
                raise NoInteriorMaximum("no interior maximum") from None
            hi = min(2.0 * hi, cap)
    return d_star, delta_objective(d_star, lam, sigma)


def treatment_minimax_value(lam: float, sigma: float, spec: LimitSpec | None = None) -> LimitValue:
    """Minimax tilted risk for treatment choice and its two-point least favourable prior."""
    if spec is None:
        spec = LimitSpec.scalar(sigma)
    elif abs(spec.sigma - sigma) > 1e-12 * max(1.0, sigma):
        raise ValueError("sigma disagrees with spec")
    d_star, _ = solve_delta_star(lam, sigma)
    prior = DiscretePrior.symmetric_two_point(spec.h_for_effect(d_star))
    return LimitValue(treatment_risk(d_star, lam, sigma), d_star, prior)


# ---------------------------------------------------------------------------
# Estimation


def estimation_risk(sigma: float, loss: TiltedLossSpec, bias: float = 0.0, scale: float = 1.0) -> float:
    """``E[exp(l(e)/lam)]`` for estimation error ``e ~ N(bias, (scale sigma)^2)``.

    ``bias = scale - 1 = 0`` is the efficient rule. Shrinking the signal by
    ``1 - eps`` at effect ``D`` gives ``bias = -eps D`` and ``scale = 1 - eps``.
    """
    if loss.kind != "estimation":
        raise ValueError("estimation loss required")
    if not sigma > 0 or not scale > 0:
        raise ValueError("sigma and scale must be positive")
    cap = loss.cap
    lam = loss.lam
    r = math.sqrt(cap)

    def f(e):
        return np.expm1(np.minimum(e * e, cap) / lam)

    extra = gaussian_expectation_adaptive(f, bias, (scale * sigma) ** 2, breakpoints=(-r, r))
    return 1.0 + extra


def estimation_minimax_value(spec: LimitSpec | float, loss: TiltedLossSpec) -> LimitValue:
    """``E[exp(min(sigma^2 Z^2, c)/lam)]``: the constant risk of the efficient estimator."""
    sigma = spec.sigma if isinstance(spec, LimitSpec) else float(spec)
    return LimitValue(estimation_risk(sigma, loss))


# ---------------------------------------------------------------------------
# Linex


def linex_loss(d):
    """``exp(-d) + d - 1``."""
    d = np.asarray(d, dtype=float)
    with np.errstate(over="ignore"):
        return np.expm1(-d) + d


def _linex_kinks(M: float) -> tuple[float, float]:
    """Roots of ``exp(-d) + d - 1 = M`` on each side of zero."""
    g = lambda d: float(linex_loss(d)) - M  # noqa: E731
    lo = optimize.brentq(g, -math.log1p(M) - 1.0, 0.0, xtol=1e-14, rtol=1e-15)
    hi = optimize.brentq(g, 0.0, M + 2.0, xtol=1e-14, rtol=1e-15)
    return lo, hi


def linex_risk(shift: float, lam: float, M: float, sigma2: float) -> float:
    """``lam E[expm1(min(linex(Y + shift), M)/lam)]`` with ``Y ~ N(0, sigma2)``.

    An increasing affine map of the tilted risk ``E[exp(.../lam)]``, kept in
    this form so that huge ``lam`` does not cancel to zero.
    """
    k_lo, k_hi = _linex_kinks(M)

    def f(y):
        with np.errstate(over="ignore"):
            return np.expm1(np.minimum(linex_loss(y), M) / lam)

    return lam * gaussian_expectation_adaptive(f, shift, sigma2, breakpoints=(k_lo, k_hi))


def linex_optimal_shift(lam: float, M: float, sigma2: float, tol: float = 1e-7) -> float:
    """Risk-minimising additive shift of the efficient estimator under capped linex loss."""
    if not (lam > 0 and M > 0 and sigma2 > 0):
        raise ValueError("lambda, M and sigma2 must be positive")
    if M / lam > EXP_GUARD:
        raise OverflowGuard("overflow guard: M/lambda exceeds 700")
    sd = math.sqrt(sigma2)
    lo = -1.0 - 3.0 * sd
    hi = 2.0 + sigma2 + 5.0 * sd
    cap = M + 4.0 + 20.0 * sd
    while True:
        try:
            x, _ = maximize_1d(lambda s: -linex_risk(s, lam, M, sigma2), lo, hi, tol=tol)
            return x
        except BracketFailure:
            if hi >= cap and lo <= -cap:
                raise
            hi = min(2.0 * hi, cap)
            lo = max(2.0 * lo, -cap)


# ---------------------------------------------------------------------------
# Reference-parameter profile


@dataclass(frozen=True)
class ValueProfile:
    theta: np.ndarray
    sigma: np.ndarray
    value: np.ndarray
    admissible: np.ndarray
    sup: float
    arg_sup: float


def reference_value_profile(
    theta_grid: Sequence[float],
    info_at: Callable[[float], float],
    mu_at: Callable[[float], float],
    mu_dot_at: Callable[[float], float],
    loss: TiltedLossSpec,
    zero_tol: float = 1e-9,
) -> ValueProfile:
    """Local minimax value at each reference ``theta`` and its supremum.

    For treatment the supremum runs only over grid points with
    ``|mu(theta)| <= zero_tol`` (reference points on the decision boundary).
    Values at non-admissible points are still reported.
    """
    theta = np.asarray(theta_grid, dtype=float)
    sig = np.empty_like(theta)
    val = np.empty_like(theta)
    adm = np.ones(theta.shape, dtype=bool)
    cache: dict[float, float] = {}
    for i, t in enumerate(theta):
        info = float(info_at(t))
        if not info > 0:
            raise ValueError("information must be positive on the grid")
        s = abs(float(mu_dot_at(t))) / math.sqrt(info)
        sig[i] = s
        if s not in cache:
            if loss.kind == "estimation":
                cache[s] = estimation_minimax_value(s, loss).value
            elif loss.kind == "treatment":
                cache[s] = treatment_minimax_value(loss.lam, s).value
            else:
                raise ValueError("profile supports estimation and treatment losses")
        val[i] = cache[s]
        if loss.kind == "treatment":
            adm[i] = abs(float(mu_at(t))) <= zero_tol
    if not adm.any():
        raise EmptyZeroSet("empty zero set")
    masked = np.where(adm, val, -np.inf)
    j = int(np.argmax(masked))
    return ValueProfile(theta, sig, val, adm, float(val[j]), float(theta[j]))
