"""Exponentially tilted decision criteria.

Misspecification concern bounded by relative entropy turns a loss ``l`` into
``exp(l / lam)``; the functions here evaluate that criterion, its
Donsker-Varadhan form, the phi-divergence dual, a smooth-ambiguity variant
and geometric mixtures of two likelihoods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import OverflowGuard
from .stat_core import maximize_1d

EXP_GUARD = 700.0

LOSS_KINDS = ("estimation", "treatment", "linex")


def _check_exponent(x, what="loss/lambda"):
    if np.any(np.asarray(x) > EXP_GUARD):
        raise OverflowGuard(f"overflow guard: {what} exceeds {EXP_GUARD:g}")


@dataclass(frozen=True)
class TiltedLossSpec:
    """Loss family plus tilt parameter.

    ``lam`` is the misspecification multiplier (``lam -> inf`` recovers the
    untilted problem). ``bound_c`` caps the squared-error estimation loss,
    ``trunc_K`` truncates any loss at ``K`` and ``linex_M`` caps linex loss.
    """

    kind: str
    lam: float
    bound_c: float | None = None
    trunc_K: float | None = None
    linex_M: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("lambda must be positive and finite")
        if self.kind == "estimation" and self.bound_c is None:
            raise ValueError("estimation loss needs bound_c")
        if self.kind == "linex" and self.linex_M is None:
            raise ValueError("linex loss needs linex_M")
        for name in ("bound_c", "trunc_K", "linex_M"):
            v = getattr(self, name)
            if v is None:
                continue
            if not v > 0:
                raise ValueError(f"{name} must be positive")
            _check_exponent(v / self.lam, f"{name}/lambda")

    @property
    def cap(self) -> float:
        """Largest loss value the spec can produce (inf for untruncated treatment)."""
        caps = [math.inf]
        if self.kind == "estimation":
            caps.append(self.bound_c)
        if self.kind == "linex":
            caps.append(self.linex_M)
        if self.trunc_K is not None:
            caps.append(self.trunc_K)
        return min(caps)


@dataclass(frozen=True)
class DiscretePrior:
    """Finitely supported prior over local parameters ``h`` (rows of ``support``)."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if s.ndim != 2 or s.shape[0] != w.shape[0] or w.size == 0:
            raise ValueError("support and weights disagree in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if len({tuple(row) for row in s.tolist()}) != s.shape[0]:
            raise ValueError("support points must be distinct")
        s.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point_mass(cls, h) -> "DiscretePrior":
        return cls(np.atleast_2d(np.asarray(h, dtype=float)), [1.0])

    @classmethod
    def symmetric_two_point(cls, h) -> "DiscretePrior":
        h = np.atleast_1d(np.asarray(h, dtype=float))
        return cls(np.vstack([-h, h]), [0.5, 0.5])

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def __len__(self) -> int:
        return self.support.shape[0]

    def effects(self, mu_dot) -> np.ndarray:
        """Scalar effects ``mu_dot' h`` for each atom."""
        return self.support @ np.atleast_1d(np.asarray(mu_dot, dtype=float))

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        for h, w in zip(self.support, self.weights):
            d = np.max(np.abs(self.support + h), axis=1)
            j = int(np.argmin(d))
            if d[j] > tol or abs(self.weights[j] - w) > tol:
                return False
        return True


class PhiDivergence(str, Enum):
    KL = "kl"
    NEYMAN_CHI2 = "neyman_chi2"

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self is PhiDivergence.KL:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        return (x - 1.0) ** 2


def tilted_value(loss: float, lam: float) -> float:
    """``exp(loss / lam)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    _check_exponent(loss / lam)
    return math.exp(loss / lam)


def dv_criterion(utilities, weights, lam: float) -> float:
    """Donsker-Varadhan value ``-lam log sum_i w_i exp(-u_i / lam)``."""
    u = np.asarray(utilities, dtype=float)
    w = np.asarray(weights, dtype=float)
    if u.shape != w.shape:
        raise ValueError("utilities and weights must have equal shape")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    _check_exponent(np.abs(u) / lam, "|utility|/lambda")
    return float(-lam * logsumexp(-u / lam, b=w))


def bayes_tilted_risk(prior: DiscretePrior, risk_at: Callable) -> float:
    """Prior-weighted risk ``sum_i w_i risk_at(h_i)``."""
    vals = [float(risk_at(h if h.size > 1 else h[0])) for h in prior.support]
    return math.fsum(w * v for w, v in zip(prior.weights, vals))


def phi_conjugate(div: PhiDivergence | str, y):
    """Convex conjugate ``phi*(y)``.

    KL: ``exp(y - 1)``. Neyman chi-square with ``phi(x) = (x-1)^2`` on
    ``x >= 0``: ``y + y^2/4`` for ``y >= -2`` and ``-1`` below.
    """
    div = PhiDivergence(div)
    y = np.asarray(y, dtype=float)
    if div is PhiDivergence.KL:
        _check_exponent(y - 1.0, "conjugate argument")
        out = np.exp(y - 1.0)
    else:
        out = np.where(y >= -2.0, y + 0.25 * y * y, -1.0)
    return float(out) if out.ndim == 0 else out


def phi_variational_risk(
    div: PhiDivergence | str,
    prior: DiscretePrior,
    loss_samples_at: Callable,
    lam: float,
    eta_bracket: tuple[float, float],
    tol: float = 1e-10,
) -> float:
    """``lam * sup_eta { eta - sum_pi E[phi*(eta + l/lam)] }`` for a fixed prior.

    ``loss_samples_at(h)`` returns ``(losses, weights)`` describing the
    sampling distribution of the loss at ``h``.
    """
    div = PhiDivergence(div)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    blocks = []
    for h, w in zip(prior.support, prior.weights):
        losses, lw = loss_samples_at(h if h.size > 1 else h[0])
        losses = np.asarray(losses, dtype=float)
        lw = np.asarray(lw, dtype=float)
        blocks.append((losses / lam, w * lw))
    scaled = np.concatenate([b[0] for b in blocks])
    mass = np.concatenate([b[1] for b in blocks])
    lo, hi = eta_bracket
    if div is PhiDivergence.KL:
        _check_exponent(hi - 1.0 + scaled.max(), "conjugate argument")

    def objective(eta):
        eta = np.atleast_1d(eta)
        conj = phi_conjugate(div, eta[:, None] + scaled[None, :])
        return eta - np.atleast_2d(conj) @ mass

    _, best = maximize_1d(objective, lo, hi, tol=tol, vectorized=True)
    return lam * best


def effective_prior(hyperprior: Sequence[float], priors: Sequence[DiscretePrior]) -> DiscretePrior:
    """Collapse a hyperprior over priors into the mixed prior ``sum_j rho_j pi_j``."""
    acc: dict[tuple, float] = {}
    for rho, pi in zip(hyperprior, priors):
        for h, w in zip(pi.support, pi.weights):
            key = tuple(h.tolist())
            acc[key] = acc.get(key, 0.0) + rho * w
    support = np.array(list(acc.keys()))
    weights = np.array(list(acc.values()))
    return DiscretePrior(support, weights / weights.sum())


def smooth_ambiguity_risk(
    hyperprior: Sequence[float],
    priors: Sequence[DiscretePrior],
    risk_at: Callable,
    lam: float,
    xi: float,
) -> float:
    """``-sum_j rho_j (bayes_tilted_risk(pi_j))^(lam/xi)``.

    ``xi`` is aversion to prior uncertainty; at ``xi == lam`` this is minus
    the tilted risk under :func:`effective_prior`.
    """
    rho = np.asarray(hyperprior, dtype=float)
    if rho.size != len(priors) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
        raise ValueError("hyperprior must be a probability vector over priors")
    if not (lam > 0 and xi > 0):
        raise ValueError("lambda and xi must be positive")
    power = lam / xi
    if power == 1.0:
        return -bayes_tilted_risk(effective_prior(rho, priors), risk_at)
    total = []
    for r, pi in zip(rho, priors):
        inner = bayes_tilted_risk(pi, risk_at)
        if inner <= 0:
            raise ValueError("inner tilted risk must be positive")
        _check_exponent(power * math.log(inner), "(lambda/xi) log risk")
        total.append(r * math.exp(power * math.log(inner)))
    return -math.fsum(total)


def geometric_mixture_logpdf(logp1, logp2, alpha: float, log_normalizer=None):
    """``alpha*logp1 + (1-alpha)*logp2`` (unnormalised unless a normaliser is given)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = alpha * np.asarray(logp1, dtype=float) + (1.0 - alpha) * np.asarray(logp2, dtype=float)
    if log_normalizer is not None:
        out = out - log_normalizer
    return float(out) if np.ndim(out) == 0 else out


def geometric_mixture_log_normalizer(logp1, logp2, alpha: float, measure_weights=None) -> float:
    """``log sum_k m_k p1(x_k)^alpha p2(x_k)^(1-alpha)`` over a support or quadrature grid.

    ``measure_weights`` defaults to counting measure (discrete sample space);
    pass quadrature weights for densities.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    terms = alpha * np.asarray(logp1, dtype=float) + (1.0 - alpha) * np.asarray(logp2, dtype=float)
    b = None if measure_weights is None else np.asarray(measure_weights, dtype=float)
    return float(logsumexp(terms, b=b))
