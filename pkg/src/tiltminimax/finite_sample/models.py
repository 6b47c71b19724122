"""Finite-sample experiment families under local alternatives.

Every model is localized at a reference point: the data at local parameter
``h`` come from ``theta0 + h / sqrt(n)``. For all three families the
structural functional is ``mu(theta) = theta - theta0`` so ``mu_dot = 1`` and
the local effect equals ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterOutOfRange, SingularMatrix
from ..stat_core import SpdMatrix, bernoulli

FAMILIES = ("bernoulli", "gaussian_location", "overid_mean")
BERNOULLI_EDGE = 1e-6


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")


@dataclass(frozen=True)
class BernoulliTrial:
    """``Y_i ~ Bernoulli(theta)`` with score ``(y - theta0) / (theta0 (1 - theta0))``."""

    theta0: float
    n: int
    family = "bernoulli"
    rules = ("mle",)
    efficient_rule = "mle"

    def __post_init__(self):
        _check_n(self.n)
        if not 0.0 < self.theta0 < 1.0:
            raise ParameterOutOfRange("degenerate information")

    @property
    def variance(self) -> float:
        return self.theta0 * (1.0 - self.theta0)

    @property
    def info(self) -> float:
        return 1.0 / self.variance

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    mu_dot = 1.0

    def theta_at(self, h: float) -> float:
        t = self.theta0 + h / math.sqrt(self.n)
        if not BERNOULLI_EDGE <= t <= 1.0 - BERNOULLI_EDGE:
            raise ParameterOutOfRange(f"parameter out of range: theta0 + h/sqrt(n) = {t:.6g}")
        return t

    def mu(self, theta):
        return theta - self.theta0

    def sample(self, rng: np.random.Generator, h: float = 0.0) -> np.ndarray:
        return bernoulli(rng, self.theta_at(h), self.n)

    def log_likelihood_ratio(self, h: float, ones):
        """Exact ``log dP_{n,h} / dP_{n,0}`` as a function of the number of ones."""
        t = self.theta_at(h)
        k = np.asarray(ones, dtype=float)
        return k * math.log(t / self.theta0) + (self.n - k) * (math.log1p(-t) - math.log1p(-self.theta0))


@dataclass(frozen=True)
class GaussianLocation:
    """``Y_i ~ N(theta, noise_sd^2)``; the efficient estimator is the sample mean."""

    theta0: float = 0.0
    n: int = 1
    noise_sd: float = 1.0
    family = "gaussian_location"
    rules = ("mle", "sample_median", "half_sample_mean")
    efficient_rule = "mle"

    def __post_init__(self):
        _check_n(self.n)
        if not (self.noise_sd > 0 and math.isfinite(self.noise_sd)):
            raise ValueError("noise_sd must be positive")

    @property
    def info(self) -> float:
        return 1.0 / self.noise_sd**2

    @property
    def sigma(self) -> float:
        return self.noise_sd

    mu_dot = 1.0

    def theta_at(self, h: float) -> float:
        return self.theta0 + h / math.sqrt(self.n)

    def mu(self, theta):
        return theta - self.theta0

    def sample(self, rng: np.random.Generator, h: float = 0.0) -> np.ndarray:
        return self.theta_at(h) + self.noise_sd * rng.standard_normal(self.n)


def influence_and_sigma(G, omega) -> tuple[np.ndarray, float]:
    """Influence coefficients and asymptotic variance for a scalar GMM parameter.

    With Jacobian ``G`` (length p) and moment covariance ``omega`` the
    efficient estimator satisfies ``mu_hat - mu0 ~ mean(coef @ m(Y_i, mu0))``
    with ``coef = -(G' W G)^{-1} G' W``, ``W = omega^{-1}``, and variance
    ``sigma2 = (G' W G)^{-1}``.
    """
    G = np.atleast_1d(np.asarray(G, dtype=float))
    try:
        om = SpdMatrix(omega)
    except ValueError as exc:
        raise SingularMatrix("singular Omega") from exc
    if om.dim != G.size:
        raise ValueError("G and Omega dimensions differ")
    w_g = np.linalg.solve(om.entries, G)
    info = float(G @ w_g)
    if not info > 0:
        raise SingularMatrix("singular Omega")
    return -w_g / info, 1.0 / info


@dataclass(frozen=True)
class OveridMean:
    """Over-identified mean: ``Y_i ~ N(mu 1, omega)`` with moments ``m(Y, mu) = Y - mu 1``.

    Off the model, ``mu(P)`` is the efficient-weighting estimand
    ``argmin_mu E_P[m]' omega^{-1} E_P[m] = w' E_P[Y]`` with the efficient
    weights ``w = omega^{-1} 1 / (1' omega^{-1} 1)``.
    """

    mu0: float = 0.0
    n: int = 1
    omega: SpdMatrix = field(default_factory=lambda: SpdMatrix(np.eye(2)))
    family = "overid_mean"
    rules = ("gmm_two_step", "gmm_diag", "gmm_identity")
    efficient_rule = "gmm_two_step"

    def __post_init__(self):
        _check_n(self.n)
        if not isinstance(self.omega, SpdMatrix):
            try:
                object.__setattr__(self, "omega", SpdMatrix(self.omega))
            except ValueError as exc:
                raise SingularMatrix("singular Omega") from exc

    # equality and hashing on the matrix values (used as cache keys)
    def _key(self):
        return (self.mu0, self.n, self.omega.entries.tobytes())

    def __eq__(self, other):
        return isinstance(other, OveridMean) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def theta0(self) -> float:
        return self.mu0

    @property
    def dim(self) -> int:
        return self.omega.dim

    @property
    def G(self) -> np.ndarray:
        return -np.ones(self.dim)

    @property
    def efficient_weights(self) -> np.ndarray:
        coef, _ = influence_and_sigma(self.G, self.omega.entries)
        return coef

    @property
    def sigma(self) -> float:
        return math.sqrt(influence_and_sigma(self.G, self.omega.entries)[1])

    @property
    def info(self) -> float:
        return 1.0 / self.sigma**2

    mu_dot = 1.0

    def theta_at(self, h: float) -> float:
        return self.mu0 + h / math.sqrt(self.n)

    def mu(self, theta):
        return theta - self.mu0

    def sample(self, rng: np.random.Generator, h: float = 0.0) -> np.ndarray:
        z = rng.standard_normal((self.n, self.dim))
        return self.theta_at(h) + z @ self.omega.cholesky().T


# ---------------------------------------------------------------------------
# Pathwise derivative of mu(P) along tilted Gaussian sub-models


@dataclass(frozen=True)
class PathwiseReport:
    inner_product: float
    steps: tuple
    derivatives: tuple
    errors: tuple
    extrapolated: float
    error_ratio: float

    def passed(self, lo: float = 50.0, hi: float = 200.0) -> bool:
        return lo <= self.error_ratio <= hi


def pathwise_derivative_check(model: OveridMean, b, C=None, steps=(1e-2, 1e-3)) -> PathwiseReport:
    """Compare a finite-difference derivative of ``mu(P_s)`` with ``<psi, h>``.

    The sub-model tilts ``N(m0, omega)`` by ``exp(s h(Y))`` with score
    ``h(Y) = b'(Y - m0) + (Y - m0)' C (Y - m0)/2 - const``, which stays
    Gaussian: covariance ``(omega^{-1} - s C)^{-1}`` and mean
    ``m0 + s (omega^{-1} - s C)^{-1} b``. Then ``<psi, h> = w' omega b``.
    Central differences have error ``O(s^2)``, so with steps a decade apart
    the error ratio should be near 100; ``C`` must be nonzero for the error
    to be visible at all (default ``C = I/2``).
    """
    p = model.dim
    b = np.asarray(b, dtype=float).reshape(p)
    C = 0.5 * np.eye(p) if C is None else np.asarray(C, dtype=float).reshape(p, p)
    C = 0.5 * (C + C.T)
    om = model.omega.entries
    prec = model.omega.inv()
    w = model.efficient_weights
    inner = float(w @ om @ b)

    def shift_at(s):
        # mu(P_s) - mu0; mu0 itself is left out to avoid cancellation
        p_s = prec - s * C
        if np.linalg.eigvalsh(p_s).min() <= 0:
            raise ValueError("step too large: tilted covariance not positive definite")
        return s * float(w @ np.linalg.solve(p_s, b))

    derivs, errs = [], []
    for s in steps:
        d = (shift_at(s) - shift_at(-s)) / (2.0 * s)
        derivs.append(d)
        errs.append(abs(d - inner))
    s1, s2 = steps[0], steps[-1]
    r = (s1 / s2) ** 2
    extrap = (r * derivs[-1] - derivs[0]) / (r - 1.0)
    ratio = errs[0] / errs[-1] if errs[-1] > 0 else math.nan
    return PathwiseReport(inner, tuple(steps), tuple(derivs), tuple(errs), extrap, ratio)
