"""Estimators, plug-in decisions and standardized score statistics.

The location statistics and the GMM estimators are written for stacks of
datasets (rows) so the Monte Carlo harness can call exactly the same code
on simulated noise that ``estimate`` calls on a single dataset.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .. import _kernels
from ..errors import SingularMatrix, UnknownIdentifier
from .models import BernoulliTrial, GaussianLocation, OveridMean

ESTIMATORS = ("mle", "sample_median", "half_sample_mean", "gmm_two_step", "gmm_diag", "gmm_identity")
_GMM_CENTERS = ("first_step", "sample_mean")


@dataclass(frozen=True)
class EstimatorSpec:
    """Named estimator plus options.

    The GMM estimators accept ``center``: ``"first_step"`` (default) builds
    the weighting matrix from moments evaluated at the identity-weighted
    first step, ``"sample_mean"`` uses the coordinatewise sample covariance.
    """

    name: str
    options: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise UnknownIdentifier(f"unknown rule {self.name!r}")
        opts = dict(self.options)
        extra = set(opts) - {"center"}
        if extra:
            raise ValueError(f"unknown options {sorted(extra)}")
        if opts.get("center", "first_step") not in _GMM_CENTERS:
            raise ValueError(f"center must be one of {_GMM_CENTERS}")
        object.__setattr__(self, "options", MappingProxyType(opts))

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.options.items()))))

    def __eq__(self, other):
        return isinstance(other, EstimatorSpec) and (self.name, dict(self.options)) == (other.name, dict(other.options))

    @property
    def center(self) -> str:
        return self.options.get("center", "first_step")


def as_spec(rule) -> EstimatorSpec:
    return rule if isinstance(rule, EstimatorSpec) else EstimatorSpec(str(rule))


def check_rule(model, rule: EstimatorSpec):
    if rule.name not in model.rules:
        raise ValueError(f"rule {rule.name!r} does not apply to the {model.family} model")


# ---------------------------------------------------------------------------
# Location statistics on rows


def location_stat(name: str, x) -> np.ndarray:
    """Row-wise mean, median or mean of the first half of each row."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    n = x.shape[1]
    if n == 0:
        raise ValueError("empty dataset")
    if name == "mle":
        return x.mean(axis=1)
    if name == "sample_median":
        return _kernels.row_medians(x)
    if name == "half_sample_mean":
        if n < 2:
            raise ValueError("half_sample_mean needs n >= 2")
        return x[:, : n // 2].mean(axis=1)
    raise ValueError(f"{name!r} is not a location statistic")


# ---------------------------------------------------------------------------
# GMM for the over-identified mean


def gmm_from_summaries(rule: EstimatorSpec, ybar, scov) -> np.ndarray:
    """GMM estimates from sample means ``ybar`` (R, p) and covariances ``scov`` (R, p, p).

    ``scov`` is the divide-by-n sample covariance. The criterion
    ``(ybar - mu 1)' W (ybar - mu 1)`` has minimiser ``1'W ybar / 1'W 1``;
    the weighting matrices follow from
    ``Omega_hat(mu) = scov + (ybar - mu 1)(ybar - mu 1)'``.
    """
    ybar = np.atleast_2d(np.asarray(ybar, dtype=float))
    scov = np.asarray(scov, dtype=float).reshape(ybar.shape[0], ybar.shape[1], ybar.shape[1])
    first = ybar.mean(axis=1)
    if rule.name == "gmm_identity":
        return first
    if rule.center == "first_step":
        d = ybar - first[:, None]
        om = scov + d[:, :, None] * d[:, None, :]
    else:
        om = scov
    if rule.name == "gmm_diag":
        diag = np.diagonal(om, axis1=1, axis2=2)
        if np.any(~(diag > 0)):
            raise SingularMatrix("singular weighting")
        a = 1.0 / diag
    elif rule.name == "gmm_two_step":
        try:
            a = np.linalg.solve(om, np.ones(ybar.shape[:2])[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix("singular weighting") from exc
    else:
        raise ValueError(f"{rule.name!r} is not a GMM rule")
    den = a.sum(axis=1)
    if np.any(~np.isfinite(den)) or np.any(np.abs(den) <= 1e-300):
        raise SingularMatrix("singular weighting")
    return (a * ybar).sum(axis=1) / den


def _summaries(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError("expected an (n, p) dataset")
    ybar = y.mean(axis=0)
    r = y - ybar
    return ybar[None, :], (r.T @ r / y.shape[0])[None, :, :]


# ---------------------------------------------------------------------------
# Public operations


def estimate(rule, model, dataset) -> float:
    """Point estimate of the model parameter from one dataset."""
    rule = as_spec(rule)
    check_rule(model, rule)
    data = np.asarray(dataset, dtype=float)
    if data.size == 0:
        raise ValueError("empty dataset")
    if isinstance(model, OveridMean):
        ybar, scov = _summaries(data.reshape(-1, model.dim))
        return float(gmm_from_summaries(rule, ybar, scov)[0])
    return float(location_stat(rule.name, data.ravel())[0])


def plug_in_decision(rule, model, dataset, kind: str):
    """Estimate of ``mu`` for estimation loss, ``1{mu_hat >= 0}`` for treatment."""
    m = model.mu(estimate(rule, model, dataset))
    if kind == "estimation":
        return m
    if kind == "treatment":
        return int(m >= 0.0)
    raise ValueError(f"unsupported loss kind {kind!r}")


def score_statistic(model, dataset) -> float:
    """Standardized score ``I^{-1/2} n^{-1/2} sum psi(Y_i)`` at the reference point."""
    data = np.asarray(dataset, dtype=float)
    if isinstance(model, BernoulliTrial):
        y = data.ravel()
        return float(np.sum(y - model.theta0) / math.sqrt(y.size * model.variance))
    if isinstance(model, GaussianLocation):
        y = data.ravel()
        return float(np.sum(y - model.theta0) / (model.noise_sd * math.sqrt(y.size)))
    if isinstance(model, OveridMean):
        y = data.reshape(-1, model.dim)
        # efficient score 1' Omega^{-1} (Y - mu0 1) has information 1/sigma^2
        a = np.linalg.solve(model.omega.entries, np.ones(model.dim))
        s = (y - model.mu0) @ a
        return float(s.sum() * model.sigma / math.sqrt(y.shape[0]))
    raise TypeError(f"unsupported model {type(model).__name__}")


def sandwich_variance(model: OveridMean, rule) -> float:
    """Asymptotic variance ``(G'WG)^{-1} G'W Omega W G (G'WG)^{-1}`` of a GMM rule."""
    rule = as_spec(rule)
    om = model.omega.entries
    if rule.name == "gmm_two_step":
        W = np.linalg.inv(om)
    elif rule.name == "gmm_diag":
        W = np.diag(1.0 / np.diag(om))
    elif rule.name == "gmm_identity":
        W = np.eye(model.dim)
    else:
        raise ValueError(f"{rule.name!r} is not a GMM rule")
    g = model.G
    bread = float(g @ W @ g)
    return float(g @ W @ om @ W @ g) / bread**2


def asymptotic_sd(model, rule) -> float:
    """Standard deviation of the limit law of ``sqrt(n)(mu_hat - mu0)``."""
    rule = as_spec(rule)
    check_rule(model, rule)
    if isinstance(model, OveridMean):
        return math.sqrt(sandwich_variance(model, rule))
    factor = {"mle": 1.0, "sample_median": math.sqrt(math.pi / 2.0), "half_sample_mean": math.sqrt(2.0)}
    return model.sigma * factor[rule.name]
