"""Monte Carlo estimates of finite-sample tilted risk for plug-in rules.

Replications are split into fixed-size chunks; chunk ``c`` draws from its own
stream keyed by ``(root_seed, stream_index, c)``. The same draws are reused
for every local parameter and every rule (common random numbers), and the
reductions run over replications in index order, so results do not depend on
the number of worker threads.

Exact samplers replace literal dataset simulation where a sufficient
statistic exists:

* Bernoulli: one uniform per replication, mapped through the binomial CDF at
  each ``h`` (inverse-CDF draw of the number of ones).
* Gaussian location: full standard-normal datasets (the median needs them);
  estimates are shift equivariant, so ``z_h = z_0 + h``.
* Over-identified mean: the sample mean and the Wishart sample covariance
  (Bartlett decomposition); GMM estimates are shift equivariant along ``1``.
"""

from __future__ import annotations

import dataclasses
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .. import _kernels
from ..errors import OverflowGuard
from ..limit_experiment import estimation_risk, treatment_minimax_value
from ..stat_core import StreamSeed
from ..tilt import EXP_GUARD, TiltedLossSpec
from .estimators import EstimatorSpec, as_spec, asymptotic_sd, check_rule, gmm_from_summaries, location_stat
from .models import BernoulliTrial, GaussianLocation, OveridMean

CHUNK_REPS = 1024
_ROW_BLOCK = 64
_H_BLOCK = 8
_LOSS_CODES = {"estimation": 0, "treatment": 1}
DEFAULT_BUDGET_M = 3.0
DEFAULT_GRID_POINTS = 25


def _as_seed(seed) -> StreamSeed:
    return seed if isinstance(seed, StreamSeed) else StreamSeed(int(seed))


def _chunk_rng(seed: StreamSeed, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed.root_seed, spawn_key=(seed.stream_index, chunk))
    return np.random.Generator(np.random.PCG64(ss))


def _chunk_sizes(reps: int):
    full, rest = divmod(reps, CHUNK_REPS)
    return [CHUNK_REPS] * full + ([rest] if rest else [])


def _default_threads() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Per-chunk base draws


def _bernoulli_chunk(model, rules, rng, m):
    return {"u": rng.random(m)}


def _gaussian_chunk(model, rules, rng, m):
    out = {r: np.empty(m) for r in rules}
    scale = model.noise_sd * math.sqrt(model.n)
    for start in range(0, m, _ROW_BLOCK):
        b = min(_ROW_BLOCK, m - start)
        x = rng.standard_normal((b, model.n))
        for r in rules:
            out[r][start : start + b] = scale * location_stat(r.name, x)
    return out


def _overid_chunk(model, rules, rng, m):
    p, n = model.dim, model.n
    L = model.omega.cholesky()
    zbar = rng.standard_normal((m, p))
    # Bartlett factor of a Wishart(n - 1, I) draw
    B = np.zeros((m, p, p))
    for i in range(p):
        B[:, i, i] = np.sqrt(rng.chisquare(n - 1 - i, m))
    rows, cols = np.tril_indices(p, -1)
    if rows.size:
        B[:, rows, cols] = rng.standard_normal((m, rows.size))
    LB = L @ B
    scov = LB @ np.swapaxes(LB, 1, 2) / n
    ybar = zbar @ L.T / math.sqrt(n)
    return {r: math.sqrt(n) * gmm_from_summaries(r, ybar, scov) for r in rules}


_CHUNK_FN = {"bernoulli": _bernoulli_chunk, "gaussian_location": _gaussian_chunk, "overid_mean": _overid_chunk}


class BaseDraws:
    """Replication-level draws shared across local parameters and rules."""

    def __init__(self, model, rules, reps: int, seed, threads: int | None = None):
        if int(reps) != reps or reps < 2:
            raise ValueError("reps must be an integer >= 2")
        if isinstance(model, OveridMean) and model.n <= model.dim:
            raise ValueError("overid_mean needs n > number of moments")
        self.model = model
        self.rules = tuple(dict.fromkeys(as_spec(r) for r in rules))
        for r in self.rules:
            check_rule(model, r)
        self.reps = int(reps)
        self.seed = _as_seed(seed)
        fn = _CHUNK_FN[model.family]
        sizes = _chunk_sizes(self.reps)

        def work(c):
            return fn(model, self.rules, _chunk_rng(self.seed, c), sizes[c])

        threads = _default_threads() if threads is None else max(1, int(threads))
        if threads == 1 or len(sizes) == 1:
            parts = [work(c) for c in range(len(sizes))]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(work, range(len(sizes))))
        self._data = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        if isinstance(model, BernoulliTrial):
            self._data["u"].setflags(write=False)

    def z(self, rule, h) -> np.ndarray:
        """``sqrt(n)(mu(theta_hat) - mu(theta0))`` per replication, one row per ``h``."""
        rule = as_spec(rule)
        h = np.atleast_1d(np.asarray(h, dtype=float))
        m = self.model
        if isinstance(m, BernoulliTrial):
            check_rule(m, rule)
            u = self._data["u"]
            ks = np.arange(m.n + 1)
            rn = math.sqrt(m.n)
            out = np.empty((h.size, self.reps))
            for i, hi in enumerate(h):
                cdf = stats.binom.cdf(ks, m.n, m.theta_at(hi))
                k = np.minimum(np.searchsorted(cdf, u, side="left"), m.n)
                out[i] = (k - m.n * m.theta0) / rn
            return out
        if rule not in self.rules:
            raise KeyError(f"rule {rule.name!r} was not simulated")
        return self._data[rule][None, :] + h[:, None]


_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 6


def base_draws(model, rules, reps: int, seed, threads: int | None = None) -> BaseDraws:
    """Memoised :class:`BaseDraws`; draws are pure functions of the key."""
    rules = tuple(dict.fromkeys(as_spec(r) for r in rules))
    key = (model, rules, int(reps), _as_seed(seed))
    hit = _CACHE.get(key)
    if hit is not None:
        _CACHE.move_to_end(key)
        return hit
    d = BaseDraws(model, rules, reps, seed, threads)
    _CACHE[key] = d
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return d


def clear_cache():
    _CACHE.clear()


# ---------------------------------------------------------------------------
# Risk profiles


def _loss_code(loss: TiltedLossSpec) -> int:
    if loss.kind not in _LOSS_CODES:
        raise ValueError(f"Monte Carlo supports estimation and treatment losses, not {loss.kind!r}")
    return _LOSS_CODES[loss.kind]


def _guard(loss: TiltedLossSpec, h):
    if math.isinf(loss.cap) and np.max(np.abs(h)) / loss.lam > EXP_GUARD:
        raise OverflowGuard("overflow guard: loss/lambda exceeds 700")


def _profile(draws: BaseDraws, rule, h, loss: TiltedLossSpec):
    """Mean and variance of ``expm1(l/lam)`` at each ``h``."""
    code = _loss_code(loss)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    _guard(loss, h)
    means = np.empty(h.size)
    var = np.empty(h.size)
    for s in range(0, h.size, _H_BLOCK):
        hb = np.ascontiguousarray(h[s : s + _H_BLOCK])
        z = np.ascontiguousarray(draws.z(rule, hb))
        means[s : s + hb.size], var[s : s + hb.size] = _kernels.tilted_stats(z, hb, code, loss.lam, loss.cap)
    return means, var


def _per_rep_values(draws: BaseDraws, rule, h: float, loss: TiltedLossSpec) -> np.ndarray:
    z = draws.z(rule, [h])[0]
    return _kernels.tilted_values(z, h, _loss_code(loss), loss.lam, loss.cap)


@dataclass(frozen=True, eq=False)
class RiskReport:
    """Worst case over a grid of local parameters plus the stored per-``h`` profile.

    ``means`` and ``stderrs`` are tilted risks ``E[exp(l/lam)]`` at each grid
    point; ``value`` is their maximum, attained at ``worst_h``.
    """

    value: float
    stderr: float
    worst_h: float
    reps: int
    seed: StreamSeed
    n: int
    lam: float
    rule: str
    h_grid: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray

    def bayes_risk(self, weights) -> float:
        """Bayes tilted risk of a prior supported on the grid."""
        w = np.asarray(weights, dtype=float)
        if w.shape != self.means.shape or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector on the grid")
        return float(w @ self.means)

    def same_as(self, other: "RiskReport") -> bool:
        """Bit-for-bit equality of every field."""
        scalars = ("value", "stderr", "worst_h", "reps", "seed", "n", "lam", "rule")
        if any(getattr(self, f) != getattr(other, f) for f in scalars):
            return False
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("h_grid", "means", "stderrs")
        )


def effect_grid(sigma: float, M: float = DEFAULT_BUDGET_M, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """``points`` equispaced local effects on ``[-M sigma, M sigma]``."""
    if points < 1:
        raise ValueError("need at least one grid point")
    if points == 1:
        return np.zeros(1)
    g = np.linspace(-M * sigma, M * sigma, points)
    if points % 2:
        g[points // 2] = 0.0
    return g


def _refine(grid: np.ndarray, i: int) -> np.ndarray:
    if grid.size < 2:
        return np.empty(0)
    step = float(np.min(np.diff(grid)))
    c = grid[i]
    cand = c + step * np.array([-2.0, -1.0, 1.0, 2.0]) / 3.0
    cand = cand[(cand >= grid[0]) & (cand <= grid[-1])]
    return cand[np.min(np.abs(cand[:, None] - grid[None, :]), axis=1) > 1e-12 * max(1.0, step)]


def _report(draws, rule, loss, grid, refine) -> RiskReport:
    grid = np.unique(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty h grid")
    means, var = _profile(draws, rule, grid, loss)
    if refine:
        extra = _refine(grid, int(np.argmax(means)))
        if extra.size:
            m2, v2 = _profile(draws, rule, extra, loss)
            grid = np.concatenate([grid, extra])
            order = np.argsort(grid, kind="stable")
            grid, means, var = grid[order], np.concatenate([means, m2])[order], np.concatenate([var, v2])[order]
    se = np.sqrt(var / draws.reps)
    i = int(np.argmax(means))
    return RiskReport(
        value=1.0 + float(means[i]),
        stderr=float(se[i]),
        worst_h=float(grid[i]),
        reps=draws.reps,
        seed=draws.seed,
        n=draws.model.n,
        lam=loss.lam,
        rule=as_spec(rule).name,
        h_grid=grid,
        means=1.0 + means,
        stderrs=se,
    )


def mc_tilted_risk(model, rule, h: float, loss: TiltedLossSpec, reps: int, seed, threads: int | None = None):
    """``(mean, stderr)`` of ``exp(l_n/lam)`` at local parameter ``h``.

    ``expm1`` is averaged and one added back at the end, so a loss that is
    identically zero returns exactly ``(1.0, 0.0)``.
    """
    d = base_draws(model, [rule], reps, seed, threads)
    m, v = _profile(d, rule, [h], loss)
    return 1.0 + float(m[0]), math.sqrt(float(v[0]) / d.reps)


def worst_case_risk(
    model,
    rule,
    loss: TiltedLossSpec,
    h_grid=None,
    reps: int = 10_000,
    seed=0,
    refine: bool = True,
    M: float = DEFAULT_BUDGET_M,
    grid_points: int = DEFAULT_GRID_POINTS,
    threads: int | None = None,
) -> RiskReport:
    """Maximum Monte Carlo tilted risk over a grid of local parameters.

    A grid sup suffices: the Bayes risk is linear in the prior, so the worst
    prior on the grid is a point mass. ``refine`` adds points at thirds of
    a grid step on both sides of the coarse argmax.
    """
    if h_grid is None:
        h_grid = effect_grid(model.sigma, M, grid_points)
    d = base_draws(model, [rule], reps, seed, threads)
    return _report(d, rule, loss, h_grid, refine)


# ---------------------------------------------------------------------------
# Studies


def limit_value(model, loss: TiltedLossSpec, rule=None) -> float:
    """Limit-experiment risk: ``V*`` for the efficient rule, or the plug-in
    value at the rule's asymptotic standard deviation."""
    s = model.sigma if rule is None else asymptotic_sd(model, rule)
    if loss.kind == "estimation":
        return estimation_risk(s, loss)
    if loss.kind == "treatment":
        return treatment_minimax_value(loss.lam, s).value
    raise ValueError(f"unsupported loss kind {loss.kind!r}")


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    value: float
    stderr: float
    worst_h: float
    v_star: float

    @property
    def ratio(self) -> float:
        return self.value / self.v_star


def convergence_study(
    model,
    rule,
    loss: TiltedLossSpec,
    M: float = DEFAULT_BUDGET_M,
    n_list=(100, 1000, 10_000),
    reps: int = 10_000,
    seed=0,
    grid_points: int = DEFAULT_GRID_POINTS,
    refine: bool = True,
    threads: int | None = None,
) -> list[ConvergenceRow]:
    """Worst-case risk at each sample size against the limit value ``V*``."""
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    v_star = limit_value(model, loss)
    rows = []
    for n in n_list:
        m = dataclasses.replace(model, n=n)
        rep = worst_case_risk(m, rule, loss, None, reps, seed, refine, M, grid_points, threads)
        rows.append(ConvergenceRow(n, rep.value, rep.stderr, rep.worst_h, v_star))
    return rows


@dataclass(frozen=True)
class Difference:
    first: str
    second: str
    diff: float
    stderr: float

    @property
    def z(self) -> float:
        return self.diff / self.stderr if self.stderr > 0 else (0.0 if self.diff == 0 else math.copysign(math.inf, self.diff))


@dataclass(frozen=True, eq=False)
class EfficiencyReport:
    labels: tuple
    reports: tuple
    ranking: tuple
    differences: tuple

    def report(self, label: str) -> RiskReport:
        return self.reports[self.labels.index(label)]

    def difference(self, a: str, b: str) -> Difference:
        """``value(a) - value(b)`` with its paired standard error."""
        for d in self.differences:
            if (d.first, d.second) == (a, b):
                return d
            if (d.first, d.second) == (b, a):
                return Difference(a, b, -d.diff, d.stderr)
        raise KeyError((a, b))


def _labels(rules):
    seen: dict = {}
    out = []
    for r in rules:
        k = seen.get(r.name, 0) + 1
        seen[r.name] = k
        out.append(r.name if k == 1 else f"{r.name}#{k}")
    return tuple(out)


def efficiency_comparison(
    model,
    rules,
    loss: TiltedLossSpec,
    h_grid=None,
    n: int | None = None,
    reps: int = 10_000,
    seed=0,
    refine: bool = True,
    M: float = DEFAULT_BUDGET_M,
    grid_points: int = DEFAULT_GRID_POINTS,
    threads: int | None = None,
) -> EfficiencyReport:
    """Worst-case risks of several rules on common random numbers.

    Differences are paired: per replication, each rule's tilted loss at its
    own worst ``h``, so the combined standard error reflects the CRN
    correlation. ``ranking`` lists labels from lowest to highest worst case.
    """
    rules = [as_spec(r) for r in rules]
    if len(rules) < 2:
        raise ValueError("need at least two rules")
    if n is not None:
        model = dataclasses.replace(model, n=int(n))
    if h_grid is None:
        h_grid = effect_grid(model.sigma, M, grid_points)
    draws = base_draws(model, rules, reps, seed, threads)
    labels = _labels(rules)
    reports = tuple(_report(draws, r, loss, h_grid, refine) for r in rules)
    per_rep = [_per_rep_values(draws, r, rep.worst_h, loss) for r, rep in zip(rules, reports)]
    diffs = []
    for i in range(len(rules)):
        for j in range(i + 1, len(rules)):
            d = per_rep[i] - per_rep[j]
            se = float(np.std(d, ddof=1)) / math.sqrt(draws.reps)
            diffs.append(Difference(labels[i], labels[j], reports[i].value - reports[j].value, se))
    order = sorted(range(len(rules)), key=lambda k: (reports[k].value, k))
    return EfficiencyReport(labels, reports, tuple(labels[k] for k in order), tuple(diffs))


def standardized_estimates(model, rule, reps: int, seed, h: float = 0.0, threads: int | None = None) -> np.ndarray:
    """Draws of ``sqrt(n)(mu(theta_hat) - mu(theta0))`` at local parameter ``h``."""
    return base_draws(model, [rule], reps, seed, threads).z(rule, [h])[0].copy()


__all__ = [
    "BaseDraws",
    "CHUNK_REPS",
    "ConvergenceRow",
    "Difference",
    "EfficiencyReport",
    "EstimatorSpec",
    "RiskReport",
    "base_draws",
    "clear_cache",
    "convergence_study",
    "effect_grid",
    "efficiency_comparison",
    "limit_value",
    "mc_tilted_risk",
    "standardized_estimates",
    "worst_case_risk",
]
