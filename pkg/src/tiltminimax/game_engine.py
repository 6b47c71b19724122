"""Statistician-versus-nature treatment game under exponentiated loss.

Nature picks a finitely supported prior over local parameters, the
statistician a treatment rule on the efficient signal ``s ~ N(D, sigma^2)``
with ``D = mu_dot' h``. A double-oracle loop grows both strategy sets with
best responses until the bounds on the game value meet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from scipy.special import logsumexp

from .errors import DidNotConverge, OverflowGuard
from .limit_experiment import LimitSpec
from .stat_core import maximize_1d
from .tilt import EXP_GUARD, DiscretePrior

GRID_HALF_WIDTH = 10.0
GRID_POINTS = 4001
FP_ROUNDS = 10_000
DEDUP_TOL = 1e-6


@dataclass(frozen=True)
class ThresholdRule:
    """Treat iff ``s >= threshold`` (direction +1) or ``s <= threshold`` (direction -1).

    ``threshold = -inf`` with direction +1 always treats, ``+inf`` never does.
    When the optimal treat set is not a half-line the rule carries the signal
    grid and its decisions in ``table`` and ``non_threshold`` is set.
    """

    threshold: float
    direction: int = 1
    table: tuple[np.ndarray, np.ndarray] | None = field(default=None, compare=False)
    non_threshold: bool = False

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if math.isnan(self.threshold):
            raise ValueError("threshold must not be NaN")

    @classmethod
    def always_treat(cls) -> "ThresholdRule":
        return cls(-math.inf, 1)

    @classmethod
    def never_treat(cls) -> "ThresholdRule":
        return cls(math.inf, 1)

    def decide(self, s):
        s = np.asarray(s, dtype=float)
        if self.table is not None:
            grid, treat = self.table
            idx = np.clip(np.searchsorted(grid, s), 0, grid.size - 1)
            left = np.clip(idx - 1, 0, grid.size - 1)
            nearest = np.where(np.abs(grid[left] - s) <= np.abs(grid[idx] - s), left, idx)
            return treat[nearest].astype(int)
        if self.direction == 1:
            return (s >= self.threshold).astype(int)
        return (s <= self.threshold).astype(int)

    def treat_probability(self, effect, sigma: float):
        """``P(treat)`` when ``s ~ N(effect, sigma^2)``."""
        d = np.asarray(effect, dtype=float)
        if self.table is not None:
            grid, treat = self.table
            # each grid point owns the cell between neighbouring midpoints
            edges = np.concatenate([[-np.inf], 0.5 * (grid[1:] + grid[:-1]), [np.inf]])
            cdf = special.ndtr((edges[None, :] - d.reshape(-1, 1)) / sigma)
            mass = np.diff(cdf, axis=1) @ treat.astype(float)
            return mass.reshape(d.shape)
        if self.direction == 1:
            return special.ndtr((d - self.threshold) / sigma)
        return special.ndtr((self.threshold - d) / sigma)

    def skip_probability(self, effect, sigma: float):
        """``P(not treat)``, computed directly so that far tails keep full precision."""
        d = np.asarray(effect, dtype=float)
        if self.table is not None:
            return 1.0 - self.treat_probability(d, sigma)
        if self.direction == 1:
            return special.ndtr((self.threshold - d) / sigma)
        return special.ndtr((d - self.threshold) / sigma)

    def mirror(self) -> "ThresholdRule":
        """The rule ``s -> 1 - r(-s)``: what this rule becomes when effects flip sign."""
        if self.table is not None:
            grid, treat = self.table
            return ThresholdRule(self.threshold, self.direction, (-grid[::-1], 1 - treat[::-1]), True)
        return ThresholdRule(-self.threshold, self.direction)


def rule_excess_risk(rule: ThresholdRule, effect, lam: float, sigma: float):
    """``expm1(|D|/lam) P(wrong action)``: tilted risk minus one, without the cancellation."""
    d = np.asarray(effect, dtype=float)
    if np.any(np.abs(d) / lam > EXP_GUARD):
        raise OverflowGuard("overflow guard: |effect|/lambda exceeds 700")
    p_wrong = np.where(d > 0, rule.skip_probability(d, sigma), np.where(d < 0, rule.treat_probability(d, sigma), 0.0))
    out = np.expm1(np.abs(d) / lam) * p_wrong
    return float(out) if out.ndim == 0 else out


def rule_risk(rule: ThresholdRule, effect, lam: float, sigma: float):
    """Tilted frequentist risk ``1 + expm1(|D|/lam) P(wrong action)``."""
    return 1.0 + rule_excess_risk(rule, effect, lam, sigma)


def signal_grid(sigma: float) -> np.ndarray:
    """4001 equispaced points on ``[-10 sigma, 10 sigma]`` with 0 exactly on the grid."""
    half = GRID_POINTS // 2
    return sigma * (np.arange(-half, half + 1) * (GRID_HALF_WIDTH / half))


def _log_sides(s, effects, weights, lam, sigma):
    """Log posterior-weighted excess loss of treating (A) and of not treating (B)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    logw = np.log(weights)
    with np.errstate(divide="ignore"):
        log_excess = np.log(np.expm1(np.abs(effects) / lam))
    z = (s[:, None] - effects[None, :]) / sigma
    terms = logw[None, :] - 0.5 * z * z + log_excess[None, :]
    neg = effects < 0
    pos = effects > 0
    log_a = logsumexp(np.where(neg[None, :], terms, -np.inf), axis=1) if neg.any() else np.full(s.size, -np.inf)
    log_b = logsumexp(np.where(pos[None, :], terms, -np.inf), axis=1) if pos.any() else np.full(s.size, -np.inf)
    return log_a, log_b


def bayes_response_treatment(prior: DiscretePrior, spec: LimitSpec, lam: float) -> ThresholdRule:
    """Posterior tilted-loss minimising rule against ``prior``.

    Treat iff the expected excess loss of treating, summed over atoms with
    negative effect, is at most that of not treating (atoms with positive
    effect). The switch point is located by bisection between the grid
    points that bracket the sign change.
    """
    sigma = spec.sigma
    effects = prior.effects(spec.mu_dot)
    w = prior.weights
    keep = w > 0
    effects, w = effects[keep], w[keep]
    grid = signal_grid(sigma)
    log_a, log_b = _log_sides(grid, effects, w, lam, sigma)
    treat = log_a <= log_b
    if treat.all():
        return ThresholdRule.always_treat()
    if not treat.any():
        return ThresholdRule.never_treat()
    changes = np.flatnonzero(np.diff(treat.astype(np.int8)))
    if changes.size != 1:
        return ThresholdRule(0.0, 1, (grid, treat.astype(np.int8)), True)
    i = int(changes[0])
    direction = 1 if treat[i + 1] else -1

    def gap(x):
        a, b = _log_sides(x, effects, w, lam, sigma)
        return float(b[0] - a[0]) * direction

    # gap < 0 on the non-treat side; return the first point of the treat side
    lo, hi = float(grid[i]), float(grid[i + 1])
    if direction == -1:
        lo, hi = hi, lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if gap(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return ThresholdRule(hi, direction)


def nature_best_response(rule: ThresholdRule, spec: LimitSpec, lam: float, h_budget: float):
    """Worst-case effect for ``rule`` on ``|D| <= h_budget``; returns ``(h, risk)``.

    Each sign branch is searched separately; ties go to the positive branch.
    """
    if not h_budget > 0:
        raise ValueError("h_budget must be positive")
    sigma = spec.sigma

    def f(d):
        return rule_excess_risk(rule, d, lam, sigma)

    best = None
    for lo, hi in ((0.0, h_budget), (-h_budget, 0.0)):
        d, r = maximize_1d(f, lo, hi, tol=1e-10, vectorized=True, allow_boundary=True)
        if best is None or r > best[1]:
            best = (d, r)
    d, r = best
    return spec.h_for_effect(d), 1.0 + r


# ---------------------------------------------------------------------------
# Restricted matrix game


def _fictitious_play(risk: np.ndarray, rounds: int = FP_ROUNDS):
    """Averaged best responses; rows are rules (minimiser), columns atoms (maximiser)."""
    n_rules, n_atoms = risk.shape
    row_counts = np.zeros(n_rules)
    col_counts = np.zeros(n_atoms)
    row_payoff = np.zeros(n_rules)  # cumulative risk of each rule vs nature's history
    col_payoff = np.zeros(n_atoms)
    i, j = 0, 0
    for _ in range(rounds):
        row_counts[i] += 1
        col_counts[j] += 1
        row_payoff += risk[:, j]
        col_payoff += risk[i, :]
        i = int(np.argmin(row_payoff))
        j = int(np.argmax(col_payoff))
    return row_counts / rounds, col_counts / rounds


LP_RELATIVE_CAP = 1e6


def _nature_lp(risk: np.ndarray):
    """Maximin mixture over atoms by linear programming; ``None`` if the solver fails.

    The matrix is divided by the pure-strategy upper value
    ``min_i max_j risk_ij`` and entries above ``LP_RELATIVE_CAP`` are capped:
    tilted risks span dozens of orders of magnitude and the solver rejects
    coefficients near 1e15. Capping only lowers the statistician's losses,
    so the mixture still guarantees the capped value in the raw game.
    """
    scale = float(np.min(np.max(risk, axis=1)))
    risk = np.minimum(risk / scale, LP_RELATIVE_CAP)
    n_rules, n_atoms = risk.shape
    # variables (q_1..q_m, v): maximise v s.t. risk q >= v, sum q = 1
    c = np.zeros(n_atoms + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-risk, np.ones((n_rules, 1))])
    a_eq = np.zeros((1, n_atoms + 1))
    a_eq[0, :n_atoms] = 1.0
    bounds = [(0, None)] * n_atoms + [(None, None)]
    res = optimize.linprog(c, A_ub=a_ub, b_ub=np.zeros(n_rules), A_eq=a_eq, b_eq=[1.0],
                           bounds=bounds, method="highs")
    if not res.success:
        return None
    q = np.clip(res.x[:n_atoms], 0.0, None)
    return q / q.sum()


def solve_restricted_game(risk: np.ndarray):
    """Nature's equilibrium mixture: fictitious play, then an LP polish."""
    _, q = _fictitious_play(risk)
    q_lp = _nature_lp(risk)
    if q_lp is not None:
        fp_value, lp_value = (risk @ q).min(), (risk @ q_lp).min()
        if lp_value >= fp_value * (1.0 - 1e-12):
            q = q_lp
    return q


@dataclass
class GameSolution:
    prior: DiscretePrior
    rule: ThresholdRule
    upper_value: float
    lower_value: float
    gap: float
    iterations: int = 0
    history: list = field(default_factory=list)


def _add_atom(atoms: list[float], d: float) -> bool:
    if any(abs(d - a) <= DEDUP_TOL for a in atoms):
        return False
    atoms.append(d)
    return True


def _add_rule(rules: list[ThresholdRule], r: ThresholdRule) -> None:
    for old in rules:
        if old.table is None and r.table is None:
            same_t = old.threshold == r.threshold or abs(old.threshold - r.threshold) <= DEDUP_TOL
            if old.direction == r.direction and same_t:
                return
    rules.append(r)


def solve_treatment_game(
    spec: LimitSpec,
    lam: float,
    h_budget: float,
    max_iters: int = 50,
    tol: float = 1e-4,
) -> GameSolution:
    """Double-oracle search for the least favourable prior and minimax rule.

    Starts from the point prior at zero effect. Every new nature atom enters
    with its mirror and every new rule with its mirror, and the restricted
    equilibrium prior is symmetrised, so symmetric problems stay symmetric.
    ``lower_value`` is the best Bayes risk certified so far and
    ``upper_value`` the smallest worst-case risk among the Bayes rules found.
    """
    if not (lam > 0 and h_budget > 0):
        raise ValueError("lambda and h_budget must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    sigma = spec.sigma
    atoms: list[float] = [0.0]
    rules: list[ThresholdRule] = []
    lower, upper = -math.inf, math.inf
    best_prior = DiscretePrior.point_mass(spec.h_for_effect(0.0))
    best_rule = None
    history = []
    solution = None

    for it in range(1, max_iters + 1):
        eff = np.array(atoms)
        if rules:
            risk = np.array([rule_risk(r, eff, lam, sigma) for r in rules])
            q = solve_restricted_game(risk)
            # symmetrise: the atom set is closed under D -> -D
            order = [int(np.argmin(np.abs(eff + d))) for d in eff]
            q = 0.5 * (q + q[order])
        else:
            q = np.ones(1)
        keep = q > 1e-12
        prior = DiscretePrior(np.array([spec.h_for_effect(d) for d in eff[keep]]), q[keep] / q[keep].sum())

        rule = bayes_response_treatment(prior, spec, lam)
        bayes = float(prior.weights @ rule_risk(rule, prior.effects(spec.mu_dot), lam, sigma))
        if bayes > lower:
            lower, best_prior = bayes, prior

        h, worst = nature_best_response(rule, spec, lam, h_budget)
        if worst < upper:
            upper, best_rule = worst, rule
        history.append((lower, upper))
        gap = max(upper - lower, 0.0)
        solution = GameSolution(best_prior, best_rule, upper, lower, gap, it, list(history))
        if gap <= tol:
            return solution

        d_new = float(spec.mu_dot @ h)
        grew = _add_atom(atoms, d_new)
        grew |= _add_atom(atoms, -d_new)
        n_rules = len(rules)
        _add_rule(rules, rule)
        _add_rule(rules, rule.mirror())
        if not grew and len(rules) == n_rules:
            break
    raise DidNotConverge(f"did not converge: gap {solution.gap:.3g} after {solution.iterations} iterations", solution)


# ---------------------------------------------------------------------------
# Verification


@dataclass(frozen=True)
class SaddleReport:
    bayes_ok: bool
    bayes_violation: float
    equalizer_ok: bool
    equalizer_violation: float
    max_risk: float

    @property
    def passed(self) -> bool:
        return self.bayes_ok and self.equalizer_ok


def verify_saddle_point(
    rule: ThresholdRule,
    prior: DiscretePrior,
    spec: LimitSpec,
    lam: float,
    tol: float = 1e-6,
    h_budget: float | None = None,
) -> SaddleReport:
    """Check that ``rule`` is a Bayes response to ``prior`` and ``prior`` is least favourable.

    (a) On the signal grid no flip of the action lowers the posterior
    expected tilted loss by more than ``tol``. (b) Every support atom attains
    the rule's maximal risk over ``|D| <= h_budget`` within ``tol``.
    """
    sigma = spec.sigma
    effects = prior.effects(spec.mu_dot)
    w = prior.weights
    grid = signal_grid(sigma)
    # posterior expected tilted loss of each action (normalised by the posterior mass)
    z = (grid[:, None] - effects[None, :]) / sigma
    logpost = np.log(w)[None, :] - 0.5 * z * z
    post = np.exp(logpost - logsumexp(logpost, axis=1, keepdims=True))
    tilt = np.exp(np.abs(effects) / lam)
    loss_treat = post @ np.where(effects < 0, tilt, 1.0)
    loss_skip = post @ np.where(effects > 0, tilt, 1.0)
    act = rule.decide(grid)
    chosen = np.where(act == 1, loss_treat, loss_skip)
    other = np.where(act == 1, loss_skip, loss_treat)
    bayes_violation = float(np.max(chosen - other))

    if h_budget is None:
        h_budget = max(10.0 * lam * sigma, 2.0 * float(np.max(np.abs(effects))), sigma)
    _, max_risk = nature_best_response(rule, spec, lam, h_budget)
    atom_risk = rule_risk(rule, effects, lam, sigma)
    eq_violation = float(max_risk - np.min(np.atleast_1d(atom_risk)))
    return SaddleReport(
        bayes_violation <= tol, max(bayes_violation, 0.0), eq_violation <= tol, max(eq_violation, 0.0), max_risk
    )
