"""Indistinguishable payoffs and their second-order mean-field error bounds.

A payoff ``r_g`` on ``n``-player action profiles is *indistinguishable* when
it is invariant under relabelling of the players.  For such payoffs the
first-order Taylor term around the symmetric profile ``(m, ..., m)`` cancels,
and the error of replacing ``r_g(a)`` by ``r_bar(m) = r_g(m, ..., m)`` is

    delta * sum_j (a_j - m)^2,
    delta = | n / (2 (n - 1)) * (-r_bar''(m) / n^2 + d2_own(m)) |,

where ``d2_own`` is the own second derivative ``d^2 r_g / d a_1^2`` at the
symmetric point.  The bound is exact for quadratic payoffs and holds for any
``n >= 2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateGameError, DomainError, NonFiniteEvaluation, StepSizeError

Evaluator = Callable[[np.ndarray], float]

NASH_TOL = 1e-9
A0_TOL = 1e-9


@dataclass
class PayoffSpec:
    """An evaluable payoff on ``[a_low, a_high]^n``.

    ``analytic_reduction`` (``m -> r_bar(m)``) and ``analytic_d2``
    (``m -> d^2 r_g / d a_1^2`` at ``(m, ..., m)``) short-circuit the finite
    differences when known in closed form.
    """

    n: int
    evaluate: Evaluator
    action_bounds: tuple[float, float] = (0.0, 1.0)
    analytic_reduction: Optional[Callable[[float], float]] = None
    analytic_d2: Optional[Callable[[float], float]] = None
    name: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"player count must be >= 1, got {self.n}")
        lo, hi = self.action_bounds
        if not lo < hi:
            raise DomainError(f"empty action interval {self.action_bounds}")

    def __call__(self, a) -> float:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n,):
            raise DomainError(f"expected a profile of length {self.n}, got shape {a.shape}")
        val = float(self.evaluate(a))
        if not math.isfinite(val):
            raise NonFiniteEvaluation(f"payoff is {val} at {a.tolist()}", point=a.tolist())
        return val

    def in_bounds(self, x) -> bool:
        lo, hi = self.action_bounds
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo) and np.all(x <= hi))


@dataclass
class ActionProfile:
    """An action profile with its mean, squared deviation and spread."""

    actions: np.ndarray
    mean: float = field(init=False)
    deviation_sq: float = field(init=False)
    epsilon: float = field(init=False)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=float).ravel()
        if self.actions.size == 0:
            raise DomainError("empty action profile")
        # fsum is correctly rounded, so the mean does not depend on player order
        if np.all(self.actions == self.actions[0]):
            self.mean = float(self.actions[0])
        else:
            self.mean = math.fsum(self.actions) / self.actions.size
        dev = self.actions - self.mean
        self.deviation_sq = float(np.dot(dev, dev))
        self.epsilon = float(np.max(np.abs(dev)))

    @property
    def n(self) -> int:
        return self.actions.size

    @property
    def gamma(self) -> np.ndarray:
        """Normalised deviations ``(a_j - m) / epsilon`` (zero if symmetric)."""
        if self.epsilon == 0.0:
            return np.zeros_like(self.actions)
        return (self.actions - self.mean) / self.epsilon


@dataclass
class ErrorBoundReport:
    delta: float
    bound: float
    gap: float
    rbar_second: float
    d2_own: float
    n: int
    epsilon: float
    mean: float

    def as_record(self) -> dict:
        return {
            "delta": self.delta,
            "bound": self.bound,
            "gap": self.gap,
            "n": self.n,
            "epsilon": self.epsilon,
        }


@dataclass
class TrajectoryProfile:
    """Per-period action profiles ``a_t`` for a horizon of ``T`` periods."""

    profiles: list

    def __post_init__(self):
        self.profiles = [
            p if isinstance(p, ActionProfile) else ActionProfile(p) for p in self.profiles
        ]
        sizes = {p.n for p in self.profiles}
        if len(sizes) > 1:
            raise DomainError(f"profiles have inconsistent player counts {sorted(sizes)}")

    @property
    def horizon(self) -> int:
        return len(self.profiles)

    @property
    def means(self) -> np.ndarray:
        return np.array([p.mean for p in self.profiles])

    @property
    def l2_deviation(self) -> float:
        return float(sum(p.deviation_sq for p in self.profiles))


@dataclass
class DynamicBoundReport:
    delta: float
    bound: float
    gap: float
    per_period: list
    horizon: int

    def as_record(self) -> dict:
        return {"delta": self.delta, "bound": self.bound, "gap": self.gap, "horizon": self.horizon}


@dataclass
class IndistinguishabilityReport:
    passed: bool
    max_violation: float
    worst_profile: Optional[list]
    samples: int
    seed: Optional[int]


@dataclass
class NearIndistinguishabilityReport:
    eps_nonscalable: float
    eps_scalable: float
    skipped: int
    samples: int
    seed: int


@dataclass
class NashReport:
    passed: bool
    best_improvement: float
    best_player: Optional[int]
    best_action: Optional[float]


@dataclass
class ESSReport:
    passed: bool
    failing_invaders: list
    eps_threshold: dict


# ---------------------------------------------------------------------------
# common payoffs


def collaborative_effort(n: int) -> PayoffSpec:
    """Product payoff ``prod_j a_j`` on ``[0, 1]^n``."""
    return PayoffSpec(
        n=n,
        evaluate=lambda a: float(np.prod(a)),
        action_bounds=(0.0, 1.0),
        analytic_reduction=lambda m: m**n,
        analytic_d2=lambda m: 0.0,
        name=f"product(n={n})",
    )


def symmetric_quadratic(n: int, c0: float, c1: float, c2: float, c3: float,
                        bounds=(-10.0, 10.0)) -> PayoffSpec:
    """``c0 + c1*S + c2*S^2 + c3*Q``, ``S = sum a_j``, ``Q = sum a_j^2``.

    Every symmetric polynomial of degree <= 2 has this form.
    """

    def ev(a):
        s = float(np.sum(a))
        return c0 + c1 * s + c2 * s * s + c3 * float(np.dot(a, a))

    return PayoffSpec(
        n=n,
        evaluate=ev,
        action_bounds=bounds,
        analytic_reduction=lambda m: c0 + c1 * n * m + c2 * (n * m) ** 2 + c3 * n * m * m,
        analytic_d2=lambda m: 2.0 * (c2 + c3),
        name="symmetric-quadratic",
    )


# ---------------------------------------------------------------------------
# operations


def _relative_gap(x: float, y: float) -> float:
    return abs(x - y) / max(1.0, abs(x), abs(y))


def check_indistinguishable(p: PayoffSpec, samples: int = 100, seed: int = 0,
                            profiles: Optional[Sequence] = None) -> IndistinguishabilityReport:
    """Test invariance under adjacent transpositions on sampled profiles.

    Adjacent transpositions generate the symmetric group, so checking them is
    enough.  ``profiles`` adds explicit profiles to the random ones.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = p.action_bounds
    draws = list(rng.uniform(lo, hi, size=(samples, p.n)))
    if profiles is not None:
        draws.extend(np.asarray(q, dtype=float) for q in profiles)

    worst, worst_profile = 0.0, None
    for a in draws:
        base = p(a)
        for i in range(p.n - 1):
            b = a.copy()
            b[i], b[i + 1] = b[i + 1], b[i]
            viol = _relative_gap(base, p(b))
            if viol > worst:
                worst, worst_profile = viol, a.tolist()
    return IndistinguishabilityReport(
        passed=worst <= A0_TOL,
        max_violation=worst,
        worst_profile=worst_profile,
        samples=len(draws),
        seed=seed,
    )


def symmetric_reduce(p: PayoffSpec, m: float) -> float:
    """``r_bar(m) = r_g(m, ..., m)``."""
    if not p.in_bounds(m):
        raise DomainError(f"m={m} outside action bounds {p.action_bounds}")
    if p.analytic_reduction is not None:
        return float(p.analytic_reduction(m))
    return p(np.full(p.n, float(m)))


def default_step(m: float) -> float:
    return max(1e-5, 1e-5 * abs(m))


def second_derivatives(p: PayoffSpec, m: float, h: Optional[float] = None) -> tuple[float, float]:
    """Return ``(r_bar''(m), d^2 r_g/da_1^2 (m, ..., m))``.

    Central differences with step ``h``; the default step is
    ``max(1e-5, 1e-5 |m|)``.  Central differences are exact for quadratics,
    so a large ``h`` is the accurate choice there.
    """
    h = default_step(m) if h is None else float(h)
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    lo, hi = p.action_bounds
    if m - h < lo or m + h > hi:
        raise DomainError(f"m +- h = [{m - h}, {m + h}] leaves bounds {p.action_bounds}")

    r0 = symmetric_reduce(p, m)
    rbar2 = (symmetric_reduce(p, m + h) - 2.0 * r0 + symmetric_reduce(p, m - h)) / (h * h)

    if p.analytic_d2 is not None:
        d2 = float(p.analytic_d2(m))
    else:
        base = np.full(p.n, float(m))
        up, dn = base.copy(), base.copy()
        up[0] += h
        dn[0] -= h
        d2 = (p(up) - 2.0 * p(base) + p(dn)) / (h * h)

    if not (math.isfinite(rbar2) and math.isfinite(d2)):
        raise StepSizeError(f"non-finite second derivative at m={m} with h={h}")
    return rbar2, d2


def bound_coefficient(n: int, rbar2: float, d2: float) -> float:
    if n < 2:
        raise DegenerateGameError("the bound coefficient needs n >= 2 players")
    return abs(n / (2.0 * (n - 1)) * (-rbar2 / n**2 + d2))


def error_bound_static(p: PayoffSpec, a, h: Optional[float] = None) -> ErrorBoundReport:
    """Second-order bound and realised gap for one profile."""
    prof = a if isinstance(a, ActionProfile) else ActionProfile(a)
    if prof.n != p.n:
        raise DomainError(f"profile has {prof.n} players, payoff expects {p.n}")
    if p.n < 2:
        raise DegenerateGameError("the bound coefficient needs n >= 2 players")
    if not p.in_bounds(prof.actions):
        raise DomainError("profile outside action bounds")
    rbar2, d2 = second_derivatives(p, prof.mean, h)
    delta = bound_coefficient(p.n, rbar2, d2)
    gap = abs(p(prof.actions) - symmetric_reduce(p, prof.mean))
    return ErrorBoundReport(
        delta=delta,
        bound=delta * prof.deviation_sq,
        gap=gap,
        rbar_second=rbar2,
        d2_own=d2,
        n=p.n,
        epsilon=prof.epsilon,
        mean=prof.mean,
    )


def error_bound_dynamic(p: PayoffSpec, traj, h: Optional[float] = None) -> DynamicBoundReport:
    """Horizon bound ``sup_t delta_t * sum_t sum_j (a_jt - m_t)^2``."""
    traj = traj if isinstance(traj, TrajectoryProfile) else TrajectoryProfile(traj)
    if traj.horizon == 0:
        raise DomainError("empty horizon")
    reports = [error_bound_static(p, prof, h) for prof in traj.profiles]
    delta = max(r.delta for r in reports)
    total = sum(p(prof.actions) for prof in traj.profiles)
    total_bar = sum(symmetric_reduce(p, prof.mean) for prof in traj.profiles)
    return DynamicBoundReport(
        delta=delta,
        bound=delta * traj.l2_deviation,
        gap=abs(total - total_bar),
        per_period=reports,
        horizon=traj.horizon,
    )


def first_order_directional(p: PayoffSpec, m: float, direction, h: float = 1e-6) -> float:
    """Central-difference derivative of ``r_g`` at ``(m, ..., m)`` along ``direction``."""
    d = np.asarray(direction, dtype=float)
    base = np.full(p.n, float(m))
    return (p(base + h * d) - p(base - h * d)) / (2.0 * h)


def cross_derivative(p: PayoffSpec, m: float, i: int, j: int, h: float = 1e-4) -> float:
    """Finite-difference ``d^2 r_g / da_i da_j`` at the symmetric point."""
    base = np.full(p.n, float(m))

    def shifted(si, sj):
        x = base.copy()
        x[i] += si * h
        x[j] += sj * h
        return p(x)

    return (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4.0 * h * h)


def near_indistinguishability_gap(payoffs: Sequence[Evaluator], reference: PayoffSpec,
                                  samples: int = 1000, seed: int = 0) -> NearIndistinguishabilityReport:
    """Sampled estimates of how far per-player payoffs are from ``reference``.

    Returns ``sup |r_j - r_g|`` and ``sup |r_j - r_g| / |r_g|`` over the
    sampled profiles; the relative form skips points with ``|r_g| < 1e-12``.
    """
    if len(payoffs) != reference.n:
        raise DomainError(f"need {reference.n} payoffs, got {len(payoffs)}")
    rng = np.random.default_rng(seed)
    lo, hi = reference.action_bounds
    eps_abs = eps_rel = 0.0
    skipped = 0
    for a in rng.uniform(lo, hi, size=(samples, reference.n)):
        rg = reference(a)
        diffs = []
        for rj in payoffs:
            val = float(rj(a))
            if not math.isfinite(val):
                raise NonFiniteEvaluation(f"player payoff is {val}", point=a.tolist())
            diffs.append(abs(val - rg))
        worst = max(diffs)
        eps_abs = max(eps_abs, worst)
        if abs(rg) < 1e-12:
            skipped += 1
        else:
            eps_rel = max(eps_rel, worst / abs(rg))
    return NearIndistinguishabilityReport(eps_abs, eps_rel, skipped, samples, seed)


def _player_payoffs(p, n=None):
    if isinstance(p, PayoffSpec):
        return [p] * p.n, p.n, p.action_bounds
    payoffs = list(p)
    bounds = getattr(payoffs[0], "action_bounds", (0.0, 1.0))
    return payoffs, len(payoffs), bounds


def verify_nash(p, profile, grid_points: int = 101, bounds=None) -> NashReport:
    """Grid scan of unilateral deviations.

    ``p`` is either a common :class:`PayoffSpec` or a sequence of per-player
    payoff callables.  A deviation counts only if it improves by more than
    ``1e-9``.
    """
    if grid_points < 2:
        raise DomainError("grid_points must be >= 2")
    payoffs, n, default_bounds = _player_payoffs(p)
    lo, hi = bounds or default_bounds
    a = np.asarray(profile.actions if isinstance(profile, ActionProfile) else profile, dtype=float)
    grid = np.linspace(lo, hi, grid_points)

    best = (0.0, None, None)
    for j in range(n):
        base = float(payoffs[j](a))
        for x in grid:
            dev = a.copy()
            dev[j] = x
            gain = float(payoffs[j](dev)) - base
            if gain > best[0]:
                best = (gain, j, float(x))
    return NashReport(passed=best[0] <= NASH_TOL, best_improvement=best[0],
                      best_player=best[1], best_action=best[2])


def verify_strong_nash(p: PayoffSpec, profile, grid_points: int = 5) -> NashReport:
    """Brute-force coalition check: no coalition can jointly make all its members better off.

    Exponential in ``n``; intended for small games.
    """
    payoffs, n, (lo, hi) = _player_payoffs(p)
    a = np.asarray(profile, dtype=float)
    base = np.array([float(payoffs[j](a)) for j in range(n)])
    grid = np.linspace(lo, hi, grid_points)
    best = (0.0, None, None)
    for size in range(1, n + 1):
        for coalition in itertools.combinations(range(n), size):
            idx = list(coalition)
            for joint in itertools.product(grid, repeat=size):
                dev = a.copy()
                dev[idx] = joint
                gains = np.array([float(payoffs[j](dev)) for j in idx]) - base[idx]
                worst_gain = float(gains.min())
                if worst_gain > best[0]:
                    best = (worst_gain, coalition, joint)
    return NashReport(passed=best[0] <= NASH_TOL, best_improvement=best[0],
                      best_player=best[1], best_action=best[2])


def price_of_anarchy(equilibrium_payoffs: Sequence[float], optimum: float) -> tuple[float, float]:
    """``(PoA, PoS)``: worst and best equilibrium payoff over the social optimum."""
    eq = list(equilibrium_payoffs)
    return min(eq) / optimum, max(eq) / optimum


def verify_ess(p: PayoffSpec, candidate: float, invaders: Optional[Sequence[float]] = None,
               eps_grid: Optional[Sequence[float]] = None) -> ESSReport:
    """Evolutionary stability of the symmetric action ``candidate``.

    With ``x = (1 - eps) a* + eps a``, the candidate resists invader ``a``
    if the payoff at ``(x, .., a*, .., x)`` strictly exceeds the payoff at
    ``(x, .., a, .., x)`` for all ``eps`` below some threshold.  On the grid
    that threshold is the longest prefix of ascending ``eps`` values on which
    the strict inequality holds; an empty prefix means the invader succeeds.
    """
    lo, hi = p.action_bounds
    if not lo <= candidate <= hi:
        raise DomainError(f"candidate {candidate} outside bounds")
    if invaders is None:
        invaders = np.linspace(lo, hi, 21)
    if eps_grid is None:
        eps_grid = np.geomspace(1e-4, 0.5, 20)
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))
    invaders = [float(a) for a in invaders if abs(a - candidate) > 1e-15]

    failing, thresholds = [], {}
    for a in invaders:
        threshold = 0.0
        for eps in eps_grid:
            x = (1.0 - eps) * candidate + eps * a
            prof = np.full(p.n, x)
            prof[0] = candidate
            lhs = p(prof)
            prof[0] = a
            rhs = p(prof)
            if lhs > rhs:
                threshold = float(eps)
            else:
                break
        thresholds[a] = threshold
        if threshold == 0.0:
            failing.append(a)
    return ESSReport(passed=not failing, failing_invaders=failing, eps_threshold=thresholds)
