"""Valuation models, inverse-bid solutions and the equilibrium ODE."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from ..errors import DegenerateGameError, DomainError, SingularityError
from .distributions import Distribution

CDF_TOL = 1e-9


@dataclass
class ValuationModel:
    cdfs: list
    alpha: np.ndarray | None = None
    grid_points: int = 4001

    def __post_init__(self):
        self.cdfs = list(self.cdfs)
        if len(self.cdfs) < 2:
            raise DomainError("an auction needs at least two bidders")
        lo, hi = self.cdfs[0].support
        for F in self.cdfs[1:]:
            if not np.allclose(F.support, (lo, hi), rtol=0, atol=1e-12):
                raise DomainError("all bidders must share the same support")
        if not lo < hi:
            raise DomainError("support needs v_low < v_high")
        self.support = (float(lo), float(hi))
        alpha = np.zeros(self.n) if self.alpha is None else np.asarray(self.alpha, float)
        if alpha.ndim == 0:
            alpha = np.full(self.n, float(alpha))
        if alpha.shape != (self.n,) or np.any(alpha < 0) or np.any(alpha > 1):
            raise DomainError("spite coefficients must be n values in [0, 1]")
        self.alpha = alpha
        self._validate()

    @property
    def n(self) -> int:
        return len(self.cdfs)

    @property
    def v_low(self) -> float:
        return self.support[0]

    @property
    def v_high(self) -> float:
        return self.support[1]

    def grid(self, m=None):
        return np.linspace(self.v_low, self.v_high, m or self.grid_points)

    def _validate(self):
        g = self.grid()
        for j, F in enumerate(self.cdfs):
            lo_val = float(F.cdf(self.v_low))
            hi_val = float(F.cdf(self.v_high))
            if abs(lo_val) > CDF_TOL or abs(hi_val - 1.0) > CDF_TOL:
                raise DomainError(f"bidder {j}: F(v_low)={lo_val:.3g}, F(v_high)={hi_val:.3g}")
            vals = np.asarray(F.cdf(g), float)
            if np.any(np.diff(vals) < -CDF_TOL):
                k = int(np.argmin(np.diff(vals)))
                raise DomainError(f"bidder {j}: CDF decreases near v={g[k]:.6g}")
            dens = np.asarray(F.pdf(g[1:-1]), float)
            if np.any(dens < -CDF_TOL):
                k = int(np.argmin(dens))
                raise DomainError(f"bidder {j}: negative density near v={g[k + 1]:.6g}")

    def mean_cdf(self, v):
        return sum(np.asarray(F.cdf(v), float) for F in self.cdfs) / self.n

    def mean_distribution(self) -> Distribution:
        cdfs = self.cdfs
        n = self.n
        powers = {F.power for F in cdfs}
        same_power = len(powers) == 1 and None not in powers
        return Distribution(
            cdf=self.mean_cdf,
            pdf=lambda v: sum(np.asarray(F.pdf(v), float) for F in cdfs) / n,
            support=self.support, name="mean",
            power=cdfs[0].power if same_power else None,
            _ppf=cdfs[0]._ppf if same_power else None,
        )

    @property
    def is_symmetric(self) -> bool:
        return self.epsilon == 0.0

    @property
    def epsilon(self) -> float:
        """``max_j sup_v |F_j(v) - mbar(v)|`` on a dense grid, polished locally."""
        if not hasattr(self, "_eps"):
            g = self.grid()
            vals = [np.asarray(F.cdf(g), float) for F in self.cdfs]
            if all(np.array_equal(vals[0], x) for x in vals[1:]):
                # identical bidders; the float mean would leave rounding residue
                self._eps = 0.0
                return 0.0
            m = self.mean_cdf(g)
            best = 0.0
            for F in self.cdfs:
                d = np.abs(np.asarray(F.cdf(g), float) - m)
                k = int(np.argmax(d))
                if d[k] == 0.0:
                    continue
                a, b = g[max(k - 1, 0)], g[min(k + 1, g.size - 1)]
                res = minimize_scalar(lambda v: -abs(float(F.cdf(v)) - float(self.mean_cdf(v))),
                                      bounds=(a, b), method="bounded", options={"xatol": 1e-14})
                best = max(best, d[k], -res.fun)
            self._eps = float(best)
        return self._eps

    def gamma(self, j: int, v):
        """Normalised deviation ``(F_j - mbar) / epsilon``."""
        eps = self.epsilon
        if eps == 0.0:
            return np.zeros_like(np.asarray(v, float))
        return (np.asarray(self.cdfs[j].cdf(v), float) - self.mean_cdf(v)) / eps

    @property
    def pure_powers(self) -> np.ndarray | None:
        """Exponents when every bidder is a power law on ``[0, hi]``."""
        p = [F.power for F in self.cdfs]
        if any(a is None for a in p) or self.v_low != 0.0:
            return None
        return np.array(p, dtype=float)


@dataclass
class InverseBidSolution:
    b_low: float
    b_high: float
    b_grid: np.ndarray
    curves: np.ndarray  # shape (n, len(b_grid))
    residual: float
    boundary_defect: float
    method: str
    converged: bool = True
    objective: float | None = None
    iterations: int | None = None
    diagnostics: dict = field(default_factory=dict)
    evaluator: Callable | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    def values(self, b) -> np.ndarray:
        """Inverse bids ``v_j(b)``, shape ``(n, len(b))``."""
        b = np.atleast_1d(np.asarray(b, float))
        if self.evaluator is not None:
            return self.evaluator(b)
        return np.array([np.interp(b, self.b_grid, c) for c in self.curves])

    def bid(self, j: int, v):
        """Bid of bidder ``j`` at value ``v`` by inverting the monotone curve."""
        c = self.curves[j]
        return np.interp(v, c, self.b_grid)

    def check_invariants(self, tol=1e-9) -> dict:
        dv = np.diff(self.curves, axis=1)
        return {
            "no_overbidding": bool(np.all(self.curves >= self.b_grid - tol)),
            "increasing": bool(np.all(dv > 0)),
        }


def symmetric_bid(F: Distribution, n: int, v: float) -> float:
    """Symmetric equilibrium bid ``v - int_{lo}^{v} F^{n-1} / F(v)^{n-1}``."""
    lo, hi = F.support
    if v < lo - 1e-12 or v > hi + 1e-12:
        raise DomainError(f"value {v} outside support [{lo}, {hi}]")
    if v <= lo:
        return float(lo)
    Fv = float(F.cdf(v))
    if Fv <= 0.0:
        raise DegenerateGameError(f"F({v}) = 0 above the bottom of the support")
    k = n - 1
    if F.power is not None and lo == 0.0:
        # closed form keeps tiny v accurate
        a = F.power
        return float(v * a * k / (a * k + 1))
    integral = quad(lambda x: float(F.cdf(x)) ** k, lo, v, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return float(v - integral / Fv**k)


def ode_rhs(vm: ValuationModel, b: float, v) -> np.ndarray:
    """Right-hand side of the coupled inverse-bid system.

    ``v_j' = (F_j / f_j)(v_j) * [ (1/(n-1)) sum_k 1/(v_k - b) - 1/(v_j - b) ]``
    """
    v = np.asarray(v, dtype=float)
    gap = v - b
    if np.any(gap <= 0):
        raise SingularityError(f"v_j <= b at b={b}: {v}")
    inv = 1.0 / gap
    # F/f is frozen at v_high above the support so events at the top stay smooth
    w = np.minimum(v, vm.v_high)
    ratio = np.array([F.inverse_hazard(w[j]) for j, F in enumerate(vm.cdfs)], dtype=float)
    return ratio * (inv.sum() / (vm.n - 1) - inv)


def foc_residual(vm: ValuationModel, b, v, vp) -> np.ndarray:
    """First-order condition ``H_j = 1 + (b - v_j) sum_{k != j} (f/F)(v_k) v_k'``.

    ``v`` and ``vp`` have shape ``(n, m)`` for bid points ``b`` of length m.
    """
    b = np.asarray(b, float)
    w = np.minimum(v, vm.v_high)  # same continuous extension as ode_rhs
    hz = np.array([F.hazard_ratio(w[j]) for j, F in enumerate(vm.cdfs)]) * vp
    s = hz.sum(axis=0)
    return 1.0 + (b - v) * (s - hz)
