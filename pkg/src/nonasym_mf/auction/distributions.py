"""Value distributions on a bounded support.

Each distribution carries its CDF, density and quantile function.  Pure
power laws on ``[0, hi]`` are flagged because the inverse-bid system is
scale invariant for them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from ..errors import DomainError


@dataclass
class Distribution:
    cdf: Callable
    pdf: Callable
    support: tuple
    name: str = "custom"
    power: float | None = None  # exponent when F(v) = (v / hi)^power on [0, hi]
    params: dict = field(default_factory=dict)
    _ppf: Callable | None = field(default=None, repr=False)

    def __call__(self, v):
        return self.cdf(v)

    @property
    def lo(self) -> float:
        return float(self.support[0])

    @property
    def hi(self) -> float:
        return float(self.support[1])

    def hazard_ratio(self, v):
        """``f / F`` at ``v``; exact for power laws so tiny ``v`` stays finite."""
        v = np.asarray(v, dtype=float)
        if self.power is not None:
            return self.power / v
        return self.pdf(v) / self.cdf(v)

    def inverse_hazard(self, v):
        """``F / f`` at ``v``."""
        v = np.asarray(v, dtype=float)
        if self.power is not None:
            return v / self.power
        return self.cdf(v) / self.pdf(v)

    def local_exponent(self) -> float:
        """Exponent ``a`` of ``F(v) ~ c (v - lo)^a`` at the bottom of the support."""
        if self.power is not None:
            return self.power
        h = 1e-6 * (self.hi - self.lo)
        return float(h * self.pdf(self.lo + h) / self.cdf(self.lo + h))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self._ppf is not None:
            return self._ppf(u)
        # monotone inversion on a dense grid
        grid = np.linspace(self.lo, self.hi, 20001)
        F = np.maximum.accumulate(np.asarray(self.cdf(grid), dtype=float))
        keep = np.concatenate([[True], np.diff(F) > 0])
        return np.interp(u, F[keep], grid[keep])

    def sample(self, rng: np.random.Generator, size):
        return self.ppf(rng.random(size))


def uniform(lo: float = 0.0, hi: float = 1.0) -> Distribution:
    if not hi > lo:
        raise DomainError("uniform needs lo < hi")
    w = hi - lo
    return Distribution(
        cdf=lambda v: np.clip((np.asarray(v, float) - lo) / w, 0.0, 1.0),
        pdf=lambda v: np.where((np.asarray(v, float) >= lo) & (np.asarray(v, float) <= hi), 1.0 / w, 0.0),
        support=(lo, hi), name="uniform", power=1.0 if lo == 0.0 else None,
        params={"lo": lo, "hi": hi}, _ppf=lambda u: lo + w * u,
    )


def power(alpha: float, hi: float = 1.0) -> Distribution:
    """``F(v) = (v / hi)^alpha`` on ``[0, hi]``."""
    if alpha <= 0:
        raise DomainError("power exponent must be positive")

    def cdf(v):
        return np.clip(np.asarray(v, float) / hi, 0.0, 1.0) ** alpha

    def pdf(v):
        x = np.clip(np.asarray(v, float) / hi, 0.0, 1.0)
        return alpha * x ** (alpha - 1) / hi

    return Distribution(cdf=cdf, pdf=pdf, support=(0.0, hi), name=f"power({alpha:g})", power=float(alpha),
                        params={"alpha": alpha, "hi": hi}, _ppf=lambda u: hi * u ** (1.0 / alpha))


def cubic_bump(v):
    """``v (1 - v) (1/2 - v)``, zero at 0, 1/2 and 1."""
    v = np.asarray(v, float)
    return v * (1 - v) * (0.5 - v)


def cubic_bump_prime(v):
    v = np.asarray(v, float)
    return 0.5 - 3 * v + 3 * v * v


def perturbed(base: Distribution, eps: float, gamma: Callable = cubic_bump,
              gamma_prime: Callable = cubic_bump_prime) -> Distribution:
    """``F(v) = base(v) + eps * gamma(v)``; gamma must vanish at both ends."""
    return Distribution(
        cdf=lambda v: base.cdf(v) + eps * gamma(v),
        pdf=lambda v: base.pdf(v) + eps * gamma_prime(v),
        support=base.support, name=f"{base.name}{eps:+g}*bump",
        params={"base": base.name, "eps": eps},
    )


def tabulated(values, probabilities) -> Distribution:
    """Monotone cubic (PCHIP) interpolation of tabulated CDF points."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    if v.ndim != 1 or v.size < 2 or v.shape != p.shape:
        raise DomainError("need matching 1-d arrays with at least two points")
    if np.any(np.diff(v) <= 0):
        raise DomainError("tabulated values must be strictly increasing")
    if np.any(np.diff(p) < 0):
        raise DomainError("tabulated probabilities must be nondecreasing")
    interp = PchipInterpolator(v, p, extrapolate=False)
    deriv = interp.derivative()
    lo, hi = float(v[0]), float(v[-1])

    def cdf(x):
        x = np.clip(np.asarray(x, float), lo, hi)
        return interp(x)

    def pdf(x):
        x = np.clip(np.asarray(x, float), lo, hi)
        return deriv(x)

    return Distribution(cdf=cdf, pdf=pdf, support=(lo, hi), name="tabulated",
                        params={"values": v.tolist(), "probabilities": p.tolist()})


def from_spec(spec: dict) -> Distribution:
    """Build a distribution from ``{"family": ..., "params": {...}}``."""
    family = spec.get("family")
    params = dict(spec.get("params", {}))
    if family == "uniform":
        return uniform(**params)
    if family == "power":
        return power(**params)
    if family == "perturbed":
        base = from_spec(params.pop("base", {"family": "uniform"}))
        return perturbed(base, float(params.get("eps", 0.0)))
    if family == "tabulated":
        return tabulated(params["values"], params["probabilities"])
    raise DomainError(f"unknown distribution family {family!r}")
