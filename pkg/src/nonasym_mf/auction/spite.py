"""Spiteful bidders with uniform values on [0, 1].

A spiteful bidder with coefficient ``alpha`` also values the opponents'
loss.  In the symmetric uniform model the equilibrium bid is linear.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .model import InverseBidSolution


def spiteful_symmetric_bid(n: int, alpha: float, v):
    """``b(v) = (n - 1) / (n - alpha) * v``."""
    if alpha >= n:
        raise DomainError(f"alpha={alpha} >= n={n}: bid slope undefined")
    return (n - 1) / (n - alpha) * np.asarray(v, float)


def spite_ode_residual(n: int, alpha: float, v, b=None, db=None):
    """Defect of ``b(v) = v [1 - ((1 - alpha)/(n - 1)) b'(v)]``.

    Defaults to the closed-form bid and its slope.
    """
    v = np.asarray(v, float)
    k = (n - 1) / (n - alpha)
    b = k * v if b is None else np.asarray(b, float)
    db = np.full_like(v, k) if db is None else np.asarray(db, float)
    return b - v * (1.0 - (1.0 - alpha) / (n - 1) * db)


def spiteful_revenue(n: int, alpha: float) -> float:
    """Expected revenue ``n (n - 1) / ((n - alpha)(n + 1))``."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    return n * (n - 1) / ((n - alpha) * (n + 1))


def spiteful_revenue_mc(n: int, alpha: float, samples: int = 1_000_000, seed: int = 0):
    """Monte-Carlo ``E[max_j b(v_j)]``; returns ``(mean, standard error)``."""
    rng = np.random.default_rng(seed)
    top = rng.random((samples, n)).max(axis=1)
    r = spiteful_symmetric_bid(n, alpha, top)
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(samples))


def spiteful_solution(n: int, alpha: float, grid_points: int = 2001) -> InverseBidSolution:
    """Closed-form inverse bids ``v(b) = (n - alpha)/(n - 1) b`` as a solution object."""
    k = (n - 1) / (n - alpha)
    b_grid = np.linspace(0.0, k, grid_points)
    curves = np.tile(b_grid / k, (n, 1))
    return InverseBidSolution(
        b_low=0.0, b_high=k, b_grid=b_grid, curves=curves, residual=0.0, boundary_defect=0.0,
        method="closed-form", evaluator=lambda b: np.tile(np.asarray(b, float) / k, (n, 1)),
        diagnostics={"alpha": alpha},
    )
