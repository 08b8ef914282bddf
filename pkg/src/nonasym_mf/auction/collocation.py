"""Polynomial collocation for the inverse bids.

Each inverse bid is ``v_j(b) = bbar - sum_k mu_{j,k} (bbar - b)^k``.  The top
bid ``bbar`` and all coefficients are chosen by nonlinear least squares on
the first-order conditions at uniformly spaced bids plus boundary penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .model import InverseBidSolution, ValuationModel, foc_residual, symmetric_bid

CLIP = 1e-12


@dataclass
class CollocationConfig:
    K: int = 8
    T: int = 40
    init: str = "symmetric"  # or "user"
    x0: np.ndarray | None = None  # (bbar, mu_00..mu_0K, mu_10.., ...) when init == "user"
    max_iter: int = 200
    tol: float = 1e-3

    def __post_init__(self):
        if self.K < 1:
            raise DomainError("polynomial degree K must be >= 1")
        if self.T < self.K + 2:
            raise DomainError(f"grid size T={self.T} must be at least K+2={self.K + 2}")
        if self.tol <= 0:
            raise DomainError("tol must be positive")
        if self.init not in ("symmetric", "user"):
            raise DomainError("init must be 'symmetric' or 'user'")
        if self.init == "user" and self.x0 is None:
            raise DomainError("init='user' needs x0")

    def advisory(self, n: int) -> str | None:
        unknowns = 1 + n * (self.K + 1)
        if n * self.T + 2 * n <= unknowns:
            return f"{n * self.T + 2 * n} residuals for {unknowns} unknowns: underdetermined"
        return None


def _poly(bbar, mu, b):
    """Values and b-derivatives of the polynomial inverse bids."""
    K = mu.shape[1] - 1
    d = bbar - np.asarray(b, float)
    k = np.arange(K + 1)
    pw = d[None, :] ** k[:, None]
    v = bbar - mu @ pw
    dpw = np.zeros_like(pw)
    dpw[1:] = k[1:, None] * d[None, :] ** k[:-1, None]
    return v, mu @ dpw


class _Problem:
    def __init__(self, vm: ValuationModel, cfg: CollocationConfig):
        self.vm = vm
        self.cfg = cfg
        self.n = vm.n
        self.clipped = 0

    def unpack(self, x):
        return x[0], x[1:].reshape(self.n, self.cfg.K + 1)

    def grid(self, bbar):
        T = self.cfg.T
        # the bottom point b = v_low is singular and left out
        return bbar + np.arange(T) / T * (self.vm.v_low - bbar)

    def residuals(self, x, count=False):
        vm, T = self.vm, self.cfg.T
        bbar, mu = self.unpack(x)
        bt = self.grid(bbar)
        v, vp = _poly(bbar, mu, bt)
        floor = vm.v_low + CLIP
        if count:
            self.clipped = int(np.sum(v < floor))
        vc = np.maximum(v, floor)
        H = foc_residual(vm, bt, vc, vp)
        vt, _ = _poly(bbar, mu, [bbar])
        vb, _ = _poly(bbar, mu, [vm.v_low])
        w = math.sqrt(T)
        return np.concatenate([H.ravel(), w * (vt[:, 0] - vm.v_high), w * (vb[:, 0] - vm.v_low)])


def gauss_newton(resid, x, max_iter=200, rel_tol=1e-14):
    """Damped Gauss-Newton with a forward-difference Jacobian.

    The step is halved until the objective decreases; iteration stops when
    no decrease is possible or the relative decrease falls below ``rel_tol``.
    """
    x = np.asarray(x, float).copy()
    r = resid(x)
    obj = float(r @ r)
    it = 0
    for it in range(1, max_iter + 1):
        J = np.empty((r.size, x.size))
        for i in range(x.size):
            h = 1e-7 * max(1.0, abs(x[i]))
            xp = x.copy()
            xp[i] += h
            J[:, i] = (resid(xp) - r) / h
        dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        s = 1.0
        while s > 1e-10:
            xn = x + s * dx
            rn = resid(xn)
            on = float(rn @ rn)
            if np.isfinite(on) and on < obj:
                break
            s *= 0.5
        else:
            return x, obj, it, "stationary"
        done = obj - on < rel_tol * max(1.0, obj)
        x, r, obj = xn, rn, on
        if done or obj < 1e-30:
            return x, obj, it, "stationary"
    return x, obj, it, "max_iter"


def symmetric_seed(vm: ValuationModel, K: int, points: int = 200) -> np.ndarray:
    """Coefficients fitted to the symmetric equilibrium of the mean-CDF model."""
    mF = vm.mean_distribution()
    lo, hi = vm.support
    vs = np.linspace(lo + 1e-4 * (hi - lo), hi, points)
    bs = np.array([symmetric_bid(mF, vm.n, v) for v in vs])
    bbar = bs[-1]
    P = (bbar - bs)[:, None] ** np.arange(K + 1)
    mu = np.linalg.lstsq(P, bbar - vs, rcond=None)[0]
    return np.concatenate([[bbar]] + [mu] * vm.n)


def solve_collocation(vm: ValuationModel, cfg: CollocationConfig | None = None,
                      grid_points: int = 2001) -> InverseBidSolution:
    """Least-squares collocation solution over ``bbar`` and the coefficients."""
    cfg = cfg or CollocationConfig()
    prob = _Problem(vm, cfg)
    if cfg.init == "user":
        x0 = np.asarray(cfg.x0, float)
        if x0.size != 1 + vm.n * (cfg.K + 1):
            raise DomainError(f"x0 needs {1 + vm.n * (cfg.K + 1)} entries")
    else:
        x0 = symmetric_seed(vm, cfg.K)
    x, obj, it, why = gauss_newton(prob.residuals, x0, cfg.max_iter)
    r = prob.residuals(x, count=True)
    bbar, mu = prob.unpack(x)

    def evaluator(b):
        return _poly(bbar, mu, b)[0]

    lo = vm.v_low
    b_grid = np.linspace(lo, bbar, grid_points)
    curves, slopes = _poly(bbar, mu, b_grid)
    vc = np.maximum(curves, lo + CLIP)
    # between nodes the truncated polynomial is looser, mostly near the bottom
    H_fine = foc_residual(vm, b_grid[1:], vc[:, 1:], slopes[:, 1:])
    residual = float(np.max(np.abs(r[: vm.n * cfg.T])))
    top = evaluator([bbar])[:, 0]
    defect = float(max(np.max(np.abs(top - vm.v_high)), np.max(np.abs(curves[:, 0] - lo))))
    max_abs = float(np.max(np.abs(r)))
    diagnostics = {"stop": why, "max_abs_residual": max_abs, "clipped_points": prob.clipped,
                   "residual_dense": float(np.max(np.abs(H_fine))),
                   "coefficients": mu.tolist(), "K": cfg.K, "T": cfg.T}
    note = cfg.advisory(vm.n)
    if note:
        diagnostics["advisory"] = note
    return InverseBidSolution(
        b_low=lo, b_high=float(bbar), b_grid=b_grid, curves=curves, residual=residual,
        boundary_defect=defect, method="collocation", converged=max_abs <= cfg.tol,
        objective=obj, iterations=it, diagnostics=diagnostics, evaluator=evaluator,
    )


def collocation_objective(vm: ValuationModel, cfg: CollocationConfig, x) -> float:
    """Objective at a given parameter vector (no solve)."""
    r = _Problem(vm, cfg).residuals(np.asarray(x, float))
    return float(r @ r)
