"""Forward shooting for the inverse-bid system.

Near the bottom of the support the system behaves like a power-law game:
the ray ``v_j = lo + D1_j (b - lo)`` is an exact solution for pure powers,
and it is a saddle point in log time.  Shooting starts a hair off the ray
along its unstable direction and integrates forward.

* identical bidders: the symmetric ODE is stable forward, integrate to the top.
* pure powers: the system is scale invariant, so ``v(b x) / x`` is again a
  solution; integrate until the curves meet at ``x`` and rescale.
* otherwise (two bidders): find the unstable-direction coefficient by root
  finding so that both curves reach ``v_high`` at the same bid.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ..errors import ConvergenceError, DomainError, StepSizeError
from .model import InverseBidSolution, ValuationModel, foc_residual, ode_rhs

RTOL = 1e-12
ATOL = 1e-16


def ray_slopes(a) -> np.ndarray:
    """Slopes of the exact ray solution for power exponents ``a``."""
    a = np.asarray(a, float)
    return 1.0 + 1.0 / (a.sum() - a)


def log_time_jacobian(a) -> np.ndarray:
    """Jacobian of ``dV/dlog b = G(V) - V`` at the ray, with ``V = v / b``."""
    a = np.asarray(a, float)
    n = a.size
    D = ray_slopes(a)
    G = D  # fixed point
    J = np.empty((n, n))
    for j in range(n):
        for k in range(n):
            J[j, k] = -D[j] / (a[j] * (n - 1) * (D[k] - 1) ** 2)
        J[j, j] += G[j] / D[j] + D[j] / (a[j] * (D[j] - 1) ** 2)
    return J - np.eye(n)


def unstable_direction(a) -> tuple[np.ndarray, float]:
    """Unit eigenvector (first entry positive) and eigenvalue of the unstable mode."""
    w, V = np.linalg.eig(log_time_jacobian(a))
    pos = [i for i in range(w.size) if w[i].real > 1e-9]
    if len(pos) != 1:
        raise DomainError(f"ray has {len(pos)} unstable directions; shooting needs exactly one")
    i = pos[0]
    u = np.real(V[:, i])
    u /= np.linalg.norm(u)
    if u[0] < 0:
        u = -u
    return u, float(w[i].real)


def _finish(vm, method, b_grid, curves, evaluator, b_high, diagnostics, converged=True):
    # residual from spline derivatives: an independent check on the integration
    interior = slice(1, -1)
    vp = np.array([CubicSpline(b_grid, c)(b_grid, 1) for c in curves])
    H = foc_residual(vm, b_grid[interior], curves[:, interior], vp[:, interior])
    top = evaluator(np.array([b_high]))[:, 0]
    bottom = curves[:, 0]
    defect = float(max(np.max(np.abs(top - vm.v_high)), np.max(np.abs(bottom - vm.v_low))))
    return InverseBidSolution(
        b_low=vm.v_low, b_high=float(b_high), b_grid=b_grid, curves=curves,
        residual=float(np.max(np.abs(H))), boundary_defect=defect, method=method,
        converged=converged, diagnostics=diagnostics, evaluator=evaluator,
    )


def solve_shooting(vm: ValuationModel, D1=None, D2=None, delta1: float | None = None,
                   delta2: float = 1.0, b_stop: float | None = None, b0: float | None = None,
                   grid_points: int = 2001) -> InverseBidSolution:
    """Forward-shooting solution of the equilibrium inverse bids.

    The start is ``v_j(b0) = lo + D1_j h + delta1 * D2_j * h^(1 + delta2)``
    with ``h = b0 - lo`` and ``b0 = lo + 10^(-7 / (1 + delta2))``.  ``D1``
    defaults to the ray slopes of the local power exponents and ``D2`` to the
    unstable direction of the ray.
    """
    lo, hi = vm.support
    if delta2 <= 0:
        raise DomainError("delta2 must be positive")
    h0 = (10.0 ** (-7.0 / (1.0 + delta2))) * (hi - lo) if b0 is None else b0 - lo
    if h0 <= 0:
        raise DomainError("b0 must lie above the bottom of the support")
    a = np.array([F.local_exponent() for F in vm.cdfs])
    D1 = ray_slopes(a) if D1 is None else np.asarray(D1, float)
    if np.any(D1 <= 1):
        raise DomainError("D1 components must exceed 1 (inverse bids above the diagonal)")

    if vm.is_symmetric:
        return _shoot_symmetric(vm, float(np.mean(D1)), h0, b_stop, grid_points)
    if D2 is None:
        D2, _ = unstable_direction(a)
    D2 = np.asarray(D2, float)
    if vm.pure_powers is not None:
        d1 = 1e-8 if delta1 is None else delta1
        return _shoot_rescaled(vm, D1, D2, d1, delta2, h0, b_stop, grid_points)
    if vm.n != 2:
        raise DomainError("non-power asymmetric shooting is implemented for two bidders; use collocation")
    return _shoot_bracketed(vm, D1, D2, delta2, h0, b_stop, grid_points, delta1)


def _integrate(vm, b_start, v_start, b_end, events, guard=False):
    def rhs(b, v):
        if guard:
            # trial stages may overshoot the diagonal; keep them finite so the
            # stepper rejects the step and the floor event fires instead
            v = np.maximum(v, b + 1e-14)
        return ode_rhs(vm, b, v)

    try:
        sol = solve_ivp(rhs, (b_start, b_end), v_start, method="DOP853", rtol=RTOL, atol=ATOL,
                        events=events, dense_output=True)
    except Exception as exc:  # singularity raised from inside the stepper
        raise StepSizeError(f"integration failed: {exc}") from exc
    if sol.status == -1:
        raise StepSizeError(f"integration failed at b={sol.t[-1]:.6g}: {sol.message}; "
                            f"last state {sol.y[:, -1]}")
    return sol


def _shoot_symmetric(vm, D, h0, b_stop, grid_points):
    lo, hi = vm.support
    n = vm.n
    F = vm.cdfs[0]

    def rhs(b, v):
        if v[0] <= b:
            raise StepSizeError(f"v <= b at b={b}")
        return [float(F.inverse_hazard(v[0])) / ((n - 1) * (v[0] - b))]

    def top(b, v):
        return v[0] - hi
    top.terminal = True

    b0 = lo + h0
    v0 = lo + D * h0
    sol = solve_ivp(rhs, (b0, hi if b_stop is None else b_stop), [v0], method="DOP853",
                    rtol=RTOL, atol=ATOL, events=top, dense_output=True)
    if sol.status != 1:
        raise ConvergenceError(f"symmetric curve never reached v_high (status {sol.status})", sol)
    b_high = float(sol.t_events[0][0])

    def evaluator(b):
        b = np.asarray(b, float)
        out = np.where(b >= b0, sol.sol(np.clip(b, b0, b_high))[0], lo + D * (b - lo))
        return np.tile(out, (n, 1))

    b_grid = np.linspace(lo, b_high, grid_points)
    curves = evaluator(b_grid)
    return _finish(vm, "shooting", b_grid, curves, evaluator, b_high,
                   {"b0": b0, "D1": [D] * n, "regime": "symmetric"})


def _shoot_rescaled(vm, D1, D2, delta1, delta2, h0, b_stop, grid_points):
    hi = vm.v_high
    order = np.argsort(D1)
    events = []
    for p, q in zip(order[:-1], order[1:]):
        def ev(b, v, p=p, q=q):
            return v[q] - v[p]
        ev.terminal = True
        ev.direction = -1
        events.append(ev)

    v0 = D1 * h0 + delta1 * D2 * h0 ** (1 + delta2)
    sol = _integrate(vm, h0, v0, 1e12 if b_stop is None else b_stop, events)
    hits = [(te[0], ye[0]) for te, ye in zip(sol.t_events, sol.y_events) if te.size]
    if not hits:
        raise ConvergenceError("curves never met before b_stop", sol)
    b_plus, y_plus = min(hits, key=lambda h: h[0])
    x = float(np.mean(y_plus)) / hi  # meeting value, mapped onto v_high
    spread = float(np.max(y_plus) - np.min(y_plus)) / x
    b_high = b_plus / x

    def evaluator(b):
        B = np.asarray(b, float) * x
        below = D1[:, None] * B + delta1 * D2[:, None] * B ** (1 + delta2)
        above = sol.sol(np.clip(B, h0, b_plus))
        return np.where(B >= h0, above, below) / x

    b_grid = np.linspace(0.0, b_high, grid_points)
    curves = evaluator(b_grid)
    return _finish(vm, "shooting", b_grid, curves, evaluator, b_high,
                   {"b0": h0, "D1": D1.tolist(), "D2": D2.tolist(), "delta1": delta1,
                    "scale": x, "meeting_spread": spread, "regime": "rescaled"})


def _shoot_bracketed(vm, D1, D2, delta2, h0, b_stop, grid_points, c_guess):
    lo, hi = vm.support
    b0 = lo + h0

    def top(b, v):
        return np.max(v) - hi
    top.terminal = True

    def floor(b, v):
        return np.min(v - b) - 1e-9 * (hi - lo)
    floor.terminal = True

    def run(c):
        v0 = lo + D1 * h0 + c * D2 * h0 ** (1 + delta2)
        return _integrate(vm, b0, v0, hi if b_stop is None else b_stop, [top, floor], guard=True)

    def mismatch(c):
        s = run(c)
        if s.t_events[0].size:
            y = s.y_events[0][0]
            return float(y[0] - y[1])
        # a curve collapsed onto the diagonal: that bidder lost the race
        y = s.y[:, -1]
        return 1.0 if y[1] - s.t[-1] < y[0] - s.t[-1] else -1.0

    # scan signed coefficients on a log scale for a sign change of the mismatch
    mags = 10.0 ** np.arange(-10.0, 3.0)
    cands = np.concatenate([-mags[::-1], [0.0], mags])
    if c_guess is not None:
        cands = np.sort(np.append(cands, c_guess))
    vals = [mismatch(c) for c in cands]
    bracket = None
    for i in range(len(cands) - 1):
        if vals[i] == 0.0:
            bracket = (cands[i], cands[i])
            break
        if np.sign(vals[i]) != np.sign(vals[i + 1]):
            bracket = (cands[i], cands[i + 1])
            break
    if bracket is None:
        raise ConvergenceError("could not bracket the shooting coefficient", None)
    lo_c, hi_c = bracket
    c = lo_c if lo_c == hi_c else brentq(mismatch, lo_c, hi_c, xtol=1e-300, rtol=1e-15, maxiter=500)
    sol = run(c)
    if not sol.t_events[0].size:
        raise ConvergenceError("root-found start still fails to reach v_high", sol)
    b_high = float(sol.t_events[0][0])

    def evaluator(b):
        b = np.asarray(b, float)
        h = b - lo
        below = lo + D1[:, None] * h + c * D2[:, None] * np.maximum(h, 0) ** (1 + delta2)
        above = sol.sol(np.clip(b, b0, b_high))
        return np.where(b >= b0, above, below)

    b_grid = np.linspace(lo, b_high, grid_points)
    curves = evaluator(b_grid)
    return _finish(vm, "shooting", b_grid, curves, evaluator, b_high,
                   {"b0": b0, "D1": D1.tolist(), "D2": D2.tolist(), "coefficient": c,
                    "regime": "bracketed"})
