"""M/M/n queues with heterogeneous servers.

The symmetric system has the Erlang-C closed form.  With server rates
``mu_i = mbar + eps * gamma_i`` the mean wait is an indistinguishable smooth
function of the rates, so it equals the symmetric value at ``mbar`` up to
``O(eps^2)``.  The discrete-event simulator is the ground truth for the
heterogeneous system.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DomainError, InstabilityError

POLICIES = {"random": 0, "fastest": 1, "lowest": 2}
Z95 = 1.959963984540054


@dataclass
class QueueModel:
    n: int
    lam: float
    mu: np.ndarray

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"server count must be a positive integer, got {self.n}")
        self.n = int(self.n)
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim == 0:
            mu = np.full(self.n, float(mu))
        if mu.shape != (self.n,):
            raise DomainError(f"need {self.n} service rates, got {mu.size}")
        if np.any(mu <= 0):
            raise DomainError("service rates must be positive")
        if self.lam < 0:
            raise DomainError("arrival rate must be non-negative")
        self.mu = mu
        self.lam = float(self.lam)
        if self.rho >= 1.0:
            raise InstabilityError(f"rho = {self.rho:.6g} >= 1: queue is unstable")

    @property
    def mbar(self) -> float:
        return float(np.mean(self.mu))

    @property
    def rho(self) -> float:
        return self.lam / float(np.sum(self.mu))

    @property
    def epsilon(self) -> float:
        return float(np.max(np.abs(self.mu - self.mbar)))

    @property
    def is_symmetric(self) -> bool:
        return bool(np.all(self.mu == self.mu[0]))

    def symmetric_twin(self) -> "QueueModel":
        return QueueModel(self.n, self.lam, np.full(self.n, self.mbar))


@dataclass
class Estimate:
    mean: float
    halfwidth: float

    def contains(self, x: float) -> bool:
        return abs(self.mean - x) <= self.halfwidth


@dataclass
class SimResult:
    utilization: Estimate
    p_empty: Estimate
    p_wait: Estimate
    mean_queue_len: Estimate
    mean_system_len: Estimate
    mean_wait: Estimate
    replications: int
    horizon: float
    seed: int
    per_replication: np.ndarray = field(repr=False)

    METRICS = ("utilization", "p_empty", "p_wait", "mean_queue_len", "mean_system_len", "mean_wait")


@dataclass
class HeterogeneousApprox:
    approximation: float
    epsilon: float
    note: str


@dataclass
class GapEstimate:
    gap: float
    halfwidth: float
    prediction: float
    epsilon: float
    per_replication: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# closed forms


def erlang_c(n: int, rho: float) -> float:
    """Probability that an arriving customer finds all ``n`` servers busy.

    Terms ``(n rho)^k / k!`` are built by recurrence, so no factorial is
    ever formed.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if rho >= 1.0:
        raise InstabilityError(f"rho = {rho} >= 1")
    if rho < 0:
        raise DomainError("rho must be non-negative")
    if rho == 0.0:
        return 0.0
    a = n * rho
    term, total = 1.0, 0.0
    for k in range(n):
        total += term
        term *= a / (k + 1)
    tail = term / (1.0 - rho)
    return tail / (total + tail)


def erlang_c_metrics(n: int, lam: float, mu: float) -> dict:
    """Stationary M/M/n quantities for identical servers of rate ``mu``."""
    rho = lam / (n * mu)
    c = erlang_c(n, rho)
    a = n * rho
    term, total = 1.0, 0.0
    for k in range(n):
        total += term
        term *= a / (k + 1)
    p_empty = 1.0 / (total + term / (1.0 - rho)) if rho > 0 else 1.0
    lq = c * rho / (1.0 - rho)
    wq = c / (n * mu - lam)
    return {
        "utilization": rho,
        "p_empty": p_empty,
        "p_wait": c,
        "mean_queue_len": lq,
        "mean_system_len": lq + a,
        "mean_wait": wq,
    }


def waiting_time_symmetric(q: QueueModel) -> float:
    """``C / (n mbar - lam)`` for identical servers."""
    if not q.is_symmetric:
        raise DomainError("servers are heterogeneous; use waiting_time_heterogeneous")
    return erlang_c(q.n, q.rho) / (q.n * q.mbar - q.lam)


def waiting_time_heterogeneous(q: QueueModel) -> HeterogeneousApprox:
    """Symmetric mean-rate wait as the approximation of the heterogeneous wait.

    The error is second order in the rate spread ``epsilon``; its constant
    is not available in closed form, so only a note is attached.
    """
    if q.lam > 0.9 * float(np.sum(q.mu)):
        warnings.warn("lambda > 0.9 * sum(mu): far from the light-traffic regime "
                      "where the wait is regular in the rates", stacklevel=2)
    approx = waiting_time_symmetric(q.symmetric_twin())
    return HeterogeneousApprox(
        approximation=approx,
        epsilon=q.epsilon,
        note=f"error O(eps^2) with eps={q.epsilon:.6g}; validate by simulation",
    )


# ---------------------------------------------------------------------------
# event-driven simulation


@numba.njit(cache=True)
def _grow(buf):
    out = np.empty(buf.size * 2)
    out[: buf.size] = buf
    return out


@numba.njit(cache=True)
def _pick_idle(busy, mu, policy):
    n = busy.size
    n_idle = 0
    for i in range(n):
        if busy[i] == 0:
            n_idle += 1
    if policy == 0:
        k = int(np.random.random() * n_idle)
        if k >= n_idle:
            k = n_idle - 1
        for i in range(n):
            if busy[i] == 0:
                if k == 0:
                    return i
                k -= 1
    elif policy == 1:
        best, best_mu = -1, -1.0
        for i in range(n):
            if busy[i] == 0 and mu[i] > best_mu:
                best, best_mu = i, mu[i]
        return best
    for i in range(n):
        if busy[i] == 0:
            return i
    return -1


@numba.njit(cache=True, nogil=True)
def _simulate_one(lam, mu, horizon, warmup, seed, policy):
    """One replication; returns the six time/customer averages."""
    np.random.seed(seed)
    n = mu.size
    busy = np.zeros(n, dtype=np.int64)
    done = np.full(n, np.inf)
    queue = np.empty(1024)  # arrival times, circular buffer
    head = 0
    qlen = 0
    n_busy = 0

    t = 0.0
    next_arr = np.random.exponential(1.0 / lam) if lam > 0 else np.inf
    area_busy = area_empty = area_q = area_sys = 0.0
    arrivals = waited = 0
    wait_sum = 0.0
    served = 0

    while True:
        k = -1
        t_next = next_arr
        for i in range(n):
            if done[i] < t_next:
                t_next = done[i]
                k = i
        t_end = min(t_next, horizon)
        if t_end > warmup:
            dt = t_end - max(t, warmup)
            area_busy += n_busy * dt
            area_q += qlen * dt
            area_sys += (qlen + n_busy) * dt
            if qlen + n_busy == 0:
                area_empty += dt
        if t_next >= horizon:
            break
        t = t_next
        if k < 0:
            next_arr = t + np.random.exponential(1.0 / lam)
            counted = t >= warmup
            if counted:
                arrivals += 1
            if n_busy < n:
                i = _pick_idle(busy, mu, policy)
                busy[i] = 1
                n_busy += 1
                done[i] = t + np.random.exponential(1.0 / mu[i])
                if counted:
                    served += 1
            else:
                if counted:
                    waited += 1
                if qlen == queue.size:
                    # unroll the ring before growing
                    flat = np.empty(queue.size)
                    for j in range(qlen):
                        flat[j] = queue[(head + j) % queue.size]
                    queue = _grow(flat)
                    head = 0
                queue[(head + qlen) % queue.size] = t
                qlen += 1
        else:
            if qlen > 0:
                t_arr = queue[head]
                head = (head + 1) % queue.size
                qlen -= 1
                done[k] = t + np.random.exponential(1.0 / mu[k])
                if t_arr >= warmup:
                    wait_sum += t - t_arr
                    served += 1
            else:
                busy[k] = 0
                n_busy -= 1
                done[k] = np.inf

    span = horizon - warmup
    out = np.empty(6)
    out[0] = area_busy / (n * span)
    out[1] = area_empty / span
    out[2] = waited / arrivals if arrivals > 0 else 0.0
    out[3] = area_q / span
    out[4] = area_sys / span
    out[5] = wait_sum / served if served > 0 else 0.0
    return out


def _run_replications(fn, seeds, threads):
    # results come back in seed order whatever the thread count
    if threads <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, seeds))


def replication_seeds(seed: int, replications: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in ss.spawn(replications)]


def _estimate(samples: np.ndarray) -> Estimate:
    m = float(np.mean(samples))
    if samples.size < 2:
        return Estimate(m, float("nan"))
    return Estimate(m, Z95 * float(np.std(samples, ddof=1)) / math.sqrt(samples.size))


def simulate_mmn(q: QueueModel, horizon: float = 1e5, replications: int = 20, seed: int = 0,
                 policy: str = "random", warmup_fraction: float = 0.1,
                 threads: int = 1) -> SimResult:
    """Replicated event-driven simulation of a single-FIFO-queue M/M/n system.

    The first ``warmup_fraction`` of each replication is discarded.  Mean
    wait averages customers that arrived after warm-up and started service
    before the horizon.  Replications are seeded from ``SeedSequence(seed)``
    so results are bit-identical for a fixed seed.
    """
    if horizon <= 0 or replications < 1:
        raise DomainError("need horizon > 0 and replications >= 1")
    if policy not in POLICIES:
        raise DomainError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)}")
    warmup = warmup_fraction * horizon
    code = POLICIES[policy]
    rows = np.array(_run_replications(
        lambda s: _simulate_one(q.lam, q.mu, float(horizon), warmup, s, code),
        replication_seeds(seed, replications), threads))
    ests = [_estimate(rows[:, k]) for k in range(6)]
    return SimResult(*ests, replications=replications, horizon=float(horizon), seed=seed,
                     per_replication=rows)


def sample_path(q: QueueModel, horizon: float, seed: int = 0, policy: str = "random"):
    """Queue-length sample path ``(times, queue_len, system_len)`` at event epochs.

    Pure Python; meant for short horizons (plots).
    """
    rng = np.random.default_rng(seed)
    n = q.n
    busy = np.zeros(n, dtype=bool)
    done = np.full(n, np.inf)
    qlen = 0
    t = 0.0
    next_arr = rng.exponential(1.0 / q.lam) if q.lam > 0 else np.inf
    times, ql, sl = [0.0], [0], [0]
    while True:
        k = int(np.argmin(done))
        if next_arr <= done[k]:
            t = next_arr
            if t > horizon:
                break
            next_arr = t + rng.exponential(1.0 / q.lam)
            if not busy.all():
                idle = np.flatnonzero(~busy)
                if policy == "random":
                    i = int(idle[rng.integers(idle.size)])
                elif policy == "fastest":
                    i = int(idle[np.argmax(q.mu[idle])])
                else:
                    i = int(idle[0])
                busy[i] = True
                done[i] = t + rng.exponential(1.0 / q.mu[i])
            else:
                qlen += 1
        else:
            t = done[k]
            if t > horizon:
                break
            if qlen > 0:
                qlen -= 1
                done[k] = t + rng.exponential(1.0 / q.mu[k])
            else:
                busy[k] = False
                done[k] = np.inf
        times.append(t)
        ql.append(qlen)
        sl.append(qlen + int(busy.sum()))
    return np.array(times), np.array(ql), np.array(sl)


# ---------------------------------------------------------------------------
# coupled estimate of the heterogeneity gap


@numba.njit(cache=True, nogil=True)
def _coupled_gap_one(lam, mu, mbar, n_ticks, seed):
    """Mean queue length difference (heterogeneous minus symmetric twin).

    Both systems are uniformised at the common rate ``lam + sum(mu)``
    and driven by the same uniforms.  The symmetric twin's servers are
    exchangeable, so its busy set may be relabelled to overlap the
    heterogeneous system's busy set as much as possible without changing
    its law.
    """
    np.random.seed(seed)
    n = mu.size
    rate = lam + mu.sum()
    bh = np.zeros(n, dtype=np.int64)
    bs = np.zeros(n, dtype=np.int64)
    qh = 0
    qs = 0
    kh = 0
    ks = 0
    acc = 0.0
    for _ in range(n_ticks):
        u = np.random.random() * rate
        u2 = np.random.random()
        # align the twin with the heterogeneous busy set
        if ks <= kh:
            c = 0
            for i in range(n):
                if bh[i] == 1 and c < ks:
                    bs[i] = 1
                    c += 1
                else:
                    bs[i] = 0
        else:
            extra = ks - kh
            for i in range(n):
                if bh[i] == 1:
                    bs[i] = 1
                elif extra > 0:
                    bs[i] = 1
                    extra -= 1
                else:
                    bs[i] = 0
        if u < lam:
            if kh < n:
                i = _pick_idle_u(bh, u2)
                bh[i] = 1
                kh += 1
            else:
                qh += 1
            if ks < n:
                i = _pick_idle_u(bs, u2)
                bs[i] = 1
                ks += 1
            else:
                qs += 1
        else:
            # busy servers are laid out contiguously in index order, so when
            # both systems are fully busy their departure events coincide
            x = u - lam
            c = 0.0
            for i in range(n):
                if bh[i] == 1:
                    c += mu[i]
                    if x < c:
                        if qh > 0:
                            qh -= 1
                        else:
                            bh[i] = 0
                            kh -= 1
                        break
            c = 0.0
            for i in range(n):
                if bs[i] == 1:
                    c += mbar
                    if x < c:
                        if qs > 0:
                            qs -= 1
                        else:
                            bs[i] = 0
                            ks -= 1
                        break
        acc += qh - qs
    return acc / n_ticks


@numba.njit(cache=True)
def _pick_idle_u(busy, u):
    n_idle = 0
    for i in range(busy.size):
        if busy[i] == 0:
            n_idle += 1
    k = int(u * n_idle)
    if k >= n_idle:
        k = n_idle - 1
    for i in range(busy.size):
        if busy[i] == 0:
            if k == 0:
                return i
            k -= 1
    return -1


def simulate_heterogeneity_gap(q: QueueModel, horizon: float = 1e6, replications: int = 40,
                               seed: int = 0, threads: int = 1) -> GapEstimate:
    """Simulated ``WT(lam, mu) - C / (n mbar - lam)`` with common random numbers.

    Each replication runs the heterogeneous system and its mean-rate twin on
    shared randomness and records the difference of their mean waits
    (queue length over ``lam``).  The twin's expected wait is exactly the
    Erlang-C prediction, so the paired difference estimates the gap with far
    lower variance than two independent runs.  Random idle-server assignment.
    """
    if q.lam <= 0:
        raise DomainError("gap estimate needs lam > 0")
    rate = q.lam + float(q.mu.sum())
    ticks = int(round(horizon * rate))
    diffs = np.array(_run_replications(
        lambda s: _coupled_gap_one(q.lam, q.mu, q.mbar, ticks, s) / q.lam,
        replication_seeds(seed, replications), threads))
    est = _estimate(diffs)
    return GapEstimate(
        gap=est.mean,
        halfwidth=est.halfwidth,
        prediction=waiting_time_symmetric(q.symmetric_twin()),
        epsilon=q.epsilon,
        per_replication=diffs,
    )


def fig1_table(q: QueueModel, sim: SimResult) -> list[dict]:
    """Expected (Erlang-C at the mean rate) versus observed (simulation) rows."""
    expected = erlang_c_metrics(q.n, q.lam, q.mbar)
    rows = []
    for name in SimResult.METRICS:
        est = getattr(sim, name)
        rows.append({"metric": name, "expected": expected[name], "observed": est.mean,
                     "ci_halfwidth": est.halfwidth})
    return rows
