"""Release-delay mechanisms.

An agent with value ``v`` released at time ``t`` who pays ``p`` gets
``v(1 - t) - p``.  Deadline mechanisms split ``[0, 1]`` into a cost-shared
part ``[0, d]`` and a free part ``[d, 1]``; sequential unanimous mechanisms
walk a list of (release time, payment) vectors and stop at the first one
every agent accepts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .core import BUDGET_TOL
from .costshare import coalition_feasibility, top_k
from .priors import Prior


@dataclass(frozen=True)
class DelayOutcome:
    built: bool
    release_times: tuple[float, ...]
    payments: tuple[float, ...]

    @classmethod
    def not_built(cls, n: int) -> DelayOutcome:
        return cls(False, (1.0,) * n, (0.0,) * n)

    def utility(self, i: int, value: float) -> float:
        return value * (1.0 - self.release_times[i]) - self.payments[i]

    def budget_ok(self, tol: float = BUDGET_TOL) -> bool:
        if any(p < -tol for p in self.payments):
            return False
        if not self.built:
            return all(t == 1.0 for t in self.release_times) and all(p == 0.0 for p in self.payments)
        return abs(sum(self.payments) - 1.0) <= tol


def delay_objectives(outcome: DelayOutcome) -> tuple[float, float]:
    """``(max delay, sum delay)``."""
    return max(outcome.release_times), sum(outcome.release_times)


# deadline mechanisms


def multiple_deadline(profile: Sequence[float], deadlines: Sequence[float]) -> DelayOutcome:
    """Per-agent deadlines ``d_i``: agent i's cost-shared part is ``[0, d_i]``.

    Shares ``1/k`` are accepted on the scaled values ``d_i v_i``; the free
    part goes to agent i iff the others' scaled values alone could fund the
    project.
    """
    n = len(profile)
    if len(deadlines) != n:
        raise ValueError("need one deadline per agent")
    if any(not 0.0 <= d <= 1.0 for d in deadlines):
        raise ValueError("deadlines must lie in [0, 1]")
    scaled = [d * v for d, v in zip(deadlines, profile)]
    _, k = coalition_feasibility(scaled)
    if k == 0:
        return DelayOutcome.not_built(n)
    winners = set(top_k(scaled, k))
    times, pays = [], []
    for i in range(n):
        free = coalition_feasibility(scaled[:i] + scaled[i + 1 :])[0] == 1
        d = deadlines[i]
        paid = i in winners
        times.append(0.0 if paid and free else d if free else 1.0 - d if paid else 1.0)
        pays.append(1.0 / k if paid else 0.0)
    return DelayOutcome(True, tuple(times), tuple(pays))


def single_deadline(profile: Sequence[float], d: float) -> DelayOutcome:
    return multiple_deadline(profile, [d] * len(profile))


def _threshold_ranks(scaled: np.ndarray) -> np.ndarray:
    """Smallest k with ``scaled >= 1/k`` per entry; ``n + 1`` when none."""
    n = scaled.shape[1]
    with np.errstate(over="ignore"):
        k = np.where(scaled > 0, np.ceil(1.0 / np.maximum(scaled, 1e-300)), n + 1)
    k = np.clip(k, 1, n + 1)
    # correct float rounding against the exact comparison scaled >= 1/k
    down = (k > 1) & (scaled >= 1.0 / np.maximum(k - 1, 1))
    k = np.where(down, k - 1, k)
    up = (k <= n) & (scaled < 1.0 / k)
    k = np.where(up, k + 1, k)
    return np.minimum(k, n + 1).astype(int)


def batch_deadline(values: np.ndarray, deadlines) -> tuple[np.ndarray, np.ndarray]:
    """Release times and payments of the deadline mechanism for many profiles.

    Matches :func:`multiple_deadline` row by row.
    """
    v = np.asarray(values, dtype=float)
    rows, n = v.shape
    d = np.broadcast_to(np.asarray(deadlines, dtype=float), (n,))
    s = v * d[None, :]
    ranks = _threshold_ranks(s)
    counts = np.zeros((rows, n + 2), dtype=int)
    np.add.at(counts, (np.arange(rows)[:, None], ranks), 1)
    cnt = np.cumsum(counts, axis=1)[:, 1 : n + 1]  # cnt[:, k-1] = #{s >= 1/k}
    ks = np.arange(1, n + 1)
    feasible = cnt >= ks
    K = np.where(feasible.any(axis=1), n - np.argmax(feasible[:, ::-1], axis=1), 0)
    robust = (cnt >= ks + 1).any(axis=1)
    tight = cnt == ks
    kb = np.where(tight.any(axis=1), np.argmax(tight, axis=1) + 1, np.inf)
    free = robust[:, None] | (s < 1.0 / kb[:, None])
    order = np.argsort(-s, axis=1, kind="stable")
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.broadcast_to(np.arange(n), (rows, n)).copy(), axis=1)
    paid = pos < K[:, None]
    built = K > 0
    free &= built[:, None]
    t = np.where(paid & free, 0.0, np.where(free, d, np.where(paid, 1.0 - d, 1.0)))
    pay = np.where(paid, 1.0 / np.maximum(K, 1)[:, None], 0.0)
    return t, pay


def scs_expected_max_delay(prior: Prior, n: int) -> float:
    """Closed form ``1 - P(X >= 1/n)^n`` for serial cost sharing."""
    return 1.0 - float(prior.acceptance(1.0 / n)) ** n


def batch_delay_stats(
    prior: Prior, n: int, release_fn, samples: int, seed, chunk: int = 2000
) -> dict[str, float]:
    """Monte Carlo means and standard errors of max and sum delay.

    ``release_fn`` maps a (rows, n) array of values to release times.
    """
    rng = np.random.default_rng(seed)
    mx, sm = [], []
    done = 0
    while done < samples:
        rows = min(chunk, samples - done)
        t = release_fn(prior.sample(rng, rows * n).reshape(rows, n))
        mx.append(t.max(axis=1))
        sm.append(t.sum(axis=1))
        done += rows
    mx, sm = np.concatenate(mx), np.concatenate(sm)
    root = np.sqrt(max(samples, 1))
    return {
        "max_delay": float(mx.mean()),
        "max_delay_se": float(mx.std(ddof=1) / root) if samples > 1 else 0.0,
        "sum_delay": float(sm.mean()),
        "sum_delay_se": float(sm.std(ddof=1) / root) if samples > 1 else 0.0,
    }


def optimal_single_deadline(
    prior: Prior, n: int, objective: str, samples: int, seed, grid: int = 101
) -> tuple[float, float]:
    """Grid search over ``d`` on common random profiles; ``(d, value)``."""
    values = prior.sample(np.random.default_rng(seed), samples * n).reshape(samples, n)
    best = (1.0, np.inf)
    for d in np.linspace(0.0, 1.0, grid):
        val = _objective(batch_deadline(values, d)[0], objective)
        if val < best[1] - 1e-12:
            best = (float(d), val)
    return best


def optimal_multiple_deadlines(
    prior: Prior, n: int, objective: str, samples: int, seed, grid: int = 21, sweeps: int = 3
) -> tuple[tuple[float, ...], float]:
    """Coordinate descent over per-agent deadlines from the all-ones start."""
    values = prior.sample(np.random.default_rng(seed), samples * n).reshape(samples, n)
    ds = np.ones(n)
    best = _objective(batch_deadline(values, ds)[0], objective)
    for _ in range(sweeps):
        moved = False
        for i in range(n):
            for cand in np.linspace(0.0, 1.0, grid):
                trial = ds.copy()
                trial[i] = cand
                val = _objective(batch_deadline(values, trial)[0], objective)
                if val < best - 1e-12:
                    ds, best, moved = trial, val, True
        if not moved:
            break
    return tuple(float(x) for x in ds), float(best)


def _objective(times: np.ndarray, objective: str) -> float:
    if objective == "max_delay":
        return float(times.max(axis=1).mean())
    if objective == "sum_delay":
        return float(times.sum(axis=1).mean())
    raise ValueError("objective must be max_delay or sum_delay")


# ratio bound


def payment_ratio(prior: Prior, o: float) -> float:
    """``r(o) = F(o) / (o P(X >= o))``, with ``r(0) = f(0)``."""
    if not 0.0 <= o < prior.hi:
        raise ValueError("offer must lie in [0, hi)")
    if o == 0.0:
        return prior.pdf(prior.lo)
    return float(prior.cdf(o)) / (o * float(prior.acceptance(o)))


def optimal_ratio(prior: Prior, points: int = 10_000) -> tuple[float, float]:
    """``(r*, o*)``: grid search on ``[0, 1 - 1e-6]`` refined by a bounded scalar search."""
    top = prior.hi - 1e-6
    grid = np.linspace(prior.lo, top, points)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.asarray(prior.cdf(grid[1:])) / (grid[1:] * np.asarray(prior.acceptance(grid[1:])))
    vals = np.concatenate([[payment_ratio(prior, grid[0])], inner])
    i = int(np.nanargmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    best_o, best_r = float(grid[i]), float(vals[i])
    if i > 0:
        res = optimize.minimize_scalar(
            lambda o: payment_ratio(prior, o),
            bounds=(max(lo, 1e-12), hi),
            method="bounded",
            options={"xatol": 1e-8},
        )
        if res.fun < best_r:
            best_o, best_r = float(res.x), float(res.fun)
    return best_r, best_o


def asymptotic_single_deadline(prior: Prior, n: int, eps: float, gamma: float = 1e-3) -> float:
    """Deadline ``(1 + eps) / (n o* P(X >= o*))``, capped at 1.

    When the best offer is 0 it is replaced by the small positive ``gamma``.
    """
    _, o = optimal_ratio(prior)
    if o < gamma:
        o = gamma
    return min(1.0, (1.0 + eps) / (n * o * float(prior.acceptance(o))))


# sequential unanimous mechanisms


@dataclass(frozen=True)
class CostTimeVector:
    """Release times ``T`` and payments ``B`` offered to all agents at once."""

    T: tuple[float, ...]
    B: tuple[float, ...]

    def __post_init__(self) -> None:
        T = tuple(float(x) for x in self.T)
        B = tuple(float(x) for x in self.B)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "B", B)
        if len(T) != len(B) or not T:
            raise ValueError("T and B must be nonempty and of equal length")
        if any(not 0.0 <= t <= 1.0 for t in T) or any(b < 0 for b in B):
            raise ValueError("release times must lie in [0, 1] and payments be nonnegative")
        if abs(sum(B) - 1.0) > BUDGET_TOL:
            raise ValueError("payments must sum to 1")
        if any(t >= 1.0 and b > 0 for t, b in zip(T, B)):
            raise ValueError("release time 1 requires a zero payment")

    @property
    def prices(self) -> tuple[float, ...]:
        """Unit prices ``B_i / (1 - T_i)``; 0 when nothing is charged."""
        return tuple(b / (1.0 - t) if b > 0 else 0.0 for t, b in zip(self.T, self.B))

    def excluded(self, i: int) -> bool:
        return self.T[i] >= 1.0

    def accepts(self, profile: Sequence[float]) -> bool:
        return all(v >= p for v, p in zip(profile, self.prices))


@dataclass(frozen=True)
class SequentialMechanism:
    sequence: tuple[CostTimeVector, ...]

    def __post_init__(self) -> None:
        seq = tuple(self.sequence)
        object.__setattr__(self, "sequence", seq)
        if not seq:
            raise ValueError("a sequential mechanism needs at least one vector")
        if len({len(v.T) for v in seq}) != 1:
            raise ValueError("all vectors must cover the same agents")

    @property
    def n(self) -> int:
        return len(self.sequence[0].T)

    def __len__(self) -> int:
        return len(self.sequence)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"T_{i + 1}" for i in range(self.n)] + [f"B_{i + 1}" for i in range(self.n)])
        for v in self.sequence:
            w.writerow([repr(x) for x in v.T + v.B])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> SequentialMechanism:
        rows = list(csv.reader(io.StringIO(text)))
        n = len(rows[0]) // 2
        return cls(tuple(CostTimeVector(tuple(map(float, r[:n])), tuple(map(float, r[n:]))) for r in rows[1:] if r))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(T, B, prices)`` as (m, n) arrays."""
        T = np.array([v.T for v in self.sequence])
        B = np.array([v.B for v in self.sequence])
        return T, B, np.array([v.prices for v in self.sequence])


def sequential_unanimous(profile: Sequence[float], mech: SequentialMechanism) -> DelayOutcome:
    for vec in mech.sequence:
        if vec.accepts(profile):
            return DelayOutcome(True, vec.T, vec.B)
    return DelayOutcome.not_built(len(profile))


def batch_sequential(values: np.ndarray, mech: SequentialMechanism) -> np.ndarray:
    """Release times of a sequential mechanism for many profiles."""
    T, _, prices = mech.arrays()
    ok = (values[:, None, :] >= prices[None, :, :]).all(axis=2)
    hit = ok.any(axis=1)
    first = np.argmax(ok, axis=1)
    return np.where(hit[:, None], T[first], 1.0)


def strict_filter(mech: SequentialMechanism) -> bool:
    """Sufficient condition for strategy-proofness.

    For every agent, skipping the vectors that exclude it (release time 1,
    payment 0, always accepted), unit prices and release times must be
    nondecreasing along the sequence.
    """
    for i in range(mech.n):
        last_p, last_t = -np.inf, -np.inf
        for vec in mech.sequence:
            if vec.excluded(i):
                continue
            p, t = vec.prices[i], vec.T[i]
            if p < last_p - 1e-12 or t < last_t - 1e-12:
                return False
            last_p, last_t = p, t
    return True


def loose_filter(mech: SequentialMechanism, prior: Prior, profiles: int, seed) -> bool:
    """Simulated incentive check: one random misreport per agent per profile."""
    if profiles < 1:
        raise ValueError("profiles must be positive")
    rng = np.random.default_rng(seed)
    n = mech.n
    values = prior.sample(rng, profiles * n).reshape(profiles, n)
    lies = prior.sample(rng, profiles * n).reshape(profiles, n)
    T, B, prices = mech.arrays()
    truth = _first_accepted(values, prices)
    for i in range(n):
        dev = values.copy()
        dev[:, i] = lies[:, i]
        alt = _first_accepted(dev, prices)
        u_true = _row_utility(values[:, i], truth, T[:, i], B[:, i])
        u_dev = _row_utility(values[:, i], alt, T[:, i], B[:, i])
        if np.any(u_dev - u_true > 1e-9):
            return False
    return True


def _first_accepted(values: np.ndarray, prices: np.ndarray) -> np.ndarray:
    ok = (values[:, None, :] >= prices[None, :, :]).all(axis=2)
    return np.where(ok.any(axis=1), np.argmax(ok, axis=1), -1)


def _row_utility(v: np.ndarray, idx: np.ndarray, T: np.ndarray, B: np.ndarray) -> np.ndarray:
    hit = idx >= 0
    j = np.where(hit, idx, 0)
    return np.where(hit, v * (1.0 - T[j]) - B[j], 0.0)
