"""Dynamic programs over a discretized money axis.

Money (cost still to raise, cost shares, lower bounds on values) lives on
the grid ``{0, 1/H, ..., 1}``.  The welfare variants also carry a utility
axis that is interpolated linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .priors import Prior, ZeroAcceptanceMass

OBJECTIVES = ("consumers", "welfare")


@dataclass(frozen=True)
class Discretization:
    H: int = 200
    U_levels: int = 200
    objective: str = "consumers"

    def __post_init__(self) -> None:
        if self.H < 10:
            raise ValueError("H must be at least 10")
        if self.U_levels < 2:
            raise ValueError("U_levels must be at least 2")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclass(frozen=True)
class DPResult:
    value: float
    policy: dict = field(default_factory=dict)


def _grid_tables(prior: Prior, H: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Money grid, acceptance probabilities and conditional welfare on it."""
    grid = np.linspace(prior.lo, prior.hi, H + 1)
    accept = np.asarray(prior.acceptance(grid), dtype=float)
    w = np.zeros(H + 1)
    for i, c in enumerate(grid):
        try:
            w[i] = prior.conditional_welfare(float(c))
        except ZeroAcceptanceMass:
            w[i] = 0.0
    return grid, accept, w


def _interp_rows(table: np.ndarray, pos: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``table[:, cols]`` at fractional row ``pos``.

    Rows beyond the last are extrapolated from the final segment; the
    functions interpolated here are piecewise linear and convex in ``u``.
    """
    top = table.shape[0] - 1
    i0 = np.clip(np.floor(pos).astype(int), 0, top - 1)
    frac = pos - i0
    return table[i0, cols] * (1.0 - frac) + table[i0 + 1, cols] * frac


def optimal_unanimous(prior: Prior, n: int, disc: Discretization = Discretization()) -> DPResult:
    """Best unanimous mechanism: one fixed share per agent, build iff all accept.

    The consumer objective is ``n`` times the product of acceptance
    probabilities, which separates over agents.  The welfare objective is
    not separable (a product times a sum), so it runs the three-axis
    recursion over (agents left, accumulated utility, money left).
    """
    if n < 1:
        raise ValueError("n must be positive")
    H = disc.H
    _, S, W = _grid_tables(prior, H)
    if disc.objective == "consumers":
        best = S.copy()
        choice = []
        for _ in range(2, n + 1):
            nb = np.empty(H + 1)
            arg = np.empty(H + 1, dtype=int)
            for m in range(H + 1):
                vals = S[: m + 1] * best[m::-1]
                arg[m] = int(np.argmax(vals))
                nb[m] = vals[arg[m]]
            best = nb
            choice.append(arg)
        shares, m = [], H
        for arg in reversed(choice):
            c = int(arg[m])
            shares.append(c / H)
            m -= c
        shares.append(m / H)
        return DPResult(float(n * best[H]), {"shares": tuple(shares)})

    levels = disc.U_levels
    du = max(n * W.max(), 1e-12) / levels
    ugrid = np.arange(levels + 1) * du
    table = S[None, :] * (ugrid[:, None] + W[None, :])
    choice = []
    for _ in range(2, n + 1):
        nb = np.empty_like(table)
        arg = np.empty(table.shape, dtype=int)
        for m in range(H + 1):
            cs = np.arange(m + 1)
            pos = (ugrid[:, None] + W[None, cs]) / du
            vals = S[None, cs] * _interp_rows(table, pos, (m - cs)[None, :])
            arg[:, m] = np.argmax(vals, axis=1)
            nb[:, m] = vals[np.arange(levels + 1), arg[:, m]]
        table = nb
        choice.append(arg)
    shares, m, u = [], H, 0.0
    for arg in reversed(choice):
        c = int(arg[min(int(round(u / du)), levels), m])
        shares.append(c / H)
        u += W[c]
        m -= c
    shares.append(m / H)
    return DPResult(float(table[0, H]), {"shares": tuple(shares)})


def welfare_partitions(prior: Prior, t_max: int, H: int, objective: str = "welfare") -> np.ndarray:
    """``G(t)`` for ``t = 0..t_max``: the best total conditional welfare of
    ``t`` agents splitting the whole cost, by knapsack over the money grid."""
    if objective == "consumers":
        return np.arange(t_max + 1, dtype=float)
    _, _, W = _grid_tables(prior, H)
    out = np.zeros(t_max + 1)
    if t_max < 1:
        return out
    layer = W.copy()
    out[1] = layer[H]
    for t in range(2, t_max + 1):
        layer = np.array([np.max(W[: m + 1] + layer[m::-1]) for m in range(H + 1)])
        out[t] = layer[H]
    return out


def welfare_partition(prior: Prior, t: int, H: int = 200, objective: str = "welfare") -> float:
    if t < 1:
        raise ValueError("t must be positive")
    return float(welfare_partitions(prior, t, H, objective)[t])


def excludable_upper_bound(prior: Prior, n: int, disc: Discretization = Discretization()) -> float:
    """Upper bound on any largest unanimous mechanism's expected objective.

    State ``U(t, k, m, l)``: ``t`` agents still in play, ``k`` of them yet
    to receive an offer, ``m`` money still to raise in this pass, ``l`` the
    known lower bound on the remaining agents' values.  An offer ``c*`` to
    an agent known to be at least ``l*`` is accepted with probability
    ``A(c*) / A(l*)``; a rejection restarts the pass with one agent fewer.
    """
    if n < 1:
        raise ValueError("n must be positive")
    H = disc.H
    _, S, _ = _grid_tables(prior, H)
    G = welfare_partitions(prior, n, H, disc.objective)
    idx = np.arange(H + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_s = np.where(S > 0, 1.0 / S, 0.0)

    # restart[L] = U(t, t, 1, L/H) for the current t
    restart = S[H] * inv_s * G[1]
    with np.errstate(invalid="ignore"):
        for t in range(2, n + 1):
            restart = _bound_pass(t, restart, S, inv_s, G, idx, H)
    return float(restart[0])


def _bound_pass(t, prev, S, inv_s, G, idx, H):
    """All layers ``k = 1..t`` for ``t`` agents; returns ``U(t, t, 1, .)``."""
    # k = 1: the last offer must cover everything left
    q = np.where(idx[None, :] <= idx[:, None], S[:, None] * inv_s[None, :], 0.0)
    layer = q * G[t] + (1.0 - q) * prev[H - idx][:, None]
    layer[idx[None, :] > idx[:, None]] = -np.inf
    for _ in range(2, t + 1):
        nxt = np.full((H + 1, H + 1), -np.inf)
        for m in range(H + 1):
            j = np.arange(m + 1)[:, None]
            c = np.arange(m + 1)[None, :]
            valid = c <= m - j
            rej = prev[H - m + j]
            g = np.where(valid, S[c] * (layer[np.clip(m - c, 0, H), j] - rej), -np.inf)
            suffix = np.maximum.accumulate(g[:, ::-1], axis=1)[:, ::-1]
            val = np.where(valid, rej + suffix * inv_s[c], -np.inf)
            lstate = (j + c)[valid]
            np.maximum.at(nxt[m], lstate, val[valid])
        layer = nxt
    return layer[H, :]


def one_directional_offers(
    prior: Prior, n: int, H: int = 200, objective: str = "consumers", U_levels: int = 200
) -> DPResult:
    """Best policy that makes each agent a single take-it-or-leave-it offer
    in turn and builds only if the offers accepted cover the whole cost.

    The state is (agents left, money still needed, objective accumulated).
    For consumers the accumulated count is exact; for welfare it sits on an
    interpolated grid.
    """
    if n < 1:
        raise ValueError("n must be positive")
    _, S, W = _grid_tables(prior, H)
    if objective == "consumers":
        reward = np.ones(H + 1)
        du, levels = 1.0, n
    elif objective == "welfare":
        reward = W
        levels = U_levels
        du = max(n * W.max(), 1e-12) / levels
    else:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    ugrid = np.arange(levels + 1) * du
    # terminal: value realized only if nothing is left to raise
    value = np.zeros((levels + 1, H + 1))
    value[:, 0] = ugrid
    offers = []
    for _ in range(n):
        nv = np.empty_like(value)
        arg = np.empty(value.shape, dtype=int)
        for m in range(H + 1):
            cs = np.arange(m + 1)
            pos = (ugrid[:, None] + reward[None, cs]) / du
            take = _interp_rows(value, pos, (m - cs)[None, :])
            vals = S[None, cs] * take + (1.0 - S[None, cs]) * value[:, m][:, None]
            arg[:, m] = np.argmax(vals, axis=1)
            nv[:, m] = vals[np.arange(levels + 1), arg[:, m]]
        value = nv
        offers.append(arg)
    offers.reverse()
    return DPResult(float(value[0, H]), {"offers": np.stack(offers), "du": du, "H": H})
