"""Exploit market with one offender and one defender.

The project runs on ``[0, 1]``; ``t`` is the time the defender obtains
the exploit.  The offender values exclusive use up to ``t``, the defender
values protection after it.  Mechanisms are affine maximizers over the
grid ``{0, 1/k, ..., 1}`` with a curve-valued constant term ``a(t)``.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .evolve import (
    Curve,
    GAConfig,
    GAResult,
    additive_mutation,
    curve_values,
    evolve,
    random_curve_coeffs,
    two_point_crossover,
)

THETA_O_MAX = 400.0
THETA_D_MAX = 15.0


def offender_value(theta_o, t):
    """``theta_o * (t - t^2 / 2)``: the integral of ``theta_o (1 - x)`` over ``[0, t]``."""
    return theta_o * (t - t * t / 2.0)


def defender_value(theta_d, t):
    """``theta_d * (1 - t^2) / 2``: the integral of ``theta_d x`` over ``[t, 1]``."""
    return theta_d * (1.0 - t * t) / 2.0


@dataclass(frozen=True)
class AMASpec:
    """Affine maximizer: offender weight 1, defender weight ``u_defender``,
    constant term ``a`` on a ``k``-step outcome grid."""

    u_defender: float
    a: Curve
    k: int = 1000

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not self.u_defender > 0:
            raise ValueError("u_defender must be positive")

    @classmethod
    def vcg(cls, k: int = 1000) -> AMASpec:
        return cls(1.0, Curve("polynomial", (0.0,)), k)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.k + 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u_defender", "kind", "period", "k", "coefficients"])
        w.writerow([repr(self.u_defender), self.a.kind, repr(self.a.period), self.k, " ".join(map(repr, self.a.coeffs))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> AMASpec:
        row = list(csv.reader(io.StringIO(text)))[1]
        curve = Curve(row[1], tuple(float(x) for x in row[4].split()), float(row[2]))
        return cls(float(row[0]), curve, int(row[3]))


@dataclass(frozen=True)
class MarketOutcome:
    t_end: float
    p_offender: float
    p_defender: float

    def utility(self, i: int, theta: float) -> float:
        if i == 0:
            return offender_value(theta, self.t_end) - self.p_offender
        return defender_value(theta, self.t_end) - self.p_defender

    def budget_ok(self, tol: float = 0.0) -> bool:
        return self.p_offender >= -tol and self.p_defender >= -tol

    @property
    def revenue(self) -> float:
        return self.p_offender + self.p_defender


def ama_outcome(types, spec: AMASpec) -> MarketOutcome:
    """Weighted-value-plus-offset argmax (ties to the smallest ``t``) with
    each agent charged the drop in the others' weighted value plus offset,
    divided by its own weight."""
    theta_o, theta_d = float(types[0]), float(types[1])
    t = spec.grid
    a = curve_values(spec.a.kind, np.array(spec.a.coeffs), t, spec.a.period)[0]
    vo = offender_value(theta_o, t)
    vd = spec.u_defender * defender_value(theta_d, t)
    i = int(np.argmax(vo + vd + a))
    others_o = vd + a
    others_d = vo + a
    p_o = float(others_o.max() - others_o[i])
    p_d = float((others_d.max() - others_d[i]) / spec.u_defender)
    return MarketOutcome(float(t[i]), p_o, p_d)


def batch_revenue(
    u: np.ndarray, a: np.ndarray, theta_o: np.ndarray, theta_d: np.ndarray, t: np.ndarray, chunk: int = 2000
) -> np.ndarray:
    """Mean AMA revenue per individual.

    ``u`` has shape (P,), ``a`` (P, K) on grid ``t``; the type draws are
    shared by all individuals.  Matches :func:`ama_outcome` row by row.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a = np.atleast_2d(a)
    total = np.zeros(len(u))
    for s in range(0, len(theta_o), chunk):
        vo = offender_value(theta_o[s : s + chunk, None], t)[None]
        vd = defender_value(theta_d[s : s + chunk, None], t)[None] * u[:, None, None]
        aa = a[:, None, :]
        i = np.argmax(vo + vd + aa, axis=2)[..., None]
        others_o = vd + aa
        others_d = vo + aa
        p_o = others_o.max(axis=2) - np.take_along_axis(others_o, i, axis=2)[..., 0]
        p_d = (others_d.max(axis=2) - np.take_along_axis(others_d, i, axis=2)[..., 0]) / u[:, None]
        total += (p_o + p_d).sum(axis=1)
    return total / len(theta_o)


def draw_types(rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
    return rng.uniform(0, THETA_O_MAX, count), rng.uniform(0, THETA_D_MAX, count)


def sobol_types(count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Scrambled Sobol draws over the type box; unbiased with low variance."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two counts are fine here
        x = qmc.Sobol(2, scramble=True, seed=np.random.default_rng(seed)).random(count)
    return x[:, 0] * THETA_O_MAX, x[:, 1] * THETA_D_MAX


def ama_expected_revenue(spec: AMASpec, samples: int, seed=0) -> tuple[float, float]:
    """Monte Carlo ``(mean, standard error)`` of total AMA payments."""
    if samples < 1:
        raise ValueError("samples must be positive")
    theta_o, theta_d = draw_types(np.random.default_rng(seed), samples)
    t = spec.grid
    a = curve_values(spec.a.kind, np.array(spec.a.coeffs), t, spec.a.period)
    per = _per_profile(spec, a[0], theta_o, theta_d, t)
    se = float(per.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return float(per.mean()), se


def _per_profile(spec: AMASpec, a: np.ndarray, theta_o, theta_d, t, chunk: int = 2000) -> np.ndarray:
    out = []
    for s in range(0, len(theta_o), chunk):
        vo = offender_value(theta_o[s : s + chunk, None], t)
        vd = spec.u_defender * defender_value(theta_d[s : s + chunk, None], t)
        i = np.argmax(vo + vd + a, axis=1)[:, None]
        others_o, others_d = vd + a, vo + a
        p_o = others_o.max(axis=1) - np.take_along_axis(others_o, i, axis=1)[:, 0]
        p_d = (others_d.max(axis=1) - np.take_along_axis(others_d, i, axis=1)[:, 0]) / spec.u_defender
        out.append(p_o + p_d)
    return np.concatenate(out)


# revenue-optimal mechanism


def _grid_argmax_quadratic(c0, c1, c2, k: int) -> np.ndarray:
    """Argmax of ``c0 + c1 t + c2 t^2`` over ``{0, 1/k, ..., 1}``, ties to
    the smallest ``t``.  Only the endpoints and the grid points beside the
    vertex can win, so those are the only candidates scored."""
    c0, c1, c2 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (c0, c1, c2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(c2 < 0, -c1 / (2.0 * c2), 0.0)
    vertex = np.clip(np.nan_to_num(vertex), 0.0, 1.0)
    cands = np.stack([np.zeros_like(vertex), np.floor(vertex * k) / k, np.ceil(vertex * k) / k, np.ones_like(vertex)], -1)
    vals = c0[..., None] + c1[..., None] * cands + c2[..., None] * cands**2
    scale = np.maximum(np.abs(vals).max(-1, keepdims=True), 1.0)
    top = vals >= vals.max(-1, keepdims=True) - 1e-12 * scale
    return np.where(top, cands, np.inf).min(-1)


def optimal_allocation(theta_o, theta_d, k: int = 1000):
    """``argmax_t (2 theta_o - 400)(t - t^2/2) + (2 theta_d - 15)(1 - t)`` on the grid."""
    a = 2.0 * np.asarray(theta_o, dtype=float) - THETA_O_MAX
    b = 2.0 * np.asarray(theta_d, dtype=float) - THETA_D_MAX
    out = _grid_argmax_quadratic(b, a - b, -a / 2.0, k)
    return float(out) if out.ndim == 0 else out


def optimal_payments(theta_o, theta_d, k: int = 1000, points: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """Threshold payments ``theta q(theta) - integral_0^theta q(s) ds`` with
    ``q_O = t - t^2/2`` and ``q_D = (1 - t^2)/2``; trapezoid on ``points`` nodes."""
    theta_o = np.atleast_1d(np.asarray(theta_o, dtype=float))
    theta_d = np.atleast_1d(np.asarray(theta_d, dtype=float))
    s = np.linspace(0.0, 1.0, points)
    t = optimal_allocation(theta_o, theta_d, k)
    so = theta_o[:, None] * s
    ts = optimal_allocation(so, theta_d[:, None], k)
    p_o = offender_value(theta_o, t) - np.trapezoid(offender_value(1.0, ts), so, axis=1)
    sd = theta_d[:, None] * s
    ts = optimal_allocation(theta_o[:, None], sd, k)
    p_d = defender_value(theta_d, t) - np.trapezoid(defender_value(1.0, ts), sd, axis=1)
    return p_o, p_d


def virtual_value_ama(k: int = 1000) -> AMASpec:
    """Unit-weight AMA maximizing total virtual value under uniform types.

    With ``a(t) = -200 (t - t^2/2) - 7.5 (1 - t^2) / 2`` the AMA objective
    equals the sum of both agents' virtual valuations.
    """
    h = THETA_D_MAX / 4.0
    return AMASpec(1.0, Curve("polynomial", (-h, -THETA_O_MAX / 2.0, THETA_O_MAX / 4.0 + h)), k)


def optimal_revenue(samples: int = 10_000, grid: int = 1000, seed=0, sampler: str = "sobol") -> tuple[float, float]:
    """Expected revenue of the optimal mechanism: ``(mean, standard error)``.

    ``sampler`` is ``"sobol"`` (scrambled, default) or ``"mc"``; the
    standard error is the i.i.d. formula, conservative for Sobol.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    if sampler == "sobol":
        theta_o, theta_d = sobol_types(samples, seed)
    elif sampler == "mc":
        theta_o, theta_d = draw_types(np.random.default_rng(seed), samples)
    else:
        raise ValueError("sampler must be sobol or mc")
    rev = np.concatenate([sum(optimal_payments(theta_o[s : s + 1000], theta_d[s : s + 1000], grid))
                          for s in range(0, samples, 1000)])
    se = float(rev.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return float(rev.mean()), se


# evolutionary search over curves


def curve_size(kind: str, size: int) -> int:
    """Coefficient count: segments + 1, degree + 1, or 2N + 1 terms."""
    return {"piecewise": size + 1, "polynomial": size + 1, "fourier": 2 * size + 1}[kind]


def optimize_ama(
    kind: str,
    size: int,
    config: GAConfig | None = None,
    period: float = 2.0,
    fitness_k: int = 100,
    heldout_k: int = 1000,
) -> GAResult:
    """Evolve ``(u_defender, a)`` for revenue.

    Each round every individual is scored on the same fresh type draws on a
    coarse ``fitness_k`` grid; the final winner is picked on a fixed
    held-out set on the ``heldout_k`` grid.  Genomes are
    ``(u_defender, coefficient array)``.  Crossover is two-point on the
    coefficients with ``u`` from either parent; mutation moves each
    coefficient by ``mutation_delta`` with ``mutation_prob`` and rescales
    ``u`` by 0.95, 1 or 1.05.
    """
    config = config or GAConfig.curves()
    length = curve_size(kind, size)
    t_fit = np.linspace(0.0, 1.0, fitness_k + 1)

    def init(rng):
        return [(float(rng.uniform(0.5, 2.0)), random_curve_coeffs(kind, length, rng)) for _ in range(config.population)]

    def fitness(pop, rng):
        theta_o, theta_d = draw_types(rng, config.fitness_profiles)
        u = np.array([g[0] for g in pop])
        a = curve_values(kind, np.stack([g[1] for g in pop]), t_fit, period)
        return batch_revenue(u, a, theta_o, theta_d, t_fit)

    def breed(elite, pop, count, rng):
        children = []
        n_cross = count // 2
        for _ in range(n_cross):
            i, j = rng.choice(len(elite), 2, replace=False) if len(elite) > 1 else (0, 0)
            coeffs = two_point_crossover(elite[i][1], elite[j][1], rng)
            children.append((elite[i][0] if rng.random() < 0.5 else elite[j][0], coeffs))
        for _ in range(count - n_cross):
            u, coeffs = elite[int(rng.integers(len(elite)))]
            coeffs = additive_mutation(coeffs, config.mutation_prob, config.mutation_delta, rng)
            children.append((u * float(rng.choice([0.95, 1.0, 1.05])), coeffs))
        return children

    held_o, held_d = draw_types(np.random.default_rng([config.seed, 1]), config.heldout_profiles)
    t_held = np.linspace(0.0, 1.0, heldout_k + 1)

    def heldout(pop):
        return np.array([
            batch_revenue([u], curve_values(kind, coeffs, t_held, period), held_o, held_d, t_held, chunk=500)[0]
            for u, coeffs in pop
        ])

    result = evolve(config, init, fitness, breed, heldout=heldout)
    u, coeffs = result.best
    result.best = AMASpec(u, Curve(kind, tuple(coeffs), period), heldout_k)
    return result
