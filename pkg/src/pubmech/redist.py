"""VCG redistribution for the non-excludable public project.

The project costs 1 and is built iff the reported values sum to at least 1.
Agent ``i`` then gets back ``h(theta_-i)``, where ``h`` sees only the other
agents' (sorted) values.  ``h`` is a multilinear interpolant on a small
knot grid over a few order statistics of ``theta_-i``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .evolve import GAConfig, evolve
from .priors import Prior

COMBOS = ("1", "7", "8", "identity")
KNOTS = 8
EPSILON = {"worst_case": 0.01, "expectation": 1e-4}


def first_best(profile) -> float:
    return max(float(np.sum(profile)), 1.0)


def _first_best_rows(values: np.ndarray) -> np.ndarray:
    return np.maximum(values.sum(axis=1), 1.0)


def features(theta_minus_i, combo) -> tuple[float, ...]:
    """Order statistics of the other agents' values, sorted descending first."""
    x = np.asarray(theta_minus_i, dtype=float)[None, :]
    return tuple(float(v) for v in _feature_rows(x, str(combo))[0])


def _feature_rows(others: np.ndarray, combo: str) -> np.ndarray:
    s = -np.sort(-others, axis=-1)
    top = s[..., 0]
    rest = s[..., 1:].sum(axis=-1)
    if combo == "1":
        return np.stack([top, rest], axis=-1)
    if combo == "7":
        jump = (s[..., :-1] - s[..., 1:]).max(axis=-1) if s.shape[-1] > 1 else np.zeros_like(top)
        return np.stack([top, rest, jump], axis=-1)
    if combo == "8":
        return np.stack([top, s[..., -1], rest], axis=-1)
    if combo == "identity":
        return s
    raise ValueError(f"feature combo must be one of {COMBOS}")


def feature_bounds(n: int, combo: str) -> list[tuple[float, float]]:
    rest_hi = float(max(n - 2, 1))
    if combo == "1":
        return [(0.0, 1.0), (0.0, rest_hi)]
    if combo == "7":
        return [(0.0, 1.0), (0.0, rest_hi), (0.0, 1.0)]
    if combo == "8":
        return [(0.0, 1.0), (0.0, 1.0), (0.0, rest_hi)]
    if combo == "identity":
        return [(0.0, 1.0)] * (n - 1)
    raise ValueError(f"feature combo must be one of {COMBOS}")


def _draw(prior: Prior, rng, rows: int, n: int) -> np.ndarray:
    return prior.sample(rng, rows * n).reshape(rows, n)


def _others(values: np.ndarray) -> np.ndarray:
    """``[rows, n, n-1]``: for each agent, the remaining values."""
    n = values.shape[1]
    keep = ~np.eye(n, dtype=bool)
    return np.stack([values[:, keep[i]] for i in range(n)], axis=1)


@dataclass(frozen=True)
class RedistributionFn:
    """``h`` as knot values on a regular grid over the chosen features."""

    feature_combo: str
    params: tuple[float, ...]
    n: int
    knots: int = KNOTS
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        combo = str(self.feature_combo)
        object.__setattr__(self, "feature_combo", combo)
        if self.n < 2:
            raise ValueError("redistribution needs at least two agents")
        bounds = feature_bounds(self.n, combo)
        p = np.asarray(self.params, dtype=float)
        if p.size != self.knots ** len(bounds) or not np.all(np.isfinite(p)):
            raise ValueError(f"expected {self.knots ** len(bounds)} finite knot values, got {p.size}")
        object.__setattr__(self, "params", tuple(p.tolist()))
        axes = [np.linspace(lo, hi, self.knots) for lo, hi in bounds]
        grid = p.reshape((self.knots,) * len(bounds))
        interp = RegularGridInterpolator(axes, grid, method="linear", bounds_error=False, fill_value=None)
        object.__setattr__(self, "_interp", interp)

    @classmethod
    def from_function(cls, fn, n: int, combo="1", knots: int = KNOTS) -> RedistributionFn:
        """Sample ``fn(feature_vector)`` at every knot."""
        axes = [np.linspace(lo, hi, knots) for lo, hi in feature_bounds(n, str(combo))]
        vals = [fn(np.array(pt)) for pt in product(*axes)]
        return cls(str(combo), tuple(vals), n, knots)

    @classmethod
    def baseline(cls, n: int, combo="1", knots: int = KNOTS) -> RedistributionFn:
        """Knot samples of ``max(sum(theta_-i), (n-1)/n)``.

        That function is feasible and convex in the sum, and multilinear
        interpolation of a convex function of a linear form never dips
        below it, so the interpolant is feasible too.
        """
        combo = str(combo)
        if combo == "8":
            total = lambda f: f[0] + f[2]  # noqa: E731
        elif combo == "identity":
            total = np.sum
        else:
            total = lambda f: f[0] + f[1]  # noqa: E731
        return cls.from_function(lambda f: max(total(f), (n - 1) / n), n, combo, knots)

    @classmethod
    def constant(cls, value: float, n: int, combo="1", knots: int = KNOTS) -> RedistributionFn:
        return cls.from_function(lambda f: value, n, combo, knots)

    def __call__(self, theta_minus_i) -> float:
        f = features(theta_minus_i, self.feature_combo)
        return float(self._interp(np.array([f]))[0])

    def rows(self, values: np.ndarray) -> np.ndarray:
        """``h(theta_-i)`` for every agent of every row: ``[rows, n]``."""
        values = np.asarray(values, dtype=float)
        f = _feature_rows(_others(values), self.feature_combo)
        return self._interp(f.reshape(-1, f.shape[-1])).reshape(values.shape)

    def shifted(self, delta: float) -> RedistributionFn:
        return RedistributionFn(self.feature_combo, tuple(np.add(self.params, delta)), self.n, self.knots)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["combo", self.feature_combo])
        w.writerow(["n", self.n])
        for lo, hi in feature_bounds(self.n, self.feature_combo):
            w.writerow(["axis", repr(lo), repr(hi), self.knots])
        w.writerow(["params", *map(repr, self.params)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> RedistributionFn:
        rows = {}
        axes = []
        for row in csv.reader(io.StringIO(text)):
            if not row:
                continue
            if row[0] == "axis":
                axes.append(row[1:])
            else:
                rows[row[0]] = row[1:]
        n = int(rows["n"][0])
        combo = rows["combo"][0]
        knots = int(axes[0][2]) if axes else KNOTS
        fn = cls(combo, tuple(float(x) for x in rows["params"]), n, knots)
        expect = feature_bounds(n, combo)
        if [(float(a), float(b)) for a, b, _ in axes] != expect:
            raise ValueError("axis bounds do not match the feature combo")
        return fn


@dataclass(frozen=True)
class RedistOutcome:
    built: bool
    receive: tuple[float, ...]
    utilities: tuple[float, ...]
    welfare: float
    ratio: float

    def utility(self, i: int, value: float) -> float:
        """Utility of agent ``i`` at true value ``value``."""
        if self.built:
            return value + self.receive[i]
        return self.receive[i] + 1.0 / len(self.receive)

    def budget_ok(self, tol: float = 1e-9) -> bool:
        """Weak budget balance: the efficiency ratio is at most 1."""
        return self.ratio <= 1.0 + tol


def redist_outcome(profile, h) -> RedistOutcome:
    """VCG plus redistribution.

    Built: agent ``i`` receives ``sum_{j != i} theta_j - h(theta_-i)`` on
    top of its own value.  Not built: it receives ``(n-1)/n - h(theta_-i)``
    and keeps its ``1/n`` share of the unspent cost, so its utility is
    ``1 - h(theta_-i)``.
    """
    theta = np.asarray(profile, dtype=float)
    n = theta.size
    if getattr(h, "n", n) != n:
        raise ValueError("h was built for a different number of agents")
    if hasattr(h, "rows"):
        hs = h.rows(theta[None, :])[0]
    else:
        hs = np.array([h(np.delete(theta, i)) for i in range(n)])
    S = first_best(theta)
    built = bool(theta.sum() >= 1.0)
    if built:
        receive = theta.sum() - theta - hs
        utilities = theta + receive
    else:
        receive = (n - 1) / n - hs
        utilities = receive + 1.0 / n
    welfare = float(utilities.sum())
    return RedistOutcome(built, tuple(receive.tolist()), tuple(utilities.tolist()), welfare, float(n - hs.sum() / S))


def feasibility_ratio(profile, h) -> float:
    theta = np.asarray(profile, dtype=float)
    return float(sum(h(np.delete(theta, i)) for i in range(theta.size)) / first_best(theta))


def _ratios(h, values: np.ndarray) -> np.ndarray:
    """``sum_i h(theta_-i) / S(theta)`` per row."""
    if hasattr(h, "rows"):
        hs = h.rows(values)
    else:
        hs = np.array([[h(np.delete(row, i)) for i in range(row.size)] for row in values])
    return hs.sum(axis=1) / _first_best_rows(values)


@dataclass(frozen=True)
class FeasibilityReport:
    profiles: int
    violations: tuple[tuple[int, float], ...]
    min_slack: float

    @property
    def ok(self) -> bool:
        return not self.violations


def is_feasible(h, profiles, tolerance: float = 1e-9) -> FeasibilityReport:
    """Weak budget balance: ``sum h / S >= n - 1`` on every profile.

    Violations are ``(row, slack)`` with negative slack.
    """
    values = np.atleast_2d(np.asarray(profiles, dtype=float))
    slack = _ratios(h, values) - (values.shape[1] - 1)
    bad = np.flatnonzero(slack < -tolerance)
    return FeasibilityReport(len(values), tuple((int(i), float(slack[i])) for i in bad), float(slack.min()))


def corner_profiles(n: int) -> np.ndarray:
    """All profiles with entries in ``{0, 1/n, 1}``."""
    return np.array(list(product((0.0, 1.0 / n, 1.0), repeat=n)))


def _adversary(score, n: int, budget: int, seed, pool: int = 200) -> tuple[float, np.ndarray]:
    """Minimize ``score(rows)`` over ``[0, 1]^n`` by elitist evolution.

    The corner set is scored exhaustively for ``n <= 10``; the search
    starts from a uniform random pool so it can only improve on it.
    """
    best_val, best_row = np.inf, None
    if n <= 10:
        corners = corner_profiles(n)
        s = score(corners)
        k = int(np.argmin(s))
        best_val, best_row = float(s[k]), corners[k]

    def init(rng):
        return list(rng.random((pool, n)))

    def fitness(pop, rng):
        return -score(np.array(pop))

    def breed(elite, pop, count, rng):
        parents = np.array(elite)
        a = parents[rng.integers(len(parents), size=count)]
        b = parents[rng.integers(len(parents), size=count)]
        mix = np.where(rng.random((count, n)) < 0.5, a, b)
        scale = 10.0 ** rng.uniform(-4, -1, size=(count, 1))
        return list(np.clip(mix + rng.normal(0.0, 1.0, (count, n)) * scale, 0.0, 1.0))

    result = evolve(GAConfig(population=pool, elite=pool // 4, rounds=budget, seed=seed), init, fitness, breed)
    rows = np.array(result.population)
    s = score(rows)
    k = int(np.argmin(s))
    if s[k] < best_val:
        best_val, best_row = float(s[k]), rows[k]
    return best_val, np.asarray(best_row, dtype=float)


def worst_case_ratio(h, n: int, budget: int = 100, seed=0) -> tuple[float, np.ndarray]:
    """Smallest efficiency ratio ``n - sum h / S`` found, with its profile.

    An empirical upper bound on the true worst case.
    """
    return _adversary(lambda rows: n - _ratios(h, rows), n, budget, seed)


def budget_violation(h, n: int, budget: int = 100, seed=0) -> tuple[float, np.ndarray]:
    """Smallest slack ``sum h / S - (n - 1)`` found; negative means a deficit."""
    return _adversary(lambda rows: _ratios(h, rows) - (n - 1), n, budget, seed)


def expected_ratio_terms(h, prior: Prior, n: int, samples: int = 100_000, seed=0) -> tuple[float, float]:
    """Monte Carlo ``E[sum h / S]`` with its standard error."""
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    r = _ratios(h, _draw(prior, rng, samples, n))
    se = float(r.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return float(r.mean()), se


def certify(h: RedistributionFn, prior: Prior, samples: int = 200_000, seed=0,
            margin: float = 1e-3, rounds: int = 3) -> RedistributionFn:
    """Raise ``h`` by a constant until no deficit is found.

    Each round checks fresh prior draws, uniform draws, the corner set and
    an adversarial search; any deficit is covered with ``margin`` to spare.
    """
    n = h.n
    for r in range(rounds):
        rng = np.random.default_rng([*np.atleast_1d(seed), 7, r])
        rows = np.vstack([_draw(prior, rng, samples // 2, n), rng.random((samples // 2, n))])
        slack = min(is_feasible(h, rows).min_slack, budget_violation(h, n, 50, [*np.atleast_1d(seed), r])[0])
        if slack >= 0.0:
            return h
        h = h.shifted(-slack / n + margin)
    return h


def optimize_h(objective: str, prior: Prior, n: int, ga: GAConfig = GAConfig(),
               combo="1", step: float = 0.01, epsilon: float | None = None,
               repair: bool = True) -> RedistributionFn:
    """Evolve knot values of ``h``.

    Fitness is ``-(eps * objective + mean squared deficit)`` on fresh
    prior draws (plus the corner set), where the objective is the mean
    (``expectation``) or the max (``worst_case``) of ``sum h / S``.  The
    population starts around the feasible baseline.  With ``repair`` the
    winner is shifted up until no deficit can be found.
    """
    if objective not in EPSILON:
        raise ValueError(f"objective must be one of {tuple(EPSILON)}")
    eps = EPSILON[objective] if epsilon is None else epsilon
    base = RedistributionFn.baseline(n, combo)
    if len(feature_bounds(n, str(combo))) > 3:
        raise ValueError("knot grids are limited to three features")
    corners = corner_profiles(n) if n <= 10 else np.empty((0, n))

    def make(p):
        return RedistributionFn(str(combo), tuple(p), n)

    def score(fn, rows):
        r = _ratios(fn, rows)
        S = _first_best_rows(rows)
        deficit = np.maximum((n - 1) - r, 0.0) * S
        obj = r.max() if objective == "worst_case" else r.mean()
        return -(eps * obj + np.mean(deficit ** 2))

    def init(rng):
        p0 = np.array(base.params)
        pop = [base]
        for _ in range(ga.population - 1):
            pop.append(make(p0 + rng.normal(0.0, step, p0.size)))
        return pop

    def fitness(pop, rng):
        rows = np.vstack([_draw(prior, rng, ga.fitness_profiles, n), corners])
        return [score(fn, rows) for fn in pop]

    def breed(elite, pop, count, rng):
        out = []
        for _ in range(count):
            a = np.array(elite[rng.integers(len(elite))].params)
            b = np.array(elite[rng.integers(len(elite))].params)
            child = np.where(rng.random(a.size) < 0.5, a, b)
            hit = rng.random(a.size) < ga.mutation_prob
            child = child + hit * rng.normal(0.0, step, a.size)
            out.append(make(child))
        return out

    held_rng = np.random.default_rng([ga.seed, 1])
    held = np.vstack([_draw(prior, held_rng, ga.heldout_profiles, n), corners])

    def heldout(pop):
        return [score(fn, held) for fn in pop]

    result = evolve(ga, init, fitness, breed, heldout)
    best = result.best
    if repair and ga.rounds > 0:
        best = certify(best, prior, seed=ga.seed)
    return best
