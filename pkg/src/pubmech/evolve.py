"""Genetic-algorithm engine and two genome codecs.

The engine is representation-agnostic: callers supply an initial
population, a batch fitness function (higher is better) and a breeding
function.  Two codecs live here: single-variable curves and sequences of
cost-time vectors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .delay import CostTimeVector, SequentialMechanism, batch_sequential, loose_filter, strict_filter
from .priors import Prior


@dataclass(frozen=True)
class GAConfig:
    """Hyperparameters of a genetic run.

    ``mutation_delta`` is the additive step used by curve mutation and
    ``perturb_range`` the multiplicative range used by sequence
    neighbourhood search.  ``heldout_profiles`` sizes the final test set.
    """

    population: int = 60
    elite: int = 20
    rounds: int = 100
    fitness_profiles: int = 200
    mutation_prob: float = 0.1
    mutation_delta: float = 0.5
    perturb_range: float = 0.1
    prune_l1: float = 1e-4
    seed: int = 0
    heldout_profiles: int = 10_000

    def __post_init__(self) -> None:
        if self.population < 1 or not 0 <= self.elite <= self.population:
            raise ValueError("need population >= 1 and 0 <= elite <= population")
        if self.rounds < 0 or self.fitness_profiles < 1:
            raise ValueError("rounds must be >= 0 and fitness_profiles >= 1")
        if not 0.0 <= self.mutation_prob <= 1.0 or not 0.0 <= self.perturb_range <= 1.0:
            raise ValueError("probabilities and ranges must lie in [0, 1]")

    @classmethod
    def curves(cls, **kw) -> GAConfig:
        """Curve-search defaults: 60 curves, keep 20, 100 rounds."""
        return replace(cls(), **kw)

    @classmethod
    def sequences(cls, **kw) -> GAConfig:
        """Sequence-search defaults: 200 mechanisms, keep half, 200 rounds."""
        base = cls(population=200, elite=100, rounds=200, mutation_prob=0.2, mutation_delta=0.0)
        return replace(base, **kw)


@dataclass
class GAResult:
    best: object
    fitness: float
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    population: list = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "best", "mean"])
        for r, b, m in self.trace:
            w.writerow([r, repr(b), repr(m)])
        return buf.getvalue()


Fitness = Callable[[list, np.random.Generator], np.ndarray]
Breed = Callable[[list, list, int, np.random.Generator], list]


def evolve(
    config: GAConfig,
    init: Callable[[np.random.Generator], list],
    fitness: Fitness,
    breed: Breed,
    heldout: Callable[[list], np.ndarray] | None = None,
    prepare: Callable[[list, np.random.Generator], list] | None = None,
) -> GAResult:
    """Elitist generational loop.

    Each round optionally ``prepare``s the population (filters, pruning),
    scores it with ``fitness`` on fresh random draws, keeps the top
    ``elite`` (ties by position, i.e. creation order) and refills with
    ``breed(elite, population, count, rng)``.  The winner is picked by
    ``heldout`` when given, otherwise by one more fitness call.
    """
    rng = np.random.default_rng(config.seed)
    pop = list(init(rng))
    if not pop:
        raise ValueError("initial population is empty")
    trace = []
    for r in range(config.rounds):
        if prepare is not None:
            pop = list(prepare(pop, rng))
        scores = np.asarray(fitness(pop, rng), dtype=float)
        order = np.argsort(-scores, kind="stable")
        trace.append((r, float(scores[order[0]]), float(scores.mean())))
        elite = [pop[i] for i in order[: max(config.elite, 1)]]
        pop = elite + list(breed(elite, pop, config.population - len(elite), rng))
    if config.rounds == 0 and len(pop) == 1:
        return GAResult(pop[0], float("nan"), trace, pop)
    final = np.asarray(heldout(pop) if heldout is not None else fitness(pop, rng), dtype=float)
    best = int(np.argmax(final))
    return GAResult(pop[best], float(final[best]), trace, pop)


# curve codec

CURVE_KINDS = ("piecewise", "polynomial", "fourier")


@dataclass(frozen=True)
class Curve:
    """A function on ``[0, 1]``.

    ``piecewise``: values at ``k + 1`` equally spaced knots, linearly
    interpolated.  ``polynomial``: coefficients of ``1, t, t^2, ...``.
    ``fourier``: ``c0, c1..cN, s1..sN`` for
    ``c0/2 + sum(c_j cos(2 pi j t / p) + s_j sin(2 pi j t / p))``.
    """

    kind: str
    coeffs: tuple[float, ...]
    period: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"curve kind must be one of {CURVE_KINDS}")
        c = tuple(float(x) for x in self.coeffs)
        object.__setattr__(self, "coeffs", c)
        if not c or not all(np.isfinite(c)):
            raise ValueError("curve needs finite coefficients")
        if self.kind == "piecewise" and len(c) < 2:
            raise ValueError("piecewise curves need at least two knots")
        if self.kind == "fourier" and len(c) % 2 == 0:
            raise ValueError("fourier curves need 2N + 1 coefficients")

    def __call__(self, t):
        return curve_eval(self, t)


def curve_values(kind: str, coeffs: np.ndarray, t: np.ndarray, period: float = 2.0) -> np.ndarray:
    """Evaluate a (P, L) batch of coefficient rows on the points ``t``."""
    P = np.atleast_2d(np.asarray(coeffs, dtype=float))
    t = np.asarray(t, dtype=float)
    if kind == "piecewise":
        knots = np.linspace(0.0, 1.0, P.shape[1])
        seg = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, P.shape[1] - 2)
        frac = (t - knots[seg]) / (knots[seg + 1] - knots[seg])
        return P[:, seg] * (1.0 - frac) + P[:, seg + 1] * frac
    if kind == "polynomial":
        return P @ np.power.outer(t, np.arange(P.shape[1])).T
    if kind == "fourier":
        N = (P.shape[1] - 1) // 2
        arg = 2.0 * np.pi / period * np.outer(np.arange(1, N + 1), t)
        return P[:, :1] / 2.0 + P[:, 1 : N + 1] @ np.cos(arg) + P[:, N + 1 :] @ np.sin(arg)
    raise ValueError(f"curve kind must be one of {CURVE_KINDS}")


def curve_eval(c: Curve, t):
    if np.any((np.asarray(t) < 0) | (np.asarray(t) > 1)):
        raise ValueError("t must lie in [0, 1]")
    out = curve_values(c.kind, np.array(c.coeffs), np.atleast_1d(t), c.period)[0]
    return float(out[0]) if np.ndim(t) == 0 else out


def random_curve_coeffs(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Initial coefficients: straight lines with slope and intercept in
    U(-100, 100) for piecewise curves, U(-10, 10) entries otherwise."""
    if kind == "piecewise":
        knots = np.linspace(0.0, 1.0, size)
        return rng.uniform(-100, 100) * knots + rng.uniform(-100, 100)
    return rng.uniform(-10, 10, size)


def two_point_crossover(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Copy of ``a`` with one random slice taken from ``b``."""
    i, j = np.sort(rng.choice(len(a) + 1, 2, replace=False))
    child = np.array(a, dtype=float)
    child[i:j] = b[i:j]
    return child


def additive_mutation(a: np.ndarray, prob: float, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Each entry moves by ``+delta`` or ``-delta`` with probability ``prob``."""
    child = np.array(a, dtype=float)
    hit = rng.random(len(child)) < prob
    child[hit] += rng.choice([-delta, delta], int(hit.sum()))
    return child


# sequence codec

OBJECTIVE_COLUMNS = {"max_delay", "sum_delay"}


def random_vector(n: int, rng: np.random.Generator) -> CostTimeVector:
    B = rng.random(n)
    while B.sum() <= 0:
        B = rng.random(n)
    return CostTimeVector(tuple(rng.random(n)), tuple(B / B.sum()))


def _renormalized(T: np.ndarray, B: np.ndarray, rng: np.random.Generator) -> CostTimeVector | None:
    """Rescale payments to sum to 1.  If nobody pays, a random agent that
    is not excluded takes the whole cost; ``None`` if all are excluded."""
    B = np.where(T >= 1.0, 0.0, np.maximum(B, 0.0))
    total = B.sum()
    if total <= 0:
        open_ = np.flatnonzero(T < 1.0)
        if open_.size == 0:
            return None
        B[rng.choice(open_)] = 1.0
        total = 1.0
    B = B / total
    B[np.argmax(B)] += 1.0 - B.sum()
    return CostTimeVector(tuple(T), tuple(B))


def sequence_crossover(
    a: SequentialMechanism, b: SequentialMechanism, seed
) -> tuple[SequentialMechanism, SequentialMechanism]:
    """Swap one aligned segment of genes between the parents."""
    rng = np.random.default_rng(seed)
    m = min(len(a), len(b))
    i, j = np.sort(rng.choice(m + 1, 2, replace=False))
    sa, sb = list(a.sequence), list(b.sequence)
    ca = sa[:i] + sb[i:j] + sa[j:]
    cb = sb[:i] + sa[i:j] + sb[j:]
    return SequentialMechanism(tuple(ca)), SequentialMechanism(tuple(cb))


def modify_offer(vec: CostTimeVector, rng: np.random.Generator) -> CostTimeVector | None:
    """Change one agent's offer, then renormalize payments.

    The new offer is, with equal chance: excluded (release 1, pay 0), free
    (release 0, pay 0), immediate (release 0, fresh payment) or a fresh
    uniform (release, payment).  The exact corners let searches reach
    exclusion, free riding and take-it-or-leave-it prices.
    """
    T, B = np.array(vec.T), np.array(vec.B)
    i = int(rng.integers(len(T)))
    kind = rng.integers(4)
    if kind == 0:
        T[i], B[i] = 1.0, 0.0
    elif kind == 1:
        T[i], B[i] = 0.0, 0.0
    elif kind == 2:
        T[i], B[i] = 0.0, rng.random()
    else:
        T[i], B[i] = rng.random(), rng.random()
    return _renormalized(T, B, rng)


def perturb_vector(vec: CostTimeVector, spread: float, rng: np.random.Generator) -> CostTimeVector | None:
    """Scale every entry by ``1 + U(-spread, spread)`` and renormalize."""
    n = len(vec.T)
    T = np.array(vec.T)
    T = np.where(T >= 1.0, 1.0, np.clip(T * (1 + rng.uniform(-spread, spread, n)), 0.0, 1.0 - 1e-9))
    B = np.array(vec.B) * (1 + rng.uniform(-spread, spread, n))
    return _renormalized(T, B, rng)


def insert_modified(m: SequentialMechanism, rng: np.random.Generator) -> SequentialMechanism:
    """Copy a random gene, change one offer, insert it after the original."""
    seq = list(m.sequence)
    g = int(rng.integers(len(seq)))
    new = modify_offer(seq[g], rng)
    if new is not None:
        seq.insert(int(rng.integers(g + 1, len(seq) + 1)), new)
    return SequentialMechanism(tuple(seq))


def sequence_mutation(m: SequentialMechanism, config: GAConfig, seed) -> SequentialMechanism:
    """With ``mutation_prob``: copy a gene, change one offer, insert the copy
    after the original.  Independently with ``mutation_prob``: perturb one
    gene by ``perturb_range``."""
    rng = np.random.default_rng(seed)
    if rng.random() < config.mutation_prob:
        m = insert_modified(m, rng)
    seq = list(m.sequence)
    if rng.random() < config.mutation_prob:
        g = int(rng.integers(len(seq)))
        new = perturb_vector(seq[g], config.perturb_range, rng)
        if new is not None:
            seq[g] = new
    return SequentialMechanism(tuple(seq))


def prune(
    population: Sequence[SequentialMechanism], profiles: np.ndarray, threshold: float
) -> list[SequentialMechanism]:
    """Drop genes that are never the first accepted vector on ``profiles``
    and genes within ``threshold`` (L1) of an earlier kept gene."""
    out = []
    for mech in population:
        _, _, prices = mech.arrays()
        ok = (profiles[:, None, :] >= prices[None, :, :]).all(axis=2)
        hit = ok.any(axis=1)
        used = set(np.argmax(ok, axis=1)[hit].tolist())
        kept: list[CostTimeVector] = []
        for g, vec in enumerate(mech.sequence):
            if g not in used:
                continue
            flat = np.array(vec.T + vec.B)
            if any(np.abs(flat - np.array(k.T + k.B)).sum() < threshold for k in kept):
                continue
            kept.append(vec)
        out.append(SequentialMechanism(tuple(kept) if kept else (mech.sequence[0],)))
    return out


def delay_fitness(objective: str) -> Callable:
    if objective not in OBJECTIVE_COLUMNS:
        raise ValueError(f"objective must be one of {sorted(OBJECTIVE_COLUMNS)}")

    def score(mech: SequentialMechanism, values: np.ndarray) -> float:
        t = batch_sequential(values, mech)
        return -float(t.max(axis=1).mean() if objective == "max_delay" else t.sum(axis=1).mean())

    return score


def evolve_sequences(
    prior: Prior,
    n: int,
    objective: str,
    config: GAConfig | None = None,
    filter_kind: str = "strict",
) -> GAResult:
    """Search sequential unanimous mechanisms for low expected delay.

    Children come in equal thirds from crossover with a random member,
    insert-after mutation, and neighbourhood moves; a neighbourhood move
    either perturbs a gene or changes one of its offers in place, since
    insertion alone never lowers the first gene's prices.

    ``filter_kind`` ``"strict"`` keeps only mechanisms passing the monotone
    price-and-time test (provably strategy-proof); ``"loose"`` uses the
    simulated check each round.  Children are redrawn until they pass, so
    the population stays full.  Fitness is the negated delay.
    """
    config = config or GAConfig.sequences()
    score = delay_fitness(objective)
    if filter_kind == "strict":
        passes = lambda m, rng: strict_filter(m)  # noqa: E731
    elif filter_kind == "loose":
        passes = lambda m, rng: loose_filter(m, prior, config.fitness_profiles, rng)  # noqa: E731
    else:
        raise ValueError("filter_kind must be strict or loose")

    def draw(rng, rows):
        return prior.sample(rng, rows * n).reshape(rows, n)

    def init(rng):
        return [SequentialMechanism((random_vector(n, rng),)) for _ in range(config.population)]

    def prepare(pop, rng):
        pop = [m for m in pop if passes(m, rng)] or pop[:1]
        return prune(pop, draw(rng, config.fitness_profiles), config.prune_l1)

    def fitness(pop, rng):
        values = draw(rng, config.fitness_profiles)
        return np.array([score(m, values) for m in pop])

    def breed(elite, pop, count, rng):
        children = []
        makers = ("crossover", "mutation", "neighbourhood")
        attempts = 0
        while len(children) < count and attempts < 50 * max(count, 1):
            attempts += 1
            kind = makers[len(children) % 3]
            parent = elite[int(rng.integers(len(elite)))]
            if kind == "crossover":
                other = pop[int(rng.integers(len(pop)))]
                child = sequence_crossover(parent, other, rng)[0]
            elif kind == "mutation":
                child = insert_modified(parent, rng)
            else:
                g = int(rng.integers(len(parent)))
                vec = parent.sequence[g]
                new = perturb_vector(vec, config.perturb_range, rng) if rng.random() < 0.5 else modify_offer(vec, rng)
                if new is None:
                    continue
                seq = list(parent.sequence)
                seq[g] = new
                child = SequentialMechanism(tuple(seq))
            if passes(child, rng):
                children.append(child)
        while len(children) < count:
            children.append(elite[len(children) % len(elite)])
        return children

    held = draw(np.random.default_rng([config.seed, 1]), config.heldout_profiles)
    return evolve(
        config,
        init,
        fitness,
        breed,
        heldout=lambda pop: np.array([score(m, held) for m in pop]),
        prepare=prepare,
    )



def tag_population(
    population: Sequence[SequentialMechanism], prior: Prior, profiles: int = 10_000, seed=0
) -> list[bool]:
    """Post-hoc simulated incentive test for each mechanism; the final
    population of a loose-filter run is tagged, not culled."""
    return [loose_filter(m, prior, profiles, [*np.atleast_1d(seed), k]) for k, m in enumerate(population)]
