"""Outcome types shared by every mechanism, and black-box property checkers.

A mechanism is any callable mapping a profile (sequence of reported values)
to an outcome object.  Outcomes expose ``utility(i, true_value)``, which is
all the checkers need, so one checker serves the binary, delay, market and
redistribution models alike.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .priors import Prior

BUDGET_TOL = 1e-9


class Outcome(Protocol):
    def utility(self, i: int, value: float) -> float: ...


Mechanism = Callable[[Sequence[float]], Outcome]


@dataclass(frozen=True)
class BinaryOutcome:
    """Build decision, consumer set and payments of a binary project."""

    built: bool
    consumers: frozenset[int]
    payments: tuple[float, ...]

    @classmethod
    def not_built(cls, n: int) -> BinaryOutcome:
        return cls(False, frozenset(), (0.0,) * n)

    def utility(self, i: int, value: float) -> float:
        return (value if i in self.consumers else 0.0) - self.payments[i]

    def budget_ok(self, tol: float = BUDGET_TOL) -> bool:
        pays = self.payments
        if any(p < -tol for p in pays):
            return False
        if any(pays[i] != 0.0 for i in range(len(pays)) if i not in self.consumers):
            return False
        if not self.built:
            return not self.consumers and all(p == 0.0 for p in pays)
        return abs(sum(pays) - 1.0) <= tol


@dataclass(frozen=True)
class Violation:
    trial: int
    agent: int
    profile: tuple[float, ...]
    misreport: float
    gain: float

    @property
    def true_value(self) -> float:
        return self.profile[self.agent]


@dataclass
class PropertyReport:
    """Result of a sampled property check.

    ``max_gain`` is the largest recorded gain (utility gain for incentive
    checks, shortfall for rationality, budget error for budget checks).
    """

    name: str
    trials: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def max_gain(self) -> float:
        return max((v.gain for v in self.violations), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "agent", "true_value", "misreport", "gain"])
        for v in self.violations:
            w.writerow([v.trial, v.agent, repr(v.true_value), repr(v.misreport), repr(v.gain)])
        return buf.getvalue()


PriorLike = Prior | Sequence[Prior]


def _agent_priors(prior: PriorLike, n: int) -> list[Prior]:
    if isinstance(prior, Prior):
        return [prior] * n
    priors = list(prior)
    if len(priors) != n:
        raise ValueError("need one prior per agent")
    return priors


def _draw_profiles(priors: list[Prior], rng: np.random.Generator, trials: int) -> np.ndarray:
    """``(trials, n)`` draws, one column per agent's prior."""
    return np.column_stack([p.sample(rng, trials) for p in priors])


def check_sp(
    mechanism: Mechanism,
    prior: PriorLike,
    n: int,
    trials: int,
    tolerance: float = 1e-9,
    seed=0,
) -> PropertyReport:
    """Sampled strategy-proofness check.

    Each trial draws a profile and a deviating agent, then tries three
    misreports: a fresh draw from that agent's prior and both support
    endpoints.  The largest gain above ``tolerance`` is recorded.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    priors = _agent_priors(prior, n)
    rng = np.random.default_rng(seed)
    report = PropertyReport("strategy-proofness", trials)
    profiles = _draw_profiles(priors, rng, trials)
    agents = rng.integers(n, size=trials)
    lies = _draw_profiles(priors, rng, trials)
    for trial in range(trials):
        profile = profiles[trial].tolist()
        i = int(agents[trial])
        pi = priors[i]
        truthful = mechanism(profile).utility(i, profile[i])
        best, best_lie = 0.0, None
        for lie in (float(lies[trial, i]), pi.lo, pi.hi):
            dev = list(profile)
            dev[i] = lie
            gain = mechanism(dev).utility(i, profile[i]) - truthful
            if gain > best:
                best, best_lie = gain, lie
        if best > tolerance:
            report.violations.append(Violation(trial, i, tuple(profile), best_lie, best))
    return report


def check_ir(
    mechanism: Mechanism,
    prior: PriorLike,
    n: int,
    trials: int,
    tolerance: float = 1e-9,
    seed=0,
) -> PropertyReport:
    """Sampled individual-rationality check; gain is the utility shortfall."""
    if trials < 1:
        raise ValueError("trials must be positive")
    priors = _agent_priors(prior, n)
    rng = np.random.default_rng(seed)
    report = PropertyReport("individual-rationality", trials)
    profiles = _draw_profiles(priors, rng, trials)
    for trial in range(trials):
        profile = profiles[trial].tolist()
        out = mechanism(profile)
        for i in range(n):
            u = out.utility(i, profile[i])
            if u < -tolerance:
                report.violations.append(Violation(trial, i, tuple(profile), profile[i], -u))
    return report


def check_budget(
    mechanism: Mechanism,
    prior: PriorLike,
    n: int,
    trials: int,
    seed=0,
    predicate: Callable[[object], bool] | None = None,
) -> PropertyReport:
    """Sampled budget check.

    By default calls the outcome's own ``budget_ok``; other models may pass
    a ``predicate``.  Violations carry agent -1 and gain 1.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    priors = _agent_priors(prior, n)
    rng = np.random.default_rng(seed)
    report = PropertyReport("budget", trials)
    profiles = _draw_profiles(priors, rng, trials)
    for trial in range(trials):
        profile = profiles[trial].tolist()
        out = mechanism(profile)
        ok = predicate(out) if predicate is not None else out.budget_ok()
        if not ok:
            report.violations.append(Violation(trial, -1, tuple(profile), float("nan"), 1.0))
    return report
