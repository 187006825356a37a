"""Valuation priors on a bounded interval.

A :class:`Prior` wraps one of a handful of distribution families and
renormalizes it onto its support, so densities integrate to one there and
samples never leave it.  ``TwoPoint`` is the only discrete family; it is
kept exact rather than smoothed, and density queries on it are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, stats


class DiscretePrior(ValueError):
    """A density was requested from a discrete prior."""


class OutOfSupport(ValueError):
    """A query point lies outside the prior's support."""


class ZeroAcceptanceMass(ValueError):
    """No probability mass lies at or above the requested cost share."""


FAMILIES = {
    "Uniform": 2,
    "TruncatedNormal": 2,
    "TruncatedExponential": 1,
    "TruncatedLogistic": 2,
    "TwoPeak": 5,
    "Beta": 2,
    "TwoPoint": 3,
}

_QUAD_TOL = 1e-8


@dataclass(frozen=True)
class Prior:
    """A valuation distribution restricted to ``[lo, hi]``.

    Attributes:
        family: Family name, one of ``FAMILIES``.
        params: Family parameters in their conventional order.
        lo: Lower end of the support.
        hi: Upper end of the support.
    """

    family: str
    params: tuple[float, ...]
    lo: float = 0.0
    hi: float = 1.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}")
        if len(self.params) != FAMILIES[self.family]:
            raise ValueError(f"{self.family} takes {FAMILIES[self.family]} parameters, got {len(self.params)}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if not self.hi > self.lo:
            raise ValueError("support must have hi > lo")
        if self.family == "TwoPoint":
            a, b, p = self.params
            if not (self.lo <= a < b <= self.hi and 0.0 <= p <= 1.0):
                raise ValueError("TwoPoint needs lo <= x_lo < x_hi <= hi and 0 <= p <= 1")

    # constructors

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> Prior:
        return cls("Uniform", (lo, hi), lo, hi)

    @classmethod
    def truncated_normal(cls, mu: float, sigma: float) -> Prior:
        return cls("TruncatedNormal", (mu, sigma))

    @classmethod
    def truncated_exponential(cls, lam: float) -> Prior:
        return cls("TruncatedExponential", (lam,))

    @classmethod
    def truncated_logistic(cls, mu: float, s: float) -> Prior:
        return cls("TruncatedLogistic", (mu, s))

    @classmethod
    def two_peak(cls, mu1: float, sigma1: float, mu2: float, sigma2: float, p: float) -> Prior:
        return cls("TwoPeak", (mu1, sigma1, mu2, sigma2, p))

    @classmethod
    def beta(cls, a: float, b: float) -> Prior:
        return cls("Beta", (a, b))

    @classmethod
    def two_point(cls, x_lo: float, x_hi: float, p: float) -> Prior:
        """``x_lo`` with probability ``p``, otherwise ``x_hi``."""
        return cls("TwoPoint", (x_lo, x_hi, p))

    @property
    def is_discrete(self) -> bool:
        return self.family == "TwoPoint"

    def __str__(self) -> str:
        args = ",".join(f"{p:g}" for p in self.params)
        return f"{self.family}({args})"

    # underlying untruncated law

    @cached_property
    def _components(self) -> list[tuple[float, object]]:
        f, p = self.family, self.params
        if f == "Uniform":
            return [(1.0, stats.uniform(p[0], p[1] - p[0]))]
        if f == "TruncatedNormal":
            return [(1.0, stats.norm(p[0], p[1]))]
        if f == "TruncatedExponential":
            return [(1.0, stats.expon(scale=1.0 / p[0]))]
        if f == "TruncatedLogistic":
            return [(1.0, stats.logistic(p[0], p[1]))]
        if f == "TwoPeak":
            return [(p[4], stats.norm(p[0], p[1])), (1.0 - p[4], stats.norm(p[2], p[3]))]
        if f == "Beta":
            return [(1.0, stats.beta(p[0], p[1], loc=self.lo, scale=self.hi - self.lo))]
        return []

    def _raw_cdf(self, x):
        return sum(wt * d.cdf(x) for wt, d in self._components)

    def _raw_pdf(self, x):
        return sum(wt * d.pdf(x) for wt, d in self._components)

    @cached_property
    def _offset(self) -> float:
        return float(self._raw_cdf(self.lo))

    @cached_property
    def _mass(self) -> float:
        return float(self._raw_cdf(self.hi)) - self._offset

    # public queries

    def pdf(self, x):
        """Density at ``x``; scalar in, scalar out."""
        if self.is_discrete:
            raise DiscretePrior("TwoPoint has no density")
        xa = np.asarray(x, dtype=float)
        if np.any((xa < self.lo) | (xa > self.hi)):
            raise OutOfSupport(f"{x} outside [{self.lo}, {self.hi}]")
        out = self._raw_pdf(xa) / self._mass
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        """``P(X <= x)``, clamping ``x`` to the support."""
        xa = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        if self.is_discrete:
            a, b, p = self.params
            out = np.where(xa < a, 0.0, np.where(xa < b, p, 1.0))
        else:
            out = np.clip((self._raw_cdf(xa) - self._offset) / self._mass, 0.0, 1.0)
            out = np.where(xa >= self.hi, 1.0, np.where(xa <= self.lo, 0.0, out))
        return float(out) if out.ndim == 0 else out

    def reliability(self, x):
        """``1 - F(x)``."""
        return 1.0 - self.cdf(x)

    def acceptance(self, c):
        """``P(X >= c)``: the chance an agent accepts a share ``c``.

        Equals :meth:`reliability` for continuous families; differs at the
        atoms of ``TwoPoint``.
        """
        ca = np.asarray(c, dtype=float)
        if self.is_discrete:
            a, b, p = self.params
            out = np.where(ca <= a, 1.0, np.where(ca <= b, 1.0 - p, 0.0))
            return float(out) if out.ndim == 0 else out
        return self.reliability(ca)

    def sample(self, rng: np.random.Generator | int | None, count: int) -> np.ndarray:
        """``count`` i.i.d. draws; deterministic for a given seed."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        rng = np.random.default_rng(rng)
        u = rng.random(count)
        if self.is_discrete:
            a, b, p = self.params
            return np.where(u < p, a, b)
        return self.quantile(u)

    def quantile(self, u) -> np.ndarray:
        """Inverse CDF of the truncated law, vectorized over ``u``."""
        u = np.asarray(u, dtype=float)
        target = self._offset + u * self._mass
        if len(self._components) == 1:
            x = self._components[0][1].ppf(target)
            return np.clip(x, self.lo, self.hi)
        # mixture: bisection on the CDF
        lo = np.full(u.shape, self.lo)
        hi = np.full(u.shape, self.hi)
        while np.max(hi - lo, initial=0.0) > 1e-10:
            mid = 0.5 * (lo + hi)
            below = self._raw_cdf(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def conditional_welfare(self, c: float) -> float:
        """``w(c) = E[X - c | X >= c]``.

        Computed as the integral of the reliability above ``c`` divided by
        the acceptance mass.  At the top of the support the limit 0 is used.
        """
        c = float(c)
        if c < self.lo or c > self.hi:
            raise OutOfSupport(f"{c} outside [{self.lo}, {self.hi}]")
        key = ("w", c)
        if key in self._cache:
            return self._cache[key]
        mass = float(self.acceptance(c))
        if self.is_discrete:
            if mass <= 0.0:
                raise ZeroAcceptanceMass(f"no mass at or above {c}")
            a, b, p = self.params
            num = (p * (a - c) if a >= c else 0.0) + (1.0 - p) * (b - c)
            val = num / mass
        elif c >= self.hi:
            val = 0.0
        elif mass <= 0.0:
            raise ZeroAcceptanceMass(f"no mass at or above {c}")
        else:
            num, _ = integrate.quad(self.reliability, c, self.hi, epsabs=_QUAD_TOL, limit=200)
            val = max(num / mass, 0.0)
        self._cache[key] = val
        return val


def pdf(prior: Prior, x):
    return prior.pdf(x)


def cdf(prior: Prior, x):
    return prior.cdf(x)


def reliability(prior: Prior, x):
    return prior.reliability(x)


def sample(prior: Prior, seed, count: int) -> np.ndarray:
    return prior.sample(seed, count)


def conditional_welfare(prior: Prior, c: float) -> float:
    return prior.conditional_welfare(c)


_SPEC_RE = re.compile(r"^\s*([A-Za-z]+)\s*\(([^)]*)\)\s*(?:on\s*\[([^\]]*)\])?\s*$")


def parse_prior(text: str) -> Prior:
    """Parse ``Family(p1,p2,...)``, optionally followed by ``on [lo,hi]``.

    ``Bernoulli(p)`` is accepted as shorthand for ``TwoPoint(0,1,1-p)``.
    """
    m = _SPEC_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse prior {text!r}")
    name, args, support = m.groups()
    vals = tuple(float(a) for a in args.split(",") if a.strip())
    if name == "Bernoulli":
        if len(vals) != 1:
            raise ValueError("Bernoulli takes one parameter")
        return Prior.two_point(0.0, 1.0, 1.0 - vals[0])
    if name == "Uniform":
        lo, hi = vals if vals else (0.0, 1.0)
        return Prior.uniform(lo, hi)
    if support:
        lo, hi = (float(s) for s in support.split(","))
        return Prior(name, vals, lo, hi)
    return Prior(name, vals)
