"""Binary cost-sharing mechanisms: unanimous, conservative equal cost,
serial cost sharing, and table-driven largest unanimous mechanisms."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .core import BUDGET_TOL, BinaryOutcome

MAX_TABLE_AGENTS = 12


class InvalidShares(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class CostShareVector:
    shares: tuple[float, ...]

    def __post_init__(self) -> None:
        s = tuple(float(x) for x in self.shares)
        object.__setattr__(self, "shares", s)
        if not s or any(x < 0 for x in s) or abs(sum(s) - 1.0) > BUDGET_TOL:
            raise InvalidShares(f"shares must be nonnegative and sum to 1: {s}")

    def __len__(self) -> int:
        return len(self.shares)


def conservative_equal_cost(profile: Sequence[float]) -> BinaryOutcome:
    n = len(profile)
    if all(v >= 1.0 / n for v in profile):
        return BinaryOutcome(True, frozenset(range(n)), (1.0 / n,) * n)
    return BinaryOutcome.not_built(n)


def unanimous(profile: Sequence[float], shares: CostShareVector | Sequence[float]) -> BinaryOutcome:
    if not isinstance(shares, CostShareVector):
        shares = CostShareVector(tuple(shares))
    n = len(profile)
    if len(shares) != n:
        raise InvalidShares("share vector length differs from profile length")
    if all(v >= c for v, c in zip(profile, shares.shares)):
        return BinaryOutcome(True, frozenset(range(n)), shares.shares)
    return BinaryOutcome.not_built(n)


def coalition_feasibility(values: Sequence[float]) -> tuple[int, int]:
    """``(I, K)``: K is the largest k with at least k values >= 1/k, else 0."""
    ordered = sorted(values, reverse=True)
    k_best = 0
    for k in range(1, len(ordered) + 1):
        if ordered[k - 1] >= 1.0 / k:
            k_best = k
    return int(k_best > 0), k_best


def top_k(values: Sequence[float], k: int) -> list[int]:
    """Indices of the k largest values, ties to the lowest index."""
    return sorted(range(len(values)), key=lambda i: (-values[i], i))[:k]


def serial_cost_sharing(profile: Sequence[float]) -> BinaryOutcome:
    n = len(profile)
    _, k = coalition_feasibility(profile)
    if k == 0:
        return BinaryOutcome.not_built(n)
    winners = top_k(profile, k)
    pays = [0.0] * n
    for i in winners:
        pays[i] = 1.0 / k
    return BinaryOutcome(True, frozenset(winners), tuple(pays))


def scs_consumer_counts(values: np.ndarray) -> np.ndarray:
    """Vectorized K(v) over the rows of ``values``."""
    s = -np.sort(-np.asarray(values, dtype=float), axis=1)
    k = np.arange(1, s.shape[1] + 1)
    ok = s >= 1.0 / k
    return np.where(ok.any(axis=1), s.shape[1] - np.argmax(ok[:, ::-1], axis=1), 0)


class CostShareSpec:
    """Per-coalition share vectors for a largest unanimous mechanism.

    ``table`` maps each nonempty coalition (frozenset of agent indices) to a
    dict from member to share.  Sums are checked on construction;
    the monotonicity condition is checked by :func:`validate_spec`.
    """

    def __init__(self, n: int, table: dict[frozenset[int], dict[int, float]]):
        if not 1 <= n <= MAX_TABLE_AGENTS:
            raise InvalidSpec(f"explicit tables support 1..{MAX_TABLE_AGENTS} agents")
        self.n = n
        self.table: dict[frozenset[int], dict[int, float]] = {}
        for mask in range(1, 1 << n):
            coal = frozenset(i for i in range(n) if mask >> i & 1)
            if coal not in table:
                raise InvalidSpec(f"missing coalition {sorted(coal)}")
            shares = table[coal]
            if set(shares) != coal:
                raise InvalidSpec(f"coalition {sorted(coal)} shares must cover exactly its members")
            CostShareVector(tuple(shares[i] for i in sorted(coal)))
            self.table[coal] = {i: float(shares[i]) for i in sorted(coal)}

    @classmethod
    def from_function(cls, n: int, fn: Callable[[frozenset[int]], dict[int, float]]) -> CostShareSpec:
        table = {}
        for size in range(1, n + 1):
            for members in combinations(range(n), size):
                coal = frozenset(members)
                table[coal] = fn(coal)
        return cls(n, table)

    @classmethod
    def equal_share(cls, n: int) -> CostShareSpec:
        return cls.from_function(n, lambda s: {i: 1.0 / len(s) for i in s})

    @cached_property
    def violations(self) -> list[tuple[frozenset[int], frozenset[int], int]]:
        return validate_spec(self)

    def to_text(self) -> str:
        """One line per coalition: bitmask, then member shares by index."""
        lines = [f"# n={self.n}"]
        for mask in range(1, 1 << self.n):
            coal = frozenset(i for i in range(self.n) if mask >> i & 1)
            shares = " ".join(repr(self.table[coal][i]) for i in sorted(coal))
            lines.append(f"{mask} {shares}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> CostShareSpec:
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        masks = [int(r[0]) for r in rows]
        n = max(masks).bit_length()
        table = {}
        for r, mask in zip(rows, masks):
            members = [i for i in range(n) if mask >> i & 1]
            if len(members) != len(r) - 1:
                raise InvalidSpec(f"row for mask {mask} has wrong share count")
            table[frozenset(members)] = dict(zip(members, map(float, r[1:])))
        return cls(n, table)


def validate_spec(spec: CostShareSpec) -> list[tuple[frozenset[int], frozenset[int], int]]:
    """Monotonicity violations as ``(S, T, i)`` with ``S = T - {j}``.

    A violation for some ``S`` strictly inside ``T`` implies one along any
    chain of single removals between them, so checking single removals is
    enough to decide validity.
    """
    bad = []
    for big, shares in spec.table.items():
        if len(big) < 2:
            continue
        for j in big:
            small = big - {j}
            for i in small:
                if spec.table[small][i] < shares[i] - BUDGET_TOL:
                    bad.append((small, big, i))
    return bad


def largest_unanimous(profile: Sequence[float], spec: CostShareSpec) -> BinaryOutcome:
    n = len(profile)
    if spec.n != n:
        raise InvalidSpec("spec size differs from profile length")
    if spec.violations:
        raise InvalidSpec(f"{len(spec.violations)} monotonicity violations")
    coal = frozenset(range(n))
    while coal:
        shares = spec.table[coal]
        drop = {i for i in coal if profile[i] < shares[i]}
        if not drop:
            pays = tuple(shares.get(i, 0.0) for i in range(n))
            return BinaryOutcome(True, coal, pays)
        coal = coal - drop
    return BinaryOutcome.not_built(n)


def batch_outcomes(values: np.ndarray, mechanism: str) -> tuple[np.ndarray, np.ndarray]:
    """Consumer mask and payments for many profiles at once.

    Supports ``"cec"`` and ``"scs"``; mirrors the scalar functions above.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[1]
    if mechanism == "cec":
        built = (v >= 1.0 / n).all(axis=1)
        mask = np.repeat(built[:, None], n, axis=1)
        return mask, mask / n
    if mechanism == "scs":
        k = scs_consumer_counts(v)
        order = np.argsort(-v, axis=1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(n)[None, :].repeat(len(v), 0), axis=1)
        mask = ranks < k[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            pay = np.where(mask, 1.0 / np.maximum(k, 1)[:, None], 0.0)
        return mask, pay
    raise ValueError(f"no batch form for {mechanism!r}")


def batch_objectives(values: np.ndarray, mechanism: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-profile (consumer count, welfare) for a batch mechanism."""
    mask, pay = batch_outcomes(values, mechanism)
    return mask.sum(axis=1).astype(float), ((values - pay) * mask).sum(axis=1)
