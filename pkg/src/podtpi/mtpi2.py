"""Complete-data mTPI-2 decision engine.

The unit interval is partitioned into an equivalence interval around the
target DLT probability plus equal-width underdosing and overdosing
sub-intervals.  Each sub-interval is a candidate model with a uniform model
prior and a truncated Beta(1, 1) prior for the DLT probability inside it; the
dose decision escalates, stays or de-escalates according to which band the
maximum-posterior model falls in.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from functools import lru_cache

from scipy.special import betainc, betaincc

from .core import Decision

_EDGE_EPS = 1e-9
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Model:
    """One candidate interval: label like ``U2``/``E``/``O1`` plus bounds."""

    label: str
    lo: float
    hi: float
    decision: Decision

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class IntervalPartition:
    """Equivalence interval plus under/over sub-intervals covering [0, 1].

    ``under`` is ordered walking down from the equivalence interval towards 0,
    ``over`` walking up towards 1.  All pieces have width ``eps1 + eps2``
    except the two that may be truncated at the boundaries.
    """

    p_t: float
    eps1: float
    eps2: float
    ei: tuple[float, float]
    under: tuple[tuple[float, float], ...]
    over: tuple[tuple[float, float], ...]

    @property
    def k1(self) -> int:
        return len(self.under)

    @property
    def k2(self) -> int:
        return len(self.over)

    @property
    def models(self) -> tuple[Model, ...]:
        ms = [
            Model(f"U{i + 1}", lo, hi, Decision.ESCALATE)
            for i, (lo, hi) in enumerate(self.under)
        ]
        ms.append(Model("E", self.ei[0], self.ei[1], Decision.STAY))
        ms.extend(
            Model(f"O{i + 1}", lo, hi, Decision.DE_ESCALATE)
            for i, (lo, hi) in enumerate(self.over)
        )
        return tuple(ms)

    def classify(self, p: float) -> Decision:
        """Band membership of a probability: EI closed, I_U = [0, p_t - eps1),
        I_O = (p_t + eps2, 1]."""
        if p < self.p_t - self.eps1:
            return Decision.ESCALATE
        if p > self.p_t + self.eps2:
            return Decision.DE_ESCALATE
        return Decision.STAY


def build_partition(p_t: float, eps1: float, eps2: float) -> IntervalPartition:
    if not 0.0 < p_t - eps1:
        raise ValueError("equivalence interval must lie strictly inside (0, 1)")
    if not p_t + eps2 < 1.0:
        raise ValueError("equivalence interval must lie strictly inside (0, 1)")
    width = eps1 + eps2
    under = []
    hi = p_t - eps1
    while hi > _EDGE_EPS:
        lo = max(0.0, hi - width)
        under.append((lo, hi))
        hi = lo
    over = []
    lo = p_t + eps2
    while lo < 1.0 - _EDGE_EPS:
        hi = min(1.0, lo + width)
        over.append((lo, hi))
        lo = hi
    return IntervalPartition(p_t, eps1, eps2, (p_t - eps1, p_t + eps2), tuple(under), tuple(over))


@dataclass(frozen=True)
class ModelPosterior:
    """Posterior probability of each candidate model, in partition order
    (U1..U_K1, E, O1..O_K2)."""

    probs: tuple[float, ...]

    def argmax_set(self, tol: float = _TIE_TOL) -> tuple[int, ...]:
        top = max(self.probs)
        return tuple(j for j, p in enumerate(self.probs) if p >= top - tol)


def model_posterior(n: int, m: int, part: IntervalPartition) -> ModelPosterior:
    """Posterior over candidate models given n DLTs and m non-DLTs.

    Each model contributes mass proportional to the average of the binomial
    likelihood over its interval, i.e. the difference of regularized
    incomplete beta values divided by the interval length (the uniform model
    prior and the complete beta factor are common and cancel).
    """
    if n < 0 or m < 0:
        raise ValueError("counts must be non-negative")
    a, b = n + 1, m + 1
    raw = []
    for mod in part.models:
        if mod.length <= 0:
            raise ValueError(f"degenerate interval {mod.label}")
        mass = betainc(a, b, mod.hi) - betainc(a, b, mod.lo)
        raw.append(max(mass, 0.0) / mod.length)
    total = sum(raw)
    return ModelPosterior(tuple(u / total for u in raw))


@lru_cache(maxsize=262144)
def _decide_cached(n: int, m: int, part: IntervalPartition) -> Decision:
    post = model_posterior(n, m, part)
    models = part.models
    best = min(models[j].decision for j in post.argmax_set())
    return Decision(best)


def decide(n: int, m: int, part: IntervalPartition) -> Decision:
    """The mTPI-2 decision A(n, m): escalate on an underdosing winner, stay on
    the equivalence interval, de-escalate on an overdosing winner.  Posterior
    ties break toward the safer decision (-1 before 0 before +1)."""
    if n < 0 or m < 0:
        raise ValueError("counts must be non-negative")
    return _decide_cached(n, m, part)


_DECISION_CODES = {Decision.DE_ESCALATE: "D", Decision.STAY: "S", Decision.ESCALATE: "E"}


@dataclass(frozen=True, eq=False)
class DecisionTable:
    """Decisions A(n, m) pre-tabulated for all 1 <= n + m <= n_max."""

    partition: IntervalPartition
    n_max: int
    entries: dict

    def decision(self, n: int, m: int) -> Decision:
        key = (n, m)
        if key in self.entries:
            return self.entries[key]
        return decide(n, m, self.partition)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(["n", "m", "decision"])
        for n, m in sorted(self.entries, key=lambda nm: (nm[0] + nm[1], nm[0])):
            writer.writerow([n, m, _DECISION_CODES[self.entries[(n, m)]]])
        return buf.getvalue()


def decision_table(part: IntervalPartition, n_max: int) -> DecisionTable:
    """Tabulate the decision rule for every reachable tally with at least one
    treated patient.  (0, 0) is omitted: the first cohort is always treated
    before any decision, so that cell never occurs in the trial flow."""
    entries = {}
    for total in range(1, n_max + 1):
        for n in range(total + 1):
            entries[(n, total - n)] = decide(n, total - n, part)
    return DecisionTable(part, n_max, entries)


def prob_exceeds_target(n: int, m: int, p_t: float) -> float:
    """Pr(p > p_t) under a Beta(1 + n, 1 + m) posterior (Beta(1, 1) prior) —
    the quantity the safety rules threshold."""
    if n < 0 or m < 0:
        raise ValueError("counts must be non-negative")
    if not 0.0 < p_t < 1.0:
        raise ValueError("p_t must lie in (0, 1)")
    return float(betaincc(n + 1, m + 1, p_t))
