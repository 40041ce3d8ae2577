"""End-of-trial MTD selection.

Posterior means of the per-dose DLT probabilities are projected onto the
monotone cone by weighted isotonic regression (pooled adjacent violators,
weights inverse posterior variance), then the selection rule picks the fitted
dose closest to the target, preferring equivalence-interval members, breaking
ties toward doses at or below the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import engine
from .core import OutcomeStatus, TrialState, TrialStatus, tally
from .mtpi2 import IntervalPartition

_MONO_TOL = 1e-9


def posterior_mean_var(
    n: int, m: int, theta1: float = 1.0, theta2: float = 1.0
) -> tuple[float, float]:
    """Moments of Beta(theta1 + n, theta2 + m)."""
    if theta1 <= 0 or theta2 <= 0:
        raise ValueError("hyperparameters must be positive")
    a, b = theta1 + n, theta2 + m
    mean = a / (a + b)
    var = a * b / ((a + b) ** 2 * (a + b + 1))
    return mean, var


@dataclass(frozen=True)
class IsotonicFit:
    values: tuple[float, ...]
    weights: tuple[float, ...]
    p_hat: tuple[float, ...]
    blocks: tuple[tuple[int, int], ...]


def pava(values: Sequence[float], weights: Sequence[float]) -> IsotonicFit:
    """Weighted least-squares projection onto non-decreasing sequences via
    pooled adjacent violators."""
    if len(values) != len(weights) or len(values) == 0:
        raise ValueError("values and weights must have equal positive length")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    # blocks: [start, end, weight sum, weighted mean]
    blocks: list[list] = []
    for i, (v, wt) in enumerate(zip(values, weights)):
        blocks.append([i, i, float(wt), float(v)])
        while len(blocks) > 1 and blocks[-2][3] > blocks[-1][3]:
            lo = blocks.pop(-2)
            hi = blocks[-1]
            wsum = lo[2] + hi[2]
            mean = (lo[2] * lo[3] + hi[2] * hi[3]) / wsum
            blocks[-1] = [lo[0], hi[1], wsum, mean]
    p_hat: list[float] = []
    for start, end, _, mean in blocks:
        p_hat.extend([mean] * (end - start + 1))
    return IsotonicFit(
        tuple(float(v) for v in values),
        tuple(float(w) for w in weights),
        tuple(p_hat),
        tuple((b[0], b[1]) for b in blocks),
    )


def select_mtd(
    p_hat: Sequence[float], part: IntervalPartition
) -> tuple[int | None, str]:
    """Selection rule on monotone estimates: returns (dose index or None,
    which branch fired).

    Prefer doses inside the equivalence interval; with none, take the highest
    underdosing dose (or nothing).  With several, take the one closest to the
    target, resolving distance ties toward the highest dose at or below the
    target, else the lowest tied dose.
    """
    if any(p_hat[i] > p_hat[i + 1] + _MONO_TOL for i in range(len(p_hat) - 1)):
        raise ValueError("p_hat must be non-decreasing")
    p_t = part.p_t
    in_ei = [d for d, p in enumerate(p_hat, start=1) if part.ei[0] <= p <= part.ei[1]]
    if not in_ei:
        under = [d for d, p in enumerate(p_hat, start=1) if p < part.ei[0]]
        if under:
            return max(under), "highest-underdosing"
        return None, "all-overdosing"
    if len(in_ei) == 1:
        return in_ei[0], "single-equivalence"
    dist = {d: abs(p_hat[d - 1] - p_t) for d in in_ei}
    best = min(dist.values())
    closest = [d for d in in_ei if dist[d] <= best + _MONO_TOL]
    if len(closest) == 1:
        return closest[0], "closest-equivalence"
    at_or_below = [d for d in closest if part.ei[0] <= p_hat[d - 1] <= p_t]
    if at_or_below:
        return max(at_or_below), "tie-highest-at-or-below-target"
    return min(closest), "tie-lowest"


@dataclass(frozen=True)
class MtdReport:
    selected: int | None
    branch: str
    doses: tuple[int, ...]
    p_tilde: tuple[float, ...]
    nu: tuple[float, ...]
    p_hat: tuple[float, ...]
    excluded: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "branch": self.branch,
            "doses": list(self.doses),
            "p_tilde": list(self.p_tilde),
            "nu": list(self.nu),
            "p_hat": list(self.p_hat),
            "excluded": list(self.excluded),
        }


def finalize(
    state: TrialState, estimate_prior: tuple[float, float] = (1.0, 1.0)
) -> MtdReport:
    """MTD report once every outcome is definitive.

    Safety-terminated trials select nothing.  Only treated doses enter the
    isotonic fit (a prior-only Beta mean of 0.5 would distort it), and doses
    still excluded on complete data are not selectable.  The recommended dose
    for the last patient need not equal the selected MTD.

    ``estimate_prior`` is the Beta prior behind the isotonic estimates.  The
    default uniform prior pulls small-count means toward 0.5, which depresses
    correct selection at low targets; pass something like (0.005, 0.005) for
    near-relative-frequency estimates.
    """
    if state.status is TrialStatus.TERMINATED_UNSAFE:
        return MtdReport(None, "terminated", (), (), (), (), ())
    if any(p.status is OutcomeStatus.PENDING for p in state.patients):
        raise ValueError("pending outcomes remain; finalize requires complete data")
    params = state.params
    assessment = engine.assess_safety(state)
    if assessment.terminate:
        return MtdReport(
            None, "terminated", (), (), (), (), tuple(sorted(assessment.excluded))
        )
    treated = []
    p_tilde = []
    nu = []
    for d in range(1, params.n_doses + 1):
        t = tally(state, d)
        if t.n + t.m == 0:
            continue
        mean, var = posterior_mean_var(t.n, t.m, *estimate_prior)
        treated.append(d)
        p_tilde.append(mean)
        nu.append(var)
    if not treated:
        return MtdReport(None, "no-data", (), (), (), (), ())
    fit = pava(p_tilde, [1.0 / v for v in nu])
    part = engine.partition_of(params)
    allowed = [
        (d, p)
        for d, p in zip(treated, fit.p_hat)
        if d not in assessment.excluded
    ]
    if not allowed:
        return MtdReport(
            None,
            "all-excluded",
            tuple(treated),
            tuple(p_tilde),
            tuple(nu),
            fit.p_hat,
            tuple(sorted(assessment.excluded)),
        )
    idx, branch = select_mtd([p for _, p in allowed], part)
    selected = None if idx is None else allowed[idx - 1][0]
    return MtdReport(
        selected,
        branch,
        tuple(treated),
        tuple(p_tilde),
        tuple(nu),
        fit.p_hat,
        tuple(sorted(assessment.excluded)),
    )
