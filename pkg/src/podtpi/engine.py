"""PoD-TPI decision state machine.

Turns a decision distribution into an executable recommendation (assign,
suspend, or terminate), applying the suspension thresholds pi_E / pi_D, the
no-clean-patient escalation guard, boundary and exclusion clamping, and the
two running safety rules with re-inclusion.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Literal

from . import mtpi2, toxmodel
from .core import (
    Decision,
    DoseTally,
    Event,
    TrialError,
    TrialState,
    TrialStatus,
    apply_event,
    tally,
)
from .mtpi2 import DecisionTable, IntervalPartition
from .toxmodel import DecisionDistribution, MCMCConfig, SPosterior, ToxData

RULE_ESCALATION_CONFIDENCE = "escalation-confidence"
RULE_M_ZERO = "m_d-zero"
RULE_DE_ESCALATION_RISK = "de-escalation-risk"
RULE_LOWEST_PENDING = "lowest-dose-safety-pending"
RULE_PENDING_OUTCOMES = "pending-outcomes"
RULE_SAFETY_1 = "safety-rule-1"
RULE_SAFETY_2 = "safety-rule-2"


@dataclass(frozen=True)
class Recommendation:
    """``dist`` is absent for safety-driven terminations/suspensions and for
    the complete-data baseline's wait-for-outcomes suspension."""

    kind: Literal["assign", "suspend", "terminate"]
    dose: int | None
    reason: str | None
    dist: DecisionDistribution | None
    triggered_rules: tuple[str, ...] = ()

    @property
    def a_star(self) -> Decision | None:
        return None if self.dist is None else self.dist.a_star


@dataclass(frozen=True)
class SafetyAssessment:
    """Exclusions recomputed from scratch from the observed outcomes."""

    excluded: frozenset[int]
    terminate: bool
    suspend_lowest: bool
    triggered: tuple[str, ...]


def assess_safety(state: TrialState) -> SafetyAssessment:
    """Safety rule 2 excludes the lowest dose whose observed outcomes put
    Pr(p_d > p_T) above the cutoff (given enough evaluated patients) together
    with every higher dose.  At dose 1 this is safety rule 1: terminate, or
    suspend while dose-1 outcomes are still pending."""
    params = state.params
    first_bad = None
    for d in range(1, params.n_doses + 1):
        t = tally(state, d)
        if t.n + t.m >= params.safety_min_n and (
            mtpi2.prob_exceeds_target(t.n, t.m, params.p_t) > params.safety_cutoff
        ):
            first_bad = d
            break
    if first_bad is None:
        return SafetyAssessment(frozenset(), False, False, ())
    excluded = frozenset(range(first_bad, params.n_doses + 1))
    if first_bad == 1:
        if tally(state, 1).r > 0:
            return SafetyAssessment(excluded, False, True, (RULE_SAFETY_1,))
        return SafetyAssessment(excluded, True, False, (RULE_SAFETY_1,))
    return SafetyAssessment(excluded, False, False, (RULE_SAFETY_2,))


def apply_safety_rules(state: TrialState) -> TrialState:
    """Refresh exclusions and the safety-driven status transitions.  Doses are
    re-included automatically when the data no longer violate the rule."""
    assessment = assess_safety(state)
    status = state.status
    reason = state.suspend_reason
    if status in (TrialStatus.TERMINATED_UNSAFE, TrialStatus.COMPLETED):
        return dataclasses.replace(state, excluded_doses=assessment.excluded)
    if assessment.terminate:
        status, reason = TrialStatus.TERMINATED_UNSAFE, None
    elif assessment.suspend_lowest:
        status, reason = TrialStatus.SUSPENDED, RULE_LOWEST_PENDING
    elif status is TrialStatus.SUSPENDED and reason == RULE_LOWEST_PENDING:
        status, reason = TrialStatus.ENROLLING, None
    return dataclasses.replace(
        state, excluded_doses=assessment.excluded, status=status, suspend_reason=reason
    )


def point_mass_distribution(decision: Decision) -> DecisionDistribution:
    gamma = {a: 1.0 if a == int(decision) else 0.0 for a in (-1, 0, 1)}
    return DecisionDistribution(gamma, decision, (decision,))


def compute_distribution(
    state: TrialState,
    table: DecisionTable,
    mcmc: MCMCConfig | None = None,
    skip_mcmc_when_unanimous: bool = False,
) -> tuple[DecisionDistribution, SPosterior, dict]:
    """PoD at the current dose.  With no pending outcome this is a point mass
    on the complete-data decision and needs no sampling.  When every possible
    pending resolution maps to the same decision the distribution is a point
    mass regardless of the posterior, so the sampler can optionally be
    skipped."""
    d = state.current_dose
    t = tally(state, d)
    meta: dict = {"n_draws": 0, "seed": None}
    if t.r == 0:
        decision = table.decision(t.n, t.m)
        return point_mass_distribution(decision), SPosterior((1.0,)), meta
    s_decisions = tuple(
        table.decision(t.n + s, t.m + t.r - s) for s in range(t.r + 1)
    )
    if skip_mcmc_when_unanimous and len(set(s_decisions)) == 1:
        dist = DecisionDistribution(
            {a: 1.0 if a == int(s_decisions[0]) else 0.0 for a in (-1, 0, 1)},
            s_decisions[0],
            s_decisions,
        )
        return dist, SPosterior((math.nan,) * (t.r + 1)), meta
    mcmc = mcmc or MCMCConfig()
    data = ToxData.from_state(state)
    draws = toxmodel.sample_posterior(data, state.params.theta, state.params.eta, mcmc)
    s_post = toxmodel.s_posterior(draws, d, t.follow_ups, data.grid)
    dist = toxmodel.pod(s_post, t.n, t.m, t.r, table.decision)
    meta = {"n_draws": draws.n_draws, "seed": mcmc.seed, "mcmc": draws.meta}
    return dist, s_post, meta


def _clamp_assignment(state: TrialState, target: int) -> int:
    """Range first, then exclusions: an escalation into an excluded dose falls
    back to stay, and a stay on an excluded dose de-escalates to the highest
    allowed lower dose."""
    d = state.current_dose
    target = max(1, min(state.params.n_doses, target))
    if target in state.excluded_doses and target > d:
        target = d
    while target >= 1 and target in state.excluded_doses:
        target -= 1
    if target < 1:
        raise TrialError("no allowable dose at or below the current dose")
    return target


def recommend(state: TrialState, dist: DecisionDistribution) -> Recommendation:
    """Dose-assignment rule given the PoD at the current dose.

    With pending outcomes: an optimal escalation needs PoD at least pi_E and a
    fully evaluated non-DLT at the current dose; an optimal stay must carry a
    de-escalation PoD of at most pi_D; de-escalation always executes.
    """
    if state.status not in (TrialStatus.ENROLLING, TrialStatus.SUSPENDED):
        raise TrialError(f"no recommendation for a {state.status.value} trial")
    total = sum(dist.gamma.values())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"decision distribution is not normalized (sum={total})")
    params = state.params
    d = state.current_dose
    t = tally(state, d)
    if t.r == 0:
        dose = _clamp_assignment(state, d + int(dist.a_star))
        return Recommendation("assign", dose, None, dist)
    a = dist.a_star
    if a is Decision.ESCALATE:
        rules = []
        if dist.gamma[1] < params.pi_e:
            rules.append(RULE_ESCALATION_CONFIDENCE)
        if t.m == 0:
            rules.append(RULE_M_ZERO)
        if rules:
            return Recommendation("suspend", None, rules[0], dist, tuple(rules))
        return Recommendation("assign", _clamp_assignment(state, d + 1), None, dist)
    if a is Decision.STAY:
        if dist.gamma[-1] > params.pi_d:
            return Recommendation(
                "suspend", None, RULE_DE_ESCALATION_RISK, dist, (RULE_DE_ESCALATION_RISK,)
            )
        return Recommendation("assign", _clamp_assignment(state, d), None, dist)
    return Recommendation("assign", _clamp_assignment(state, d - 1), None, dist)


def step_trial(
    state: TrialState,
    recommendation: Recommendation,
    arrival_time: float,
    patient_id: int | None = None,
) -> TrialState:
    """Fold one arriving patient: enroll at the recommended dose, or advance
    the clock and mark the trial suspended (the arrival is turned away)."""
    if state.status in (TrialStatus.TERMINATED_UNSAFE, TrialStatus.COMPLETED):
        raise TrialError(f"cannot enroll in a {state.status.value} trial")
    if recommendation.kind == "terminate":
        state = apply_event(state, Event.clock_advance(arrival_time))
        return dataclasses.replace(
            state, status=TrialStatus.TERMINATED_UNSAFE, suspend_reason=None
        )
    if recommendation.kind == "suspend":
        state = apply_event(state, Event.clock_advance(arrival_time))
        return dataclasses.replace(
            state, status=TrialStatus.SUSPENDED, suspend_reason=recommendation.reason
        )
    if recommendation.dose in state.excluded_doses:
        raise TrialError(f"dose {recommendation.dose} is excluded by safety rule 2")
    pid = patient_id if patient_id is not None else state.n_enrolled + 1
    return apply_event(
        state, Event.enrollment(arrival_time, pid, recommendation.dose)
    )


@dataclass(frozen=True)
class DecisionRecord:
    """Structured audit record emitted at every decision point."""

    time: float
    dose: int
    n: int
    m: int
    r: int
    follow_ups: tuple[float, ...]
    gamma: dict | None
    a_star: int | None
    action: str
    assigned_dose: int | None
    rules: tuple[str, ...]
    s_pmf: tuple[float, ...] | None = None
    s_decisions: tuple[int, ...] | None = None
    pending_ids: tuple[int, ...] = ()
    seed: object = None
    n_draws: int = 0

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "dose": self.dose,
            "n": self.n,
            "m": self.m,
            "r": self.r,
            "follow_ups": list(self.follow_ups),
            "gamma": None
            if self.gamma is None
            else {str(a): g for a, g in self.gamma.items()},
            "a_star": self.a_star,
            "action": self.action,
            "assigned_dose": self.assigned_dose,
            "rules": list(self.rules),
            "s_pmf": None if self.s_pmf is None else list(self.s_pmf),
            "s_decisions": None
            if self.s_decisions is None
            else [int(x) for x in self.s_decisions],
            "pending_ids": list(self.pending_ids),
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "n_draws": self.n_draws,
        }


def make_record(
    state: TrialState,
    tall: DoseTally,
    rec: Recommendation,
    s_post: SPosterior | None,
    meta: dict,
    time: float,
) -> DecisionRecord:
    s_pmf = None
    if s_post is not None and not any(math.isnan(x) for x in s_post.pmf):
        s_pmf = s_post.pmf
    return DecisionRecord(
        time=time,
        dose=state.current_dose,
        n=tall.n,
        m=tall.m,
        r=tall.r,
        follow_ups=tall.follow_ups,
        gamma=None if rec.dist is None else dict(rec.dist.gamma),
        a_star=None if rec.a_star is None else int(rec.a_star),
        action=rec.kind,
        assigned_dose=rec.dose,
        rules=rec.triggered_rules,
        s_pmf=s_pmf,
        s_decisions=None
        if rec.dist is None
        else tuple(int(x) for x in rec.dist.s_decisions),
        pending_ids=state.pending_ids(state.current_dose),
        seed=meta.get("seed"),
        n_draws=meta.get("n_draws", 0),
    )


def decision_point(
    state: TrialState,
    table: DecisionTable,
    mcmc: MCMCConfig | None = None,
    seed: object = None,
    skip_mcmc_when_unanimous: bool = False,
    require_complete: bool = False,
) -> tuple[TrialState, Recommendation, DecisionRecord]:
    """One full decision evaluation: refresh the safety rules, then either
    stop/wait on their account, or compute the PoD and apply the assignment
    rule.  ``require_complete`` turns the engine into the complete-data
    baseline, which waits until the current dose has no pending outcome.
    ``seed`` overrides the MCMC seed so campaigns can derive one per decision.
    """
    state = apply_safety_rules(state)
    t = tally(state, state.current_dose)
    meta: dict = {"n_draws": 0, "seed": None}
    if state.status is TrialStatus.TERMINATED_UNSAFE:
        rec = Recommendation("terminate", None, RULE_SAFETY_1, None, (RULE_SAFETY_1,))
        return state, rec, make_record(state, t, rec, None, meta, state.clock)
    if state.status is TrialStatus.SUSPENDED and state.suspend_reason == RULE_LOWEST_PENDING:
        rec = Recommendation(
            "suspend", None, RULE_LOWEST_PENDING, None, (RULE_SAFETY_1, RULE_LOWEST_PENDING)
        )
        return state, rec, make_record(state, t, rec, None, meta, state.clock)
    if require_complete and t.r > 0:
        rec = Recommendation(
            "suspend", None, RULE_PENDING_OUTCOMES, None, (RULE_PENDING_OUTCOMES,)
        )
        return state, rec, make_record(state, t, rec, None, meta, state.clock)
    if mcmc is not None and seed is not None:
        mcmc = dataclasses.replace(mcmc, seed=seed)
    elif seed is not None:
        mcmc = MCMCConfig(seed=seed)
    dist, s_post, meta = compute_distribution(
        state, table, mcmc, skip_mcmc_when_unanimous=skip_mcmc_when_unanimous
    )
    rec = recommend(state, dist)
    return state, rec, make_record(state, t, rec, s_post, meta, state.clock)


def make_table(params, n_max: int | None = None) -> DecisionTable:
    part = mtpi2.build_partition(params.p_t, params.eps1, params.eps2)
    return mtpi2.decision_table(part, n_max if n_max is not None else params.max_n)


def partition_of(params) -> IntervalPartition:
    return mtpi2.build_partition(params.p_t, params.eps1, params.eps2)
