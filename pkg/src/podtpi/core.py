"""Trial-state bookkeeping shared by the decision engine, simulator and service.

A trial is an append-only log of timestamped events (enrollments, observed
DLTs, completed assessments, clock advances).  ``TrialState`` is an immutable
value obtained by folding events in order; per-dose tallies of observed DLTs,
observed non-DLTs and pending patients are derived views.  Follow-up times are
computed lazily from the trial clock so they can never go stale.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import IO, Iterable

_TIME_EPS = 1e-9


class Decision(IntEnum):
    """Dose-assignment decision relative to the current dose."""

    DE_ESCALATE = -1
    STAY = 0
    ESCALATE = 1


class TrialError(ValueError):
    """Base class for trial bookkeeping errors."""


class ChronologyError(TrialError):
    """Event conflicts with the trial history (out of order, already resolved)."""


class PayloadError(TrialError):
    """Event is malformed or references entities that do not exist."""


@dataclass(frozen=True)
class DesignParams:
    """Every tunable of the design.

    ``theta`` holds one Beta prior pair per dose and ``eta`` the Dirichlet
    weights over the ``k`` assessment sub-intervals; both default to all ones.
    """

    p_t: float
    n_doses: int
    max_n: int
    eps1: float = 0.05
    eps2: float = 0.05
    tau: float = 28.0
    k: int = 3
    pi_e: float = 1.0
    pi_d: float = 0.15
    theta: tuple[tuple[float, float], ...] | None = None
    eta: tuple[float, ...] | None = None
    cohort_size: int = 3
    start_dose: int = 1
    safety_cutoff: float = 0.95
    safety_min_n: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.p_t - self.eps1:
            raise ValueError("p_t - eps1 must be positive")
        if not self.p_t + self.eps2 < 1.0:
            raise ValueError("p_t + eps2 must be below 1")
        if self.tau <= 0.0:
            raise ValueError("assessment window tau must be positive")
        if self.k < 1:
            raise ValueError("number of time sub-intervals k must be >= 1")
        if not 0.33 <= self.pi_e <= 1.0:
            raise ValueError("pi_e must lie in [0.33, 1]")
        if not 0.0 <= self.pi_d <= 0.5:
            raise ValueError("pi_d must lie in [0, 0.5]")
        if self.n_doses < 1:
            raise ValueError("need at least one dose")
        if self.cohort_size < 1:
            raise ValueError("cohort_size must be >= 1")
        if self.max_n < self.cohort_size:
            raise ValueError("max_n must be at least one cohort")
        if not 1 <= self.start_dose <= self.n_doses:
            raise ValueError("start_dose out of range")
        if self.theta is None:
            object.__setattr__(self, "theta", ((1.0, 1.0),) * self.n_doses)
        else:
            object.__setattr__(
                self, "theta", tuple((float(a), float(b)) for a, b in self.theta)
            )
        if self.eta is None:
            object.__setattr__(self, "eta", (1.0,) * self.k)
        else:
            object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))
        if len(self.theta) != self.n_doses:
            raise ValueError("theta needs one (a, b) pair per dose")
        if len(self.eta) != self.k:
            raise ValueError("eta needs one weight per time sub-interval")
        if any(a <= 0 or b <= 0 for a, b in self.theta) or any(
            e <= 0 for e in self.eta
        ):
            raise ValueError("prior hyperparameters must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["theta"] = [list(pair) for pair in self.theta]
        d["eta"] = list(self.eta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DesignParams":
        kwargs = dict(d)
        if kwargs.get("theta") is not None:
            kwargs["theta"] = tuple(tuple(pair) for pair in kwargs["theta"])
        if kwargs.get("eta") is not None:
            kwargs["eta"] = tuple(kwargs["eta"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise PayloadError(f"unknown design parameters: {sorted(unknown)}")
        return cls(**kwargs)


class EventType(str, Enum):
    ENROLLMENT = "enrollment"
    DLT_OBSERVED = "dlt_observed"
    ASSESSMENT_COMPLETED = "assessment_completed"
    CLOCK_ADVANCE = "clock_advance"


@dataclass(frozen=True)
class Event:
    """One timestamped trial event.

    ``time`` is days since trial start.  For ``dlt_observed``, ``dlt_time`` is
    the time to DLT measured from that patient's enrollment.
    """

    type: EventType
    time: float
    patient_id: int | None = None
    dose: int | None = None
    dlt_time: float | None = None

    @classmethod
    def enrollment(cls, time: float, patient_id: int, dose: int) -> "Event":
        return cls(EventType.ENROLLMENT, float(time), patient_id, dose)

    @classmethod
    def dlt_observed(cls, time: float, patient_id: int, dlt_time: float) -> "Event":
        return cls(EventType.DLT_OBSERVED, float(time), patient_id, dlt_time=float(dlt_time))

    @classmethod
    def assessment_completed(cls, time: float, patient_id: int) -> "Event":
        return cls(EventType.ASSESSMENT_COMPLETED, float(time), patient_id)

    @classmethod
    def clock_advance(cls, time: float) -> "Event":
        return cls(EventType.CLOCK_ADVANCE, float(time))

    def to_dict(self) -> dict:
        d: dict = {"type": self.type.value, "time": self.time}
        if self.patient_id is not None:
            d["patient_id"] = self.patient_id
        if self.dose is not None:
            d["dose"] = self.dose
        if self.dlt_time is not None:
            d["dlt_time"] = self.dlt_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        if not isinstance(d, dict):
            raise PayloadError("event must be a JSON object")
        try:
            etype = EventType(d["type"])
        except (KeyError, ValueError):
            raise PayloadError(f"unknown event type: {d.get('type')!r}") from None
        if "time" not in d or not isinstance(d["time"], (int, float)):
            raise PayloadError("event requires a numeric 'time'")
        known = {"type", "time", "patient_id", "dose", "dlt_time"}
        unknown = set(d) - known
        if unknown:
            raise PayloadError(f"unknown event fields: {sorted(unknown)}")
        return cls(
            etype,
            float(d["time"]),
            d.get("patient_id"),
            d.get("dose"),
            None if d.get("dlt_time") is None else float(d["dlt_time"]),
        )


class OutcomeStatus(str, Enum):
    PENDING = "pending"
    DLT = "dlt"
    NO_DLT = "no_dlt"


@dataclass(frozen=True)
class PatientRecord:
    id: int
    dose: int
    enroll_time: float
    status: OutcomeStatus = OutcomeStatus.PENDING
    dlt_time: float | None = None

    def follow_up(self, clock: float, tau: float) -> float:
        """Censoring time min(tau, clock - enrollment)."""
        return min(tau, clock - self.enroll_time)

    def to_dict(self, clock: float, tau: float) -> dict:
        d: dict = {
            "id": self.id,
            "dose": self.dose,
            "enroll_time": self.enroll_time,
            "status": self.status.value,
        }
        if self.status is OutcomeStatus.DLT:
            d["dlt_time"] = self.dlt_time
        elif self.status is OutcomeStatus.PENDING:
            d["follow_up"] = self.follow_up(clock, tau)
        return d


class TrialStatus(str, Enum):
    ENROLLING = "enrolling"
    SUSPENDED = "suspended"
    TERMINATED_UNSAFE = "terminated_unsafe"
    COMPLETED = "completed"


@dataclass(frozen=True)
class DoseTally:
    """Observed DLTs / observed non-DLTs / pending count at one dose."""

    n: int
    m: int
    r: int
    follow_ups: tuple[float, ...]

    @property
    def total(self) -> int:
        return self.n + self.m + self.r


@dataclass(frozen=True)
class TrialState:
    """Immutable snapshot of a trial; evolve it with :func:`apply_event`."""

    params: DesignParams
    clock: float = 0.0
    patients: tuple[PatientRecord, ...] = ()
    current_dose: int = 1
    status: TrialStatus = TrialStatus.ENROLLING
    suspend_reason: str | None = None
    excluded_doses: frozenset[int] = frozenset()
    events: tuple[Event, ...] = ()

    @property
    def n_enrolled(self) -> int:
        return len(self.patients)

    def patient(self, patient_id: int) -> PatientRecord | None:
        for p in self.patients:
            if p.id == patient_id:
                return p
        return None

    def pending_ids(self, dose: int | None = None) -> tuple[int, ...]:
        return tuple(
            p.id
            for p in self.patients
            if p.status is OutcomeStatus.PENDING and (dose is None or p.dose == dose)
        )


def new_trial(params: DesignParams) -> TrialState:
    return TrialState(params=params, current_dose=params.start_dose)


def _resolve_expired(patients: tuple[PatientRecord, ...], clock: float, tau: float):
    """Pending patients whose window has closed become definitive non-DLTs."""
    out = []
    for p in patients:
        if p.status is OutcomeStatus.PENDING and clock - p.enroll_time >= tau - _TIME_EPS:
            p = dataclasses.replace(p, status=OutcomeStatus.NO_DLT)
        out.append(p)
    return tuple(out)


def apply_event(state: TrialState, event: Event) -> TrialState:
    """Fold one event into the state, returning a new state.

    Events must be applied in non-decreasing time order; simultaneous events
    are ordered by the caller (convention: by patient id).  After the event is
    folded the clock advances to the event time and any pending patient whose
    follow-up reached ``tau`` resolves to a non-DLT.
    """
    params = state.params
    if event.time < state.clock - _TIME_EPS:
        raise ChronologyError(
            f"event at t={event.time} precedes trial clock t={state.clock}"
        )
    patients = state.patients
    current_dose = state.current_dose
    status = state.status
    suspend_reason = state.suspend_reason

    if event.type is EventType.ENROLLMENT:
        if status in (TrialStatus.TERMINATED_UNSAFE, TrialStatus.COMPLETED):
            raise ChronologyError(f"cannot enroll in a {status.value} trial")
        if event.patient_id is None or event.dose is None:
            raise PayloadError("enrollment requires patient_id and dose")
        if not 1 <= event.dose <= params.n_doses:
            raise PayloadError(f"dose {event.dose} out of range 1..{params.n_doses}")
        if state.patient(event.patient_id) is not None:
            raise ChronologyError(f"patient {event.patient_id} already enrolled")
        patients = patients + (
            PatientRecord(event.patient_id, event.dose, event.time),
        )
        current_dose = event.dose
        if len(patients) >= params.max_n:
            status = TrialStatus.COMPLETED
        else:
            status = TrialStatus.ENROLLING
        suspend_reason = None

    elif event.type is EventType.DLT_OBSERVED:
        if event.patient_id is None or event.dlt_time is None:
            raise PayloadError("dlt_observed requires patient_id and dlt_time")
        rec = state.patient(event.patient_id)
        if rec is None:
            raise PayloadError(f"unknown patient {event.patient_id}")
        if rec.status is not OutcomeStatus.PENDING:
            raise ChronologyError(
                f"patient {event.patient_id} already resolved ({rec.status.value})"
            )
        if not 0.0 < event.dlt_time <= params.tau + _TIME_EPS:
            raise PayloadError(f"dlt_time must lie in (0, tau={params.tau}]")
        if rec.enroll_time + event.dlt_time > event.time + _TIME_EPS:
            raise PayloadError("DLT reported before it occurred")
        patients = tuple(
            dataclasses.replace(
                p, status=OutcomeStatus.DLT, dlt_time=min(event.dlt_time, params.tau)
            )
            if p.id == event.patient_id
            else p
            for p in patients
        )

    elif event.type is EventType.ASSESSMENT_COMPLETED:
        if event.patient_id is None:
            raise PayloadError("assessment_completed requires patient_id")
        rec = state.patient(event.patient_id)
        if rec is None:
            raise PayloadError(f"unknown patient {event.patient_id}")
        if rec.status is OutcomeStatus.DLT:
            raise ChronologyError(
                f"patient {event.patient_id} already resolved as DLT"
            )
        if event.time - rec.enroll_time < params.tau - _TIME_EPS:
            raise PayloadError("assessment window not finished yet")
        patients = tuple(
            dataclasses.replace(p, status=OutcomeStatus.NO_DLT)
            if p.id == event.patient_id
            else p
            for p in patients
        )

    elif event.type is not EventType.CLOCK_ADVANCE:  # pragma: no cover
        raise PayloadError(f"unhandled event type {event.type}")

    clock = max(state.clock, event.time)
    patients = _resolve_expired(patients, clock, params.tau)
    return dataclasses.replace(
        state,
        clock=clock,
        patients=patients,
        current_dose=current_dose,
        status=status,
        suspend_reason=suspend_reason,
        events=state.events + (event,),
    )


def tally(state: TrialState, dose: int) -> DoseTally:
    """Counts (n, m, r) and pending follow-up times at one dose."""
    if not 1 <= dose <= state.params.n_doses:
        raise PayloadError(f"dose {dose} out of range 1..{state.params.n_doses}")
    n = m = r = 0
    follow_ups = []
    tau = state.params.tau
    for p in state.patients:
        if p.dose != dose:
            continue
        if p.status is OutcomeStatus.DLT:
            n += 1
        elif p.status is OutcomeStatus.NO_DLT:
            m += 1
        else:
            r += 1
            follow_ups.append(p.follow_up(state.clock, tau))
    return DoseTally(n, m, r, tuple(follow_ups))


def all_tallies(state: TrialState) -> tuple[DoseTally, ...]:
    return tuple(tally(state, d) for d in range(1, state.params.n_doses + 1))


def replay(params: DesignParams, events: Iterable[Event]) -> TrialState:
    state = new_trial(params)
    for event in events:
        state = apply_event(state, event)
    return state


def write_event_log(events: Iterable[Event], fp: IO[str]) -> None:
    """JSON lines, one event per line."""
    for event in events:
        fp.write(json.dumps(event.to_dict()) + "\n")


def read_event_log(fp: IO[str]) -> list[Event]:
    events = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        events.append(Event.from_dict(json.loads(line)))
    return events
