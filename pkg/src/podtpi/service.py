"""Trial-conduct HTTP service.

Each trial is an append-only JSON-lines event log on disk plus its design
parameters; snapshots are rebuilt by replay, so the store is crash-safe by
construction.  Recommendations are recomputed on demand with a fresh recorded
seed (so any number shown to an investigator can be re-derived) and appended
to a per-trial audit log.  What-if queries evaluate hypothetical resolutions
of pending patients without touching persisted state.

Endpoints: POST /trials, POST /trials/{id}/events, GET /trials/{id}/state,
GET /trials/{id}/recommendation, POST /trials/{id}/whatif.  Error codes:
404 unknown trial, 409 events conflicting with the history or a finished
trial, 422 malformed payloads.
"""

from __future__ import annotations

import dataclasses
import json
import secrets
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import engine, mtdselect
from .core import (
    ChronologyError,
    DesignParams,
    Event,
    OutcomeStatus,
    PayloadError,
    TrialState,
    TrialStatus,
    all_tallies,
    apply_event,
    new_trial,
)
from .toxmodel import MCMCConfig


class UnknownTrial(KeyError):
    pass


@dataclass
class Session:
    trial_id: str
    params: DesignParams
    state: TrialState
    audit: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class TrialStore:
    """One directory per trial: params.json + events.jsonl + audit.jsonl."""

    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        for params_file in self.root.glob("*/params.json"):
            self._load(params_file.parent)

    def _load(self, trial_dir: Path) -> None:
        trial_id = trial_dir.name
        params = DesignParams.from_dict(json.loads((trial_dir / "params.json").read_text()))
        state = new_trial(params)
        events_file = trial_dir / "events.jsonl"
        if events_file.exists():
            with events_file.open() as fp:
                for line in fp:
                    if line.strip():
                        state = apply_event(state, Event.from_dict(json.loads(line)))
        audit = []
        audit_file = trial_dir / "audit.jsonl"
        if audit_file.exists():
            with audit_file.open() as fp:
                audit = [json.loads(line) for line in fp if line.strip()]
        self.sessions[trial_id] = Session(trial_id, params, state, audit)

    def create(self, params: DesignParams) -> Session:
        trial_id = uuid.uuid4().hex[:12]
        trial_dir = self.root / trial_id
        trial_dir.mkdir()
        (trial_dir / "params.json").write_text(json.dumps(params.to_dict()))
        session = Session(trial_id, params, new_trial(params))
        with self._registry_lock:
            self.sessions[trial_id] = session
        return session

    def get(self, trial_id: str) -> Session:
        try:
            return self.sessions[trial_id]
        except KeyError:
            raise UnknownTrial(trial_id) from None

    def append_events(self, session: Session, events: list[Event]) -> TrialState:
        """Serialized per trial: validate against the snapshot, then persist.
        All-or-nothing so a rejected batch leaves no partial history."""
        with session.lock:
            state = session.state
            for event in events:
                state = apply_event(state, event)
            with (self.root / session.trial_id / "events.jsonl").open("a") as fp:
                for event in events:
                    fp.write(json.dumps(event.to_dict()) + "\n")
            session.state = state
            return state

    def append_audit(self, session: Session, record: dict) -> None:
        with session.lock:
            session.audit.append(record)
            with (self.root / session.trial_id / "audit.jsonl").open("a") as fp:
                fp.write(json.dumps(record) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _tallies_payload(state: TrialState) -> dict:
    return {
        str(d): {"n": t.n, "m": t.m, "r": t.r, "follow_ups": list(t.follow_ups)}
        for d, t in enumerate(all_tallies(state), start=1)
    }


def _state_payload(session: Session) -> dict:
    state = engine.apply_safety_rules(session.state)
    params = state.params
    return {
        "trial_id": session.trial_id,
        "params": params.to_dict(),
        "clock": state.clock,
        "status": state.status.value,
        "suspend_reason": state.suspend_reason,
        "current_dose": state.current_dose,
        "n_enrolled": state.n_enrolled,
        "excluded_doses": sorted(state.excluded_doses),
        "patients": [p.to_dict(state.clock, params.tau) for p in state.patients],
        "tallies": _tallies_payload(state),
        "audit": session.audit,
    }


def _recommendation_payload(
    state: TrialState, params: DesignParams, seed: int, mcmc: MCMCConfig
) -> dict:
    if state.status is TrialStatus.COMPLETED:
        report = None
        if all(p.status is not OutcomeStatus.PENDING for p in state.patients):
            report = mtdselect.finalize(engine.apply_safety_rules(state)).to_dict()
        return {"action": "complete", "reason": None, "rules": [], "mtd_report": report}
    if state.n_enrolled == 0:
        return {
            "action": "assign",
            "assigned_dose": params.start_dose,
            "reason": "starting-dose",
            "rules": [],
        }
    table = engine.make_table(params)
    state, rec, record = engine.decision_point(state, table, mcmc=mcmc, seed=seed)
    payload = record.to_dict()
    payload["reason"] = rec.reason
    payload["thresholds"] = {"pi_e": params.pi_e, "pi_d": params.pi_d}
    display = {"pi_e": _fmt(params.pi_e), "pi_d": _fmt(params.pi_d)}
    if record.gamma is not None:
        display["gamma"] = {str(a): _fmt(record.gamma[a]) for a in (-1, 0, 1)}
    if record.s_pmf is not None:
        display["s_pmf"] = [_fmt(x) for x in record.s_pmf]
    payload["display"] = display
    return payload


def _hypothetical_state(state: TrialState, resolutions: dict) -> TrialState:
    """Resolve chosen pending patients in a copy: a hypothetical DLT lands at
    the current follow-up (the earliest instant consistent with the data)."""
    if not isinstance(resolutions, dict) or not resolutions:
        raise PayloadError("whatif requires a non-empty 'resolutions' object")
    by_id = {}
    for key, kind in resolutions.items():
        try:
            pid = int(key)
        except (TypeError, ValueError):
            raise PayloadError(f"patient id {key!r} is not an integer") from None
        if kind not in ("dlt", "no_dlt"):
            raise PayloadError(f"resolution must be 'dlt' or 'no_dlt', got {kind!r}")
        by_id[pid] = kind
    tau = state.params.tau
    patients = []
    for p in state.patients:
        if p.id in by_id:
            if p.status is not OutcomeStatus.PENDING:
                raise PayloadError(f"patient {p.id} is not pending")
            if by_id.pop(p.id) == "dlt":
                v = p.follow_up(state.clock, tau)
                p = dataclasses.replace(
                    p, status=OutcomeStatus.DLT, dlt_time=v if v > 0 else tau * 1e-9
                )
            else:
                p = dataclasses.replace(p, status=OutcomeStatus.NO_DLT)
        patients.append(p)
    if by_id:
        raise PayloadError(f"unknown patients: {sorted(by_id)}")
    return dataclasses.replace(state, patients=tuple(patients))


def _parse_events(body) -> list[Event]:
    if isinstance(body, dict) and "events" in body:
        body = body["events"]
    if isinstance(body, dict):
        body = [body]
    if not isinstance(body, list) or not body:
        raise PayloadError("expected an event object or a non-empty list of events")
    return [Event.from_dict(item) for item in body]


def create_app(
    data_dir: str | Path,
    token: str | None = None,
    mcmc: MCMCConfig | None = None,
) -> FastAPI:
    store = TrialStore(data_dir)
    default_mcmc = mcmc or MCMCConfig()
    app = FastAPI(title="podtpi conduct service", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(UnknownTrial)
    async def unknown_trial(request, exc):
        return _error(404, f"unknown trial {exc.args[0]}")

    @app.exception_handler(ChronologyError)
    async def conflict(request, exc):
        return _error(409, str(exc))

    @app.exception_handler(PayloadError)
    async def invalid(request, exc):
        return _error(422, str(exc))

    def _error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if token and request.url.path.startswith("/trials"):
            if request.headers.get("authorization") != f"Bearer {token}":
                return _error(401, "missing or invalid token")
        return await call_next(request)

    async def _json_body(request: Request):
        try:
            return await request.json()
        except Exception:
            raise PayloadError("request body is not valid JSON") from None

    @app.post("/trials", status_code=201)
    async def create_trial(request: Request):
        body = await _json_body(request)
        if not isinstance(body, dict):
            raise PayloadError("expected a JSON object of design parameters")
        try:
            params = DesignParams.from_dict(body.get("params", body))
        except PayloadError:
            raise
        except (TypeError, ValueError) as exc:
            raise PayloadError(f"invalid design parameters: {exc}") from None
        session = store.create(params)
        return {"trial_id": session.trial_id}

    @app.get("/trials")
    async def list_trials():
        return {"trials": sorted(store.sessions)}

    @app.get("/trials/{trial_id}/state")
    async def get_state(trial_id: str):
        return _state_payload(store.get(trial_id))

    @app.post("/trials/{trial_id}/events")
    async def post_events(trial_id: str, request: Request):
        session = store.get(trial_id)
        events = _parse_events(await _json_body(request))
        state = store.append_events(session, events)
        return {
            "clock": state.clock,
            "status": state.status.value,
            "n_enrolled": state.n_enrolled,
            "tallies": _tallies_payload(state),
        }

    @app.get("/trials/{trial_id}/recommendation")
    async def get_recommendation(trial_id: str, seed: int | None = None):
        session = store.get(trial_id)
        used_seed = seed if seed is not None else secrets.randbits(48)
        payload = _recommendation_payload(
            session.state, session.params, used_seed, default_mcmc
        )
        if payload["action"] != "complete":
            store.append_audit(session, payload)
        return payload

    @app.post("/trials/{trial_id}/whatif")
    async def whatif(trial_id: str, request: Request):
        session = store.get(trial_id)
        body = await _json_body(request)
        if not isinstance(body, dict):
            raise PayloadError("expected a JSON object")
        state = _hypothetical_state(session.state, body.get("resolutions"))
        used_seed = body.get("seed", secrets.randbits(48))
        if not isinstance(used_seed, int):
            raise PayloadError("seed must be an integer")
        payload = _recommendation_payload(state, session.params, used_seed, default_mcmc)
        payload["hypothetical"] = True
        return payload

    return app
