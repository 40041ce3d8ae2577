from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from podtpi.core import DesignParams, Event, replay
from podtpi.engine import RULE_ESCALATION_CONFIDENCE, decision_point, make_table
from podtpi.service import create_app
from podtpi.toxmodel import MCMCConfig

from test_core import trial1_events, trial2_events

PARAMS = dict(
    p_t=0.3, n_doses=3, max_n=18, tau=28.0, eps1=0.05, eps2=0.05, pi_e=1.0, pi_d=0.15
)
FAST = MCMCConfig(n_iter=1200, burn_in=400)


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "trials", mcmc=FAST)
    with TestClient(app) as c:
        yield c


def make_trial(client, **overrides) -> str:
    resp = client.post("/trials", json={**PARAMS, **overrides})
    assert resp.status_code == 201
    return resp.json()["trial_id"]


def post_events(client, trial_id, events, expect=200):
    resp = client.post(
        f"/trials/{trial_id}/events", json=[e.to_dict() for e in events]
    )
    assert resp.status_code == expect, resp.text
    return resp


class TestLifecycle:
    def test_create_and_state(self, client):
        trial_id = make_trial(client)
        state = client.get(f"/trials/{trial_id}/state").json()
        assert state["status"] == "enrolling"
        assert state["n_enrolled"] == 0
        assert state["params"]["p_t"] == 0.3

    def test_unknown_trial_404(self, client):
        assert client.get("/trials/nope/state").status_code == 404
        assert client.get("/trials/nope/recommendation").status_code == 404

    def test_event_feed_updates_tallies(self, client):
        trial_id = make_trial(client)
        resp = post_events(client, trial_id, trial1_events(dose=2))
        body = resp.json()
        assert body["clock"] == 63.0
        assert body["tallies"]["2"] == {
            "n": 2,
            "m": 2,
            "r": 2,
            "follow_ups": [15.0, 8.0],
        }

    def test_out_of_order_event_409(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, [Event.clock_advance(10.0)])
        resp = client.post(
            f"/trials/{trial_id}/events",
            json={"type": "enrollment", "time": 5.0, "patient_id": 1, "dose": 1},
        )
        assert resp.status_code == 409

    def test_malformed_event_422(self, client):
        trial_id = make_trial(client)
        resp = client.post(
            f"/trials/{trial_id}/events", json={"type": "mystery", "time": 0.0}
        )
        assert resp.status_code == 422
        resp = client.post(
            f"/trials/{trial_id}/events",
            json={"type": "enrollment", "time": 0.0, "patient_id": 1, "dose": 9},
        )
        assert resp.status_code == 422

    def test_rejected_batch_leaves_no_partial_history(self, client):
        trial_id = make_trial(client)
        events = [
            Event.enrollment(0.0, 1, 1).to_dict(),
            {"type": "enrollment", "time": 1.0, "patient_id": 1, "dose": 1},
        ]
        resp = client.post(f"/trials/{trial_id}/events", json=events)
        assert resp.status_code == 409
        assert client.get(f"/trials/{trial_id}/state").json()["n_enrolled"] == 0

    def test_bad_params_422(self, client):
        resp = client.post("/trials", json={**PARAMS, "pi_d": 0.9})
        assert resp.status_code == 422

    def test_persistence_across_restart(self, client, tmp_path):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial1_events(dose=2))
        reopened = create_app(tmp_path / "trials", mcmc=FAST)
        with TestClient(reopened) as c2:
            state = c2.get(f"/trials/{trial_id}/state").json()
            assert state["n_enrolled"] == 6
            assert state["tallies"]["2"]["n"] == 2


class TestRecommendation:
    def test_trial1_recommends_deescalation(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial1_events(dose=2))
        rec = client.get(
            f"/trials/{trial_id}/recommendation", params={"seed": 424242}
        ).json()
        assert rec["action"] == "assign"
        assert rec["assigned_dose"] == 1
        assert rec["a_star"] == -1
        pmf = rec["s_pmf"]
        assert abs(pmf[0] - 0.42) < 0.05
        assert abs(pmf[1] - 0.46) < 0.05
        assert abs(pmf[2] - 0.12) < 0.05
        assert rec["seed"] == 424242 and rec["n_draws"] > 0
        assert rec["display"]["gamma"]["-1"] == f"{rec['gamma']['-1']:.2f}"

    def test_trial2_suspends_with_confidence_reason(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial2_events(dose=2))
        rec = client.get(
            f"/trials/{trial_id}/recommendation", params={"seed": 99}
        ).json()
        assert rec["action"] == "suspend"
        assert rec["reason"] == RULE_ESCALATION_CONFIDENCE
        assert rec["gamma"]["1"] < 1.0
        assert rec["thresholds"]["pi_e"] == 1.0

    def test_recommendation_audited(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial1_events(dose=2))
        client.get(f"/trials/{trial_id}/recommendation", params={"seed": 7})
        audit = client.get(f"/trials/{trial_id}/state").json()["audit"]
        assert len(audit) == 1
        assert audit[0]["seed"] == 7

    def test_empty_trial_recommends_starting_dose(self, client):
        trial_id = make_trial(client, start_dose=2)
        rec = client.get(f"/trials/{trial_id}/recommendation").json()
        assert rec == {
            "action": "assign",
            "assigned_dose": 2,
            "reason": "starting-dose",
            "rules": [],
        }

    def test_matches_library_on_replayed_state(self, client):
        trial_id = make_trial(client)
        events = trial1_events(dose=2)
        post_events(client, trial_id, events)
        rec = client.get(
            f"/trials/{trial_id}/recommendation", params={"seed": 31337}
        ).json()
        state = replay(DesignParams(**PARAMS), events)
        _, lib_rec, record = decision_point(
            state, make_table(state.params), mcmc=FAST, seed=31337
        )
        assert rec["action"] == lib_rec.kind
        assert rec["assigned_dose"] == lib_rec.dose
        assert rec["gamma"] == {str(a): g for a, g in lib_rec.dist.gamma.items()}
        assert rec["s_pmf"] == pytest.approx(list(record.s_pmf))


class TestWhatIf:
    def test_forced_dlts_deescalate_without_mutation(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial2_events(dose=2))
        before = client.get(f"/trials/{trial_id}/state").json()
        resp = client.post(
            f"/trials/{trial_id}/whatif",
            json={"resolutions": {"5": "dlt", "6": "dlt"}},
        )
        body = resp.json()
        assert body["action"] == "assign"
        assert body["assigned_dose"] == 1  # tallies become (3, 3, 0)
        assert body["hypothetical"] is True
        assert (body["n"], body["m"], body["r"]) == (3, 3, 0)
        after = client.get(f"/trials/{trial_id}/state").json()
        assert before == after

    def test_partial_resolution_recomputes_pod(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial1_events(dose=2))
        resp = client.post(
            f"/trials/{trial_id}/whatif",
            json={"resolutions": {"5": "no_dlt"}, "seed": 5},
        )
        body = resp.json()
        assert body["r"] == 1
        assert len(body["s_pmf"]) == 2

    def test_whatif_validation(self, client):
        trial_id = make_trial(client)
        post_events(client, trial_id, trial1_events(dose=2))
        for payload in (
            {},
            {"resolutions": {}},
            {"resolutions": {"5": "maybe"}},
            {"resolutions": {"999": "dlt"}},
            {"resolutions": {"1": "dlt"}},  # patient 1 already resolved
        ):
            resp = client.post(f"/trials/{trial_id}/whatif", json=payload)
            assert resp.status_code == 422, payload


class TestAuth:
    def test_token_required_when_configured(self, tmp_path):
        app = create_app(tmp_path / "trials", token="sesame", mcmc=FAST)
        with TestClient(app) as c:
            assert c.post("/trials", json=PARAMS).status_code == 401
            ok = c.post(
                "/trials", json=PARAMS, headers={"Authorization": "Bearer sesame"}
            )
            assert ok.status_code == 201


class TestServiceEqualsLibrary:
    def test_random_histories_round_trip(self, client):
        from hypothesis import given, settings
        from test_core import event_logs

        @given(event_logs())
        @settings(max_examples=10, deadline=None)
        def check(events):
            params = DesignParams(p_t=0.3, n_doses=3, max_n=12, tau=28.0)
            trial_id = make_trial(client, max_n=12)
            if events:
                post_events(client, trial_id, events)
            payload = client.get(
                f"/trials/{trial_id}/recommendation", params={"seed": 1}
            ).json()
            state = replay(params, events)
            if state.n_enrolled == 0:
                assert payload["reason"] == "starting-dose"
                return
            _, lib_rec, _ = decision_point(
                state, make_table(state.params), mcmc=FAST, seed=1
            )
            assert payload["action"] == lib_rec.kind
            if lib_rec.kind == "assign":
                assert payload["assigned_dose"] == lib_rec.dose

        check()
