from __future__ import annotations

import numpy as np
import pytest

from podtpi.core import Decision
from podtpi.mtpi2 import (
    build_partition,
    decide,
    decision_table,
    model_posterior,
    prob_exceeds_target,
)

from _oracles import riemann_model_posterior

PART = build_partition(0.30, 0.05, 0.05)


def bounds(intervals):
    return [(round(lo, 10), round(hi, 10)) for lo, hi in intervals]


class TestPartition:
    def test_reference_partition(self):
        assert PART.ei == (0.25, 0.35)
        assert PART.k1 == 3 and PART.k2 == 7
        assert bounds(PART.under) == [(0.15, 0.25), (0.05, 0.15), (0.0, 0.05)]
        assert bounds(PART.over)[0] == (0.35, 0.45)
        assert bounds(PART.over)[-1] == (0.95, 1.0)

    def test_low_target_partition(self):
        part = build_partition(0.10, 0.03, 0.03)
        assert part.ei == (0.07, 0.13)
        assert part.k1 == 2
        assert bounds(part.under) == [(0.01, 0.07), (0.0, 0.01)]
        assert part.k2 == 15
        assert bounds(part.over)[0] == (0.13, 0.19)
        assert bounds(part.over)[-1] == (0.97, 1.0)

    def test_intermediate_target_partition(self):
        part = build_partition(0.17, 0.05, 0.05)
        assert part.ei == pytest.approx((0.12, 0.22), abs=1e-12)
        assert part.k1 == 2
        assert bounds(part.under)[-1] == (0.0, 0.02)
        assert part.k2 == 8
        assert bounds(part.over)[-1] == (0.92, 1.0)

    def test_partition_covers_unit_interval(self):
        for p_t, eps in [(0.3, 0.05), (0.1, 0.03), (0.17, 0.05), (0.25, 0.07)]:
            part = build_partition(p_t, eps, eps)
            pieces = sorted(
                [mod for mod in part.models], key=lambda mod: mod.lo
            )
            assert pieces[0].lo == 0.0
            assert pieces[-1].hi == 1.0
            for a, b in zip(pieces, pieces[1:]):
                assert a.hi == pytest.approx(b.lo, abs=1e-12)
            for mod in part.models:
                boundary = mod.lo == 0.0 or mod.hi == 1.0
                if not boundary and mod.label != "E":
                    assert mod.length == pytest.approx(2 * eps, abs=1e-9)

    def test_invalid_equivalence_interval(self):
        with pytest.raises(ValueError):
            build_partition(0.05, 0.05, 0.05)
        with pytest.raises(ValueError):
            build_partition(0.97, 0.02, 0.05)


class TestModelPosterior:
    def test_no_data_is_uniform(self):
        post = model_posterior(0, 0, PART)
        assert len(post.probs) == 11
        assert post.probs == pytest.approx((1 / 11,) * 11, abs=1e-12)

    def test_argmax_examples_match_quadrature(self):
        # (1, 2) peaks on the equivalence interval; (3, 3) on the second
        # overdosing piece (the one containing 0.5)
        for n, m in [(1, 2), (3, 3)]:
            post = model_posterior(n, m, PART)
            oracle = riemann_model_posterior(n, m, PART, points=200_000)
            assert int(np.argmax(post.probs)) == int(np.argmax(oracle))
        labels = [mod.label for mod in PART.models]
        assert labels[int(np.argmax(model_posterior(1, 2, PART).probs))] == "E"
        assert labels[int(np.argmax(model_posterior(3, 3, PART).probs))] == "O2"

    def test_sums_to_one_up_to_100(self):
        for total in range(0, 101, 7):
            for n in range(0, total + 1, max(1, total // 4)):
                post = model_posterior(n, total - n, PART)
                assert sum(post.probs) == pytest.approx(1.0, abs=1e-10)
                assert min(post.probs) >= 0.0

    def test_values_match_riemann_oracle(self):
        # acceptance tolerance: 1e-6 against a 10^6-point Riemann sum
        for total in range(0, 13):
            for n in range(total + 1):
                post = np.array(model_posterior(n, total - n, PART).probs)
                oracle = riemann_model_posterior(n, total - n, PART)
                assert np.max(np.abs(post - oracle)) < 1e-6


class TestDecide:
    def test_anchor_decisions(self):
        assert decide(0, 3, PART) is Decision.ESCALATE
        assert decide(1, 2, PART) is Decision.STAY
        assert decide(2, 1, PART) is Decision.DE_ESCALATE
        assert decide(3, 0, PART) is Decision.DE_ESCALATE

    def test_escalation_with_one_in_six(self):
        assert decide(1, 5, PART) is Decision.ESCALATE

    def test_empty_tally_ties_break_safe(self):
        # all 11 models tie, and the tie set includes overdosing models, so
        # the safety-first tie-break lands on de-escalation
        assert decide(0, 0, PART) is Decision.DE_ESCALATE

    def test_monotone_in_dlt_count(self):
        for total in range(1, 31):
            decisions = [int(decide(n, total - n, PART)) for n in range(total + 1)]
            assert decisions == sorted(decisions, reverse=True)

    def test_argmax_matches_quadrature_up_to_12(self):
        for total in range(1, 13):
            for n in range(total + 1):
                post = model_posterior(n, total - n, PART)
                oracle = riemann_model_posterior(n, total - n, PART, points=100_000)
                mine = int(np.argmax(post.probs))
                theirs = int(np.argmax(oracle))
                assert mine == theirs, (n, total - n)


class TestDecisionTable:
    def test_row_three(self):
        table = decision_table(PART, 3)
        row = {n: table.decision(n, 3 - n) for n in range(4)}
        assert row == {
            0: Decision.ESCALATE,
            1: Decision.STAY,
            2: Decision.DE_ESCALATE,
            3: Decision.DE_ESCALATE,
        }

    def test_empty_table(self):
        assert decision_table(PART, 0).entries == {}

    def test_csv_export(self):
        csv_text = decision_table(PART, 3).to_csv()
        lines = csv_text.strip().splitlines()
        assert lines[0] == "n,m,decision"
        assert "0,3,E" in lines
        assert "1,2,S" in lines
        assert "2,1,D" in lines
        assert len(lines) == 1 + 2 + 3 + 4

    def test_full_table_for_intermediate_target(self):
        part = build_partition(0.17, 0.05, 0.05)
        table = decision_table(part, 6)
        for (n, m), dec in table.entries.items():
            oracle = riemann_model_posterior(n, m, part, points=100_000)
            assert int(dec) == int(part.models[int(np.argmax(oracle))].decision)


class TestProbExceedsTarget:
    def test_uniform_prior(self):
        assert prob_exceeds_target(0, 0, 0.3) == pytest.approx(0.7, abs=1e-12)

    def test_three_dlts_triggers_rule(self):
        p = prob_exceeds_target(3, 0, 0.3)
        assert p == pytest.approx(1 - 0.3**4, abs=1e-12)
        assert p > 0.95

    def test_three_clean_passes(self):
        assert prob_exceeds_target(0, 3, 0.3) == pytest.approx(0.7**4, abs=1e-12)

    def test_validates_target(self):
        with pytest.raises(ValueError):
            prob_exceeds_target(1, 1, 1.5)
        with pytest.raises(ValueError):
            prob_exceeds_target(-1, 0, 0.3)
