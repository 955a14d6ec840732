import itertools
import logging
import math

import pytest
from hypothesis import given, strategies as st

from tau_toolkit.core import AnomalyClass, EnvAnnotation, IdentityAnnotation, LocationAnnotation, ParsedLabel
from tau_toolkit.rewards import (
    ENV_WEIGHTS,
    JudgeVerdict,
    VERDICT_RANGES,
    aggregate_phase_matches,
    classification_reward,
    env_score,
    g_score,
    grounding_score,
    identity_grounding_score,
    location_grounding_score,
    summarization_reward,
)

A, B, C, D = AnomalyClass


class TestClassificationReward:
    def test_exact(self):
        for c in AnomalyClass:
            assert classification_reward(c, c) == 1.5

    def test_missed_anomaly(self):
        for gt in (B, C, D):
            assert classification_reward(A, gt) == -1.5

    def test_false_alarm(self):
        for pred in (B, C, D):
            assert classification_reward(pred, A) == -1.25

    def test_wrong_subtype(self):
        for pred, gt in itertools.permutations((B, C, D), 2):
            assert classification_reward(pred, gt) == -0.75

    def test_invalid(self):
        for gt in AnomalyClass:
            assert classification_reward(None, gt) == -2.0
            assert classification_reward(ParsedLabel.invalid("x"), gt) == -2.0

    def test_parsed_label_accepted(self):
        assert classification_reward(ParsedLabel.of("C"), C) == 1.5

    def test_missing_anomaly_costs_more_than_false_alarm(self):
        assert classification_reward(A, B) < classification_reward(B, A) < classification_reward(C, B)


class TestVerdict:
    def test_perfect(self):
        v = JudgeVerdict(1, 2, 5, 2, 0, 0)
        assert g_score(v) == 10
        assert summarization_reward(v) == 10

    def test_worst(self):
        v = JudgeVerdict(0, 0, 0, 0, 3, 1)
        assert summarization_reward(v) == -4
        assert g_score(v) == 0

    def test_clamps_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            v = JudgeVerdict(env=1.7, description=-2, hallucination=9)
        assert (v.env, v.description, v.hallucination) == (1.0, 0.0, 3.0)
        assert "clamped" in caplog.text

    def test_nan_to_zero(self):
        assert JudgeVerdict(reasoning=math.nan).reasoning == 0.0

    def test_dict_roundtrip(self):
        v = JudgeVerdict(0.5, 1.25, 3, 1, 0.5, 0.25)
        assert JudgeVerdict.from_dict(v.to_dict()) == v

    @given(st.tuples(*[st.floats(-10, 10) for _ in range(6)]))
    def test_reward_bounds(self, values):
        v = JudgeVerdict(*values)
        assert -4.0 <= summarization_reward(v) <= 10.0
        assert 0.0 <= g_score(v) <= 10.0
        assert g_score(v) - summarization_reward(v) == pytest.approx(v.hallucination + v.verbosity)


class TestEnvScore:
    full = EnvAnnotation("day", "clear", "dry", "two-lane roundabout")

    def test_all_match(self):
        assert env_score(self.full, dict.fromkeys(ENV_WEIGHTS, True)) == 1.0

    def test_road_only(self):
        assert env_score(self.full, {"road": True}) == 0.5

    def test_non_road_only(self):
        assert env_score(self.full, {"time_of_day": True, "weather": True, "surface": True}) == 0.5

    def test_nothing_specified(self):
        assert env_score(EnvAnnotation(), {}) == 1.0

    def test_partial_annotation(self):
        gt = EnvAnnotation(weather="rain", road="single-lane roundabout")
        assert env_score(gt, {"weather": True}) == 0.25

    def test_unspecified_flag_rejected(self):
        with pytest.raises(ValueError):
            env_score(EnvAnnotation(weather="rain"), {"road": True})

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            env_score(self.full, {"lighting": True})


class TestGrounding:
    def test_identity_defaults(self):
        assert identity_grounding_score(IdentityAnnotation(), {}) == 0.5

    def test_identity_fraction(self):
        assert identity_grounding_score(IdentityAnnotation("suv", "red"), {"color": True}) == 0.5

    def test_location_default(self):
        assert location_grounding_score(LocationAnnotation(), {}) == 0.5

    def test_any_phase(self):
        gt = LocationAnnotation(("north entry",), ("top-left", "center"))
        assert location_grounding_score(gt, {"environment_position": [False, True]}) == 0.5
        assert location_grounding_score(gt, {"environment_position": [False, False],
                                             "frame_position": True}) == 0.5

    def test_aggregate(self):
        assert aggregate_phase_matches([False, True])
        assert not aggregate_phase_matches([])
        assert aggregate_phase_matches(True)

    def test_sum_and_range(self):
        assert grounding_score(1.0, 0.5) == 1.5
        with pytest.raises(ValueError):
            grounding_score(1.2, 0.0)


def test_verdict_ranges_cover_reward():
    assert sum(hi for name, (lo, hi) in VERDICT_RANGES.items()
               if name not in ("hallucination", "verbosity")) == 10.0
