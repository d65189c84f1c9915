import math

import pytest
from hypothesis import given, settings, strategies as st

from ibalign.alignment import (
    ANOMALY, AUTHORISED, IDLE, OVERT, SAFE, STEALTH, UNCERTAIN, BehaviourVector, FusionConfig, JudgeInput, align,
    builtin_judge, dominant_channel, fuse, magnitude, score_step, triage, verdict,
)
from ibalign.channels import ChannelEvidence
from ibalign.evidence import StateIndicators
from ibalign.intent import IntentVector

CFG = FusionConfig()
unit = st.floats(0, 1)
vec = st.tuples(unit, unit, unit)


def ev(ch, s, mask=1):
    return ChannelEvidence(ch, 0, s if mask else (0, 0, 0), mask)


def test_fusion_worked_example():
    b = fuse([ev("H", (1, 0, 0)), ev("M", (0, 1, 0)), ev("R", (0, 0, 1))], CFG)
    assert b.vector == pytest.approx((0.4, 0.3, 0.3), abs=1e-12)
    assert b.scored


def test_fusion_single_channel_passthrough():
    b = fuse([ev("H", (0.8, 0.1, 0)), ev("M", None, 0), None], CFG)
    assert b.vector == pytest.approx((0.8, 0.1, 0.0), abs=1e-12)


def test_fusion_all_masked():
    assert fuse([None, ev("R", None, 0)], CFG) == BehaviourVector(0, 0, 0, False)


@settings(max_examples=200)
@given(vec, vec, vec, st.floats(0.01, 100))
def test_fusion_scale_invariant(h, m, r, k):
    chans = [ev("H", h), ev("M", m), ev("R", r)]
    scaled = FusionConfig(alpha_h=0.4 * k, alpha_m=0.3 * k, alpha_r=0.3 * k)
    assert fuse(chans, scaled).vector == pytest.approx(fuse(chans, CFG).vector, abs=1e-12)


def test_align_examples():
    a, m = align((0.5, 0.5, 0.5), (0, 0, 0), 2.0)
    assert a == pytest.approx(math.exp(-1.5), abs=1e-15)
    assert m == pytest.approx(0.7769, abs=1e-4)
    assert align((0, 0, 0), (0, 0, 0), 2.0) == (1.0, 0.0)
    with pytest.raises(ValueError):
        align((0, 0, 0), (0, 0, 0), 0.0)


@settings(max_examples=300)
@given(vec, vec, st.floats(0.01, 20))
def test_align_properties(i, b, gamma):
    a, m = align(i, b, gamma)
    assert align(b, i, gamma)[0] == a
    assert m == 1.0 - a
    assert 0.0 < a <= 1.0
    assert align(i, i, gamma) == (1.0, 0.0)


def test_magnitude():
    assert magnitude((0.3, 0.4, 0)) == pytest.approx(0.5)
    assert magnitude((0, 0, 0)) == 0
    assert magnitude((1, 1, 1)) == pytest.approx(math.sqrt(3))


def test_triage_quadrants():
    assert triage(0.9, 1.2, CFG) == SAFE
    assert triage(0.2, 1.2, CFG) == OVERT
    assert triage(0.2, 0.1, CFG) == STEALTH
    assert triage(0.9, 0.1, CFG) == IDLE
    assert triage(0.5, 0.4, CFG) == OVERT  # A must strictly exceed 1 - theta


def test_dominant_tie_order():
    assert dominant_channel((0.2, 0.2, 0.2)) == "net"
    assert dominant_channel((0.1, 0.3, 0.3)) == "mem"


def judge(b, flags=None, comps=(), history=()):
    ind = StateIndicators(flags=flags or {})
    return builtin_judge(JudgeInput(IntentVector(0.5, 0.5, 0.5), BehaviourVector(*b), ind, tuple(comps),
                                    tuple(history)))


def test_judge_examples():
    assert judge((0.9, 0.1, 0.1), {"loading_spinner_visible": True}) == pytest.approx(0.9)
    assert judge((0.1, 0.1, 1.0), {"empty_state_visible": True}) == pytest.approx(0.1)
    assert judge((0, 0, 0)) == 0.5


def test_judge_history_and_clip():
    hist = [(IntentVector(0.1, 0.9, 0.1), BehaviourVector(0, 0, 0))]
    assert judge((0.1, 0.9, 0.1), comps=["Image"], history=hist) == 1.0
    assert judge((0.1, 0.9, 0.1), history=hist) == pytest.approx(0.7)


def test_verdict_examples():
    assert verdict(0.3, 0.7, 0.1, 1.0, True, CFG)[0] == ANOMALY
    assert verdict(0.9, 0.1, 1.0, 0.9, True, CFG)[0] == AUTHORISED
    assert verdict(0.9, 0.1, 1.0, 0.2, True, CFG) == (ANOMALY, "visually unverified")
    assert verdict(0.9, 0.1, 0.1, 0.2, True, CFG)[0] == UNCERTAIN
    assert verdict(0.0, 1.0, 0.0, 1.0, False, CFG)[0] == UNCERTAIN


def test_score_step_fields():
    r = score_step(3, (0.5, 0.5, 0.5), BehaviourVector(0, 0, 0, True), 0.5, CFG)
    assert r.step == 3 and r.verdict == ANOMALY and r.quadrant == STEALTH


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(alpha_h=0, alpha_m=0, alpha_r=0)
    with pytest.raises(ValueError):
        FusionConfig(theta=1.0)
