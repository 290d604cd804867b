import logging
import math

import numpy as np
import pytest

from veriface.colorfeat import ChromaHistogram
from veriface.decision import (DecisionPolicy, ScorePair, apply_policy,
                               calibrate_eer, color_score, fuse, grey_score,
                               normalize_scores)


def eer_sweep_oracle(genuine, impostor):
    """Brute-force sweep over every midpoint and boundary candidate."""
    gen = np.asarray(genuine, dtype=float)
    imp = np.asarray(impostor, dtype=float)
    pooled = np.unique(np.concatenate([gen, imp]))
    mids = [(a + b) / 2.0 for a, b in zip(pooled[:-1], pooled[1:])]
    candidates = [pooled[0] - 1.0] + mids + [pooled[-1] + 1.0]
    results = []
    for t in candidates:
        far = float((imp > t).mean())
        frr = float((gen <= t).mean())
        results.append((t, far, frr))
    return results


def _hist(weights):
    w = np.asarray(weights, dtype=float)
    return ChromaHistogram(bins=len(w), lo=-128.0, hi=128.0, weights=w,
                           pixel_count=10)


def test_grey_score_at_client_mean_is_positive():
    m_c = np.array([[1.0, 0.0]])
    m_i = np.array([[-1.0, 0.0]])
    d = grey_score(m_c, m_c, m_i)
    assert d == pytest.approx(np.linalg.norm(m_c - m_i))
    assert d > 0


def test_grey_score_at_imposter_mean_is_negative():
    m_c = np.array([[1.0, 0.0]])
    m_i = np.array([[-1.0, 0.0]])
    assert grey_score(m_i, m_c, m_i) == pytest.approx(-np.linalg.norm(m_c - m_i))


def test_grey_score_equidistant_is_zero():
    m_c = np.array([[1.0]])
    m_i = np.array([[-1.0]])
    assert grey_score(np.array([[0.0]]), m_c, m_i) == pytest.approx(0.0)


def test_grey_score_antisymmetric_under_mean_swap():
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.standard_normal((2, 3))
        m_c = rng.standard_normal((2, 3))
        m_i = rng.standard_normal((2, 3))
        assert grey_score(y, m_c, m_i) == pytest.approx(
            -grey_score(y, m_i, m_c), abs=1e-12)


def test_grey_score_shape_mismatch():
    with pytest.raises(ValueError):
        grey_score(np.zeros((1, 2)), np.zeros((2, 1)), np.zeros((1, 2)))


def test_color_score_orientation():
    ref_c = _hist([1.0, 0.0, 0.0, 0.0])
    ref_i = _hist([0.0, 0.0, 0.0, 1.0])
    assert color_score(ref_c, ref_c, ref_i) > 0
    assert color_score(ref_i, ref_c, ref_i) < 0
    probe = _hist([0.25, 0.25, 0.25, 0.25])
    assert color_score(probe, ref_c, ref_c) == 0.0


def test_normalize_scores():
    assert np.allclose(normalize_scores([2.0, 2.0], (2.0, 1.0)), [0.0, 0.0])
    assert np.allclose(normalize_scores([3.0], (2.0, 1.0)), [1.0])
    assert np.allclose(normalize_scores([1.0, 2.0, 3.0], (2.0, 1.0)), [-1, 0, 1])


def test_normalize_scores_zero_std_passthrough(caplog):
    with caplog.at_level(logging.WARNING, logger="veriface.decision"):
        out = normalize_scores([1.0, 2.0], (0.0, 0.0))
    assert np.allclose(out, [1.0, 2.0])
    assert any("normalization" in rec.message for rec in caplog.records)


def test_fuse_modes():
    pair = ScorePair(grey=2.0, color=-1.0)
    assert fuse(pair, DecisionPolicy(mode="grey_only")) == 2.0
    assert fuse(pair, DecisionPolicy(mode="color_only", fusion_weight=0.0)) == -1.0
    assert fuse(pair, DecisionPolicy(mode="fused", fusion_weight=1.0)) == 2.0
    assert fuse(pair, DecisionPolicy(mode="fused", fusion_weight=0.0)) == -1.0
    assert fuse(pair, DecisionPolicy(mode="fused", fusion_weight=0.5)) == pytest.approx(0.5)


def test_policy_validation():
    with pytest.raises(ValueError):
        DecisionPolicy(fusion_weight=1.5)
    with pytest.raises(ValueError):
        DecisionPolicy(mode="both")
    with pytest.raises(ValueError):
        DecisionPolicy(threshold=float("nan"))
    DecisionPolicy(threshold=float("inf"))  # boundary policies are expressible


def test_calibrate_eer_separable():
    t, far, frr = calibrate_eer([1.0, 1.0, 1.0], [-1.0, -1.0])
    assert t == pytest.approx(0.0)
    assert far == 0.0 and frr == 0.0


def test_calibrate_eer_indistinguishable():
    scores = [1.0, 2.0, 3.0, 4.0]
    t, far, frr = calibrate_eer(scores, scores)
    assert far == pytest.approx(0.5)
    assert frr == pytest.approx(0.5)
    assert t == pytest.approx(2.5)


def test_calibrate_eer_hand_case_matches_sweep_oracle():
    genuine = [0.9, 0.8, 0.4]
    impostor = [0.5, 0.3, 0.1]
    t, far, frr = calibrate_eer(genuine, impostor)
    assert t == pytest.approx(0.45)
    assert far == pytest.approx(1 / 3)
    assert frr == pytest.approx(1 / 3)
    best_gap = min(abs(f - r) for _, f, r in eer_sweep_oracle(genuine, impostor))
    assert abs(far - frr) <= best_gap + 1e-12


def test_calibrate_eer_never_beaten_by_sweep_oracle():
    rng = np.random.default_rng(1)
    for _ in range(30):
        genuine = rng.normal(0.6, 0.4, size=rng.integers(2, 30))
        impostor = rng.normal(-0.6, 0.5, size=rng.integers(2, 30))
        t, far, frr = calibrate_eer(genuine, impostor)
        oracle = eer_sweep_oracle(genuine, impostor)
        best_gap = min(abs(f - r) for _, f, r in oracle)
        assert abs(far - frr) <= best_gap + 1e-12
        # Returned rates must be the true rates at the returned threshold.
        assert far == pytest.approx(float((impostor > t).mean()))
        assert frr == pytest.approx(float((genuine <= t).mean()))


def test_calibrate_eer_empty_inputs():
    with pytest.raises(ValueError):
        calibrate_eer([], [1.0])
    with pytest.raises(ValueError):
        calibrate_eer([1.0], [])


def test_verdict_monotone_in_threshold():
    pair = ScorePair(grey=0.3, color=-0.2)
    thresholds = np.linspace(-2, 2, 41)
    accepted = []
    for t in thresholds:
        policy = DecisionPolicy(threshold=float(t), fusion_weight=0.5, mode="fused")
        accepted.append(apply_policy(pair, policy)[0])
    # Once rejection starts it never flips back as the threshold rises.
    flips = [i for i in range(1, len(accepted)) if accepted[i] != accepted[i - 1]]
    assert len(flips) <= 1
    if flips:
        assert accepted[0] and not accepted[-1]


def test_verdicts_invariant_under_positive_scaling():
    rng = np.random.default_rng(2)
    genuine = rng.normal(1.0, 1.0, size=25)
    impostor = rng.normal(-1.0, 1.0, size=40)
    t, _, _ = calibrate_eer(genuine, impostor)
    scale = 3.7
    t_s, _, _ = calibrate_eer(genuine * scale, impostor * scale)
    pooled = np.concatenate([genuine, impostor])
    assert np.array_equal(pooled > t, pooled * scale > t_s)


def test_boundary_thresholds():
    pair = ScorePair(grey=5.0, color=5.0)
    always_reject = DecisionPolicy(threshold=math.inf, fusion_weight=0.5)
    always_accept = DecisionPolicy(threshold=-math.inf, fusion_weight=0.5)
    assert not apply_policy(pair, always_reject)[0]
    assert apply_policy(pair, always_accept)[0]
