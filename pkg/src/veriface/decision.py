"""Scoring, score fusion, EER threshold calibration, and verdicts.

Both experts produce accept-when-large scores: the grey score is the
difference of Frobenius distances from the projected probe to the two
projected class means, the color score the difference of Bhattacharyya
distances from the probe histogram to the two reference histograms.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .colorfeat import ChromaHistogram, histogram_distance, opponent_histogram
from .errors import UnknownClientError
from .imaging import FaceSample

log = logging.getLogger(__name__)

FUSION_MODES = ("grey_only", "color_only", "fused")


@dataclass
class ScorePair:
    """One probe's grey and color expert scores."""

    grey: float
    color: float

    def __post_init__(self):
        if not (math.isfinite(self.grey) and math.isfinite(self.color)):
            raise ValueError("scores must be finite")


@dataclass
class DecisionPolicy:
    """Accept/reject rule: fuse normalized scores and compare to a threshold.

    Thresholds are finite after calibration; +/-inf is allowed so always-
    reject / always-accept boundary policies can be expressed explicitly.
    """

    threshold: float = 0.0
    fusion_weight: float = 1.0
    mode: str = "fused"
    grey_stats: tuple = (0.0, 1.0)
    color_stats: tuple = (0.0, 1.0)

    def __post_init__(self):
        if math.isnan(self.threshold):
            raise ValueError("threshold must not be NaN")
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ValueError(f"fusion weight {self.fusion_weight} outside [0, 1]")
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}")


@dataclass
class VerdictRecord:
    """Structured outcome of one verification claim."""

    claim_id: str
    accept: bool
    grey: float
    color: float
    fused: float
    threshold: float

    def to_dict(self):
        return {
            "claim_id": self.claim_id,
            "verdict": "accept" if self.accept else "reject",
            "grey": self.grey,
            "color": self.color,
            "fused": self.fused,
            "threshold": self.threshold,
        }


def grey_score(y, m_c, m_i) -> float:
    """Distance-to-imposter minus distance-to-client; positive means the
    projected probe sits closer to the client mean."""
    y = np.asarray(y, dtype=float)
    m_c = np.asarray(m_c, dtype=float)
    m_i = np.asarray(m_i, dtype=float)
    if y.shape != m_c.shape or y.shape != m_i.shape:
        raise ValueError("projected feature and means must share one shape")
    return float(np.linalg.norm(y - m_i) - np.linalg.norm(y - m_c))


def color_score(probe: ChromaHistogram, ref_client: ChromaHistogram,
                ref_imposter: ChromaHistogram) -> float:
    """Same accept-when-large orientation as grey_score, on histograms."""
    return histogram_distance(probe, ref_imposter) - histogram_distance(probe, ref_client)


def normalize_scores(scores, stats):
    """Z-normalize with (mean, std) estimated on the evaluation set.

    A non-positive std passes scores through unchanged with a warning.
    """
    mean, std = stats
    arr = np.asarray(scores, dtype=float)
    if std <= 0.0:
        log.warning("score std %.3g not positive; skipping normalization", std)
        return arr.copy()
    return (arr - mean) / std


def _norm_one(score: float, stats) -> float:
    mean, std = stats
    if std <= 0.0:
        return score
    return (score - mean) / std


def fuse(pair: ScorePair, policy: DecisionPolicy) -> float:
    """Weighted-sum fusion of the (already normalized) score pair."""
    if policy.mode == "grey_only":
        return pair.grey
    if policy.mode == "color_only":
        return pair.color
    w = policy.fusion_weight
    return w * pair.grey + (1.0 - w) * pair.color


def calibrate_eer(genuine, impostor):
    """Threshold with the smallest |FAR - FRR| over all midpoint candidates.

    FAR counts impostor scores strictly above the threshold, FRR genuine
    scores at or below it, matching the accept-when-strictly-above rule.
    Ties go to the smaller FAR + FRR, then to the smaller threshold.
    Returns (threshold, far, frr) with the rates as fractions.
    """
    gen = np.sort(np.asarray(genuine, dtype=float))
    imp = np.sort(np.asarray(impostor, dtype=float))
    if gen.size == 0 or imp.size == 0:
        raise ValueError("need at least one genuine and one impostor score")
    pooled = np.unique(np.concatenate([gen, imp]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0
    candidates = np.concatenate([[pooled[0] - 1.0], mids, [pooled[-1] + 1.0]])
    frr = np.searchsorted(gen, candidates, side="right") / gen.size
    far = 1.0 - np.searchsorted(imp, candidates, side="right") / imp.size
    gap = np.abs(far - frr)
    total = far + frr
    best = 0
    for i in range(1, len(candidates)):
        if (gap[i], total[i]) < (gap[best], total[best]):
            best = i
    return float(candidates[best]), float(far[best]), float(frr[best])


def apply_policy(pair: ScorePair, policy: DecisionPolicy):
    """Normalize, fuse, and compare. Returns (accept, fused, normalized pair)."""
    normed = ScorePair(grey=_norm_one(pair.grey, policy.grey_stats),
                       color=_norm_one(pair.color, policy.color_stats))
    fused = fuse(normed, policy)
    return fused > policy.threshold, fused, normed


def score_pair(model, claim_id, probe: FaceSample) -> ScorePair:
    """Raw grey and color scores of a probe against one enrolled client.

    Models without color references (grey-only experiments) score color
    as 0; it never reaches the verdict in that mode.
    """
    template = model.client_templates.get(claim_id)
    if template is None:
        raise UnknownClientError(f"client {claim_id!r} is not enrolled")
    y = template.project(probe.grey)
    grey = grey_score(y, template.m_c, template.m_i)
    refs = model.color_references.get(claim_id)
    if refs is None:
        return ScorePair(grey=grey, color=0.0)
    feat = model.features
    probe_hist = opponent_histogram(probe, bins=feat.bins, lo=feat.hist_lo,
                                    hi=feat.hist_hi, bounds=feat.skin_bounds())
    return ScorePair(grey=grey, color=color_score(probe_hist, refs[0], refs[1]))


def verify(claim_id, probe: FaceSample, model,
           policy: DecisionPolicy | None = None) -> VerdictRecord:
    """Score one identity claim against the model and render the verdict."""
    if policy is None:
        policy = model.policy_for(claim_id)
    pair = score_pair(model, claim_id, probe)
    accept, fused, normed = apply_policy(pair, policy)
    return VerdictRecord(claim_id=claim_id, accept=bool(accept),
                         grey=normed.grey, color=normed.color, fused=fused,
                         threshold=policy.threshold)
