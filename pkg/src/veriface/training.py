"""Training and calibration: from manifest rows to a ready-to-verify model.

Training fits the shared PCA stage on the client training images, builds
every client's discriminant template and color references, and records
per-client nonsingularity diagnostics. Calibration scores the evaluation
roles, estimates score-normalization statistics, grid-searches the fusion
weight, and sets thresholds at the equal error rate.
"""

import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from .colorfeat import average_histograms, fit_gaussian, opponent_chroma, opponent_histogram
from .config import RunConfig
from .decision import (DecisionPolicy, ScorePair, calibrate_eer, color_score,
                       grey_score)
from .discriminant import build_all_templates
from .errors import ManifestError, UnknownClientError
from .imaging import skin_mask
from .manifest import CLIENT_ROLES, load_face_sample, training_digest
from .model import FeatureParams, ModelFile
from .subspace import fit_pca_stage

log = logging.getLogger(__name__)


def validate_for_training(records):
    """Checks a manifest supports model building; returns the client ids.

    Every subject appearing in a client role needs at least one training
    sample, paths must be unique, and no subject may be both client and
    impostor.
    """
    seen = set()
    for r in records:
        if r.path in seen:
            raise ManifestError(f"duplicate sample path {r.path!r}")
        seen.add(r.path)
    client_subjects = {r.subject_id for r in records if r.role in CLIENT_ROLES}
    impostor_subjects = {r.subject_id for r in records if r.role not in CLIENT_ROLES}
    overlap = client_subjects & impostor_subjects
    if overlap:
        raise ManifestError(
            f"subjects appear in both client and impostor roles: {sorted(overlap)}")
    trained = {r.subject_id for r in records if r.role == "client_train"}
    missing = sorted(client_subjects - trained)
    if missing:
        raise ManifestError(f"clients with zero training samples: {missing}")
    if not trained:
        raise ManifestError("manifest holds no client_train rows")
    if len(trained) < 2:
        raise ManifestError("need at least two clients to form an imposter class")
    return sorted(trained)


def load_role_samples(records, geo, base_dir, roles):
    """Load aligned FaceSamples for the requested roles, keyed by path."""
    samples = {}
    for r in records:
        if r.role in roles:
            samples[r.path] = load_face_sample(r, geo, base_dir)
    return samples


def _feature_params(config: RunConfig) -> FeatureParams:
    return FeatureParams(bins=config.bins, hist_lo=config.hist_lo,
                         hist_hi=config.hist_hi,
                         skin_cr_lo=config.skin_cr_lo,
                         skin_cr_hi=config.skin_cr_hi,
                         skin_cb_lo=config.skin_cb_lo,
                         skin_cb_hi=config.skin_cb_hi)


def _default_policy(config: RunConfig) -> DecisionPolicy:
    weight = {"grey_only": 1.0, "color_only": 0.0}.get(config.fusion_mode, 0.5)
    return DecisionPolicy(threshold=0.0, fusion_weight=weight,
                          mode=config.fusion_mode)


def build_color_references(train_samples, client_ids, config: RunConfig) -> dict:
    """Per-client (own, imposter) reference histograms from training crops."""
    bounds = config.skin_bounds()
    hists = [opponent_histogram(s, bins=config.bins, lo=config.hist_lo,
                                hi=config.hist_hi, bounds=bounds)
             for s in train_samples]
    by_client = {}
    for s, hist in zip(train_samples, hists):
        by_client.setdefault(s.subject_id, []).append(hist)
    refs = {}
    for cid in client_ids:
        own = average_histograms(by_client[cid])
        others = [h for other, hs in by_client.items() if other != cid
                  for h in hs]
        refs[cid] = (own, average_histograms(others))
    return refs


def chroma_gaussian_diagnostics(train_samples, client_ids, config: RunConfig) -> dict:
    """Per-client Gaussian summaries of the skin-masked chroma planes.

    Diagnostic only; the decision path uses histograms. Empty masks fall
    back to the full crop, like the histogram feature.
    """
    bounds = config.skin_bounds()
    pooled = {cid: {"cr": [], "cb": [], "opp": []} for cid in client_ids}
    for s in train_samples:
        mask = skin_mask(s.cr, s.cb, bounds)
        if not mask.any():
            mask = np.ones_like(mask, dtype=bool)
        bucket = pooled[s.subject_id]
        bucket["cr"].append(s.cr[mask])
        bucket["cb"].append(s.cb[mask])
        bucket["opp"].append(opponent_chroma(s)[mask])
    out = {}
    for cid in client_ids:
        values = {key: np.concatenate(arrs) for key, arrs in pooled[cid].items()}
        full = np.ones(values["cr"].shape, dtype=bool)
        summary = {}
        for key, name in (("cr", "cr"), ("cb", "cb"), ("opp", "opponent")):
            g = fit_gaussian(values[key], full)
            summary[f"{name}_mean"] = g.mean
            summary[f"{name}_std"] = g.std
        summary["pixels"] = int(values["cr"].size)
        out[cid] = summary
    return out


def train_model(records, base_dir, config: RunConfig, threads: int = 1,
                timestamp=None, with_color: bool = True,
                samples: dict | None = None, diagnostics: bool = True) -> ModelFile:
    """Build the full model from the manifest's client_train rows.

    `samples` may carry preloaded FaceSamples keyed by path. The provenance
    timestamp defaults to None so identical inputs give identical bytes;
    pass an explicit string to stamp the file.
    """
    client_ids = validate_for_training(records)
    geo = config.geometry()
    train_records = [r for r in records if r.role == "client_train"]
    if samples is None:
        samples = load_role_samples(records, geo, base_dir, ("client_train",))
    train_samples = [samples[r.path] for r in train_records]

    stage = fit_pca_stage([s.grey for s in train_samples],
                          g=config.g, h=config.h, energy=config.energy)
    log.info("PCA stage fitted: g=%d of %d, h=%d of %d",
             stage.g, stage.n, stage.h, stage.m)
    templates, reports = build_all_templates(
        stage, train_samples, client_ids, q=config.q, d=config.d,
        ridge=config.ridge, threads=threads, diagnostics=diagnostics)

    color_refs = {}
    if with_color:
        color_refs = build_color_references(train_samples, client_ids, config)

    model_diagnostics = {}
    if diagnostics:
        model_diagnostics = {cid: reports[cid].to_dict() for cid in client_ids}
        ok = sum(1 for r in reports.values()
                 if r.col_condition_ok and r.row_condition_ok)
        log.info("nonsingularity condition met for %d of %d clients",
                 ok, len(client_ids))
        if with_color:
            gaussians = chroma_gaussian_diagnostics(train_samples, client_ids,
                                                    config)
            for cid in client_ids:
                model_diagnostics[cid]["chroma"] = gaussians[cid]

    params = config.to_dict()
    params["g_resolved"] = stage.g
    params["h_resolved"] = stage.h
    return ModelFile(
        geometry=geo, pca_stage=stage, client_templates=templates,
        color_references=color_refs,
        policies={cid: _default_policy(config) for cid in client_ids},
        global_policy=_default_policy(config), features=_feature_params(config),
        diagnostics=model_diagnostics,
        provenance={"manifest_digest": training_digest(records),
                    "seed": config.seed, "created": timestamp,
                    "params": params})


def probe_score_pairs(model: ModelFile, probe, claims) -> list:
    """ScorePairs of one probe against several claimed clients.

    The probe's color histogram is extracted once and reused across claims;
    models without color references score color as 0.
    """
    hist = None
    if model.color_references:
        feat = model.features
        hist = opponent_histogram(probe, bins=feat.bins, lo=feat.hist_lo,
                                  hi=feat.hist_hi, bounds=feat.skin_bounds())
    pairs = []
    for cid in claims:
        template = model.client_templates.get(cid)
        if template is None:
            raise UnknownClientError(f"client {cid!r} is not enrolled")
        grey = grey_score(template.project(probe.grey), template.m_c,
                          template.m_i)
        color = 0.0
        refs = model.color_references.get(cid)
        if refs is not None and hist is not None:
            color = color_score(hist, refs[0], refs[1])
        pairs.append(ScorePair(grey=grey, color=color))
    return pairs


@dataclass
class EvalScores:
    """Raw score pairs for one role pair, labeled by claimed client."""

    genuine: list   # (claim_id, ScorePair)
    impostor: list  # (claim_id, ScorePair)

    def arrays(self):
        gg = np.array([p.grey for _, p in self.genuine])
        gc = np.array([p.color for _, p in self.genuine])
        ig = np.array([p.grey for _, p in self.impostor])
        ic = np.array([p.color for _, p in self.impostor])
        return gg, gc, ig, ic


def collect_scores(model: ModelFile, records, base_dir,
                   genuine_role: str, impostor_role: str,
                   samples: dict | None = None) -> EvalScores:
    """Score genuine claims (each sample against its own subject) and
    impostor claims (each sample against every enrolled client)."""
    if samples is None:
        samples = load_role_samples(records, model.geometry, base_dir,
                                    (genuine_role, impostor_role))
    client_ids = model.client_ids()
    genuine = []
    impostor = []
    for r in records:
        if r.role == genuine_role:
            pair = probe_score_pairs(model, samples[r.path], [r.subject_id])[0]
            genuine.append((r.subject_id, pair))
        elif r.role == impostor_role:
            pairs = probe_score_pairs(model, samples[r.path], client_ids)
            impostor.extend(zip(client_ids, pairs))
    return EvalScores(genuine=genuine, impostor=impostor)


@dataclass
class CalibrationResult:
    policies: dict
    global_policy: DecisionPolicy
    fusion_weight: float
    threshold: float
    far: float
    frr: float


def _stats(values: np.ndarray):
    if values.size == 0:
        return (0.0, 1.0)
    return (float(values.mean()), float(values.std()))


def _separation_margin(gen: np.ndarray, imp: np.ndarray) -> float:
    """Worst-case score gap in pooled-std units; tie-breaker for weights."""
    spread = float(np.concatenate([gen, imp]).std())
    gap = float(gen.min() - imp.max())
    return gap / spread if spread > 0 else gap


def _search_weight(zg_gen, zc_gen, zg_imp, zc_imp, grid):
    """Fusion weight minimizing evaluation-set EER.

    EER ties (common when the evaluation set separates cleanly) go to the
    weight with the larger worst-case margin, then to the smaller weight.
    """
    best_w = None
    best_key = None
    for w in grid:
        fused_gen = w * zg_gen + (1.0 - w) * zc_gen
        fused_imp = w * zg_imp + (1.0 - w) * zc_imp
        _, far, frr = calibrate_eer(fused_gen, fused_imp)
        key = ((far + frr) / 2.0, -_separation_margin(fused_gen, fused_imp))
        if best_key is None or key < best_key:
            best_w, best_key = w, key
    return best_w


def calibrate_from_scores(scores: EvalScores, mode: str, weight_grid,
                          threshold_mode: str, client_ids) -> CalibrationResult:
    """Derive normalization statistics, fusion weight, and thresholds."""
    if not scores.genuine:
        raise ManifestError("no genuine evaluation trials: cannot calibrate")
    if not scores.impostor:
        raise ManifestError("no impostor evaluation trials: cannot calibrate")
    gg, gc, ig, ic = scores.arrays()
    grey_stats = _stats(np.concatenate([gg, ig]))
    color_stats = _stats(np.concatenate([gc, ic])) if mode != "grey_only" else (0.0, 1.0)

    def z(values, stats):
        mean, std = stats
        return (values - mean) / std if std > 0 else values

    zg_gen, zg_imp = z(gg, grey_stats), z(ig, grey_stats)
    zc_gen, zc_imp = z(gc, color_stats), z(ic, color_stats)
    if mode == "grey_only":
        weight = 1.0
    elif mode == "color_only":
        weight = 0.0
    else:
        weight = _search_weight(zg_gen, zc_gen, zg_imp, zc_imp, weight_grid)
    fused_gen = weight * zg_gen + (1.0 - weight) * zc_gen
    fused_imp = weight * zg_imp + (1.0 - weight) * zc_imp

    threshold, far, frr = calibrate_eer(fused_gen, fused_imp)
    global_policy = DecisionPolicy(threshold=threshold, fusion_weight=weight,
                                   mode=mode, grey_stats=grey_stats,
                                   color_stats=color_stats)
    policies = {}
    if threshold_mode == "per_client":
        gen_claims = np.array([cid for cid, _ in scores.genuine], dtype=object)
        imp_claims = np.array([cid for cid, _ in scores.impostor], dtype=object)
        for cid in sorted(client_ids):
            own_gen = fused_gen[gen_claims == cid]
            own_imp = fused_imp[imp_claims == cid]
            if own_gen.size == 0 or own_imp.size == 0:
                raise ManifestError(
                    f"client {cid!r} lacks evaluation trials for a per-client threshold")
            t_c, _, _ = calibrate_eer(own_gen, own_imp)
            policies[cid] = DecisionPolicy(threshold=t_c, fusion_weight=weight,
                                           mode=mode, grey_stats=grey_stats,
                                           color_stats=color_stats)
    else:
        for cid in sorted(client_ids):
            policies[cid] = DecisionPolicy(threshold=threshold,
                                           fusion_weight=weight, mode=mode,
                                           grey_stats=grey_stats,
                                           color_stats=color_stats)
    return CalibrationResult(policies=policies, global_policy=global_policy,
                             fusion_weight=weight, threshold=threshold,
                             far=far, frr=frr)


@dataclass
class CalibrationSummary:
    fusion_weight: float
    threshold: float
    far: float
    frr: float
    n_genuine: int
    n_impostor: int


def calibrate_model(model: ModelFile, records, base_dir,
                    config: RunConfig, samples: dict | None = None) -> CalibrationSummary:
    """Set score statistics, fusion weight, and EER thresholds in place.

    Uses only the evaluation roles; statistics and the weight come from the
    pooled evaluation scores, thresholds from calibrate_eer (globally or
    per client, per the configuration).
    """
    scores = collect_scores(model, records, base_dir,
                            "client_eval", "impostor_eval", samples=samples)
    if not scores.genuine:
        raise ManifestError("no client_eval rows: cannot calibrate thresholds")
    if not scores.impostor:
        raise ManifestError("no impostor_eval rows: cannot calibrate thresholds")
    result = calibrate_from_scores(scores, config.fusion_mode,
                                   config.weight_grid(), config.threshold_mode,
                                   model.client_ids())
    model.policies = result.policies
    model.global_policy = result.global_policy
    eval_rows = sorted((r.path, r.subject_id, r.session, r.role)
                       for r in records if r.role.endswith("_eval"))
    model.provenance["calibration"] = {
        "fusion_mode": config.fusion_mode,
        "fusion_weight": result.fusion_weight,
        "threshold_mode": config.threshold_mode,
        "threshold": result.threshold,
        "eval_far": result.far,
        "eval_frr": result.frr,
        "eval_digest": hashlib.sha256(
            "\n".join(repr(r) for r in eval_rows).encode()).hexdigest(),
    }
    return CalibrationSummary(fusion_weight=result.fusion_weight,
                              threshold=result.threshold,
                              far=result.far, frr=result.frr,
                              n_genuine=len(scores.genuine),
                              n_impostor=len(scores.impostor))


def measure_verify_latency(model: ModelFile, trials, min_calls: int = 1000,
                           warmup: int = 50) -> float:
    """Mean microseconds per verification over at least `min_calls` calls.

    `trials` is a nonempty list of (claim_id, FaceSample) pairs cycled over.
    """
    from .decision import verify

    n_trials = len(trials)
    for i in range(warmup):
        claim, sample = trials[i % n_trials]
        verify(claim, sample, model)
    calls = max(min_calls, n_trials)
    start = time.perf_counter()
    for i in range(calls):
        claim, sample = trials[i % n_trials]
        verify(claim, sample, model)
    elapsed = time.perf_counter() - start
    return elapsed / calls * 1e6
