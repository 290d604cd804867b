"""Protocol partitioning, error rates, the vectorized baseline, and the
three-method comparison harness.

The harness trains on client_train, calibrates thresholds (and the fusion
weight) on the evaluation roles, scores the test roles, and reports
FAR/FRR/TER per method with measured timing.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .decision import apply_policy, calibrate_eer
from .errors import DegenerateClientError, ManifestError, SingularScatterError, VerifaceError
from .manifest import CLIENT_ROLES, ROLES
from .model import ModelFile
from .training import (build_color_references, calibrate_from_scores,
                       collect_scores, load_role_samples,
                       measure_verify_latency, probe_score_pairs, train_model,
                       validate_for_training)

log = logging.getLogger(__name__)

METHODS = ("CSF", "2D2G", "2D2GC")

REPORT_HEADER = "method,config,far,frr,ter,verify_us,train_ms"


@dataclass
class ProtocolPartition:
    """Validated role assignment for one protocol configuration."""

    config: str
    client_train: dict
    client_eval: dict
    client_test: dict
    impostor_eval: dict
    impostor_test: dict

    def counts(self) -> dict:
        return {role: sum(len(v) for v in getattr(self, role).values())
                for role in ROLES}

    def clients(self):
        return sorted(self.client_train)


def partition(records, config: str) -> ProtocolPartition:
    """Index and validate manifest roles; the roles in the manifest are
    authoritative, nothing is re-split here."""
    if config not in ("I", "II"):
        raise ManifestError(f"unknown protocol configuration {config!r}")
    seen = set()
    by_role = {role: {} for role in ROLES}
    for r in records:
        if r.role not in ROLES:
            raise ManifestError(f"unknown role {r.role!r}")
        if r.path in seen:
            raise ManifestError(f"sample {r.path!r} appears in more than one role")
        seen.add(r.path)
        by_role[r.role].setdefault(r.subject_id, []).append(r)

    client_subjects = set()
    for role in CLIENT_ROLES:
        client_subjects |= set(by_role[role])
    impostor_subjects = set(by_role["impostor_eval"]) | set(by_role["impostor_test"])
    overlap = client_subjects & impostor_subjects
    if overlap:
        raise ManifestError(
            f"subjects labeled both client and impostor: {sorted(overlap)}")
    for role in CLIENT_ROLES:
        missing = sorted(client_subjects - set(by_role[role]))
        if missing:
            raise ManifestError(f"clients missing a {role} sample: {missing}")

    part = ProtocolPartition(config=config,
                             client_train=by_role["client_train"],
                             client_eval=by_role["client_eval"],
                             client_test=by_role["client_test"],
                             impostor_eval=by_role["impostor_eval"],
                             impostor_test=by_role["impostor_test"])
    log.info("partition %s: %s", config, part.counts())
    return part


def compute_rates(outcomes):
    """FAR, FRR, TER in percent from (true_role, accepted) pairs.

    true_role is "genuine" or "impostor"; TER is their sum by definition.
    """
    n_gen = n_imp = fa = fr = 0
    for role, accepted in outcomes:
        if role == "genuine":
            n_gen += 1
            if not accepted:
                fr += 1
        elif role == "impostor":
            n_imp += 1
            if accepted:
                fa += 1
        else:
            raise ValueError(f"unknown trial role {role!r}")
    if n_gen == 0 or n_imp == 0:
        raise ValueError("need at least one genuine and one impostor trial")
    far = fa / n_imp * 100.0
    frr = fr / n_gen * 100.0
    return far, frr, far + frr


# ---------------------------------------------------------------------------
# Vectorized baseline: standard PCA on raveled images plus a per-client
# two-class Fisher direction, scoring by the same difference-of-distances
# rule specialized to scalars.

@dataclass
class CsfStage:
    mean: np.ndarray    # (dim,)
    basis: np.ndarray   # (dim, p), orthonormal columns
    eigvals: np.ndarray

    def reduce(self, greys) -> np.ndarray:
        flat = np.asarray([np.asarray(g, dtype=float).ravel() for g in greys])
        return (flat - self.mean) @ self.basis


@dataclass
class CsfClient:
    client_id: str
    direction: np.ndarray  # (p,), unit norm
    mu_c: float
    mu_i: float

    def score(self, reduced_probe) -> float:
        y = float(np.dot(reduced_probe, self.direction))
        return abs(y - self.mu_i) - abs(y - self.mu_c)


@dataclass
class CsfClientModel:
    """Stand-alone scalar-projection model for one client."""

    stage: CsfStage
    client: CsfClient

    def score(self, grey) -> float:
        return self.client.score(self.stage.reduce([grey])[0])


def fit_csf_stage(greys, energy: float = 0.95, p: int | None = None) -> CsfStage:
    """PCA over raveled images via the Gram matrix of the centered samples."""
    flat = np.asarray([np.asarray(g, dtype=float).ravel() for g in greys])
    n = flat.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    mean = flat.mean(axis=0)
    centered = flat - mean
    gram = centered @ centered.T / n
    vals, vecs = np.linalg.eigh((gram + gram.T) / 2.0)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    positive = vals > max(vals[0], 0.0) * 1e-12
    n_pos = max(int(positive.sum()), 1)
    if p is None:
        total = float(vals[:n_pos].sum())
        cum = np.cumsum(vals[:n_pos]) / total if total > 0 else np.ones(n_pos)
        p = int(np.searchsorted(cum, energy) + 1)
    p = min(p, n_pos)
    basis = centered.T @ vecs[:, :p] / np.sqrt(n * vals[:p])
    for j in range(p):
        idx = int(np.argmax(np.abs(basis[:, j])))
        if basis[idx, j] < 0:
            basis[:, j] = -basis[:, j]
    return CsfStage(mean=mean, basis=basis, eigvals=vals[:p].copy())


def build_csf_client(stage: CsfStage, reduced, labels, client_id,
                     ridge: float = 1e-6) -> CsfClient:
    """Two-class Fisher direction in the reduced space for one client."""
    reduced = np.asarray(reduced, dtype=float)
    labels = np.asarray(labels, dtype=object)
    is_client = labels == client_id
    if not is_client.any():
        raise ValueError(f"no samples labeled {client_id!r}")
    if is_client.all():
        raise ValueError("no imposter-class samples present")
    own = reduced[is_client]
    imp = reduced[~is_client]
    mu_c = own.mean(axis=0)
    mu_i = imp.mean(axis=0)
    diff = mu_c - mu_i
    if float(np.linalg.norm(diff)) <= 1e-12:
        raise DegenerateClientError(client_id)
    dev_c = own - mu_c
    dev_i = imp - mu_i
    n = reduced.shape[0]
    s_w = (dev_c.T @ dev_c + dev_i.T @ dev_i) / n
    p = s_w.shape[0]
    trace = float(np.trace(s_w))
    # The reduced within-scatter is often rank-deficient at desk scale, so
    # the trace-scaled ridge is applied unconditionally here.
    s_reg = s_w + (ridge * max(trace, 1e-300) / p) * np.eye(p)
    try:
        direction = np.linalg.solve(s_reg, diff)
    except np.linalg.LinAlgError as exc:
        raise SingularScatterError(
            f"client {client_id!r}: baseline within-scatter is singular") from exc
    norm = float(np.linalg.norm(direction))
    if norm == 0.0 or not np.isfinite(norm):
        raise SingularScatterError(
            f"client {client_id!r}: baseline Fisher direction is degenerate")
    direction = direction / norm
    return CsfClient(client_id=client_id, direction=direction,
                     mu_c=float(direction @ mu_c), mu_i=float(direction @ mu_i))


def csf_baseline(train_samples, client_id, energy: float = 0.95,
                 ridge: float = 1e-6) -> CsfClientModel:
    """Fit the baseline for a single client from labeled FaceSamples."""
    greys = [s.grey for s in train_samples]
    labels = [s.subject_id for s in train_samples]
    stage = fit_csf_stage(greys, energy=energy)
    client = build_csf_client(stage, stage.reduce(greys), labels, client_id,
                              ridge=ridge)
    return CsfClientModel(stage=stage, client=client)


# ---------------------------------------------------------------------------
# Comparison harness and report.

@dataclass
class MethodRow:
    method: str
    config: str
    far: float
    frr: float
    ter: float
    verify_us: float | None = None
    train_ms: float | None = None

    def csv_line(self) -> str:
        t_us = "" if self.verify_us is None else f"{self.verify_us:.3f}"
        t_ms = "" if self.train_ms is None else f"{self.train_ms:.3f}"
        return (f"{self.method},{self.config},{self.far:.4f},{self.frr:.4f},"
                f"{self.ter:.4f},{t_us},{t_ms}")


@dataclass
class EvalReport:
    rows: list
    failures: dict = field(default_factory=dict)

    def row(self, method: str) -> MethodRow:
        for row in self.rows:
            if row.method == method:
                return row
        raise KeyError(method)

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        lines += [row.csv_line() for row in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = []
        configs = sorted({row.config for row in self.rows})
        for cfg in configs:
            lines.append(f"Configuration {cfg}")
            lines.append(f"  {'method':<8} {'FAR%':>8} {'FRR%':>8} {'TER%':>8} "
                         f"{'verify_us':>10} {'train_ms':>10}")
            for row in self.rows:
                if row.config != cfg:
                    continue
                t_us = "-" if row.verify_us is None else f"{row.verify_us:.1f}"
                t_ms = "-" if row.train_ms is None else f"{row.train_ms:.1f}"
                lines.append(f"  {row.method:<8} {row.far:>8.2f} {row.frr:>8.2f} "
                             f"{row.ter:>8.2f} {t_us:>10} {t_ms:>10}")
        for method, message in sorted(self.failures.items()):
            lines.append(f"  {method}: FAILED ({message})")
        return "\n".join(lines) + "\n"


def _test_trials(part: ProtocolPartition):
    """(claim_id, record, true_role) triples for the test roles."""
    trials = []
    clients = part.clients()
    for cid in clients:
        for r in part.client_test.get(cid, []):
            trials.append((cid, r, "genuine"))
    for subject in sorted(part.impostor_test):
        for r in part.impostor_test[subject]:
            for cid in clients:
                trials.append((cid, r, "impostor"))
    return trials


def _collect_trial_pairs(model, trials, samples):
    """Score every (claim, record, role) test trial, extracting each probe's
    color histogram only once."""
    by_record = {}
    for claim, record, role in trials:
        by_record.setdefault(record.path, []).append((claim, role))
    pair_map = {}
    for path, claims_roles in by_record.items():
        claims = [claim for claim, _ in claims_roles]
        pairs = probe_score_pairs(model, samples[path], claims)
        for (claim, role), pair in zip(claims_roles, pairs):
            pair_map[(path, claim)] = (role, pair)
    return [(claim, record, *pair_map[(record.path, claim)])
            for claim, record, role in trials]


def _run_2d_methods(wanted, records, part, runconfig, base_dir, samples,
                    measure_timing):
    """Train the shared 2D stage once and evaluate the grey-only and fused
    variants on top of it.

    The stage, templates, and raw scores are identical for both variants;
    only calibration differs, so the training cost is paid once and the
    color-reference cost is attributed to the fused method alone.
    """
    base_config = replace(runconfig, fusion_mode="fused")
    t0 = time.perf_counter()
    model = train_model(records, base_dir, base_config, with_color=False,
                        samples=samples, diagnostics=False)
    shared_ms = (time.perf_counter() - t0) * 1e3
    color_ms = 0.0
    if "2D2GC" in wanted:
        train_records = [r for r in records if r.role == "client_train"]
        t0 = time.perf_counter()
        model.color_references = build_color_references(
            [samples[r.path] for r in train_records], model.client_ids(),
            base_config)
        color_ms = (time.perf_counter() - t0) * 1e3

    eval_scores = collect_scores(model, records, base_dir,
                                 "client_eval", "impostor_eval", samples=samples)
    trials = _test_trials(part)
    scored_trials = _collect_trial_pairs(model, trials, samples)

    rows = []
    for method in ("2D2G", "2D2GC"):
        if method not in wanted:
            continue
        mode = "grey_only" if method == "2D2G" else "fused"
        result = calibrate_from_scores(eval_scores, mode,
                                       runconfig.weight_grid(),
                                       runconfig.threshold_mode,
                                       model.client_ids())
        outcomes = []
        for claim, record, role, pair in scored_trials:
            policy = result.policies.get(claim, result.global_policy)
            accepted, _, _ = apply_policy(pair, policy)
            outcomes.append((role, accepted))
        far, frr, ter = compute_rates(outcomes)

        verify_us = None
        train_ms = None
        if measure_timing:
            method_model = ModelFile(
                geometry=model.geometry, pca_stage=model.pca_stage,
                client_templates=model.client_templates,
                color_references=model.color_references if method == "2D2GC" else {},
                policies=result.policies, global_policy=result.global_policy,
                features=model.features)
            probe_trials = [(claim, samples[record.path])
                            for claim, record, _ in trials]
            verify_us = measure_verify_latency(method_model, probe_trials)
            train_ms = shared_ms + (color_ms if method == "2D2GC" else 0.0)
        rows.append(MethodRow(method=method, config=part.config, far=far,
                              frr=frr, ter=ter, verify_us=verify_us,
                              train_ms=train_ms))
    return rows


def _run_csf_method(records, part, runconfig, base_dir, samples,
                    measure_timing):
    validate_for_training(records)
    clients = part.clients()
    train_records = [r for r in records if r.role == "client_train"]
    train_samples = [samples[r.path] for r in train_records]
    greys = [s.grey for s in train_samples]
    labels = [s.subject_id for s in train_samples]

    t0 = time.perf_counter()
    stage = fit_csf_stage(greys, energy=runconfig.energy)
    reduced = stage.reduce(greys)
    models = {cid: build_csf_client(stage, reduced, labels, cid,
                                    ridge=runconfig.ridge)
              for cid in clients}
    train_ms = (time.perf_counter() - t0) * 1e3

    def score(claim, sample):
        r = stage.reduce([sample.grey])[0]
        return models[claim].score(r)

    gen_scores = [score(cid, samples[r.path])
                  for cid in clients for r in part.client_eval.get(cid, [])]
    imp_scores = [score(cid, samples[r.path])
                  for subject in sorted(part.impostor_eval)
                  for r in part.impostor_eval[subject] for cid in clients]
    if not gen_scores or not imp_scores:
        raise ManifestError("evaluation roles missing for baseline calibration")
    threshold, _, _ = calibrate_eer(gen_scores, imp_scores)

    trials = _test_trials(part)
    outcomes = [(role, score(claim, samples[record.path]) > threshold)
                for claim, record, role in trials]
    far, frr, ter = compute_rates(outcomes)

    verify_us = None
    if measure_timing:
        probe_trials = [(claim, samples[record.path])
                        for claim, record, _ in trials]
        n = len(probe_trials)
        for i in range(50):
            claim, sample = probe_trials[i % n]
            score(claim, sample)
        calls = max(1000, n)
        t0 = time.perf_counter()
        for i in range(calls):
            claim, sample = probe_trials[i % n]
            score(claim, sample)
        verify_us = (time.perf_counter() - t0) / calls * 1e6
    return MethodRow(method="CSF", config=part.config, far=far, frr=frr,
                     ter=ter, verify_us=verify_us,
                     train_ms=train_ms if measure_timing else None)


def run_comparison(records, config: str, methods=METHODS,
                   runconfig: RunConfig | None = None, base_dir=".",
                   measure_timing: bool = True) -> EvalReport:
    """Train, calibrate, and test every requested method on one manifest.

    A method that fails to train or calibrate is reported in
    EvalReport.failures without aborting the others.
    """
    if runconfig is None:
        runconfig = RunConfig()
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    part = partition(records, config)
    samples = load_role_samples(records, runconfig.geometry(), base_dir, ROLES)

    rows = []
    failures = {}
    if "CSF" in methods:
        try:
            rows.append(_run_csf_method(records, part, runconfig, base_dir,
                                        samples, measure_timing))
        except VerifaceError as exc:
            log.error("method CSF failed: %s", exc)
            failures["CSF"] = str(exc)
    wanted_2d = tuple(m for m in methods if m in ("2D2G", "2D2GC"))
    if wanted_2d:
        try:
            rows.extend(_run_2d_methods(wanted_2d, records, part, runconfig,
                                        base_dir, samples, measure_timing))
        except VerifaceError as exc:
            log.error("2D methods failed: %s", exc)
            for method in wanted_2d:
                failures[method] = str(exc)
    order = {m: i for i, m in enumerate(methods)}
    rows.sort(key=lambda row: order[row.method])
    return EvalReport(rows=rows, failures=failures)
