"""Per-client two-class discriminant stage on top of the shared PCA stage.

For a claimed client, their stage-projected training matrices form class
one and everyone else's form class two. Within- and between-class scatter
matrices are built in both matrix directions, the discriminant directions
come from a whitened generalized eigensolve, and the result is folded into
a single pair of composite projectors plus the two projected class means.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClientError, SingularScatterError
from .subspace import PcaStage, check_symmetric, pca_project_all, top_eigvecs_sym

log = logging.getLogger(__name__)

_RANK_EPS = 1e-10


@dataclass
class ScatterSet:
    """The four discriminant scatters for one client's two-class split."""

    sc_w: np.ndarray  # g x g within-class, column direction
    sc_b: np.ndarray  # g x g between-class, column direction (rank <= 1)
    sr_w: np.ndarray  # h x h within-class, row direction
    sr_b: np.ndarray  # h x h between-class, row direction (rank <= 1)
    n_client: int
    n_total: int
    n_classes: int


@dataclass
class NonsingularityReport:
    """Sample-count condition and measured ranks for the within-scatters."""

    n_total: int
    n_classes: int
    g: int
    h: int
    col_condition_ok: bool
    row_condition_ok: bool
    rank_sc_w: int
    rank_sr_w: int
    rank_bound: int  # (N - D) * min(h, g)

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "n_classes": self.n_classes,
            "g": self.g,
            "h": self.h,
            "col_condition_ok": self.col_condition_ok,
            "row_condition_ok": self.row_condition_ok,
            "rank_sc_w": self.rank_sc_w,
            "rank_sr_w": self.rank_sr_w,
            "rank_bound": self.rank_bound,
        }


def client_scatters(projected, client_id) -> ScatterSet:
    """Build the four scatters from (feature_matrix, subject_label) pairs.

    Class one is the claimed client, class two pools every other subject.
    The within-class scatters are normalized by the total sample count; the
    between-class scatters are plain outer products of the mean difference.
    """
    feats = []
    labels = []
    for mat, label in projected:
        feats.append(np.asarray(mat, dtype=float))
        labels.append(label)
    if not feats:
        raise ValueError("no projected samples given")
    arr = np.asarray(feats)
    if arr.ndim != 3:
        raise ValueError("projected features must share one 2-D shape")
    labels = np.asarray(labels, dtype=object)
    is_client = labels == client_id
    n_client = int(is_client.sum())
    n_total = arr.shape[0]
    if n_client == 0:
        raise ValueError(f"no samples labeled {client_id!r}")
    if n_client == n_total:
        raise ValueError("no imposter-class samples present")

    client = arr[is_client]
    imp = arr[~is_client]
    m_c = client.mean(axis=0)
    m_i = imp.mean(axis=0)
    dev_c = client - m_c
    dev_i = imp - m_i

    sc_w = (np.einsum("kij,kil->jl", dev_c, dev_c)
            + np.einsum("kij,kil->jl", dev_i, dev_i)) / n_total
    sr_w = (np.einsum("kij,klj->il", dev_c, dev_c)
            + np.einsum("kij,klj->il", dev_i, dev_i)) / n_total
    diff = m_c - m_i
    sc_b = diff.T @ diff
    sr_b = diff @ diff.T
    return ScatterSet(sc_w=(sc_w + sc_w.T) / 2.0, sc_b=(sc_b + sc_b.T) / 2.0,
                      sr_w=(sr_w + sr_w.T) / 2.0, sr_b=(sr_b + sr_b.T) / 2.0,
                      n_client=n_client, n_total=n_total,
                      n_classes=len(set(labels.tolist())))


def _numerical_rank(sym: np.ndarray) -> int:
    # Diagnostic only, never a projector source, so the stock symmetric
    # eigenvalue routine is fine here.
    vals = np.linalg.eigvalsh((sym + sym.T) / 2.0)
    trace = float(np.trace(sym))
    if trace <= 0.0:
        return int((vals > 0.0).sum())
    return int((vals > _RANK_EPS * trace).sum())


def nonsingularity_check(s: ScatterSet) -> NonsingularityReport:
    """Diagnose whether the within-scatters can be inverted.

    Checks the sample-count condition N >= D + g/min(h, g) (and its row
    analogue) and reports the measured numerical ranks.
    """
    g = s.sc_w.shape[0]
    h = s.sr_w.shape[0]
    mind = min(h, g)
    col_ok = s.n_total >= s.n_classes + g / mind
    row_ok = s.n_total >= s.n_classes + h / mind
    return NonsingularityReport(
        n_total=s.n_total, n_classes=s.n_classes, g=g, h=h,
        col_condition_ok=bool(col_ok), row_condition_ok=bool(row_ok),
        rank_sc_w=_numerical_rank(s.sc_w), rank_sr_w=_numerical_rank(s.sr_w),
        rank_bound=(s.n_total - s.n_classes) * mind)


def fisher_directions(s_w, s_b, k: int, ridge: float = 1e-6):
    """Top-k generalized discriminant directions for the pencil (s_b, s_w).

    Solved by whitening: Cholesky-factor s_w, eigendecompose the whitened
    between-scatter, and back-transform. If the raw factorization fails,
    one trace-scaled ridge is added to the diagonal and factorization is
    retried, keeping the solver total on rank-deficient desk-scale data
    without perturbing well-posed problems.

    Returns (columns, generalized eigenvalues), columns normalized to unit
    length with deterministic signs, eigenvalues descending. In the
    two-class setting s_b has rank <= 1, so requesting k > 1 pads with
    near-zero-eigenvalue directions and logs a warning.
    """
    s_w = check_symmetric(s_w, rel_tol=1e-9)
    s_b = check_symmetric(s_b, rel_tol=1e-9)
    order = s_w.shape[0]
    if s_b.shape != s_w.shape:
        raise ValueError("scatter shapes disagree")
    if not 1 <= k <= order:
        raise ValueError(f"k={k} out of range for order {order}")

    lower = None
    try:
        lower = np.linalg.cholesky(s_w)
    except np.linalg.LinAlgError:
        trace = float(np.trace(s_w))
        if ridge > 0.0 and trace > 0.0:
            try:
                lower = np.linalg.cholesky(s_w + (ridge * trace / order) * np.eye(order))
            except np.linalg.LinAlgError:
                lower = None
    if lower is None:
        raise SingularScatterError(
            "within-class scatter is singular even after ridge regularization")

    white = np.linalg.solve(lower, s_b)
    white = np.linalg.solve(lower, white.T).T
    white = (white + white.T) / 2.0
    u, values = top_eigvecs_sym(white, k)
    vectors = np.linalg.solve(lower.T, u)
    vectors = vectors / np.linalg.norm(vectors, axis=0)
    for j in range(vectors.shape[1]):
        idx = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[idx, j] < 0:
            vectors[:, j] = -vectors[:, j]

    sig_thresh = _RANK_EPS * max(1.0, abs(float(values[0])) if len(values) else 1.0)
    significant = int((values > sig_thresh).sum())
    if k > max(significant, 1):
        log.warning("requested %d discriminant directions but only %d carry "
                    "signal; the rest are near-null padding", k, significant)
    return vectors, values


@dataclass
class ClientTemplate:
    """Composite projectors and projected class means for one client."""

    client_id: str
    z: np.ndarray    # q x m composite row projector
    x: np.ndarray    # n x d composite column projector
    m_c: np.ndarray  # q x d projected client mean
    m_i: np.ndarray  # q x d projected imposter mean
    q: int
    d: int

    def __post_init__(self):
        if self.z.shape[0] != self.q or self.x.shape[1] != self.d:
            raise ValueError("projector shapes disagree with q, d")
        if self.m_c.shape != (self.q, self.d) or self.m_i.shape != (self.q, self.d):
            raise ValueError("projected means must be q x d")

    def project(self, a) -> np.ndarray:
        """One-shot feature projection of an m x n matrix."""
        return self.z @ np.asarray(a, dtype=float) @ self.x


def _template_from_projected(stage: PcaStage, projected, labels, raw_sum,
                             raw_sums_by_label, client_id, q, d, ridge,
                             diagnostics=True):
    pairs = list(zip(projected, labels))
    scatters = client_scatters(pairs, client_id)
    report = nonsingularity_check(scatters) if diagnostics else None
    if report is not None:
        log.debug("client %r nonsingularity: %s", client_id, report.to_dict())
    try:
        x_f, _ = fisher_directions(scatters.sc_w, scatters.sc_b, d, ridge)
        z_cols, _ = fisher_directions(scatters.sr_w, scatters.sr_b, q, ridge)
    except SingularScatterError as exc:
        raise SingularScatterError(
            f"client {client_id!r}: {exc}",
            diagnosis=report or nonsingularity_check(scatters)) from exc
    z_f = z_cols.T
    z = z_f @ stage.z_p
    x = stage.x_p @ x_f

    n_client = scatters.n_client
    n_total = scatters.n_total
    mean_client = raw_sums_by_label[client_id] / n_client
    mean_imp = (raw_sum - raw_sums_by_label[client_id]) / (n_total - n_client)
    m_c = z @ mean_client @ x
    m_i = z @ mean_imp @ x
    if float(np.linalg.norm(m_c - m_i)) <= 1e-12:
        raise DegenerateClientError(client_id)
    return ClientTemplate(client_id=client_id, z=z, x=x, m_c=m_c, m_i=m_i,
                          q=q, d=d), report


def build_client_template(stage: PcaStage, samples, client_id,
                          q: int = 1, d: int = 1, ridge: float = 1e-6) -> ClientTemplate:
    """Build one client's template from labeled FaceSamples.

    `samples` is the whole training set; anything not labeled `client_id`
    is pooled into the imposter class.
    """
    greys = [np.asarray(s.grey, dtype=float) for s in samples]
    labels = [s.subject_id for s in samples]
    projected = pca_project_all(stage, greys)
    raw_sum = np.sum(greys, axis=0)
    sums = {}
    for grey, label in zip(greys, labels):
        sums[label] = sums.get(label, 0.0) + grey
    template, _ = _template_from_projected(stage, projected, labels, raw_sum,
                                           sums, client_id, q, d, ridge)
    return template


def build_all_templates(stage: PcaStage, samples, client_ids,
                        q: int = 1, d: int = 1, ridge: float = 1e-6,
                        threads: int = 1, diagnostics: bool = True):
    """Project once and build every client's template.

    Returns (templates, reports), both keyed by client id; reports hold
    None when diagnostics are disabled. Clients are independent; with
    threads > 1 they are built concurrently and assembled in sorted-id
    order so results never depend on scheduling.
    """
    greys = [np.asarray(s.grey, dtype=float) for s in samples]
    labels = [s.subject_id for s in samples]
    projected = pca_project_all(stage, greys)
    raw_sum = np.sum(greys, axis=0)
    sums = {}
    for grey, label in zip(greys, labels):
        sums[label] = sums.get(label, 0.0) + grey

    ordered = sorted(client_ids)

    def build(cid):
        return _template_from_projected(stage, projected, labels, raw_sum,
                                        sums, cid, q, d, ridge,
                                        diagnostics=diagnostics)

    templates = {}
    reports = {}
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(build, ordered))
        for cid, (template, report) in zip(ordered, results):
            templates[cid] = template
            reports[cid] = report
    else:
        for cid in ordered:
            templates[cid], reports[cid] = build(cid)
    return templates, reports
