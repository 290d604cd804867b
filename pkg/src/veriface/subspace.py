"""Shared two-directional 2D PCA stage.

Total scatter matrices are accumulated over the image matrices themselves
(no vectorization), one per direction, and eigendecomposed with a cyclic
Jacobi solver. The resulting column/row projectors are shared by every
client template built on top of this stage.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# Jacobi sweeps stop once the off-diagonal Frobenius norm drops below this
# fraction of the input norm; 50 sweeps is far beyond what order <= 61 needs.
_JACOBI_REL_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 50


def check_symmetric(s, rel_tol: float = 1e-12) -> np.ndarray:
    """Validate a square symmetric matrix with finite entries; returns it
    as a float array."""
    a = np.asarray(s, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 0.0)
    if a.size and float(np.abs(a - a.T).max()) > rel_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return a


def _stack_samples(samples) -> np.ndarray:
    arr = np.asarray([np.asarray(s, dtype=float) for s in samples])
    if arr.ndim != 3:
        raise ValueError("samples must all be matrices of one shape")
    if arr.shape[0] < 1:
        raise ValueError("need at least one sample")
    return arr


def column_total_scatter(samples) -> np.ndarray:
    """Mean of (A_i - mean)^T (A_i - mean) over the samples; n x n PSD."""
    arr = _stack_samples(samples)
    dev = arr - arr.mean(axis=0)
    s = np.einsum("kij,kil->jl", dev, dev) / arr.shape[0]
    return (s + s.T) / 2.0


def row_total_scatter(samples) -> np.ndarray:
    """Mean of (A_i - mean)(A_i - mean)^T over the samples; m x m PSD."""
    arr = _stack_samples(samples)
    dev = arr - arr.mean(axis=0)
    s = np.einsum("kij,klj->il", dev, dev) / arr.shape[0]
    return (s + s.T) / 2.0


def _jacobi_eigh(sym: np.ndarray):
    """Cyclic Jacobi diagonalization. Returns (values, vectors) unsorted,
    vectors in columns."""
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.array([a[0, 0]]), v
    norm = float(np.linalg.norm(a, "fro"))
    if norm == 0.0:
        return np.zeros(n), v
    target = _JACOBI_REL_TOL * norm

    def off_norm():
        d = a - np.diag(np.diag(a))
        return float(np.linalg.norm(d, "fro"))

    sqrt = math.sqrt
    for sweep in range(_JACOBI_MAX_SWEEPS):
        off = off_norm()
        if off <= target:
            break
        # Small rotations are skipped early on; after a few sweeps, couplings
        # already negligible against the diagonal are zeroed outright.
        thresh = 0.2 * off / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                small = 100.0 * abs(apq)
                if sweep >= 4 and abs(app) + small == abs(app) \
                        and abs(aqq) + small == abs(aqq):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                if abs(apq) <= thresh:
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p]
                col_q = a[:, q]
                new_p = c * col_p - s * col_q
                new_q = s * col_p + c * col_q
                a[:, p] = new_p
                a[:, q] = new_q
                a[p, :] = new_p
                a[q, :] = new_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p]
                vq = v[:, q]
                new_vp = c * vp - s * vq
                new_vq = s * vp + c * vq
                v[:, p] = new_vp
                v[:, q] = new_vq
    else:
        log.warning("Jacobi sweep limit reached at off-norm %.3e (target %.3e)",
                    off_norm(), target)
    return np.diag(a).copy(), v


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (determinism)."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        idx = int(np.argmax(np.abs(out[:, j])))
        if out[idx, j] < 0:
            out[:, j] = -out[:, j]
    return out


def top_eigvecs_sym(s, k: int):
    """Top-k eigenpairs of a symmetric matrix, values descending, columns
    orthonormal, signs fixed so the dominant entry of each vector is positive.
    """
    a = check_symmetric(s, rel_tol=1e-9)
    n = a.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for order {n}")
    values, vectors = _jacobi_eigh(a)
    order = np.argsort(-values, kind="stable")
    values = values[order][:k]
    vectors = _fix_signs(vectors[:, order][:, :k])
    return vectors, values


@dataclass
class PcaStage:
    """Fitted first-stage projectors shared by all clients.

    x_p has orthonormal columns (n x g), z_p orthonormal rows (h x m), and
    mean is the grand average image.
    """

    x_p: np.ndarray
    z_p: np.ndarray
    mean: np.ndarray
    eigvals_col: np.ndarray
    eigvals_row: np.ndarray
    m: int
    n: int
    g: int
    h: int


def _energy_count(values: np.ndarray, energy: float) -> int:
    total = float(values.sum())
    if total <= 0.0:
        return 1
    cum = np.cumsum(values) / total
    return int(np.searchsorted(cum, energy) + 1)


def fit_pca_stage(samples, g: int | None = None, h: int | None = None,
                  energy: float = 0.95) -> PcaStage:
    """Fit the two-directional PCA stage on image matrices.

    When g or h is None the smallest count capturing `energy` of the
    corresponding scatter trace is used.
    """
    arr = _stack_samples(samples)
    if arr.shape[0] < 2:
        raise ValueError("need at least two samples to fit the stage")
    m, n = arr.shape[1], arr.shape[2]
    sc = column_total_scatter(arr)
    sr = row_total_scatter(arr)
    vec_c, val_c = top_eigvecs_sym(sc, n)
    vec_r, val_r = top_eigvecs_sym(sr, m)
    if g is None:
        g = min(_energy_count(val_c, energy), n)
    if h is None:
        h = min(_energy_count(val_r, energy), m)
    if not 1 <= g <= n:
        raise ValueError(f"g={g} out of range for n={n}")
    if not 1 <= h <= m:
        raise ValueError(f"h={h} out of range for m={m}")
    return PcaStage(x_p=vec_c[:, :g], z_p=vec_r[:, :h].T, mean=arr.mean(axis=0),
                    eigvals_col=val_c[:g], eigvals_row=val_r[:h],
                    m=m, n=n, g=g, h=h)


def pca_project(stage: PcaStage, a) -> np.ndarray:
    """Project an m x n matrix to its h x g stage feature: z_p @ a @ x_p.

    The raw matrix is projected as-is; mean handling happens downstream in
    the class means.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (stage.m, stage.n):
        raise ValueError(f"sample shape {a.shape} != expected {(stage.m, stage.n)}")
    return stage.z_p @ a @ stage.x_p


def pca_project_all(stage: PcaStage, samples) -> np.ndarray:
    """Project a batch with broadcast matmuls; returns (N, h, g)."""
    arr = _stack_samples(samples)
    if arr.shape[1:] != (stage.m, stage.n):
        raise ValueError(f"sample shape {arr.shape[1:]} != expected {(stage.m, stage.n)}")
    return np.matmul(np.matmul(stage.z_p, arr), stage.x_p)
