"""Synthetic dataset generator for desk-scale experiments.

Each subject gets a grey prototype built from a few rank-1 terms, so the
two-directional projections have real row/column structure to find, plus a
subject-specific chroma mean inside the skin box. Images are written as
binary PPM at the canonical geometry with eye annotations already at the
targets, and the matching manifest is emitted alongside.
"""

import logging
from pathlib import Path

import numpy as np

from .imaging import GeometryConfig, save_ppm
from .manifest import ManifestRecord, save_manifest

log = logging.getLogger(__name__)

# Luma and chroma boxes chosen so the inverse BT.601 transform never clips:
# r = y + 1.402 (cr - 128) stays under 255 and b = y + 1.772 (cb - 128)
# stays over 0 for every value inside these ranges.
_Y_LO, _Y_HI = 60.0, 190.0
_CR_LO, _CR_HI = 134.0, 172.0
_CB_LO, _CB_HI = 98.0, 126.0
_BASIS_RANK = 6          # shared structure directions per matrix side
_STRUCT_STD = 5.6        # per-pixel between-subject std at separation 1
_NOISE_STD = 30.0        # per-pixel within-subject std at noise 1
_SESSION_CHROMA_STD = 1.5  # per-sample chroma shift (illumination drift)
_PIXEL_CHROMA_STD = 2.5


def _ycbcr_to_rgb(y, cr, cb):
    r = y + 1.402 * (cr - 128.0)
    g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0)
    b = y + 1.772 * (cb - 128.0)
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _shared_basis(rng, rows, cols):
    """One low-rank basis per dataset; subjects differ by coefficients, so
    the population scatter concentrates in a few directions per side."""
    u, _ = np.linalg.qr(rng.standard_normal((rows, _BASIS_RANK)))
    v, _ = np.linalg.qr(rng.standard_normal((cols, _BASIS_RANK)))
    return u, v


def _subject_prototype(rng, u, v, rows, cols, grey_separation):
    # With orthonormal u, v the Frobenius norm of the structure equals the
    # coefficient norm; scale so the per-pixel std is _STRUCT_STD.
    coeff_scale = grey_separation * _STRUCT_STD * np.sqrt(rows * cols) / _BASIS_RANK
    coeffs = coeff_scale * rng.standard_normal((_BASIS_RANK, _BASIS_RANK))
    return 122.0 + u @ coeffs @ v.T


def _subject_chroma(rng, chroma_separation):
    cr = 153.0 + 18.0 * chroma_separation * rng.uniform(-1.0, 1.0)
    cb = 112.0 + 13.0 * chroma_separation * rng.uniform(-1.0, 1.0)
    return cr, cb


def synth_generate(out_dir, seed: int = 0, n_clients: int = 20,
                   train_per_client: int = 8, eval_per_client: int = 4,
                   test_per_client: int = 4, n_impostors_eval: int = 5,
                   n_impostors_test: int = 5, samples_per_impostor: int = 4,
                   grey_separation: float = 1.0, chroma_separation: float = 1.0,
                   noise: float = 1.0,
                   geometry: GeometryConfig | None = None) -> Path:
    """Write a synthetic dataset and return the manifest path.

    Deterministic per seed: the same arguments always produce bit-identical
    images and manifest.
    """
    if geometry is None:
        geometry = GeometryConfig()
    counts = {"n_clients": n_clients, "train_per_client": train_per_client,
              "eval_per_client": eval_per_client, "test_per_client": test_per_client,
              "n_impostors_eval": n_impostors_eval,
              "n_impostors_test": n_impostors_test,
              "samples_per_impostor": samples_per_impostor}
    for name, value in counts.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    if noise < 0 or grey_separation < 0 or chroma_separation < 0:
        raise ValueError("separations and noise must be >= 0")

    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows, cols = geometry.rows, geometry.cols
    ly, lx = geometry.left_eye_px
    ry, rx = geometry.right_eye_px

    client_roles = (["client_train"] * train_per_client
                    + ["client_eval"] * eval_per_client
                    + ["client_test"] * test_per_client)
    subjects = [(f"c{i:03d}", client_roles) for i in range(n_clients)]
    subjects += [(f"i{i:03d}",
                  ["impostor_eval" if i < n_impostors_eval else "impostor_test"]
                  * samples_per_impostor)
                 for i in range(n_impostors_eval + n_impostors_test)]

    basis_u, basis_v = _shared_basis(rng, rows, cols)
    records = []
    for subject_id, roles in subjects:
        proto = _subject_prototype(rng, basis_u, basis_v, rows, cols,
                                   grey_separation)
        cr_mean, cb_mean = _subject_chroma(rng, chroma_separation)
        for session, role in enumerate(roles):
            y = proto + _NOISE_STD * noise * rng.standard_normal((rows, cols))
            y = np.clip(y, _Y_LO, _Y_HI)
            cr = np.clip(cr_mean + rng.normal(0.0, _SESSION_CHROMA_STD)
                         + _PIXEL_CHROMA_STD * rng.standard_normal((rows, cols)),
                         _CR_LO, _CR_HI)
            cb = np.clip(cb_mean + rng.normal(0.0, _SESSION_CHROMA_STD)
                         + _PIXEL_CHROMA_STD * rng.standard_normal((rows, cols)),
                         _CB_LO, _CB_HI)
            name = f"{subject_id}_s{session:02d}.ppm"
            save_ppm(image_dir / name, _ycbcr_to_rgb(y, cr, cb))
            records.append(ManifestRecord(
                path=f"images/{name}", subject_id=subject_id, session=session,
                role=role, lx=lx, ly=ly, rx=rx, ry=ry))

    manifest_path = out_dir / "manifest.csv"
    save_manifest(manifest_path, records)
    log.info("synthetic dataset: %d images under %s", len(records), out_dir)
    return manifest_path
