import numpy as np
import pytest

from veriface.subspace import (PcaStage, column_total_scatter, fit_pca_stage,
                               pca_project, pca_project_all, row_total_scatter,
                               top_eigvecs_sym)


def triple_product_oracle(z, a, x):
    """Naive scalar-loop evaluation of z @ a @ x."""
    h, m = z.shape
    n, g = x.shape
    out = np.zeros((h, g))
    for i in range(h):
        for j in range(g):
            acc = 0.0
            for r in range(m):
                for c in range(n):
                    acc += z[i, r] * a[r, c] * x[c, j]
            out[i, j] = acc
    return out


def test_total_scatters_vanish_for_identical_samples():
    a = np.arange(12.0).reshape(3, 4)
    samples = [a, a.copy(), a.copy()]
    assert np.allclose(column_total_scatter(samples), 0.0)
    assert np.allclose(row_total_scatter(samples), 0.0)


def test_total_scatters_hand_evaluated_pair():
    samples = [np.array([[1.0, 0.0], [0.0, 0.0]]),
               np.array([[-1.0, 0.0], [0.0, 0.0]])]
    expected = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert np.allclose(column_total_scatter(samples), expected)
    assert np.allclose(row_total_scatter(samples), expected)


def test_scatter_traces_match_frobenius_identity():
    rng = np.random.default_rng(0)
    samples = rng.standard_normal((6, 4, 5))
    sc = column_total_scatter(samples)
    sr = row_total_scatter(samples)
    dev = samples - samples.mean(axis=0)
    frob = (dev ** 2).sum() / len(samples)
    assert np.trace(sc) == pytest.approx(frob, rel=1e-12)
    assert np.trace(sr) == pytest.approx(np.trace(sc), rel=1e-12)


def test_scatters_are_psd_on_random_sets():
    rng = np.random.default_rng(1)
    for _ in range(10):
        samples = rng.standard_normal((5, 6, 4))
        for s in (column_total_scatter(samples), row_total_scatter(samples)):
            vals = np.linalg.eigvalsh(s)
            assert vals.min() >= -1e-10


def test_scatter_input_validation():
    with pytest.raises(ValueError):
        column_total_scatter([])
    with pytest.raises(ValueError):
        column_total_scatter([np.zeros((2, 2)), np.zeros((3, 2))])


def test_top_eigvecs_identity_accepts_any_orthonormal_pair():
    vecs, vals = top_eigvecs_sym(np.eye(3), 2)
    assert np.allclose(vals, [1.0, 1.0])
    assert np.allclose(vecs.T @ vecs, np.eye(2), atol=1e-12)
    residual = np.eye(3) @ vecs - vecs * vals
    assert np.abs(residual).max() <= 1e-12


def test_top_eigvecs_diagonal_case():
    vecs, vals = top_eigvecs_sym(np.diag([3.0, 1.0]), 1)
    assert np.allclose(vals, [3.0])
    assert np.allclose(np.abs(vecs[:, 0]), [1.0, 0.0])


def test_top_eigvecs_two_by_two_hand_solved():
    # Characteristic polynomial of [[2,1],[1,2]] gives 3 and 1.
    vecs, vals = top_eigvecs_sym(np.array([[2.0, 1.0], [1.0, 2.0]]), 2)
    assert np.allclose(vals, [3.0, 1.0], atol=1e-12)
    s = 1.0 / np.sqrt(2.0)
    assert np.allclose(vecs[:, 0], [s, s], atol=1e-12)
    assert np.allclose(vecs[:, 1], [s, -s], atol=1e-12)


def test_top_eigvecs_rejects_bad_inputs():
    with pytest.raises(ValueError):
        top_eigvecs_sym(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)
    with pytest.raises(ValueError):
        top_eigvecs_sym(np.eye(3), 0)
    with pytest.raises(ValueError):
        top_eigvecs_sym(np.eye(3), 4)


def test_top_eigvecs_sign_convention_is_deterministic():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((8, 8))
    a = a + a.T
    vecs, _ = top_eigvecs_sym(a, 8)
    for j in range(8):
        idx = np.argmax(np.abs(vecs[:, j]))
        assert vecs[idx, j] > 0


def test_fit_pca_stage_full_rank_round_trip():
    rng = np.random.default_rng(3)
    samples = rng.standard_normal((5, 4, 3))
    stage = fit_pca_stage(samples, g=3, h=4)
    for a in samples:
        w_dev = pca_project(stage, a - stage.mean)
        rec = stage.z_p.T @ w_dev @ stage.x_p.T
        assert np.allclose(rec, a - stage.mean, atol=1e-8)
        rec_raw = stage.z_p.T @ pca_project(stage, a) @ stage.x_p.T
        assert np.allclose(rec_raw, a, atol=1e-8)


def test_fit_pca_stage_rank_one_deviations():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((4, 6))
    u = rng.standard_normal(4)
    v = rng.standard_normal(6)
    coeffs = [1.0, -0.5, 2.0, -2.5]
    samples = [base + c * np.outer(u, v) for c in coeffs]
    stage = fit_pca_stage(samples, g=6, h=4)
    assert (stage.eigvals_col[1:] <= 1e-10).all()
    assert (stage.eigvals_row[1:] <= 1e-10).all()


def test_fit_pca_stage_zero_samples_all_zero_eigvals():
    samples = [np.zeros((3, 4)) for _ in range(3)]
    stage = fit_pca_stage(samples, g=2, h=2)
    assert np.allclose(stage.eigvals_col, 0.0)
    assert np.allclose(stage.eigvals_row, 0.0)
    assert np.allclose(stage.x_p.T @ stage.x_p, np.eye(2), atol=1e-8)
    assert np.allclose(stage.z_p @ stage.z_p.T, np.eye(2), atol=1e-8)


def test_fit_pca_stage_validates_dimensions():
    samples = np.zeros((3, 4, 5))
    with pytest.raises(ValueError):
        fit_pca_stage(samples, g=6, h=2)
    with pytest.raises(ValueError):
        fit_pca_stage(samples[:1], g=2, h=2)


def test_pca_project_identity_projectors():
    stage = PcaStage(x_p=np.eye(3), z_p=np.eye(4), mean=np.zeros((4, 3)),
                     eigvals_col=np.ones(3), eigvals_row=np.ones(4),
                     m=4, n=3, g=3, h=4)
    a = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(pca_project(stage, a), a)
    assert np.array_equal(pca_project(stage, np.zeros((4, 3))), np.zeros((4, 3)))


def test_pca_project_matches_scalar_loop_oracle():
    rng = np.random.default_rng(5)
    z, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    x, _ = np.linalg.qr(rng.standard_normal((3, 2)))
    z = z.T  # 2 x 4 with orthonormal rows
    a = rng.standard_normal((4, 3))
    stage = PcaStage(x_p=x, z_p=z, mean=np.zeros((4, 3)),
                     eigvals_col=np.ones(2), eigvals_row=np.ones(2),
                     m=4, n=3, g=2, h=2)
    assert np.allclose(pca_project(stage, a), triple_product_oracle(z, a, x),
                       atol=1e-12)


def test_pca_project_shape_mismatch():
    stage = PcaStage(x_p=np.eye(3), z_p=np.eye(4), mean=np.zeros((4, 3)),
                     eigvals_col=np.ones(3), eigvals_row=np.ones(4),
                     m=4, n=3, g=3, h=4)
    with pytest.raises(ValueError):
        pca_project(stage, np.zeros((3, 4)))


def test_energy_capture_identity_and_monotonicity():
    rng = np.random.default_rng(6)
    samples = rng.standard_normal((8, 5, 6))
    sc = column_total_scatter(samples)
    energies = []
    for g in range(1, 7):
        stage = fit_pca_stage(samples, g=g, h=5)
        captured = stage.eigvals_col.sum()
        assert captured == pytest.approx(np.trace(stage.x_p.T @ sc @ stage.x_p),
                                         rel=1e-6)
        energies.append(captured)
    assert all(b >= a - 1e-12 for a, b in zip(energies, energies[1:]))


def test_projection_never_increases_frobenius_norm():
    rng = np.random.default_rng(7)
    samples = rng.standard_normal((6, 5, 4))
    stage = fit_pca_stage(samples, g=2, h=3)
    for a in samples:
        dev = a - stage.mean
        assert np.linalg.norm(stage.z_p @ dev @ stage.x_p) <= \
            np.linalg.norm(dev) + 1e-12


def test_stage_deterministic_under_sample_permutation():
    rng = np.random.default_rng(8)
    samples = rng.standard_normal((7, 4, 5))
    stage_a = fit_pca_stage(samples, g=3, h=3)
    stage_b = fit_pca_stage(samples[::-1], g=3, h=3)
    assert np.allclose(stage_a.x_p, stage_b.x_p, atol=1e-10)
    assert np.allclose(stage_a.z_p, stage_b.z_p, atol=1e-10)
    assert np.allclose(stage_a.mean, stage_b.mean, atol=1e-12)


def test_pca_project_all_matches_single_projection():
    rng = np.random.default_rng(9)
    samples = rng.standard_normal((5, 6, 4))
    stage = fit_pca_stage(samples, g=2, h=3)
    batch = pca_project_all(stage, samples)
    for k, a in enumerate(samples):
        assert np.array_equal(batch[k], pca_project(stage, a))
