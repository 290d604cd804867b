import logging

import numpy as np
import pytest

from veriface.discriminant import (ScatterSet, build_client_template,
                                   client_scatters, fisher_directions,
                                   nonsingularity_check)
from veriface.errors import DegenerateClientError, SingularScatterError
from veriface.imaging import FaceSample
from veriface.subspace import fit_pca_stage, pca_project, top_eigvecs_sym


def scatter_loop_oracle(projected, client_id):
    """Literal nested-loop evaluation of the four discriminant scatters.

    Works from the definitions alone: class means, per-sample deviations,
    scalar accumulation. Independent of the einsum path under test.
    """
    client = [np.asarray(m, float) for m, lab in projected if lab == client_id]
    imps = [np.asarray(m, float) for m, lab in projected if lab != client_id]
    h, g = client[0].shape
    n_total = len(client) + len(imps)
    m_c = sum(client) / len(client)
    m_i = sum(imps) / len(imps)
    sc_w = np.zeros((g, g))
    sr_w = np.zeros((h, h))
    for group, mean in ((client, m_c), (imps, m_i)):
        for mat in group:
            dev = mat - mean
            for a in range(g):
                for b in range(g):
                    acc = 0.0
                    for r in range(h):
                        acc += dev[r, a] * dev[r, b]
                    sc_w[a, b] += acc
            for a in range(h):
                for b in range(h):
                    acc = 0.0
                    for c in range(g):
                        acc += dev[a, c] * dev[b, c]
                    sr_w[a, b] += acc
    sc_w /= n_total
    sr_w /= n_total
    diff = m_c - m_i
    sc_b = np.zeros((g, g))
    for a in range(g):
        for b in range(g):
            sc_b[a, b] = sum(diff[r, a] * diff[r, b] for r in range(h))
    sr_b = np.zeros((h, h))
    for a in range(h):
        for b in range(h):
            sr_b[a, b] = sum(diff[a, c] * diff[b, c] for c in range(g))
    return sc_w, sc_b, sr_w, sr_b


def _rel_close(actual, expected, tol=1e-10):
    scale = max(1.0, float(np.linalg.norm(expected)))
    return float(np.linalg.norm(actual - expected)) <= tol * scale


def test_client_scatters_identical_samples_vanish():
    mat = np.arange(6.0).reshape(2, 3)
    projected = [(mat, "a"), (mat, "a"), (mat, "b"), (mat, "b")]
    s = client_scatters(projected, "a")
    assert np.allclose(s.sc_w, 0.0)
    assert np.allclose(s.sc_b, 0.0)
    assert np.allclose(s.sr_w, 0.0)
    assert np.allclose(s.sr_b, 0.0)


def test_client_scatters_scalar_case():
    c, i = 3.0, -1.0
    s = client_scatters([(np.array([[c]]), "me"), (np.array([[i]]), "other")], "me")
    assert np.allclose(s.sc_w, 0.0)
    assert s.sc_b[0, 0] == pytest.approx((c - i) ** 2)
    assert s.n_client == 1 and s.n_total == 2 and s.n_classes == 2


def test_client_scatters_match_loop_oracle_small_integers():
    rng = np.random.default_rng(0)
    projected = [(rng.integers(-3, 4, size=(2, 2)).astype(float), f"s{k % 3}")
                 for k in range(6)]
    s = client_scatters(projected, "s0")
    sc_w, sc_b, sr_w, sr_b = scatter_loop_oracle(projected, "s0")
    assert _rel_close(s.sc_w, sc_w)
    assert _rel_close(s.sc_b, sc_b)
    assert _rel_close(s.sr_w, sr_w)
    assert _rel_close(s.sr_b, sr_b)


def test_client_scatters_match_loop_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(5):
        projected = [(rng.standard_normal((6, 5)), f"s{k % 5}")
                     for k in range(20)]
        client = f"s{rng.integers(0, 5)}"
        s = client_scatters(projected, client)
        sc_w, sc_b, sr_w, sr_b = scatter_loop_oracle(projected, client)
        assert _rel_close(s.sc_w, sc_w)
        assert _rel_close(s.sc_b, sc_b)
        assert _rel_close(s.sr_w, sr_w)
        assert _rel_close(s.sr_b, sr_b)


def test_client_scatters_require_both_classes():
    mat = np.zeros((2, 2))
    with pytest.raises(ValueError):
        client_scatters([(mat, "a")], "a")
    with pytest.raises(ValueError):
        client_scatters([(mat, "b")], "a")


def test_between_scatter_rank_bounded_by_mean_difference_rank():
    rng = np.random.default_rng(2)
    for _ in range(20):
        projected = [(rng.standard_normal((4, 3)), f"s{k % 3}")
                     for k in range(9)]
        s = client_scatters(projected, "s0")
        feats = np.asarray([m for m, _ in projected])
        labels = [lab for _, lab in projected]
        own = feats[[lab == "s0" for lab in labels]].mean(axis=0)
        imp = feats[[lab != "s0" for lab in labels]].mean(axis=0)
        diff_rank = np.linalg.matrix_rank(own - imp)
        vals_b = np.linalg.eigvalsh(s.sc_b)
        measured = (vals_b > 1e-10 * max(vals_b.max(), 1.0)).sum()
        assert measured <= diff_rank


def test_nonsingularity_condition_large_sample_case():
    rng = np.random.default_rng(3)
    r = rng.standard_normal((10, 10))
    s = ScatterSet(sc_w=r @ r.T, sc_b=np.eye(10), sr_w=r @ r.T,
                   sr_b=np.eye(10), n_client=3, n_total=600, n_classes=200)
    report = nonsingularity_check(s)
    assert report.col_condition_ok and report.row_condition_ok
    assert report.rank_bound == (600 - 200) * 10


def test_nonsingularity_one_sample_per_class():
    # Minimal N = D case: one client sample, one impostor sample. Every
    # deviation vanishes, so the within-scatter is exactly zero.
    mats = [(np.arange(4.0).reshape(2, 2), "s0"),
            (np.arange(4.0).reshape(2, 2) * 2.0, "s1")]
    s = client_scatters(mats, "s0")
    assert np.allclose(s.sc_w, 0.0)
    report = nonsingularity_check(s)
    assert not report.col_condition_ok
    assert report.rank_sc_w == 0
    assert report.rank_bound == 0


def test_rank_bound_holds_on_random_instances():
    # Multi-sample classes: the protocol regime in which the (N - D) rank
    # bound applies to the pooled two-class within-scatter.
    rng = np.random.default_rng(4)
    for _ in range(25):
        n_classes = int(rng.integers(2, 6))
        h, g = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        projected = []
        for cls in range(n_classes):
            for _ in range(int(rng.integers(2, 5))):
                projected.append((rng.standard_normal((h, g)), f"s{cls}"))
        s = client_scatters(projected, "s0")
        report = nonsingularity_check(s)
        assert report.rank_sc_w <= report.rank_bound
        assert report.rank_sr_w <= report.rank_bound


def test_fisher_identity_within_reduces_to_plain_eigensolve():
    rng = np.random.default_rng(5)
    b = rng.standard_normal((4, 4))
    s_b = b @ b.T
    vecs, vals = fisher_directions(np.eye(4), s_b, 2, ridge=0.0)
    ref_vecs, ref_vals = top_eigvecs_sym(s_b, 2)
    assert np.allclose(vals, ref_vals, atol=1e-10)
    assert np.allclose(vecs, ref_vecs, atol=1e-8)


def test_fisher_two_by_two_hand_solved():
    vecs, vals = fisher_directions(np.diag([4.0, 1.0]), np.eye(2), 1, ridge=0.0)
    assert vals[0] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.abs(vecs[:, 0]), [0.0, 1.0], atol=1e-12)


def test_fisher_residual_contract_on_random_psd_pairs():
    rng = np.random.default_rng(6)
    for _ in range(20):
        order = int(rng.integers(2, 8))
        w = rng.standard_normal((order, order))
        s_w = w @ w.T + 0.5 * np.trace(w @ w.T) / order * np.eye(order)
        b = rng.standard_normal((order, order))
        s_b = b @ b.T
        k = int(rng.integers(1, order + 1))
        vecs, vals = fisher_directions(s_w, s_b, k)
        bound = 1e-6 * (1.0 + np.linalg.norm(s_b))
        for j in range(k):
            res = np.linalg.norm(s_b @ vecs[:, j] - vals[j] * (s_w @ vecs[:, j]))
            assert res <= bound


def test_fisher_rank_one_between_pads_with_warning(caplog):
    rng = np.random.default_rng(7)
    d = rng.standard_normal(5)
    s_b = np.outer(d, d)
    w = rng.standard_normal((5, 5))
    s_w = w @ w.T + np.eye(5)
    with caplog.at_level(logging.WARNING, logger="veriface.discriminant"):
        _, vals = fisher_directions(s_w, s_b, 3)
    sig = (vals > 1e-10 * max(1.0, vals[0])).sum()
    assert sig == 1
    assert any("near-null padding" in rec.message for rec in caplog.records)


def test_fisher_singular_scatter_error():
    with pytest.raises(SingularScatterError):
        fisher_directions(np.zeros((3, 3)), np.eye(3), 1)


def test_fisher_ridge_rescues_rank_deficient_within():
    d = np.array([1.0, 0.0, 0.0])
    s_w = np.diag([1.0, 1.0, 0.0])  # singular, ridge path must engage
    vecs, vals = fisher_directions(s_w, np.outer(d, d), 1)
    assert np.isfinite(vecs).all() and np.isfinite(vals).all()


def _labeled_samples(rng, n_clients=3, per_client=4, shape=(6, 5), noise=0.05):
    base = rng.standard_normal(shape)
    samples = []
    for c in range(n_clients):
        proto = base + rng.standard_normal(shape)
        for k in range(per_client):
            samples.append(FaceSample(
                grey=np.clip(0.5 + 0.1 * (proto + noise * rng.standard_normal(shape)), 0, 1),
                cr=np.full(shape, 150.0), cb=np.full(shape, 100.0),
                subject_id=f"c{c}", session=k))
    return samples


def test_template_two_stage_equals_composite():
    rng = np.random.default_rng(8)
    samples = _labeled_samples(rng)
    stage = fit_pca_stage([s.grey for s in samples], g=4, h=4)
    template = build_client_template(stage, samples, "c0", q=2, d=2)
    projected = [(pca_project(stage, s.grey), s.subject_id) for s in samples]
    scatters = client_scatters(projected, "c0")
    x_f, _ = fisher_directions(scatters.sc_w, scatters.sc_b, 2)
    z_cols, _ = fisher_directions(scatters.sr_w, scatters.sr_b, 2)
    z_f = z_cols.T
    for s in samples:
        two_stage = z_f @ pca_project(stage, s.grey) @ x_f
        composite = template.project(s.grey)
        assert np.allclose(two_stage, composite, atol=1e-10)


def test_template_scalar_special_case():
    rng = np.random.default_rng(9)
    samples = _labeled_samples(rng)
    stage = fit_pca_stage([s.grey for s in samples], g=3, h=3)
    template = build_client_template(stage, samples, "c1", q=1, d=1)
    assert template.project(samples[0].grey).shape == (1, 1)
    assert template.m_c.shape == (1, 1)


def test_template_separates_constructed_client():
    rng = np.random.default_rng(10)
    shape = (6, 5)
    base = np.full(shape, 0.5)
    u = rng.standard_normal(shape[0])
    v = rng.standard_normal(shape[1])
    bump = 0.04 * np.outer(u, v) / np.abs(np.outer(u, v)).max()
    samples = []
    for k in range(4):
        noise = 0.003 * rng.standard_normal(shape)
        samples.append(FaceSample(grey=np.clip(base + bump + noise, 0, 1),
                                  cr=np.full(shape, 150.0),
                                  cb=np.full(shape, 100.0),
                                  subject_id="client", session=k))
    for k in range(4):
        noise = 0.003 * rng.standard_normal(shape)
        samples.append(FaceSample(grey=np.clip(base - bump + noise, 0, 1),
                                  cr=np.full(shape, 150.0),
                                  cb=np.full(shape, 100.0),
                                  subject_id="imp", session=k))
    stage = fit_pca_stage([s.grey for s in samples], g=3, h=3)
    template = build_client_template(stage, samples, "client")
    assert np.linalg.norm(template.m_c - template.m_i) > 0
    for s in samples:
        y = template.project(s.grey)
        d_c = np.linalg.norm(y - template.m_c)
        d_i = np.linalg.norm(y - template.m_i)
        if s.subject_id == "client":
            assert d_c < d_i
        else:
            assert d_i < d_c


def test_template_mean_difference_invariant_to_common_shift():
    rng = np.random.default_rng(11)
    samples = _labeled_samples(rng, noise=0.1)
    shift = 0.05 * np.ones((6, 5))
    shifted = [FaceSample(grey=np.clip(s.grey + shift, 0, 1), cr=s.cr, cb=s.cb,
                          subject_id=s.subject_id, session=s.session)
               for s in samples]
    stage_a = fit_pca_stage([s.grey for s in samples], g=3, h=3)
    stage_b = fit_pca_stage([s.grey for s in shifted], g=3, h=3)
    t_a = build_client_template(stage_a, samples, "c0")
    t_b = build_client_template(stage_b, shifted, "c0")
    assert np.allclose(t_a.m_c - t_a.m_i, t_b.m_c - t_b.m_i, atol=1e-8)


def test_degenerate_client_rejected():
    rng = np.random.default_rng(12)
    shape = (4, 4)
    base = np.full(shape, 0.5)
    e = 0.05 * rng.standard_normal(shape)
    f = 0.05 * rng.standard_normal(shape)
    samples = []
    for sign in (1.0, -1.0):
        samples.append(FaceSample(grey=np.clip(base + sign * e, 0, 1),
                                  cr=np.full(shape, 150.0), cb=np.full(shape, 100.0),
                                  subject_id="client"))
        samples.append(FaceSample(grey=np.clip(base + sign * f, 0, 1),
                                  cr=np.full(shape, 150.0), cb=np.full(shape, 100.0),
                                  subject_id="imp"))
    stage = fit_pca_stage([s.grey for s in samples], g=3, h=3)
    with pytest.raises(DegenerateClientError):
        build_client_template(stage, samples, "client")
