import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from diarkit.errors import ContractError, DataError, FormatError
from diarkit.plda import (
    PldaModel,
    fit_lda,
    fit_plda,
    load_plda,
    max_abs_scale,
    normalize_score,
    plda_llr_matrix,
    plda_score,
    save_plda,
    score_matrix,
)
from diarkit.similarity import SimilarityMatrix, read_similarity, write_similarity


def _two_cov_data(n_spk, per, B, W, seed, return_latent=False):
    rng = np.random.default_rng(seed)
    d = len(B)
    y = rng.multivariate_normal(np.zeros(d), B, size=n_spk)
    X = np.repeat(y, per, axis=0) + rng.multivariate_normal(np.zeros(d), W, size=n_spk * per)
    lab = np.repeat(np.arange(n_spk), per)
    return (X, lab, y) if return_latent else (X, lab)


def test_lda_finds_mean_axis(rng):
    X = np.vstack([rng.normal(size=(200, 3)) + [1, 0, 0], rng.normal(size=(200, 3)) - [1, 0, 0]])
    lab = np.repeat([0, 1], 200)
    lda = fit_lda(X, lab, 1)
    v = lda.projection[0]
    assert abs(v[0]) / np.linalg.norm(v) > 0.99


def test_lda_whitens_within_class(rng):
    X, lab = _two_cov_data(20, 30, np.diag([4.0, 1.0, 0.5, 2.0]), np.diag([1.0, 3.0, 0.2, 1.0]), 1)
    lda = fit_lda(X, lab, 3)
    Y = lda.transform(X)
    resid = Y - np.array([Y[lab == c].mean(axis=0) for c in lab])
    np.testing.assert_allclose(resid.T @ resid / len(Y), np.eye(3), atol=1e-4)
    np.testing.assert_allclose(lda.transform(X.mean(axis=0)[None]), 0.0, atol=1e-12)


def test_lda_dimension_contract(rng):
    X = rng.normal(size=(30, 5))
    with pytest.raises(ContractError):
        fit_lda(X, np.repeat([0, 1, 2], 10), 3)
    with pytest.raises(ContractError):
        fit_lda(X, np.repeat([0, 1, 2], 10), 0)


def test_lda_beats_random_projection():
    X, lab = _two_cov_data(12, 20, np.diag([3.0, 0.1, 0.1, 0.1, 2.0, 0.1]), np.eye(6), 7)
    lda = fit_lda(X, lab, 2)

    def fisher(P):
        Y = (X - X.mean(axis=0)) @ P.T
        means = np.array([Y[lab == c].mean(axis=0) for c in range(12)])
        within = np.mean([np.var(Y[lab == c], axis=0).sum() for c in range(12)])
        return np.var(means, axis=0).sum() / within

    R = np.random.default_rng(0).normal(size=(2, 6))
    assert fisher(lda.projection) >= fisher(R)


def test_plda_recovers_generating_covariances():
    d = 3
    X, lab, y = _two_cov_data(64, 32, 2 * np.eye(d), np.eye(d), 11, return_latent=True)
    model = fit_plda(X, lab)
    # 64 speaker draws fix the between-class spread only to about +-40%,
    # so the estimate is held to the covariance of the drawn latent means
    realized = np.linalg.eigvalsh(np.cov(y.T))
    np.testing.assert_allclose(np.linalg.eigvalsh(model.between), realized, rtol=0.15)
    np.testing.assert_allclose(np.linalg.eigvalsh(model.within), 1.0, rtol=0.15)
    assert np.all(np.abs(model.mean - y.mean(axis=0)) < 0.1)


def test_plda_between_estimate_unbiased_over_replications():
    eb = [np.linalg.eigvalsh(fit_plda(*_two_cov_data(64, 32, 2 * np.eye(3), np.eye(3), s)).between) for s in range(20)]
    np.testing.assert_allclose(np.mean(eb), 2.0, rtol=0.15)


def test_plda_invariant_to_order_within_class(rng):
    X, lab = _two_cov_data(6, 5, np.eye(2), np.eye(2), 2)
    perm = np.concatenate([rng.permutation(np.where(lab == c)[0]) for c in range(6)])
    a, b = fit_plda(X, lab), fit_plda(X[perm], lab[perm])
    np.testing.assert_allclose(a.between, b.between, atol=1e-12)
    np.testing.assert_allclose(a.within, b.within, atol=1e-12)


def test_plda_drops_singletons():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [9.0]])
    model = fit_plda(X, [0, 0, 1, 1, 2])
    assert model.mean[0] == pytest.approx(1.5)
    with pytest.raises(DataError):
        fit_plda(X[:3], [0, 1, 2])


def test_plda_between_is_psd(rng):
    X = rng.normal(size=(40, 4))  # no speaker structure
    model = fit_plda(X, np.repeat(np.arange(8), 5))
    assert np.linalg.eigvalsh(model.between).min() >= -1e-12


def test_one_dimensional_llr_at_origin():
    m = PldaModel(np.zeros(1), np.eye(1), np.eye(1))
    assert plda_score(m, [0.0], [0.0]) == pytest.approx(0.5 * np.log(4 / 3), abs=1e-12)
    assert plda_score(m, [0.0], [0.0]) == pytest.approx(0.1438, abs=1e-4)


@pytest.mark.parametrize("a,b", [(0.3, -1.2), (2.0, 2.1), (-0.7, 1.5)])
def test_llr_matches_density_integration(a, b):
    m = PldaModel(np.zeros(1), np.array([[1.5]]), np.array([[0.6]]))
    sb, sw = np.sqrt(1.5), np.sqrt(0.6)
    same, _ = integrate.quad(lambda y: norm.pdf(a, y, sw) * norm.pdf(b, y, sw) * norm.pdf(y, 0, sb), -30, 30)
    diff = norm.pdf(a, 0, np.sqrt(2.1)) * norm.pdf(b, 0, np.sqrt(2.1))
    assert plda_score(m, [a], [b]) == pytest.approx(np.log(same / diff), abs=1e-9)


def test_llr_matches_gaussian_densities(rng):
    d = 3
    A = rng.normal(size=(d, d))
    B = A @ A.T + 0.1 * np.eye(d)
    W = np.diag([0.5, 1.0, 2.0])
    mu = rng.normal(size=d)
    m = PldaModel(mu, B, W)
    T = B + W
    same = multivariate_normal(np.concatenate([mu, mu]), np.block([[T, B], [B, T]]))
    diff = multivariate_normal(mu, T)
    for _ in range(5):
        a, b = rng.normal(size=d), rng.normal(size=d)
        ref = same.logpdf(np.concatenate([a, b])) - diff.logpdf(a) - diff.logpdf(b)
        assert plda_score(m, a, b) == pytest.approx(ref, abs=1e-9)
    X = rng.normal(size=(4, d))
    S = plda_llr_matrix(m, X)
    np.testing.assert_allclose(S[1, 2], plda_score(m, X[1], X[2]), atol=1e-10)


def test_score_symmetry_and_ordering(rng):
    X, lab = _two_cov_data(10, 10, 4 * np.eye(2), np.eye(2), 5)
    m = fit_plda(X, lab)
    for _ in range(20):
        a, b = rng.normal(size=2) * 3, rng.normal(size=2) * 3
        assert plda_score(m, a, b) == plda_score(m, b, a)
    c = m.mean + np.array([1.0, 0.0])
    assert plda_score(m, c, c) > plda_score(m, c, c + np.array([6.0, -6.0]))
    with pytest.raises(ContractError):
        plda_score(m, [1.0], [1.0, 2.0])


def test_logistic_values():
    assert normalize_score(0.0) == 0.5
    assert normalize_score(1.0) == pytest.approx(0.993307, abs=1e-6)


@given(st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False))
def test_logistic_monotone_and_odd(x, y):
    lx, ly = normalize_score(x), normalize_score(y)
    assert lx + normalize_score(-x) == pytest.approx(1.0, abs=1e-15)
    if x < y:
        assert lx <= ly


def test_logistic_on_unit_interval():
    x = np.linspace(-1, 1, 1001)
    v = normalize_score(x)
    assert np.all(np.diff(v) > 0)
    assert v.min() == normalize_score(-1.0) and v.max() == normalize_score(1.0)
    assert 0 < v.min() and v.max() < 1


def test_max_abs_scale():
    S = np.array([[9.0, -4.0], [-4.0, 9.0]])
    np.testing.assert_array_equal(max_abs_scale(S), [[2.25, -1.0], [-1.0, 2.25]])
    np.testing.assert_array_equal(max_abs_scale(np.eye(2)), np.eye(2))


def test_score_matrix_properties(rng):
    X, lab = _two_cov_data(8, 10, 9 * np.eye(3), 0.2 * np.eye(3), 4)
    m = fit_plda(X, lab)
    Z = np.vstack([X[lab == 0][:5], X[lab == 1][:5]])
    sim = score_matrix(m, Z, ids=[f"u{i}" for i in range(10)])
    S = sim.values
    assert S.shape == (10, 10)
    assert np.array_equal(S, S.T)
    assert np.all(np.diag(S) == 1.0)
    assert np.all((S > 0) & (S <= 1))
    g = np.repeat([0, 1], 5)
    same = (g[:, None] == g[None, :]) & ~np.eye(10, dtype=bool)
    assert S[same].mean() > S[g[:, None] != g[None, :]].mean()
    with pytest.raises(ContractError):
        score_matrix(m, Z[:1])


def test_model_file_round_trip(tmp_path, rng):
    X, lab = _two_cov_data(6, 8, np.eye(4), np.eye(4), 3)
    lda = fit_lda(X, lab, 3)
    m = fit_plda(lda.transform(X), lab)
    save_plda(tmp_path / "m.dkpl", m, lda)
    m2, lda2 = load_plda(tmp_path / "m.dkpl")
    for a, b in ((m.mean, m2.mean), (m.between, m2.between), (m.within, m2.within), (lda.projection, lda2.projection)):
        assert a.tobytes() == b.tobytes()
    save_plda(tmp_path / "n.dkpl", m)
    assert load_plda(tmp_path / "n.dkpl")[1] is None
    (tmp_path / "bad.dkpl").write_bytes((tmp_path / "m.dkpl").read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_plda(tmp_path / "bad.dkpl")


def test_similarity_container_round_trip(tmp_path, rng):
    S = rng.random((4, 4))
    sim = SimilarityMatrix(S + S.T, ["a", "b", "c", "d"])
    write_similarity(tmp_path / "s.dksm", sim)
    back = read_similarity(tmp_path / "s.dksm")
    assert back.ids == sim.ids
    np.testing.assert_array_equal(back.values, sim.values.astype(np.float32))
