import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palid.viz import centroid_separation, emit_scatter, pca_fit, pca_project, read_scatter


def test_line_data():
    t = np.linspace(-2, 2, 9)
    basis = pca_fit(np.c_[t, t])
    np.testing.assert_allclose(basis.components[0], [2 ** -0.5, 2 ** -0.5], atol=1e-12)
    assert basis.explained_variance[1] == pytest.approx(0.0, abs=1e-12)


def test_identical_samples_are_degenerate():
    with pytest.raises(ValueError, match="degenerate data"):
        pca_fit(np.ones((5, 3)))
    with pytest.raises(ValueError):
        pca_fit(np.zeros((2, 3)))  # fewer than k + 1 samples


def test_known_covariance_recovered():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10_000, 3)) * np.sqrt([4.0, 1.0, 0.25])
    basis = pca_fit(X)
    np.testing.assert_allclose(basis.explained_variance, [4.0, 1.0], rtol=0.1)
    assert abs(basis.components[0, 0]) > 0.99


@settings(max_examples=30)
@given(st.integers(0, 1000), st.integers(3, 40), st.integers(2, 6))
def test_basis_properties(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.1, 3, size=d)
    basis = pca_fit(X)
    C = basis.components
    np.testing.assert_allclose(C @ C.T, np.eye(2), atol=1e-9)
    ev = basis.explained_variance
    assert ev[0] >= ev[1] >= 0
    for row in C:
        first = row[np.flatnonzero(np.abs(row) > 1e-12)[0]]
        assert first > 0
    P = pca_project(basis, X)
    np.testing.assert_allclose(P.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(P.var(axis=0, ddof=1), ev, rtol=1e-6, atol=1e-12)
    again = pca_fit(X)
    assert again.components.tobytes() == C.tobytes()


def test_projection_examples():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 4))
    basis = pca_fit(X)
    np.testing.assert_allclose(pca_project(basis, basis.mean), [0, 0], atol=1e-12)
    np.testing.assert_allclose(pca_project(basis, basis.mean + basis.components[0]), [1, 0], atol=1e-9)
    assert pca_project(basis, X).shape == (20, 2)
    with pytest.raises(ValueError):
        pca_project(basis, np.zeros((3, 5)))


def test_scatter_roundtrip(tmp_path):
    path = tmp_path / "s.csv"
    emit_scatter(np.zeros((0, 2)), [], path)
    assert path.read_text() == "x,y,language\n"
    pts = np.random.default_rng(2).normal(size=(7, 2)) / 3
    labels = ["L0", "L1"] * 3 + ["L0"]
    emit_scatter(pts, labels, path)
    assert len(path.read_text().splitlines()) == 8
    back, lab = read_scatter(path)
    assert back.tobytes() == pts.tobytes() and lab == labels
    with pytest.raises(ValueError):
        emit_scatter(pts, labels[:-1], path)


def test_centroid_separation():
    pts = np.array([[0.0, 1], [0, -1], [10, 1], [10, -1]])
    sep = centroid_separation(pts, [0, 0, 1, 1])
    assert sep == {(0, 1): pytest.approx(10.0)}
