"""PCA projection of phonetic features and scatter CSV output."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # k x feat_dim, orthonormal rows
    explained_variance: np.ndarray


def pca_fit(features, k: int = 2) -> PcaBasis:
    """Top-``k`` principal axes of the sample covariance (1/(n-1) estimator).

    Each component is signed so its first nonzero coordinate is positive.
    """
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2:
        raise ValueError("features must be n x d")
    n, d = F.shape
    if n < k + 1 or d < k:
        raise ValueError(f"need at least {k + 1} samples of dimension >= {k}, got {n} x {d}")
    mean = F.mean(axis=0)
    centered = F - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(F))), 1.0)
    if evals[-1] <= 1e-12 * scale * scale:
        raise ValueError("degenerate data")
    order = np.argsort(-evals, kind="stable")[:k]
    comps = evecs[:, order].T.copy()
    for row in comps:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if len(nz) and row[nz[0]] < 0:
            row *= -1
    return PcaBasis(mean, comps, np.clip(evals[order], 0.0, None))


def pca_project(basis: PcaBasis, features) -> np.ndarray:
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1 and F.size == 0:
        return np.zeros((0, len(basis.components)))
    if F.shape[-1] != basis.mean.shape[0]:
        raise ValueError(f"feature dim {F.shape[-1]} != basis dim {basis.mean.shape[0]}")
    return (F - basis.mean) @ basis.components.T


def emit_scatter(points, language_labels, path) -> None:
    """CSV with columns x, y, language; one row per point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = list(language_labels)
    if len(points) != len(labels):
        raise ValueError(f"{len(points)} points but {len(labels)} labels")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("x", "y", "language"))
        for (x, y), lang in zip(points, labels):
            w.writerow((repr(float(x)), repr(float(y)), lang))


def read_scatter(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    return pts, [r["language"] for r in rows]


def centroid_separation(points, labels) -> dict[tuple, float]:
    """Pairwise centroid distances divided by the pooled within-class standard deviation.

    The pooled deviation is the root mean squared distance of every point
    to its own class centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    centroids = {c: points[labels == c].mean(axis=0) for c in classes}
    resid = np.concatenate([points[labels == c] - centroids[c] for c in classes])
    pooled = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    if pooled == 0:
        raise ValueError("zero within-class spread")
    return {(a, b): float(np.linalg.norm(centroids[a] - centroids[b])) / pooled
            for i, a in enumerate(classes) for b in classes[i + 1:]}
