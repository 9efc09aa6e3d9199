"""Seeded k-means: mini-batch updates with a monotone safeguard, plus full-batch Lloyd.

The mini-batch step follows the per-centre learning-rate scheme (each
centre moves toward assigned samples with rate 1/count). A mini-batch step
can raise the full-data inertia; when it would, the iteration falls back to
one Lloyd step instead, which never increases it. The recorded inertia
trace is therefore non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from demgan.errors import ConfigError, DegenerateInputError

log = logging.getLogger(__name__)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    converged: bool = False
    inertia_trace: list[float] = field(default_factory=list)

    @property
    def n_effective(self) -> int:
        return len(self.centroids)


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    d = squared_distances(points, centroids)
    labels = np.argmin(d, axis=1)
    return labels, float(d[np.arange(len(points)), labels].sum())


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise DegenerateInputError("k-means needs a non-empty (n, d) point array")
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("k-means points must be finite")
    return x


def kmeans_plus_plus(distinct: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over distinct points; returns ``min(k, len(distinct))`` centres."""
    k = min(k, len(distinct))
    if k == len(distinct):
        return distinct.copy()
    chosen = [int(rng.integers(len(distinct)))]
    d2 = squared_distances(distinct, distinct[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        idx = int(rng.choice(len(distinct), p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(distinct, distinct[[idx]])[:, 0])
    return distinct[chosen].copy()


def _lloyd_update(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    new = centroids.copy()
    for j in range(len(centroids)):
        members = labels == j
        if members.any():
            new[j] = x[members].mean(axis=0)
    return new


def minibatch_kmeans(
    points,
    k: int,
    batch: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 300,
) -> ClusterModel:
    """Cluster ``points`` into at most ``k`` groups.

    Args:
        points: ``(n, d)`` array-like (``(n,)`` is treated as 1-D data).
        k: Requested cluster count; the effective count is
            ``min(k, number of distinct points)``.
        batch: Mini-batch size per iteration.
        seed: Seed for initialisation and batch sampling.
        tol: Stop once the largest centroid move is below this.
        max_iter: Iteration cap.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    x = _as_points(points)
    rng = np.random.default_rng(seed)
    distinct = np.unique(x, axis=0)
    centroids = kmeans_plus_plus(distinct, k, rng)
    counts = np.zeros(len(centroids))
    labels, inertia = assign(x, centroids)
    trace = [inertia]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        size = min(batch, len(x))
        sample = x[rng.choice(len(x), size=size, replace=False)]
        s_labels, _ = assign(sample, centroids)
        proposal = centroids.copy()
        for p, c in zip(sample, s_labels):
            counts[c] += 1.0
            eta = 1.0 / counts[c]
            proposal[c] = (1.0 - eta) * proposal[c] + eta * p
        p_labels, p_inertia = assign(x, proposal)
        if p_inertia > inertia:
            proposal = _lloyd_update(x, centroids, labels)
            p_labels, p_inertia = assign(x, proposal)
            if p_inertia >= inertia:
                # local optimum for this assignment: stay put, which ends the loop
                proposal, p_labels, p_inertia = centroids, labels, inertia
        shift = float(np.sqrt(((proposal - centroids) ** 2).sum(axis=1)).max())
        centroids, labels, inertia = proposal, p_labels, p_inertia
        trace.append(inertia)
        if shift < tol:
            converged = True
            break
    log.debug("k-means finished after %d iterations (converged=%s)", n_iter, converged)
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=labels,
        inertia=inertia,
        n_iter=n_iter,
        converged=converged,
        inertia_trace=trace,
    )


def lloyd_kmeans(
    points, k: int, seed: int = 0, n_init: int = 10, tol: float = 1e-9, max_iter: int = 300
) -> ClusterModel:
    """Full-batch Lloyd iterations from ``n_init`` k-means++ starts; best inertia wins."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    x = _as_points(points)
    rng = np.random.default_rng(seed)
    distinct = np.unique(x, axis=0)
    best = None
    for _ in range(n_init):
        centroids = kmeans_plus_plus(distinct, k, rng)
        labels, inertia = assign(x, centroids)
        trace = [inertia]
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            new = _lloyd_update(x, centroids, labels)
            shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
            centroids = new
            labels, inertia = assign(x, centroids)
            trace.append(inertia)
            if shift < tol:
                converged = True
                break
        model = ClusterModel(k, centroids, labels, inertia, it, converged, trace)
        if best is None or model.inertia < best.inertia:
            best = model
    return best
