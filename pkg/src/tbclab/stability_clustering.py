"""Bootstrap stability selection of the number of k-means clusters.

The procedure draws a stratified subsample, builds ``B`` independent
bootstrap pairs from it once, clusters both halves of every pair for each
candidate ``k`` and keeps the ``k`` whose co-membership disagreement on the
shared points is smallest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EstimationError
from .temporal_graph import histogram_strata

__all__ = [
    "ClusterConfig",
    "ClusterAssignment",
    "stratified_sample",
    "bootstrap_pair",
    "kmeans",
    "clustering_distance",
    "estimate_instability",
    "select_k",
]


@dataclass(frozen=True)
class ClusterConfig:
    rate: float = 0.4
    pairs: int = 20
    k_max: int = 10
    iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rate < 1:
            raise DomainError("sampling rate must lie in (0, 1)")
        if self.pairs < 1 or self.k_max < 2 or self.iters < 1:
            raise DomainError("need pairs >= 1, k_max >= 2, iters >= 1")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _child_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def stratified_sample(points, tbc_labels, r: float, seed: int = 0) -> np.ndarray:
    """Proportional sampling without replacement inside each TBC histogram bucket.

    Each nonempty stratum keeps ``max(1, floor(r * size))`` points.  Returns
    sorted indices into ``points``.
    """
    n = len(points)
    if n < 2:
        raise DomainError("stratified sampling needs at least two points")
    if not 0 < r < 1:
        raise DomainError("sampling rate must lie in (0, 1)")
    strata = np.zeros(n, dtype=np.int64) if tbc_labels is None else histogram_strata(tbc_labels)
    if len(strata) != n:
        raise DomainError("labels and points differ in length")
    rng = _rng(seed, 0x5A)
    keep = []
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        size = max(1, math.floor(r * len(members) + 1e-9))
        keep.append(rng.choice(members, size=size, replace=False))
    return np.sort(np.concatenate(keep))


def bootstrap_pair(n: int, seed: int = 0, index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two independent size-``n`` draws with replacement from ``range(n)``.

    ``X`` and ``Y`` come from separate child streams of ``(seed, index)``.
    """
    if n < 2:
        raise DomainError("bootstrap needs a subset of at least two points")
    sx, sy = np.random.SeedSequence([int(seed), int(index)]).spawn(2)
    x = np.random.default_rng(sx).integers(0, n, size=n)
    y = np.random.default_rng(sy).integers(0, n, size=n)
    return x, y


def _sqdist(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans(points, k: int, seed: int = 0, iters: int = 100) -> ClusterAssignment:
    """k-means++ seeding followed by Lloyd iterations.

    Nearest-centroid ties go to the lowest centroid index.  A cluster that
    loses all its points is re-seeded at the point farthest from its own
    centroid.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if k < 1:
        raise DomainError("k must be positive")
    if k > len(np.unique(X, axis=0)):
        raise DomainError(f"k={k} exceeds the number of distinct points")
    rng = _rng(seed, 0xC1)
    C = np.empty((k, X.shape[1]))
    C[0] = X[rng.integers(len(X))]
    d2 = _sqdist(X, C[:1])[:, 0]
    for c in range(1, k):
        C[c] = X[rng.choice(len(X), p=d2 / d2.sum())]
        d2 = np.minimum(d2, _sqdist(X, C[c:c + 1])[:, 0])
    labels = _sqdist(X, C).argmin(1)
    for _ in range(iters):
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                C[c] = X[labels == c].mean(0)
        for c in np.flatnonzero(counts == 0):
            own = _sqdist(X, C)[np.arange(len(X)), labels]
            far = int(own.argmax())
            C[c] = X[far]
            labels[far] = c
        new = _sqdist(X, C).argmin(1)
        if np.array_equal(new, labels) and np.all(np.bincount(new, minlength=k)):
            break
        labels = new
    inertia = float(_sqdist(X, C)[np.arange(len(X)), labels].sum())
    return ClusterAssignment(labels, C, inertia)


def clustering_distance(psi_x, psi_y, common) -> float | None:
    """Fraction of unordered pairs in ``common`` whose co-membership differs.

    ``psi_x`` and ``psi_y`` map an index to its cluster label.  Returns
    ``None`` when fewer than two common points exist.
    """
    common = list(common)
    if len(common) < 2:
        return None
    lx = np.array([psi_x[i] for i in common])
    ly = np.array([psi_y[i] for i in common])
    same_x = lx[:, None] == lx[None, :]
    same_y = ly[:, None] == ly[None, :]
    upper = np.triu_indices(len(common), k=1)
    return float(np.mean(same_x[upper] != same_y[upper]))


def _label_map(draw, labels) -> dict:
    out = {}
    for i, lab in zip(draw.tolist(), labels.tolist()):
        out.setdefault(i, lab)
    return out


def estimate_instability(subset, k: int, B: int = 20, seed: int = 0, iters: int = 100) -> float:
    """Mean clustering distance over ``B`` bootstrap pairs clustered at ``k``.

    Pairs that cannot be clustered (too few distinct points) or share fewer
    than two points are skipped.
    """
    if k < 2:
        raise DomainError("instability is defined for k >= 2")
    P = np.asarray(subset, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    total, used = 0.0, 0
    for i in range(B):
        x, y = bootstrap_pair(len(P), seed, i)
        try:
            cx = kmeans(P[x], k, seed=_child_seed(seed, i, k, 0), iters=iters)
            cy = kmeans(P[y], k, seed=_child_seed(seed, i, k, 1), iters=iters)
        except DomainError:
            continue
        dist = clustering_distance(_label_map(x, cx.labels), _label_map(y, cy.labels),
                                   np.intersect1d(x, y))
        if dist is None:
            continue
        total += dist
        used += 1
    if used == 0:
        raise EstimationError(f"all {B} bootstrap pairs were skipped at k={k}")
    return total / used


def select_k(points, tbc_labels, cfg: ClusterConfig = ClusterConfig()) -> tuple[int, dict]:
    """Return ``(k_hat, {k: instability})`` over ``k = 2 .. k_max``; ties go to the smaller k."""
    P = np.asarray(points, dtype=np.float64)
    if len(P) < 4:
        raise DomainError("select_k needs at least four points")
    subset = P[stratified_sample(P, tbc_labels, cfg.rate, cfg.seed)]
    trace = {}
    for k in range(2, cfg.k_max + 1):
        trace[k] = estimate_instability(subset, k, cfg.pairs, cfg.seed, cfg.iters)
    k_hat = min(trace, key=lambda k: (trace[k], k))
    return k_hat, trace
