"""Prediction-quality metrics with explicit tie handling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError

__all__ = ["MetricsReport", "mae", "spearman", "top_k", "hits_in_k", "range_mae", "report"]

HITS_KS = (10, 30, 50)


def _pair(preds, labels):
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise DomainError("predictions and labels differ in length")
    return p, y


def mae(preds, labels) -> float:
    p, y = _pair(preds, labels)
    if y.size == 0:
        raise DomainError("MAE of an empty set")
    return float(np.mean(np.abs(p - y)))


def spearman(preds, labels, return_flag: bool = False):
    """Pearson correlation of average ranks.

    A constant input has no defined correlation; 0.0 is returned and the
    flag (when requested) is ``True``.
    """
    p, y = _pair(preds, labels)
    if p.size < 2:
        raise DomainError("Spearman needs at least two points")
    rp, ry = rankdata(p), rankdata(y)
    if np.all(rp == rp[0]) or np.all(ry == ry[0]):
        return (0.0, True) if return_flag else 0.0
    rp -= rp.mean()
    ry -= ry.mean()
    rho = float(np.dot(rp, ry) / np.sqrt(np.dot(rp, rp) * np.dot(ry, ry)))
    rho = min(1.0, max(-1.0, rho))
    return (rho, False) if return_flag else rho


def top_k(values, k: int) -> np.ndarray:
    """Indices of the ``k`` largest values; ties go to the smaller index."""
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.lexsort((np.arange(v.size), -v))
    return order[:k]


def hits_in_k(preds, labels, k: int) -> int:
    if k < 1:
        raise DomainError("k must be at least 1")
    p, y = _pair(preds, labels)
    return len(set(top_k(p, k).tolist()) & set(top_k(y, k).tolist()))


def range_mae(preds, labels) -> dict:
    """MAE over zero labels, nonzero labels up to their median, and above it."""
    p, y = _pair(preds, labels)
    nz = y != 0
    med = float(np.median(y[nz])) if nz.any() else 0.0
    groups = {"zero": ~nz, "mid": nz & (y <= med), "high": nz & (y > med)}
    return {name: (float(np.mean(np.abs(p[sel] - y[sel]))) if sel.any() else None)
            for name, sel in groups.items()}


def _sig(x, digits=6):
    return None if x is None else float(f"{x:.{digits}g}")


@dataclass
class MetricsReport:
    mae: float
    spearman: float
    spearman_degenerate: bool
    hits: dict = field(default_factory=dict)
    range_mae: dict = field(default_factory=dict)
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": _sig(self.mae),
            "spearman": _sig(self.spearman),
            "spearman_degenerate": self.spearman_degenerate,
            "hits": {str(k): v for k, v in self.hits.items()},
            "range_mae": {k: _sig(v) for k, v in self.range_mae.items()},
        }


def report(preds, labels, ks=HITS_KS) -> MetricsReport:
    p, y = _pair(preds, labels)
    rho, flag = spearman(p, y, return_flag=True) if p.size >= 2 else (0.0, True)
    return MetricsReport(
        mae=mae(p, y),
        spearman=rho,
        spearman_degenerate=flag,
        hits={k: hits_in_k(p, y, k) for k in ks},
        range_mae=range_mae(p, y),
        n=int(p.size),
    )
