"""Intra-cluster contrastive loss with TBC-gap reweighting.

Positives of an anchor ``u`` are same-cluster nodes whose TBC differs from
``u``'s by a nonzero amount no larger than ``gamma_pos * m``; negatives
differ by at least ``gamma_neg * m``, where ``m`` is the median of the
nonzero labels.  Positive pairs are up-weighted as their gap shrinks,
negatives as it grows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, DomainError
from .nn_utils import DTYPE, as_tensor

__all__ = [
    "ContrastConfig",
    "PairSets",
    "ContrastiveDegeneracyWarning",
    "tbc_median_ref",
    "build_pair_sets",
    "positive_weight",
    "negative_weight",
    "pair_weights",
    "per_anchor_losses",
    "contrastive_loss",
]


class ContrastiveDegeneracyWarning(UserWarning):
    """No anchor had both a positive and a negative; the loss is 0."""


@dataclass(frozen=True)
class ContrastConfig:
    gamma_pos: float = 0.5
    gamma_neg: float = 0.5
    tau: float = 0.1
    similarity: str = "dot"
    reduction: str = "sum"

    def __post_init__(self):
        if self.reduction not in ("sum", "mean"):
            raise DomainError("reduction must be 'sum' or 'mean'")
        if self.similarity not in ("dot", "cosine"):
            raise DomainError("similarity must be 'dot' or 'cosine'")
        if not 0 < self.gamma_pos < 1:
            raise DomainError("gamma_pos must lie in (0, 1)")
        if self.gamma_neg <= 0 or self.tau <= 0:
            raise DomainError("gamma_neg and tau must be positive")


@dataclass
class PairSets:
    positives: dict = field(default_factory=dict)
    negatives: dict = field(default_factory=dict)
    median: float = 0.0

    @property
    def eligible(self) -> list[int]:
        return [u for u in sorted(self.positives) if self.positives[u] and self.negatives.get(u)]

    def diagnostics(self) -> dict:
        anchors = sorted(self.positives)
        pos_sizes = [len(self.positives[u]) for u in anchors]
        neg_sizes = [len(self.negatives[u]) for u in anchors]
        return {
            "anchors": len(anchors),
            "eligible": len(self.eligible),
            "skipped": len(anchors) - len(self.eligible),
            "median": self.median,
            "positive_size_histogram": _size_hist(pos_sizes),
            "negative_size_histogram": _size_hist(neg_sizes),
        }


def _size_hist(sizes):
    values, counts = np.unique(np.asarray(sizes, dtype=np.int64), return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def _values(labels) -> np.ndarray:
    return np.asarray(getattr(labels, "values", labels), dtype=np.float64).ravel()


def tbc_median_ref(labels) -> float:
    """Median of the nonzero labels."""
    y = _values(labels)
    if y.size == 0:
        raise DomainError("no labels given")
    nz = y[y != 0]
    if nz.size == 0:
        raise ConfigError("all labels are zero: contrastive thresholds are undefined, "
                          "train with alpha = 0 (regression only)")
    return float(np.median(nz))


def build_pair_sets(clusters, labels, cfg: ContrastConfig = ContrastConfig(),
                    median: float | None = None) -> PairSets:
    y = _values(labels)
    c = np.asarray(clusters)
    if len(c) != len(y):
        raise DomainError("clusters and labels differ in length")
    m = tbc_median_ref(y) if median is None else median
    pos_hi, neg_lo = cfg.gamma_pos * m, cfg.gamma_neg * m
    out = PairSets(median=m)
    for u in range(len(y)):
        gap = np.abs(y - y[u])
        same = c == c[u]
        out.positives[u] = np.flatnonzero(same & (gap > 0) & (gap <= pos_hi)).tolist()
        out.negatives[u] = np.flatnonzero(same & (gap >= neg_lo)).tolist()
    return out


def positive_weight(gap, median: float, gamma_pos: float):
    return median * gamma_pos / gap


def negative_weight(gap, median: float, gamma_neg: float):
    return gap / (median * gamma_neg)


def pair_weights(u: int, other: int, labels, median: float, cfg: ContrastConfig = ContrastConfig(),
                 positive: bool = True) -> float:
    y = _values(labels)
    gap = abs(y[u] - y[other])
    if positive:
        if gap == 0:
            raise DomainError("positive weight needs a nonzero TBC gap")
        return positive_weight(gap, median, cfg.gamma_pos)
    return negative_weight(gap, median, cfg.gamma_neg)


def per_anchor_losses(embeddings, pair_sets: PairSets, labels,
                      cfg: ContrastConfig = ContrastConfig()) -> tuple[list[int], torch.Tensor]:
    """``(anchors, losses)`` for every eligible anchor, in ascending anchor order.

    Each loss is ``logsumexp(all logits) - logsumexp(positive logits)``.
    """
    H = as_tensor(embeddings)
    y = _values(labels)
    m = pair_sets.median
    anchors = pair_sets.eligible
    if not anchors:
        return [], torch.zeros(0, dtype=DTYPE)
    n_pos = max(len(pair_sets.positives[u]) for u in anchors)
    n_neg = max(len(pair_sets.negatives[u]) for u in anchors)
    width = n_pos + n_neg
    other = np.zeros((len(anchors), width), dtype=np.int64)
    beta = np.zeros((len(anchors), width))
    valid = np.zeros((len(anchors), width), dtype=bool)
    is_pos = np.zeros((len(anchors), width), dtype=bool)
    for r, u in enumerate(anchors):
        pos, neg = pair_sets.positives[u], pair_sets.negatives[u]
        other[r, :len(pos)] = pos
        beta[r, :len(pos)] = positive_weight(np.abs(y[pos] - y[u]), m, cfg.gamma_pos)
        valid[r, :len(pos)] = is_pos[r, :len(pos)] = True
        other[r, n_pos:n_pos + len(neg)] = neg
        beta[r, n_pos:n_pos + len(neg)] = negative_weight(np.abs(y[neg] - y[u]), m, cfg.gamma_neg)
        valid[r, n_pos:n_pos + len(neg)] = True
    if cfg.similarity == "cosine":
        H = H / H.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    h_anchor = H[torch.as_tensor(anchors)]
    sim = (h_anchor.unsqueeze(1) * H[torch.as_tensor(other)]).sum(-1)
    logits = as_tensor(beta) * sim / cfg.tau
    neg_inf = torch.full_like(logits, -np.inf)
    lse_all = torch.logsumexp(torch.where(torch.as_tensor(valid), logits, neg_inf), dim=1)
    lse_pos = torch.logsumexp(torch.where(torch.as_tensor(is_pos), logits, neg_inf), dim=1)
    return anchors, lse_all - lse_pos


def contrastive_loss(embeddings, clusters, pair_sets: PairSets, labels,
                     cfg: ContrastConfig = ContrastConfig()) -> torch.Tensor:
    """Sum (or mean, per ``cfg.reduction``) of per-anchor losses over all clusters.

    ``clusters`` is accepted for interface symmetry; membership is already
    encoded in ``pair_sets``.  With no eligible anchor the result is a zero
    that still participates in autograd, and a warning is issued.
    """
    H = as_tensor(embeddings)
    anchors, losses = per_anchor_losses(H, pair_sets, labels, cfg)
    if not anchors:
        warnings.warn("no anchor has both positives and negatives", ContrastiveDegeneracyWarning,
                      stacklevel=2)
        return (H * 0).sum()
    return losses.mean() if cfg.reduction == "mean" else losses.sum()
