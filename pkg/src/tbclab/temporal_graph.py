"""Temporal graph data model, edge-list I/O and the instance index.

A temporal graph here is a set of directed, timestamped edges ``(u, v, t)``
over dense integer node ids.  The instance index attaches to every edge the
number of strictly later departures available at its head node, which is
what gates message passing in the model.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DomainError, ParseError

__all__ = [
    "TemporalGraph",
    "InstanceIndex",
    "Histogram",
    "parse_edge_list",
    "read_edge_list",
    "serialize_edge_list",
    "build_instance_index",
    "temporal_neighbors",
    "tbc_histogram",
    "random_temporal_graph",
]

N_BUCKETS = 9


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    """Directed temporal graph over dense node ids ``0 .. n_nodes - 1``.

    Edges are kept deduplicated and sorted by ``(t, u, v)``, so two graphs
    built from the same edge set are indistinguishable regardless of input
    order.  ``node_ids[i]`` is the original (pre-compaction) id of node ``i``.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    node_ids: tuple = ()

    @classmethod
    def from_edges(cls, edges: Iterable[tuple], n_nodes: int | None = None,
                   node_ids: Sequence[int] | None = None) -> "TemporalGraph":
        triples = {(int(u), int(v), float(t)) for u, v, t in edges}
        for u, v, t in triples:
            if u < 0 or v < 0:
                raise DomainError(f"negative node id in edge ({u}, {v}, {t})")
            if not math.isfinite(t) or t < 0:
                raise DomainError(f"timestamp must be finite and non-negative, got {t}")
        ordered = sorted(triples, key=lambda e: (e[2], e[0], e[1]))
        top = max((max(u, v) for u, v, _ in ordered), default=-1) + 1
        if n_nodes is None:
            n_nodes = top
        elif n_nodes < top:
            raise DomainError(f"edge endpoint {top - 1} outside [0, {n_nodes})")
        if node_ids is None:
            node_ids = tuple(range(n_nodes))
        elif len(node_ids) != n_nodes:
            raise DomainError("node_ids length does not match n_nodes")
        src = np.array([e[0] for e in ordered], dtype=np.int64)
        dst = np.array([e[1] for e in ordered], dtype=np.int64)
        ts = np.array([e[2] for e in ordered], dtype=np.float64)
        return cls(n_nodes, src, dst, ts, tuple(int(i) for i in node_ids))

    @property
    def n_edges(self) -> int:
        return len(self.t)

    @property
    def t_max(self) -> float:
        return float(self.t.max()) if len(self.t) else 0.0

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.t.tolist()))

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n_nodes)

    def digest(self) -> str:
        """SHA-256 over the canonical dense-id edge list and node count."""
        h = hashlib.sha256()
        h.update(np.int64(self.n_nodes).tobytes())
        h.update(np.ascontiguousarray(self.src).tobytes())
        h.update(np.ascontiguousarray(self.dst).tobytes())
        h.update(np.ascontiguousarray(self.t).tobytes())
        return h.hexdigest()

    def dense_id(self, original: int) -> int:
        try:
            return self.node_ids.index(int(original))
        except ValueError:
            raise DomainError(f"unknown node id {original}") from None


def parse_edge_list(source: str | TextIO) -> TemporalGraph:
    """Parse ``u v t`` lines into a graph with first-appearance id compaction.

    ``#`` starts a comment line and blank lines are skipped.  Extra columns
    are rejected so that label files are not silently mistaken for graphs.
    """
    stream = io.StringIO(source) if isinstance(source, str) else source
    remap: dict[int, int] = {}
    edges = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'u v t', got {len(parts)} fields", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"node ids must be integers: {line!r}", lineno) from None
        if u < 0 or v < 0:
            raise ParseError(f"node ids must be non-negative: {line!r}", lineno)
        try:
            t = float(parts[2])
        except ValueError:
            raise ParseError(f"bad timestamp {parts[2]!r}", lineno) from None
        if not math.isfinite(t):
            raise ParseError(f"timestamp must be finite: {parts[2]!r}", lineno)
        if t < 0:
            raise DomainError(f"line {lineno}: negative timestamp {parts[2]}")
        for x in (u, v):
            if x not in remap:
                remap[x] = len(remap)
        edges.append((remap[u], remap[v], t))
    node_ids = sorted(remap, key=remap.__getitem__)
    return TemporalGraph.from_edges(edges, n_nodes=len(remap), node_ids=node_ids)


def read_edge_list(path) -> TemporalGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_edge_list(fh)


def _fmt_time(t: float) -> str:
    if t.is_integer() and abs(t) < 2**53:
        return str(int(t))
    return repr(t)


def serialize_edge_list(g: TemporalGraph, original_ids: bool = True) -> str:
    """Inverse of :func:`parse_edge_list`; timestamps are printed round-trip exact.

    Lines are ordered by ``(t, u, v)`` in the printed ids, so re-parsing the
    output and serializing again reproduces it byte for byte.
    """
    ids = g.node_ids if original_ids else tuple(range(g.n_nodes))
    rows = sorted((t, ids[u], ids[v]) for u, v, t in g.edges)
    lines = [f"{u} {v} {_fmt_time(t)}" for t, u, v in rows]
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True, eq=False)
class InstanceIndex:
    """Per-node outgoing timestamp sets and per-edge valid-continuation counts.

    ``path_count[e]`` is aligned with edge ``e`` of the source graph.  The
    ``incoming`` table lists, for each node, its in-edges ordered most recent
    first with ties broken by ascending source id.
    """

    t_out: tuple
    path_count: np.ndarray
    incoming: tuple
    _lookup: dict = field(default_factory=dict, repr=False)

    def P(self, u: int, v: int, t: float) -> int:
        return int(self.path_count[self._lookup[(int(u), int(v), float(t))]])


def build_instance_index(g: TemporalGraph) -> InstanceIndex:
    t_out = []
    for v in range(g.n_nodes):
        t_out.append(np.unique(g.t[g.src == v]))
    counts = np.zeros(g.n_edges, dtype=np.int64)
    for e in range(g.n_edges):
        later = t_out[g.dst[e]]
        counts[e] = len(later) - np.searchsorted(later, g.t[e], side="right")
    incoming = []
    for v in range(g.n_nodes):
        eids = np.flatnonzero(g.dst == v)
        order = np.lexsort((g.src[eids], -g.t[eids]))
        eids = eids[order]
        incoming.append((g.src[eids], g.t[eids], counts[eids]))
    lookup = {(u, v, t): e for e, (u, v, t) in enumerate(g.edges)}
    return InstanceIndex(tuple(t_out), counts, tuple(incoming), lookup)


def temporal_neighbors(idx: InstanceIndex, g: TemporalGraph, v: int, t: float,
                       limit: int = 20) -> list[tuple[int, float]]:
    """Valid incoming events of ``v`` strictly before ``t``, newest first."""
    if limit < 1:
        raise DomainError("limit must be at least 1")
    src, ts, counts = idx.incoming[v]
    keep = (ts < t) & (counts > 0)
    return list(zip(src[keep][:limit].tolist(), ts[keep][:limit].tolist()))


@dataclass(frozen=True)
class Histogram:
    zero_count: int
    bucket_edges: tuple
    bucket_counts: tuple

    @property
    def total(self) -> int:
        return self.zero_count + sum(self.bucket_counts)

    @property
    def zero_fraction(self) -> float:
        return self.zero_count / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.total,
            "zero_count": self.zero_count,
            "zero_fraction": self.zero_fraction,
            "bucket_edges": list(self.bucket_edges),
            "bucket_counts": list(self.bucket_counts),
        }


def _label_values(labels) -> np.ndarray:
    values = getattr(labels, "values", labels)
    return np.asarray(values, dtype=np.float64).ravel()


def tbc_histogram(labels) -> Histogram:
    """Zero bucket plus nine equal-width buckets over the nonzero range."""
    values = _label_values(labels)
    if values.size == 0:
        raise DomainError("histogram needs at least one labeled node")
    nonzero = values[values != 0]
    zero_count = int(values.size - nonzero.size)
    if nonzero.size == 0:
        return Histogram(zero_count, (0.0,) * (N_BUCKETS + 1), (0,) * N_BUCKETS)
    lo, hi = float(nonzero.min()), float(nonzero.max())
    edges = np.linspace(lo, hi, N_BUCKETS + 1)
    if lo == hi:
        counts = np.zeros(N_BUCKETS, dtype=np.int64)
        counts[-1] = nonzero.size
    else:
        counts, _ = np.histogram(nonzero, bins=edges)
    return Histogram(zero_count, tuple(edges.tolist()), tuple(int(c) for c in counts))


def histogram_strata(labels) -> np.ndarray:
    """Stratum id per node: 0 for exact zeros, 1..9 for the nonzero buckets."""
    values = _label_values(labels)
    hist = tbc_histogram(values)
    strata = np.zeros(values.size, dtype=np.int64)
    nz = values != 0
    if nz.any():
        edges = np.asarray(hist.bucket_edges)
        # interior edges only; the last bucket is right-closed
        strata[nz] = 1 + np.searchsorted(edges[1:-1], values[nz], side="right")
    return strata


def random_temporal_graph(n_nodes: int, n_edges: int, n_times: int,
                          seed=None) -> TemporalGraph:
    """Uniform random loop-free temporal graph with integer times in ``1..n_times``.

    Duplicate draws collapse, so the result may hold fewer than ``n_edges`` edges.
    """
    rng = np.random.default_rng(seed)
    edges = []
    for _ in range(n_edges):
        u, v = rng.choice(n_nodes, size=2, replace=False)
        edges.append((int(u), int(v), float(rng.integers(1, n_times + 1))))
    return TemporalGraph.from_edges(edges, n_nodes=n_nodes)
