"""Exact temporal betweenness centrality by exhaustive path enumeration.

Two engines produce identical path counts:

* ``"enumerate"`` walks every node-simple, time-respecting path depth first.
* ``"dp"`` sweeps the edges in time order and propagates aggregated path
  states ``(node, arrival, visited-set, hops, departure) -> count``.

Both are exponential in the worst case and meant for small graphs; the DP
engine exists to cross-check the enumerator.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import groupby

import numpy as np

from .errors import DomainError, ParseError, ResourceError
from .temporal_graph import TemporalGraph

__all__ = [
    "PathSemantics",
    "LabelSet",
    "enumerate_temporal_paths",
    "optimal_path_counts",
    "exact_tbc",
    "write_labels",
    "read_labels",
    "read_label_values",
]

CRITERIA = ("shortest", "shortest-foremost", "shortest-latest-foremost")
DEFAULT_CEILING = 10**7


@dataclass(frozen=True)
class PathSemantics:
    """Which temporal paths count as optimal between a source and a target.

    ``criterion`` orders candidate paths lexicographically:

    - ``shortest``: hop count
    - ``shortest-foremost``: (arrival time, hop count)
    - ``shortest-latest-foremost``: (arrival time, -departure time, hop count)

    ``delta`` bounds the gap between consecutive edges (``inf`` = unbounded);
    ``max_hops=None`` leaves only the node-simplicity bound.
    """

    criterion: str = "shortest"
    delta: float = math.inf
    max_hops: int | None = None

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise DomainError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if self.max_hops is not None and self.max_hops < 1:
            raise DomainError("max_hops must be at least 1")

    def key(self, hops: int, departure: float, arrival: float) -> tuple:
        if self.criterion == "shortest":
            return (hops,)
        if self.criterion == "shortest-foremost":
            return (arrival, hops)
        return (arrival, -departure, hops)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "delta": "inf" if math.isinf(self.delta) else self.delta,
            "max_hops": self.max_hops,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathSemantics":
        delta = d.get("delta", "inf")
        return cls(d.get("criterion", "shortest"),
                   math.inf if delta == "inf" else float(delta),
                   d.get("max_hops"))


@dataclass(frozen=True, eq=False)
class LabelSet:
    values: np.ndarray
    semantics: PathSemantics
    source_graph_digest: str


def _out_adjacency(g: TemporalGraph) -> list[list[tuple[int, float]]]:
    adj = [[] for _ in range(g.n_nodes)]
    for u, v, t in g.edges:
        adj[u].append((v, t))
    for row in adj:
        row.sort(key=lambda e: (e[1], e[0]))
    return adj


def _walk(g, s, sem, ceiling, adj=None):
    """Yield every node-simple temporal path from ``s`` as a list of edges."""
    adj = _out_adjacency(g) if adj is None else adj
    cap = sem.max_hops if sem.max_hops is not None else max(g.n_nodes - 1, 1)
    work = 0
    path: list[tuple[int, int, float]] = []
    on_path = {s}

    def extend(x, last_t):
        nonlocal work
        if len(path) >= cap:
            return
        for y, t in adj[x]:
            if y in on_path:
                continue
            if last_t is not None and not (0 < t - last_t <= sem.delta):
                continue
            work += 1
            if work > ceiling:
                raise ResourceError(f"path enumeration exceeded {ceiling} partial extensions")
            path.append((x, y, t))
            on_path.add(y)
            yield path
            yield from extend(y, t)
            on_path.discard(y)
            path.pop()

    yield from extend(s, None)


def enumerate_temporal_paths(g: TemporalGraph, s: int, z: int, sem: PathSemantics = PathSemantics(),
                             ceiling: int = DEFAULT_CEILING) -> list[list[tuple[int, int, float]]]:
    if s == z:
        raise DomainError("source and target must differ")
    return [list(p) for p in _walk(g, s, sem, ceiling) if p[-1][1] == z]


class _Best:
    __slots__ = ("key", "sigma", "through")

    def __init__(self):
        self.key = None
        self.sigma = 0
        self.through = Counter()

    def offer(self, key, count, interior):
        if self.key is None or key < self.key:
            self.key, self.sigma, self.through = key, 0, Counter()
        if key == self.key:
            self.sigma += count
            for v in interior:
                self.through[v] += count


def _source_enumerate(g, s, sem, ceiling, adj=None):
    best = defaultdict(_Best)
    for p in _walk(g, s, sem, ceiling, adj):
        z = p[-1][1]
        best[z].offer(sem.key(len(p), p[0][2], p[-1][2]), 1, [e[1] for e in p[:-1]])
    return best


def _source_dp(g, s, sem, ceiling):
    cap = sem.max_hops if sem.max_hops is not None else max(g.n_nodes - 1, 1)
    at_node = defaultdict(Counter)  # node -> {(arrival, mask, hops, departure): count}
    work = 0
    for t, group in groupby(g.edges, key=lambda e: e[2]):
        fresh = defaultdict(Counter)
        for x, y, _ in group:
            if y == s:
                continue
            if x == s:
                fresh[y][(t, (1 << s) | (1 << y), 1, t)] += 1
            for (arr, mask, hops, dep), count in at_node[x].items():
                if hops >= cap or mask >> y & 1:
                    continue
                if not (0 < t - arr <= sem.delta):
                    continue
                work += 1
                if work > ceiling:
                    raise ResourceError(f"dp sweep exceeded {ceiling} state extensions")
                fresh[y][(t, mask | (1 << y), hops + 1, dep)] += count
        for y, states in fresh.items():
            at_node[y].update(states)
    best = defaultdict(_Best)
    for z, states in at_node.items():
        for (arr, mask, hops, dep), count in sorted(states.items()):
            interior = [v for v in range(g.n_nodes) if mask >> v & 1 and v not in (s, z)]
            best[z].offer(sem.key(hops, dep, arr), count, interior)
    return best


def optimal_path_counts(g: TemporalGraph, s: int, z: int, sem: PathSemantics = PathSemantics(),
                        engine: str = "enumerate", ceiling: int = DEFAULT_CEILING):
    """Return ``(sigma, through)`` for optimal paths ``s -> z``.

    ``through`` maps interior nodes to the number of optimal paths visiting them.
    """
    if s == z:
        raise DomainError("source and target must differ")
    best = _per_source(engine)(g, s, sem, ceiling).get(z)
    if best is None:
        return 0, {}
    return best.sigma, dict(best.through)


def _per_source(engine):
    if engine == "enumerate":
        return _source_enumerate
    if engine == "dp":
        return _source_dp
    raise DomainError(f"unknown engine {engine!r}")


def _source_contribution(args):
    g, s, sem, engine, ceiling = args
    contrib = np.zeros(g.n_nodes)
    best = _per_source(engine)(g, s, sem, ceiling)
    for z in sorted(best):
        b = best[z]
        if z == s or b.sigma == 0:
            continue
        for v in sorted(b.through):
            contrib[v] += b.through[v] / b.sigma
    return contrib


def exact_tbc(g: TemporalGraph, sem: PathSemantics = PathSemantics(), engine: str = "enumerate",
              ceiling: int = DEFAULT_CEILING, workers: int = 1) -> LabelSet:
    """Normalized temporal betweenness of every node.

    Per-source contributions are summed in ascending source order, so the
    result is bit-identical whatever ``workers`` is.
    """
    n = g.n_nodes
    if n < 2:
        raise DomainError("temporal betweenness needs at least two nodes")
    jobs = [(g, s, sem, engine, ceiling) for s in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_source_contribution, jobs))
    else:
        parts = [_source_contribution(j) for j in jobs]
    total = np.zeros(n)
    for part in parts:
        total += part
    return LabelSet(total / (n * (n - 1)), sem, g.digest())


def write_labels(labels: LabelSet, g: TemporalGraph, path, extra: dict | None = None) -> None:
    """Write ``node value`` lines (original ids, 12 significant digits) plus a JSON sidecar."""
    order = np.argsort(g.node_ids, kind="stable")
    with open(path, "w", encoding="utf-8") as fh:
        for i in order:
            fh.write(f"{g.node_ids[i]} {labels.values[i]:.12g}\n")
    meta = {
        "semantics": labels.semantics.to_dict(),
        "graph_digest": labels.source_graph_digest,
        "n_nodes": g.n_nodes,
    }
    if extra:
        meta.update(extra)
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_label_values(path) -> dict[int, float]:
    """Raw ``{original id: value}`` mapping from a two-column file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'node value'", lineno)
            try:
                out[int(parts[0])] = float(parts[1])
            except ValueError:
                raise ParseError(f"malformed line {line!r}", lineno) from None
    return out


def read_labels(path, g: TemporalGraph, sem: PathSemantics | None = None) -> LabelSet:
    raw = read_label_values(path)
    if set(raw) != set(g.node_ids):
        raise DomainError("label file nodes do not match graph nodes")
    values = np.array([raw[i] for i in g.node_ids], dtype=np.float64)
    if sem is None:
        try:
            with open(f"{path}.json", encoding="utf-8") as fh:
                sem = PathSemantics.from_dict(json.load(fh)["semantics"])
        except (OSError, KeyError, ValueError):
            sem = PathSemantics()
    return LabelSet(values, sem, g.digest())
