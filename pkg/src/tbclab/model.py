"""Path-time aware temporal message passing network with a regression head.

Every node state ``h_v^l(t)`` only sees incoming events strictly before
``t`` whose head node still has a later departure (``P(u, v, t_x) > 0``).
States are computed level by level: :func:`build_plan` resolves, top down,
which ``(node, time)`` states each layer needs, and :func:`forward` then
evaluates them bottom up as dense padded tensors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .encoders import PathCountEncoder, TimeEncoder
from .errors import CheckError, DomainError
from .nn_utils import DTYPE, MLP, as_tensor, record_kinks
from .temporal_graph import InstanceIndex, TemporalGraph, temporal_neighbors

__all__ = [
    "ModelConfig",
    "CLGNN",
    "raw_features",
    "initial_features",
    "compute_message",
    "mean_weights",
    "aggregate_mean",
    "aggregate_attention",
    "combine_embeddings",
    "build_plan",
    "forward",
    "predict_tbc",
    "gradient_check",
]

N_RAW = 4


@dataclass
class ModelConfig:
    d: int = 128
    d_T: int = 64
    d_P: int = 128
    d_h: int = 128
    heads: int = 2
    layers: int = 3
    lam: float = 0.4
    neighbor_limit: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError("lambda must lie in [0, 1]")
        if self.heads < 1 or self.d_h % self.heads:
            raise DomainError("heads must divide d_h")
        if min(self.d, self.d_T, self.d_P, self.d_h, self.layers, self.neighbor_limit) < 1:
            raise DomainError("dimensions, layers and neighbor_limit must be positive")

    @property
    def msg_dim(self) -> int:
        return 2 * self.d + 2 * self.d_T + self.d_P

    def to_dict(self) -> dict:
        return asdict(self)


class AggregationLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        m = cfg.msg_dim
        # projections take the full message width; see module docs
        self.W_Q = nn.Linear(m, cfg.d_h, bias=False, dtype=DTYPE)
        self.W_K = nn.Linear(m, cfg.d_h, bias=False, dtype=DTYPE)
        self.W_V = nn.Linear(m, cfg.d_h, bias=False, dtype=DTYPE)
        self.mean_mlp = MLP([m + cfg.d, cfg.d, cfg.d])
        self.attn_mlp = MLP([cfg.d_h + cfg.d, cfg.d, cfg.d])


class CLGNN(nn.Module):
    """All learnable tensors: feature projection, encoders, layers, ValueNet."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.feature_proj = nn.Linear(N_RAW, cfg.d, dtype=DTYPE)
            self.time_enc = TimeEncoder(cfg.d_T)
            self.path_enc = PathCountEncoder(cfg.d_P)
            self.layers = nn.ModuleList(AggregationLayer(cfg) for _ in range(cfg.layers))
            self.valuenet = MLP([cfg.d, cfg.d, cfg.d, 1])
        self.last_trace: list | None = None


# ---------------------------------------------------------------- features

def raw_features(g: TemporalGraph, idx: InstanceIndex) -> np.ndarray:
    """``log1p`` of in-degree, out-degree, ``|T_out(v)|`` and incoming path-count mass."""
    p_in = np.bincount(g.dst, weights=idx.path_count.astype(np.float64), minlength=g.n_nodes)
    n_times = np.array([len(ts) for ts in idx.t_out], dtype=np.float64)
    raw = np.stack([g.in_degree(), g.out_degree(), n_times, p_in], axis=1).astype(np.float64)
    return np.log1p(raw)


def initial_features(model: CLGNN, g: TemporalGraph, idx: InstanceIndex) -> torch.Tensor:
    return model.feature_proj(as_tensor(raw_features(g, idx)))


# ------------------------------------------------------------- primitives

def _message(model, h_u, h_v, dt, p):
    return torch.cat([h_u, h_v, model.time_enc(dt), model.path_enc(p)], dim=-1)


def compute_message(model: CLGNN, h_u, h_v, t: float, t_prev: float, p: int):
    """Message for event ``(u, v, t)``; ``None`` when ``p == 0`` (never sent)."""
    if p <= 0:
        return None
    return _message(model, as_tensor(h_u), as_tensor(h_v), as_tensor(t - t_prev), as_tensor(float(p)))


def mean_weights(sources, path_counts) -> np.ndarray:
    """Per-event weights: ``P`` normalized within each source, then averaged over sources."""
    sources = np.asarray(sources)
    counts = np.asarray(path_counts, dtype=np.float64)
    w = np.zeros(len(counts))
    uniq = np.unique(sources)
    for u in uniq:
        sel = sources == u
        w[sel] = counts[sel] / counts[sel].sum() / len(uniq)
    return w


def aggregate_mean(messages: torch.Tensor, sources, path_counts) -> torch.Tensor:
    messages = as_tensor(messages)
    if messages.shape[0] == 0:
        return torch.zeros(messages.shape[-1], dtype=DTYPE)
    w = as_tensor(mean_weights(sources, path_counts))
    return (w.unsqueeze(-1) * messages).sum(0)


def _attention(layer: AggregationLayer, heads: int, q, msg, mask):
    """Batched multi-head attention. ``q: [S, D]``, ``msg: [S, E, D]``, ``mask: [S, E]``."""
    S, E, _ = msg.shape
    d_h = layer.W_Q.out_features
    dk = d_h // heads
    Q = layer.W_Q(q).view(S, heads, dk)
    K = layer.W_K(msg).view(S, E, heads, dk)
    V = layer.W_V(msg).view(S, E, heads, dk)
    scores = torch.einsum("skd,sekd->ske", Q, K) / math.sqrt(d_h)
    m = mask.unsqueeze(1)
    scores = torch.where(m, scores, torch.full_like(scores, -math.inf))
    any_valid = mask.any(-1).view(S, 1, 1)
    scores = torch.where(any_valid, scores, torch.zeros_like(scores))
    att = torch.softmax(scores, dim=-1) * m
    out = torch.einsum("ske,sekd->skd", att, V).reshape(S, d_h)
    return out, att


def aggregate_attention(model: CLGNN, layer: int, query, messages, return_weights: bool = False):
    """Attention of one query over a stack of messages; heads concatenated."""
    messages = as_tensor(messages)
    lay = model.layers[layer - 1]
    if messages.shape[0] == 0:
        out = torch.zeros(lay.W_Q.out_features, dtype=DTYPE)
        return (out, torch.zeros(model.cfg.heads, 0, dtype=DTYPE)) if return_weights else out
    mask = torch.ones(1, messages.shape[0], dtype=torch.bool)
    out, att = _attention(lay, model.cfg.heads, as_tensor(query).unsqueeze(0), messages.unsqueeze(0), mask)
    return (out[0], att[0]) if return_weights else out[0]


def combine_embeddings(model: CLGNN, layer: int, h_bar, heads, h_prev, lam: float | None = None):
    lam = model.cfg.lam if lam is None else lam
    lay = model.layers[layer - 1]
    h_prev = as_tensor(h_prev)
    mean_branch = lay.mean_mlp(torch.cat([as_tensor(h_bar), h_prev], dim=-1))
    attn_branch = lay.attn_mlp(torch.cat([as_tensor(heads), h_prev], dim=-1))
    return lam * mean_branch + (1 - lam) * attn_branch


# ------------------------------------------------------------------ plans

@dataclass
class LevelPlan:
    keys: list
    ev_u: np.ndarray
    ev_v: np.ndarray
    ev_dt: np.ndarray
    ev_p: np.ndarray
    mean_w: np.ndarray
    mask: np.ndarray
    q_idx: np.ndarray
    q_dt: np.ndarray
    q_p: np.ndarray
    prev_idx: np.ndarray
    events: list = field(default_factory=list)


@dataclass
class ForwardPlan:
    targets: list
    t_ref: float
    base_nodes: list
    levels: list


def _valid_times(g, idx):
    out = []
    for v in range(g.n_nodes):
        _, ts, counts = idx.incoming[v]
        out.append(np.unique(ts[counts > 0]))
    return out


def _before(times: np.ndarray, t: float) -> float:
    """Latest entry of ascending ``times`` strictly below ``t``; ``t`` itself if none."""
    i = np.searchsorted(times, t, side="left")
    return float(times[i - 1]) if i > 0 else t


def build_plan(g: TemporalGraph, idx: InstanceIndex, n_layers: int, limit: int,
               targets=None, t_ref: float | None = None) -> ForwardPlan:
    """Resolve the ``(node, time)`` states needed by every layer.

    For event ``(u, v, t_x)`` the reference time ``t_prev`` is v's latest
    valid event strictly before ``t_x`` (``t_x`` when there is none); the
    message reads both endpoint states at ``t_prev``.  The query of state
    ``(v, t)`` reads v's state at its latest valid event before ``t``, and
    its path slot encodes the total ``P`` of all valid incoming events
    before ``t``, sampled or not.
    """
    targets = list(range(g.n_nodes)) if targets is None else [int(v) for v in targets]
    t_ref = g.t_max if t_ref is None else float(t_ref)
    valid = _valid_times(g, idx)
    keys = [(v, t_ref) for v in targets]
    pending = []
    for level in range(n_layers, 0, -1):
        below: dict = {}

        def need(v, t):
            key = v if level == 1 else (v, t)
            return below.setdefault(key, len(below))

        S = len(keys)
        rows = []
        for v, t in keys:
            evs = temporal_neighbors(idx, g, v, t, limit)
            rows.append(evs)
        E = max(1, max((len(r) for r in rows), default=0))
        ev_u = np.zeros((S, E), dtype=np.int64)
        ev_v = np.zeros((S, E), dtype=np.int64)
        ev_dt = np.zeros((S, E))
        ev_p = np.zeros((S, E))
        mean_w = np.zeros((S, E))
        mask = np.zeros((S, E), dtype=bool)
        q_idx = np.zeros(S, dtype=np.int64)
        q_dt = np.zeros(S)
        q_p = np.zeros(S)
        prev_idx = np.zeros(S, dtype=np.int64)
        emitted = []
        pad = []
        for s, ((v, t), evs) in enumerate(zip(keys, rows)):
            counts = []
            for j, (u, tx) in enumerate(evs):
                p = idx.P(u, v, tx)
                assert p > 0
                tp = _before(valid[v], tx)
                ev_u[s, j] = need(u, tp)
                ev_v[s, j] = need(v, tp)
                ev_dt[s, j] = tx - tp
                ev_p[s, j] = p
                mask[s, j] = True
                counts.append(p)
                emitted.append((u, v, tx))
            if evs:
                mean_w[s, :len(evs)] = mean_weights([u for u, _ in evs], counts)
            pad.extend((s, j) for j in range(len(evs), E))
            tq = _before(valid[v], t)
            q_idx[s] = need(v, tq)
            q_dt[s] = t - tq
            _, in_t, in_p = idx.incoming[v]
            q_p[s] = float(in_p[in_t < t].sum())
            prev_idx[s] = need(v, t)
        n_below = len(below)
        for s, j in pad:
            ev_u[s, j] = ev_v[s, j] = n_below
        pending.append(LevelPlan(keys, ev_u, ev_v, ev_dt, ev_p, mean_w, mask,
                                 q_idx, q_dt, q_p, prev_idx, emitted))
        keys = list(below)
    return ForwardPlan(targets, t_ref, keys, pending[::-1])


def forward(model: CLGNN, g: TemporalGraph, idx: InstanceIndex, targets=None,
            t_ref: float | None = None, plan: ForwardPlan | None = None,
            instrument: bool = False) -> torch.Tensor:
    """Final-layer embeddings ``[len(targets), d]`` at ``t_ref`` (default ``t_max``)."""
    cfg = model.cfg
    if plan is None:
        plan = build_plan(g, idx, cfg.layers, cfg.neighbor_limit, targets, t_ref)
    raw = as_tensor(raw_features(g, idx))
    H = model.feature_proj(raw[torch.as_tensor(plan.base_nodes, dtype=torch.long)])
    trace = [] if instrument else None
    for level, (lp, lay) in enumerate(zip(plan.levels, model.layers), start=1):
        Hp = torch.cat([H, torch.zeros(1, cfg.d, dtype=DTYPE)], dim=0)
        mask = torch.as_tensor(lp.mask)
        msg = _message(model, Hp[torch.as_tensor(lp.ev_u)], Hp[torch.as_tensor(lp.ev_v)],
                       as_tensor(lp.ev_dt), as_tensor(lp.ev_p))
        msg = msg * mask.unsqueeze(-1)
        h_bar = (as_tensor(lp.mean_w).unsqueeze(-1) * msg).sum(1)
        q_states = Hp[torch.as_tensor(lp.q_idx)]
        q = _message(model, q_states, q_states, as_tensor(lp.q_dt), as_tensor(lp.q_p))
        heads, att = _attention(lay, cfg.heads, q, msg, mask)
        h_prev = Hp[torch.as_tensor(lp.prev_idx)]
        H = combine_embeddings(model, level, h_bar, heads, h_prev)
        if instrument:
            trace.append({"events": list(lp.events), "attention": att.detach(),
                          "mean_weights": lp.mean_w, "mask": lp.mask})
    if instrument:
        model.last_trace = trace
    return H


def predict_tbc(model: CLGNN, embedding, clamp: bool = True) -> torch.Tensor:
    """ValueNet output; negative predictions are clipped to 0 unless ``clamp=False``."""
    out = model.valuenet(as_tensor(embedding)).squeeze(-1)
    return out.clamp_min(0.0) if clamp else out


# ------------------------------------------------------- gradient checking

def gradient_check(loss_fn, params, eps: float = 1e-5, n_probes: int = 50, seed: int = 0,
                   kink_tol: float = 1e-6, floor: float = 1e-6, noise_scale: float = 1e5) -> float:
    """Max relative error between autograd and central differences.

    ``loss_fn()`` must rebuild the scalar loss from the current values of
    ``params``.  Probes whose perturbation flips the side of any recorded
    kink, or starts within ``kink_tol`` of one, are skipped.  The relative
    error is ``|a - f| / max(|a|, |f|, floor')`` where ``floor'`` also covers
    the rounding noise of the difference quotient,
    ``noise_scale * eps_machine * max(1, |L|) / eps``.
    """
    params = [p for p in params if p.requires_grad]
    with record_kinks() as base_kinks:
        loss = loss_fn()
    if not torch.isfinite(loss):
        raise CheckError("loss is not finite")
    floor = max(floor, noise_scale * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / eps)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    n_probes = min(n_probes, 200, total)
    picks = rng.choice(total, size=n_probes, replace=False)
    offsets = np.cumsum([0] + sizes)
    near_kink = any(np.any(np.abs(k) < kink_tol) for k in base_kinks)
    worst = 0.0
    used = 0
    for flat in sorted(picks.tolist()):
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = flat - offsets[i]
        view = params[i].data.view(-1)
        orig = view[j].item()
        with torch.no_grad():
            view[j] = orig + eps
            with record_kinks() as k_plus:
                f_plus = loss_fn().item()
            view[j] = orig - eps
            with record_kinks() as k_minus:
                f_minus = loss_fn().item()
            view[j] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise CheckError("loss is not finite under perturbation")
        if near_kink or _crosses(k_plus, k_minus):
            continue
        fd = (f_plus - f_minus) / (2 * eps)
        ad = grads[i].view(-1)[j].item()
        worst = max(worst, abs(ad - fd) / max(abs(ad), abs(fd), floor))
        used += 1
    if used == 0:
        raise CheckError("every probe was rejected as straddling a kink")
    return worst


def _crosses(a, b) -> bool:
    if len(a) != len(b):
        return True
    return any(x.shape != y.shape or np.any(np.sign(x) != np.sign(y)) for x, y in zip(a, b))
