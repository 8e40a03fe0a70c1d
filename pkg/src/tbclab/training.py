"""Loss assembly, the training loop, checkpoints and evaluation."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from . import contrastive as con
from .errors import ConfigError, DomainError, TBCLabError
from .metrics import MetricsReport, report
from .model import CLGNN, ModelConfig, build_plan, forward, gradient_check, predict_tbc
from .nn_utils import DTYPE, as_tensor, record
from .tbc_oracle import PathSemantics
from .stability_clustering import ClusterConfig, kmeans, select_k
from .temporal_graph import TemporalGraph, build_instance_index

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "TrainingDiverged",
    "regression_loss",
    "total_loss",
    "train",
    "embed",
    "predict",
    "target_scale",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "read_config",
    "check_total_loss_gradients",
]

CHECKPOINT_VERSION = 1
LEARNING_RATES = (0.1, 0.01, 0.001)


@dataclass
class TrainConfig:
    alpha: float = 0.2
    lam: float = 0.4
    lr: float = 0.01
    epochs: int = 15
    seed: int = 0
    criterion: str = "shortest-foremost"
    delta: float = math.inf
    max_hops: int = 0
    d: int = 128
    d_T: int = 64
    d_P: int = 128
    d_h: int = 128
    heads: int = 2
    layers: int = 3
    neighbor_limit: int = 20
    gamma_pos: float = 0.5
    gamma_neg: float = 0.5
    tau: float = 0.1
    cluster_rate: float = 0.4
    cluster_pairs: int = 20
    k_max: int = 10
    similarity: str = "cosine"
    contrast_reduction: str = "mean"
    target_scale: str = "pairs"

    def __post_init__(self):
        if self.contrast_reduction not in ("sum", "mean"):
            raise ConfigError("contrast_reduction must be 'sum' or 'mean'")
        if self.target_scale not in ("pairs", "none"):
            raise ConfigError("target_scale must be 'pairs' or 'none'")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if self.lr not in LEARNING_RATES:
            raise ConfigError(f"lr must be one of {LEARNING_RATES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, d_T=self.d_T, d_P=self.d_P, d_h=self.d_h, heads=self.heads,
                           layers=self.layers, lam=self.lam, neighbor_limit=self.neighbor_limit,
                           seed=self.seed)

    def contrast_config(self) -> con.ContrastConfig:
        return con.ContrastConfig(self.gamma_pos, self.gamma_neg, self.tau, self.similarity,
                                  self.contrast_reduction)

    def semantics(self) -> PathSemantics:
        return PathSemantics(self.criterion, self.delta, self.max_hops or None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta"] = "inf" if math.isinf(self.delta) else self.delta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            kwargs[key] = _coerce(known[key].type, value, key)
        return cls(**kwargs)


def _coerce(type_name, value, key):
    try:
        if type_name in ("float", float):
            return math.inf if value in ("inf", math.inf) else float(value)
        if type_name in ("int", int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config(path) -> TrainConfig:
    """Flat ``key = value`` file; ``#`` comments and blank lines are ignored."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in raw:
                raise ConfigError(f"line {lineno}: duplicate key {key}")
            raw[key] = value
    return TrainConfig.from_dict(raw)


class TrainingDiverged(TBCLabError, RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def regression_loss(preds, labels) -> torch.Tensor:
    """Mean absolute error."""
    preds, labels = as_tensor(preds), as_tensor(labels)
    if labels.numel() == 0:
        raise DomainError("regression loss over an empty label set")
    if preds.shape != labels.shape:
        raise DomainError("predictions and labels are not aligned")
    residual = preds - labels
    record(residual)
    return residual.abs().mean()


def total_loss(alpha: float, contrast, regress):
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    return alpha * contrast + (1 - alpha) * regress


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict
    loss_trace: list = field(default_factory=list)
    k_hat: int | None = None
    train_digests: list = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    @property
    def seed(self) -> int:
        return self.config.seed

    def model(self) -> CLGNN:
        model = CLGNN(self.config.model_config())
        state = {}
        for name, entry in self.params.items():
            state[name] = torch.tensor(entry["data"], dtype=DTYPE).reshape(entry["shape"])
        model.load_state_dict(state)
        return model

    def to_dict(self) -> dict:
        return {
            "format_version": self.version,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "k_hat": self.k_hat,
            "train_digests": list(self.train_digests),
            "loss_trace": self.loss_trace,
            "params": self.params,
        }


def _export_params(model: CLGNN) -> dict:
    return {name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
            for name, t in model.state_dict().items()}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ckpt.to_dict(), fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint format {version} is not supported (expected {CHECKPOINT_VERSION})")
    return Checkpoint(
        config=TrainConfig.from_dict(doc["config"]),
        params=doc["params"],
        loss_trace=doc.get("loss_trace", []),
        k_hat=doc.get("k_hat"),
        train_digests=doc.get("train_digests", []),
        version=version,
    )


@dataclass
class _Item:
    graph: TemporalGraph
    plan: object
    idx: object
    y: torch.Tensor
    median: float | None


def _label_array(labels) -> np.ndarray:
    return np.asarray(getattr(labels, "values", labels), dtype=np.float64)


def target_scale(g: TemporalGraph, mode: str = "pairs") -> float:
    """Factor between normalized TBC and the value the ValueNet is trained on."""
    return float(g.n_nodes * (g.n_nodes - 1)) if mode == "pairs" and g.n_nodes > 1 else 1.0


def _prepare(cfg: TrainConfig, dataset) -> list[_Item]:
    items = []
    for g, labels in dataset:
        y = _label_array(labels)
        if len(y) != g.n_nodes:
            raise DomainError("labels do not cover every node")
        y = y * target_scale(g, cfg.target_scale)
        idx = build_instance_index(g)
        plan = build_plan(g, idx, cfg.layers, cfg.neighbor_limit)
        nz = y[y != 0]
        items.append(_Item(g, plan, idx, as_tensor(y), float(np.median(nz)) if nz.size else None))
    return items


def _cluster_labels(H: torch.Tensor, k: int, seed: int) -> np.ndarray:
    X = H.detach().numpy()
    k = min(k, len(np.unique(X, axis=0)))
    if k < 2:
        return np.zeros(len(X), dtype=np.int64)
    return kmeans(X, k, seed=seed).labels


def _select_k(model, items, cfg: TrainConfig) -> int:
    with torch.no_grad():
        H = np.concatenate([forward(model, it.graph, it.idx, plan=it.plan).numpy() for it in items])
    y = np.concatenate([it.y.numpy() for it in items])
    n_sub = max(2, int(cfg.cluster_rate * len(H)))
    k_max = min(cfg.k_max, n_sub // 2)
    if k_max < 2:
        return 1
    try:
        k_hat, _ = select_k(H, y, ClusterConfig(cfg.cluster_rate, cfg.cluster_pairs, k_max, seed=cfg.seed))
    except TBCLabError as exc:
        log.warning("cluster-count selection failed (%s); using a single cluster", exc)
        return 1
    return k_hat


def train(cfg: TrainConfig, dataset) -> Checkpoint:
    """Fit a model on ``[(graph, labels), ...]`` with one Adam step per graph per epoch."""
    if not dataset:
        raise DomainError("training needs at least one labeled graph")
    model = CLGNN(cfg.model_config())
    items = _prepare(cfg, dataset)
    ccfg = cfg.contrast_config()
    alpha = cfg.alpha
    if alpha > 0 and all(it.median is None for it in items):
        log.warning("every training label is zero; falling back to alpha = 0")
        alpha = 0.0
    k_hat = _select_k(model, items, cfg) if alpha > 0 else None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        trace = []
        for epoch in range(cfg.epochs):
            sums = {"total": 0.0, "contrast": 0.0, "regress": 0.0}
            for gi, it in enumerate(items):
                H = forward(model, it.graph, it.idx, plan=it.plan)
                reg = regression_loss(predict_tbc(model, H, clamp=False), it.y)
                a = alpha if it.median is not None else 0.0
                if a > 0:
                    clusters = _cluster_labels(H, k_hat, seed=cfg.seed * 7919 + epoch * 131 + gi)
                    pairs = con.build_pair_sets(clusters, it.y.numpy(), ccfg, median=it.median)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", con.ContrastiveDegeneracyWarning)
                        c = con.contrastive_loss(H, clusters, pairs, it.y.numpy(), ccfg)
                else:
                    c = torch.zeros((), dtype=DTYPE)
                loss = total_loss(a, c, reg)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, graph {gi}", trace)
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums["total"] += loss.item()
                sums["contrast"] += c.item()
                sums["regress"] += reg.item()
            row = {"epoch": epoch + 1}
            row.update({k: v / len(items) for k, v in sums.items()})
            trace.append(row)
            log.info("epoch %d total %.6g", epoch + 1, row["total"])
    return Checkpoint(cfg, _export_params(model), trace, k_hat, [it.graph.digest() for it in items])


def embed(model: CLGNN, g: TemporalGraph) -> torch.Tensor:
    idx = build_instance_index(g)
    with torch.no_grad():
        return forward(model, g, idx)


def predict(model: CLGNN, g: TemporalGraph, scale: str = "pairs") -> np.ndarray:
    """Clamped, normalized TBC predictions for every node, indexed by dense id."""
    with torch.no_grad():
        return predict_tbc(model, embed(model, g)).numpy() / target_scale(g, scale)


def evaluate(ckpt: Checkpoint, g: TemporalGraph, labels, inductive: bool = True,
             ks=(10, 30, 50)) -> MetricsReport:
    """Metrics of the checkpoint on ``g``; refuses graphs seen in training unless ``inductive=False``."""
    y = _label_array(labels)
    if len(y) != g.n_nodes:
        raise DomainError("label/graph node mismatch")
    if inductive and g.digest() in ckpt.train_digests:
        raise DomainError("evaluation graph was part of the training set")
    return report(predict(ckpt.model(), g, ckpt.config.target_scale), y, ks=tuple(ks))


def check_total_loss_gradients(model: CLGNN, g: TemporalGraph, labels, alpha: float = 0.2,
                               k: int = 2, ccfg: con.ContrastConfig = con.ContrastConfig(),
                               eps: float = 1e-5, n_probes: int = 50, seed: int = 0) -> float:
    """Finite-difference check of the full training objective on one graph.

    Clusters and pair sets are fixed from the initial embeddings so the loss
    is a smooth function of the parameters between ReLU kinks.
    """
    y = _label_array(labels)
    idx = build_instance_index(g)
    plan = build_plan(g, idx, model.cfg.layers, model.cfg.neighbor_limit)
    with torch.no_grad():
        H0 = forward(model, g, idx, plan=plan)
    clusters = _cluster_labels(H0, k, seed)
    pairs = con.build_pair_sets(clusters, y, ccfg)

    def loss_fn():
        H = forward(model, g, idx, plan=plan)
        reg = regression_loss(predict_tbc(model, H, clamp=False), y)
        c = con.contrastive_loss(H, clusters, pairs, y, ccfg)
        return total_loss(alpha, c, reg)

    return gradient_check(loss_fn, list(model.parameters()), eps=eps, n_probes=n_probes, seed=seed)
