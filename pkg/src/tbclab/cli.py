"""Command-line entry point: ``tbclab <command> [options]``.

Commands
--------
exact      edge list -> exact TBC label file
stats      label file -> imbalance histogram JSON (+ PNG)
select-k   points (or checkpoint + graph) -> stability trace and k
train      graphs (+ labels) -> checkpoint JSON (+ loss curve PNG)
predict    checkpoint + graph -> "node value" predictions
eval       predictions + labels, or checkpoint + graph + labels -> metrics JSON

Every command also writes ``<out>.run.json`` holding the argument vector
and the resolved options, so ``main(sidecar["argv"])`` repeats the run.  Exit status is 0 on
success, 1 on a runtime failure and 2 on a usage error; failures are
reported on stderr as ``error: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import TBCLabError
from .metrics import report
from .tbc_oracle import CRITERIA, PathSemantics, exact_tbc, read_label_values, read_labels, write_labels
from .stability_clustering import ClusterConfig, select_k
from .temporal_graph import read_edge_list, tbc_histogram
from .training import (TrainConfig, embed, evaluate, load_checkpoint, predict, read_config,
                       save_checkpoint, train)

log = logging.getLogger("tbclab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _delta(text: str) -> float:
    if text.strip().lower() == "inf":
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"delta must be 'inf' or a positive number, got {text!r}") from None
    if not value > 0 or math.isinf(value) or math.isnan(value):
        raise argparse.ArgumentTypeError(f"delta must be 'inf' or a positive number, got {text!r}")
    return value


def _add_semantics(p):
    p.add_argument("--semantics", choices=CRITERIA, default="shortest")
    p.add_argument("--delta", type=_delta, default=math.inf, help="max waiting time, 'inf' or a decimal")
    p.add_argument("--max-hops", type=int, default=None)


def _semantics(args) -> PathSemantics:
    return PathSemantics(args.semantics, args.delta, args.max_hops)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tbclab", description="Temporal betweenness labels, training and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("exact", help="exact TBC labels of an edge list")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_semantics(p)
    p.add_argument("--engine", choices=("enumerate", "dp"), default="enumerate")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("stats", help="TBC imbalance histogram")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="figure path (default: <out>.png)")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("select-k", help="stability-based cluster count")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", help="whitespace matrix, one point per row")
    src.add_argument("--checkpoint", help="embed --graph with this checkpoint")
    p.add_argument("--graph")
    p.add_argument("--labels", help="TBC labels used for stratified sampling")
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=float, default=0.4)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", default=None)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("train", help="train a model on labeled graphs")
    p.add_argument("--graphs", nargs="+", required=True)
    p.add_argument("--labels", nargs="+", help="one label file per graph (default: computed exactly)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("predict", help="predict TBC for every node of a graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="metrics report")
    p.add_argument("--labels", required=True)
    p.add_argument("--preds")
    p.add_argument("--checkpoint")
    p.add_argument("--graph")
    p.add_argument("--transductive", action="store_true", help="allow graphs seen during training")
    p.add_argument("--ks", type=int, nargs="+", default=[10, 30, 50])
    p.add_argument("--out", required=True)
    return parser


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def _write_sidecar(args, extra=None):
    doc = {"command": args.command, "version": __version__, "argv": args.argv,
           "options": {k: _jsonable(v) for k, v in sorted(vars(args).items())
                       if k not in ("command", "argv")}}
    if extra:
        doc.update(extra)
    with open(f"{args.out}.run.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dump(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plot_path(args, suffix):
    if args.no_plot:
        return None
    return args.plot or str(Path(args.out).with_suffix("")) + suffix


def cmd_exact(args):
    g = read_edge_list(args.input)
    sem = _semantics(args)
    labels = exact_tbc(g, sem, engine=args.engine, workers=args.workers)
    write_labels(labels, g, args.out, extra={"engine": args.engine})
    _write_sidecar(args, {"semantics": sem.to_dict(), "graph_digest": g.digest()})
    print(f"wrote {g.n_nodes} labels to {args.out}")


def _label_column(path) -> np.ndarray:
    raw = read_label_values(path)
    return np.array([raw[k] for k in sorted(raw)], dtype=np.float64)


def cmd_stats(args):
    values = _label_column(args.labels)
    hist = tbc_histogram(values)
    doc = hist.to_dict()
    _dump(doc, args.out)
    fig = _plot_path(args, ".png")
    if fig:
        from .plotting import plot_histogram
        plot_histogram(hist, fig, labels=values, title=Path(args.labels).name)
    _write_sidecar(args, {"figure": fig})
    print(json.dumps(doc, sort_keys=True))


def cmd_select_k(args):
    labels = None
    if args.checkpoint:
        if not args.graph:
            raise UsageError("--checkpoint needs --graph")
        g = read_edge_list(args.graph)
        points = embed(load_checkpoint(args.checkpoint).model(), g).numpy()
        if args.labels:
            labels = read_labels(args.labels, g).values
    else:
        points = np.loadtxt(args.points, ndmin=2)
        if args.labels:
            labels = _label_column(args.labels)
            if len(labels) != len(points):
                raise TBCLabError("labels and points differ in length")
    cfg = ClusterConfig(args.rate, args.pairs, args.k_max, seed=args.seed)
    k_hat, trace = select_k(points, labels, cfg)
    doc = {"k_hat": k_hat, "instability": {str(k): v for k, v in trace.items()}}
    _dump(doc, args.out)
    fig = _plot_path(args, ".png")
    if fig:
        from .plotting import plot_instability
        plot_instability(trace, k_hat, fig)
    _write_sidecar(args, {"figure": fig})
    print(json.dumps(doc, sort_keys=True))


def _train_config(args) -> TrainConfig:
    base = read_config(args.config).to_dict() if args.config else TrainConfig().to_dict()
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        base[key] = value
    if args.seed is not None:
        base["seed"] = args.seed
    return TrainConfig.from_dict(base)


def cmd_train(args):
    cfg = _train_config(args)
    if args.labels and len(args.labels) != len(args.graphs):
        raise UsageError("give one --labels file per --graphs file")
    sem = cfg.semantics()
    dataset = []
    for i, path in enumerate(args.graphs):
        g = read_edge_list(path)
        labels = read_labels(args.labels[i], g) if args.labels else exact_tbc(g, sem)
        dataset.append((g, labels))
    ckpt = train(cfg, dataset)
    save_checkpoint(ckpt, args.out)
    fig = _plot_path(args, ".loss.png")
    if fig:
        from .plotting import plot_loss_curve
        plot_loss_curve(ckpt.loss_trace, fig)
    _write_sidecar(args, {"config": cfg.to_dict(), "figure": fig})
    last = ckpt.loss_trace[-1]
    print(f"trained {cfg.epochs} epochs on {len(dataset)} graphs, k_hat={ckpt.k_hat}, "
          f"final loss {last['total']:.6g}")


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    g = read_edge_list(args.graph)
    preds = predict(ckpt.model(), g, ckpt.config.target_scale)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in np.argsort(g.node_ids, kind="stable"):
            fh.write(f"{g.node_ids[i]} {preds[i]:.12g}\n")
    _write_sidecar(args, {"graph_digest": g.digest()})
    print(f"wrote {g.n_nodes} predictions to {args.out}")


def cmd_eval(args):
    if args.preds:
        if args.checkpoint or args.graph:
            raise UsageError("give either --preds or --checkpoint with --graph")
        p, y = read_label_values(args.preds), read_label_values(args.labels)
        if set(p) != set(y):
            raise TBCLabError("prediction and label files cover different nodes")
        ids = sorted(y)
        rep = report([p[i] for i in ids], [y[i] for i in ids], ks=tuple(args.ks))
    else:
        if not (args.checkpoint and args.graph):
            raise UsageError("eval needs --preds, or --checkpoint and --graph")
        g = read_edge_list(args.graph)
        labels = read_labels(args.labels, g)
        rep = evaluate(load_checkpoint(args.checkpoint), g, labels, inductive=not args.transductive,
                       ks=args.ks)
    doc = rep.to_dict()
    _dump(doc, args.out)
    _write_sidecar(args)
    print(json.dumps(doc, sort_keys=True))


COMMANDS = {
    "exact": cmd_exact,
    "stats": cmd_stats,
    "select-k": cmd_select_k,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TBCLabError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
