"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary of any pytest run.  The module can
be executed directly as a script as well.
"""

import io
import json
import math
import time

import numpy as np
import pytest
import torch

from tbclab import contrastive as con
from tbclab.encoders import PathCountEncoder, TimeEncoder, encode_path_count, encode_time
from tbclab.metrics import report, spearman
from tbclab.model import (CLGNN, build_plan, combine_embeddings, forward, gradient_check,
                          mean_weights)
from tbclab.nn_utils import DTYPE
from tbclab.tbc_oracle import CRITERIA, PathSemantics, exact_tbc, write_labels
from tbclab.stability_clustering import ClusterConfig, select_k
from tbclab.temporal_graph import (TemporalGraph, build_instance_index, parse_edge_list,
                                   random_temporal_graph, serialize_edge_list, tbc_histogram)
from tbclab.training import (TrainConfig, load_checkpoint, predict, save_checkpoint, train)

from blobs import THREE, TWO, blobs
from conftest import brute_P, tiny_config
from gradcases import CASES

RESULTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str):
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# 1 -----------------------------------------------------------------------

def test_c01_oracle_cross_check():
    t0 = time.perf_counter()
    worst, runs = 0.0, 0
    for seed in range(200):
        rs = np.random.default_rng(seed)
        g = random_temporal_graph(int(rs.integers(3, 9)), int(rs.integers(1, 21)),
                                  int(rs.integers(1, 11)), seed=seed)
        for crit in CRITERIA:
            for delta in (math.inf, 2.0):
                sem = PathSemantics(crit, delta)
                a = exact_tbc(g, sem, engine="enumerate").values
                b = exact_tbc(g, sem, engine="dp").values
                worst = max(worst, float(np.max(np.abs(a - b))))
                runs += 1
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 1e-9 and elapsed < 60,
            f"{runs} engine pairs, max |diff| = {worst:.1e} (< 1e-9), {elapsed:.1f}s (< 60s)")


# 2 -----------------------------------------------------------------------

def test_c02_hand_oracle():
    fwd = exact_tbc(TemporalGraph.from_edges([(0, 1, 1), (1, 2, 2)]), PathSemantics("shortest")).values
    rev = exact_tbc(TemporalGraph.from_edges([(0, 1, 2), (1, 2, 1)]), PathSemantics("shortest")).values
    ok = fwd[1] == 1 / 6 and fwd[0] == fwd[2] == 0 and not rev.any()
    verdict(2, ok, f"chain TBC = {fwd.tolist()}, reversed = {rev.tolist()}")


# 3 -----------------------------------------------------------------------

def test_c03_path_count_law():
    checked, mismatches, seed = 0, 0, 0
    while checked < 1000:
        g = random_temporal_graph(15, 80, 12, seed=10_000 + seed)
        idx = build_instance_index(g)
        for e in range(g.n_edges):
            mismatches += int(idx.path_count[e] != brute_P(g, e))
        checked += g.n_edges
        seed += 1
    emitted, zero_p_seen, zero_p_present = 0, 0, 0
    for s in range(5):
        g = random_temporal_graph(20, 120, 10, seed=s)
        idx = build_instance_index(g)
        zero_p_present += int(np.sum(idx.path_count == 0))
        model = CLGNN(tiny_config(layers=3, seed=s))
        forward(model, g, idx, instrument=True)
        for level in model.last_trace:
            for u, v, t in level["events"]:
                emitted += 1
                zero_p_seen += int(idx.P(u, v, t) == 0)
    ok = mismatches == 0 and zero_p_seen == 0 and emitted > 0 and zero_p_present > 0
    verdict(3, ok, f"{checked} edges, {mismatches} P mismatches; {emitted} messages, "
                   f"{zero_p_seen} with P = 0 ({zero_p_present} zero-P edges available)")


# 4 -----------------------------------------------------------------------

def test_c04_encoding_invariants():
    rs = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10_000):
        d_T = int(rs.integers(1, 65))
        enc = TimeEncoder(d_T)
        with torch.no_grad():
            enc.omega.copy_(torch.from_numpy(rs.normal(0, 5, d_T)))
        t = float(rs.uniform(-1e4, 1e4))
        worst = max(worst, abs(encode_time(enc, t).detach().norm().item() - 1))
    penc = PathCountEncoder(128)
    first, second = penc.mlp.layers
    bias_path = second(torch.relu(first.bias))
    same = torch.equal(encode_path_count(penc, 0), bias_path)
    verdict(4, worst < 1e-9 and same,
            f"max | ||phi_time|| - 1 | = {worst:.1e} over 1e4 draws; phi_path(0) == bias path: {same}")


# 5 -----------------------------------------------------------------------

def test_c05_gradient_checks():
    worst = {}
    for name, build in CASES.items():
        worst[name] = max(gradient_check(*build(seed), eps=1e-5, seed=seed) for seed in range(20))
    top = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(5, top < 1e-4, f"max rel. error {top:.1e} (< 1e-4) over 20 instances: {detail}")


# 6 -----------------------------------------------------------------------

def test_c06_aggregation_normalization():
    att_err, rows = 0.0, 0
    for s in range(5):
        g = random_temporal_graph(25, 100, 10, seed=s)
        model = CLGNN(tiny_config(layers=3, seed=s))
        forward(model, g, build_instance_index(g), instrument=True)
        for level in model.last_trace:
            has = level["mask"].any(1)
            sums = level["attention"].numpy().sum(-1)[has]
            att_err = max(att_err, float(np.max(np.abs(sums - 1), initial=0)))
            rows += sums.size
    rs = np.random.default_rng(1)
    w_err = 0.0
    for _ in range(1000):
        k = int(rs.integers(1, 20))
        src = rs.integers(0, 6, k)
        w = mean_weights(src, rs.integers(1, 50, k))
        n_src = len(np.unique(src))
        for u in np.unique(src):
            w_err = max(w_err, abs(w[src == u].sum() * n_src - 1))
    model = CLGNN(tiny_config())
    cfg = model.cfg
    h_bar = torch.randn(6, cfg.msg_dim, dtype=DTYPE)
    heads = torch.randn(6, cfg.d_h, dtype=DTYPE)
    h_prev = torch.randn(6, cfg.d, dtype=DTYPE)
    out = {lam: combine_embeddings(model, 1, h_bar, heads, h_prev, lam) for lam in (0.0, 0.4, 1.0)}
    affine = all(torch.equal(out[lam], lam * out[1.0] + (1 - lam) * out[0.0]) for lam in out)
    ok = att_err < 1e-6 and w_err < 1e-9 and affine
    verdict(6, ok, f"attention row error {att_err:.1e} over {rows} rows; per-neighbour weight "
                   f"error {w_err:.1e}; exact affinity at 0/0.4/1: {affine}")


# 7 -----------------------------------------------------------------------

def test_c07_weight_and_loss_properties():
    gaps = np.linspace(1e-3, 3, 100)
    mono = bool(np.all(np.diff(con.positive_weight(gaps, 0.7, 0.5)) < 0)
                and np.all(np.diff(con.negative_weight(gaps, 0.7, 0.5)) > 0))
    rs = np.random.default_rng(0)
    min_loss, n_losses, configs = math.inf, 0, 0
    while configs < 1000:
        n = int(rs.integers(3, 15))
        y = rs.uniform(0, 1, n) * (rs.random(n) > 0.3)
        if not y.any():
            continue
        cfg = con.ContrastConfig(rs.uniform(0.1, 0.9), rs.uniform(0.1, 1.5), rs.uniform(0.05, 1))
        ps = con.build_pair_sets(rs.integers(0, 3, n), y, cfg)
        if not ps.eligible:
            continue
        H = torch.from_numpy(rs.normal(size=(n, 4)) * rs.uniform(0.01, 5))
        _, losses = con.per_anchor_losses(H, ps, y, cfg)
        min_loss = min(min_loss, losses.min().item())
        n_losses += len(losses)
        configs += 1
    # single anchor: 0 with one positive (1) and one negative (2)
    y = np.array([1.0, 1.2, 3.0])
    cfg = con.ContrastConfig(gamma_pos=0.5, gamma_neg=1.0)
    ps = con.build_pair_sets([0, 0, 1], y, cfg)
    ps.negatives[0] = [2]
    H = torch.tensor([[1.0, 0.5], [0.3, -0.2], [-0.7, 0.9]], dtype=DTYPE)
    m = ps.median
    A = math.exp(m * 0.5 / abs(y[1] - y[0]) * float(H[0] @ H[1]) / cfg.tau)
    B = math.exp(abs(y[2] - y[0]) / (m * 1.0) * float(H[0] @ H[2]) / cfg.tau)
    anchors, single = con.per_anchor_losses(H, ps, y, cfg)
    closed = abs(single[anchors.index(0)].item() - math.log(1 + B / A))
    ok = mono and min_loss >= 0 and closed < 1e-9
    verdict(7, ok, f"beta monotone on 100-point grid: {mono}; min per-anchor loss {min_loss:.3g} "
                   f"over {configs} configs ({n_losses} anchors); closed-form error {closed:.1e}")


# 8 -----------------------------------------------------------------------

def _doubling_exponent():
    sizes = [400, 800, 1600, 3200]
    times = []
    for n in sizes:
        pts = blobs(THREE, n // 3, seed=1)
        runs = []
        for _ in range(3):
            t0 = time.perf_counter()
            select_k(pts, None, ClusterConfig(pairs=5, k_max=5, seed=0))
            runs.append(time.perf_counter() - t0)
        times.append(min(runs))
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def test_c08_clustering_stability():
    hits = {2: 0, 3: 0}
    lo, hi = 1.0, 0.0
    for seed in range(40):
        for centers, k in ((TWO, 2), (THREE, 3)):
            k_hat, trace = select_k(blobs(centers, 40, seed=seed), None, ClusterConfig(seed=seed))
            hits[k] += int(k_hat == k)
            lo, hi = min(lo, *trace.values()), max(hi, *trace.values())
    exponent = _doubling_exponent()
    ok = hits[2] >= 38 and hits[3] >= 38 and 0 <= lo and hi <= 1 and exponent <= 2.3
    verdict(8, ok, f"k=2 correct {hits[2]}/40, k=3 correct {hits[3]}/40 (>= 38); instability in "
                   f"[{lo:.3f}, {hi:.3f}]; runtime exponent {exponent:.2f} (<= 2.3)")


# 9 -----------------------------------------------------------------------

def smoke_corpus():
    sem = PathSemantics("shortest-foremost", math.inf)
    out = []
    for i in range(10):
        g = random_temporal_graph(30, 70, 15, seed=1000 + i)
        out.append((g, exact_tbc(g, sem)))
    return out


@pytest.mark.slow
def test_c09_training_smoke():
    t0 = time.perf_counter()
    data = smoke_corpus()
    ratios, rhos = [], []
    for seed in range(5):
        ckpt = train(TrainConfig(alpha=0.2, lam=0.4, lr=0.01, epochs=15, seed=seed), data)
        trace = ckpt.loss_trace
        ratios.append(trace[-1]["total"] / trace[0]["total"])
        model = ckpt.model()
        rhos.append(float(np.mean([spearman(predict(model, g), lab.values) for g, lab in data])))
    elapsed = time.perf_counter() - t0
    ratio, rho = float(np.mean(ratios)), float(np.mean(rhos))
    ok = ratio < 0.8 and rho >= 0.5 and elapsed < 600
    per_seed = " ".join(f"({r:.2f},{s:.2f})" for r, s in zip(ratios, rhos))
    verdict(9, ok, f"mean loss ratio {ratio:.3f} (< 0.8), mean train Spearman {rho:.3f} (>= 0.5), "
                   f"{elapsed:.0f}s (< 600s); per seed (ratio, rho): {per_seed}")


# 10 ----------------------------------------------------------------------

def test_c10_imbalance_shape():
    rs = np.random.default_rng(0)
    labels = np.zeros(1000)
    labels[962:] = rs.pareto(2.0, 38) * 1e-3 + 1e-6
    rs.shuffle(labels)
    frac = tbc_histogram(labels).zero_fraction
    verdict(10, abs(frac - 0.962) <= 0.001, f"zero fraction {frac:.4f} (0.962 +/- 0.001)")


# 11 ----------------------------------------------------------------------

def _one_run(tmp):
    g = random_temporal_graph(14, 40, 8, seed=21)
    labels = exact_tbc(g, PathSemantics("shortest-latest-foremost", 3.0))
    write_labels(labels, g, tmp / "labels.tsv")
    data = [(random_temporal_graph(12, 30, 6, seed=s), None) for s in range(2)]
    data = [(h, exact_tbc(h, PathSemantics("shortest-foremost"))) for h, _ in data]
    cfg = TrainConfig(d=16, d_T=8, d_P=16, d_h=16, layers=2, epochs=3, seed=5)
    ckpt = train(cfg, data)
    save_checkpoint(ckpt, tmp / "ck.json")
    rep = report(predict(ckpt.model(), g), labels.values)
    (tmp / "metrics.json").write_text(json.dumps(rep.to_dict(), sort_keys=True))
    return [(tmp / name).read_bytes() for name in ("labels.tsv", "ck.json", "metrics.json")]


def test_c11_determinism(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a, b = _one_run(tmp_path / "a"), _one_run(tmp_path / "b")
    same = [x == y for x, y in zip(a, b)]
    verdict(11, all(same), f"bit-identical label file / checkpoint / metrics: {same}")


# 12 ----------------------------------------------------------------------

def test_c12_round_trips(tmp_path):
    data = [(random_temporal_graph(10, 25, 5, seed=s), None) for s in range(2)]
    data = [(h, exact_tbc(h, PathSemantics("shortest-foremost"))) for h, _ in data]
    ckpt = train(TrainConfig(d=16, d_T=8, d_P=16, d_h=16, layers=2, epochs=2), data)
    save_checkpoint(ckpt, tmp_path / "ck.json")
    back = load_checkpoint(tmp_path / "ck.json")
    sa, sb = ckpt.model().state_dict(), back.model().state_dict()
    params_ok = sa.keys() == sb.keys() and all(
        sa[k].numpy().tobytes() == sb[k].numpy().tobytes() and sa[k].shape == sb[k].shape for k in sa)
    edges_ok, graphs = True, 0
    rs = np.random.default_rng(3)
    for s in range(100):
        ids = rs.permutation(1000)[:30]
        lines = [f"{ids[rs.integers(30)]} {ids[rs.integers(30)]} {float(t)!r}"
                 for t in rs.uniform(0, 100, 40).round(int(rs.integers(0, 6)))]
        g = parse_edge_list(io.StringIO("\n".join(lines) + "\n"))
        g2 = parse_edge_list(serialize_edge_list(g))
        orig = lambda h: sorted((h.node_ids[u], h.node_ids[v], t) for u, v, t in h.edges)
        edges_ok &= orig(g) == orig(g2)
        graphs += 1
    verdict(12, params_ok and edges_ok,
            f"checkpoint arrays bit-exact: {params_ok}; edge multisets identical on {graphs} graphs: {edges_ok}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_c")]
    failed = 0
    for fn in tests:
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
