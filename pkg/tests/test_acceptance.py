"""The nine acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed again in the terminal summary.
Training criteria use the reduced widths in ``configs/desk.cfg``.
"""

import random
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import oracles
from structdrts.cli import main
from structdrts.core import delinearize, linearize, to_clause_format
from structdrts.data import SyntheticSpec, gen_synthetic, random_tree, relation_lexicon
from structdrts.graphs import Graph
from structdrts.metrics import bleu, clause_match_bruteforce, clause_match_f1, evaluate_trees
from structdrts.model import (
    MODE_NAMES,
    grad_check_suite,
    load_config,
    resolve_lengths,
    StructuredParser,
    build_vocabularies,
    train,
)
from structdrts.neuro import GATLayer, GATStack

DESK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"
CORPUS_SEED = 7

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk():
    return load_config(DESK_CONFIG)


@pytest.fixture(scope="module")
def corpus():
    return gen_synthetic(CORPUS_SEED, SyntheticSpec(docs=32, max_depth=4))


@pytest.fixture(scope="module")
def overfit_runs(desk, corpus):
    config, schedule = desk
    runs = {}
    for mode in ("gat-enc-dec", "baseline"):
        start = time.perf_counter()
        _, log = train(corpus, config, schedule, mode)
        runs[mode] = (log, time.perf_counter() - start)
    return runs


def test_1_round_trip(record_acceptance):
    rng = random.Random(2024)
    spec = SyntheticSpec(max_depth=6)
    lex = relation_lexicon(spec.relations)
    trees = [random_tree(rng, spec, lex) for _ in range(1000)]
    start = time.perf_counter()
    ok = sum(delinearize(*linearize(t)) == t for t in trees)
    elapsed = time.perf_counter() - start
    passed = ok == 1000 and elapsed < 10 and max(t.depth() for t in trees) <= 6
    record_acceptance("1 round-trip", passed, f"{ok}/1000 identical in {elapsed:.2f}s")
    assert passed


def _random_graph(rng, n):
    adj = np.eye(n, dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.35:
                adj[i, j] = adj[j, i] = True
    return Graph(adj, ("x",) * n, None)


def test_2_gat_oracle(record_acceptance):
    rng = np.random.default_rng(0)
    torch.manual_seed(0)
    worst = 0.0
    for k in range(100):
        n = int(rng.integers(1, 11))
        heads = (1, 4)[k % 2]
        n_layers = 1 + (k // 2) % 2
        graph = _random_graph(rng, n)
        d_in = int(rng.integers(2, 7))
        stack = GATStack(d_in, heads * int(rng.integers(1, 4)), n_layers, heads).double()
        h = torch.randn(n, d_in, dtype=torch.float64)
        want = h.numpy()
        for layer in stack.layers:
            want, _ = oracles.gat_layer_dense(
                want, graph.adjacency, layer.weight.detach().numpy(), layer.a_recv.detach().numpy(), layer.a_send.detach().numpy()
            )
        worst = max(worst, float(np.abs(stack(h, graph).detach().numpy() - want).max()))
        single = stack.layers[0]
        assert isinstance(single, GATLayer)
        first, _ = oracles.gat_layer_dense(
            h.numpy(), graph.adjacency, single.weight.detach().numpy(), single.a_recv.detach().numpy(), single.a_send.detach().numpy()
        )
        worst = max(worst, float(np.abs(single(h, graph).detach().numpy() - first).max()))
    passed = worst <= 1e-10
    record_acceptance("2 GAT oracle", passed, f"max abs diff {worst:.2e} over 100 graphs")
    assert passed


def test_3_gradient_checks(record_acceptance):
    start = time.perf_counter()
    errors = grad_check_suite(eps=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    passed = worst <= 1e-4 and elapsed < 300 and len(errors) == 6
    detail = " ".join(f"{k}={v:.1e}" for k, v in errors.items()) + f" in {elapsed:.0f}s"
    record_acceptance("3 gradient checks", passed, detail)
    assert passed


def test_4_attention_normalization(record_acceptance, desk, corpus):
    config, _ = desk
    config = resolve_lengths(config, corpus)
    torch.manual_seed(0)
    model = StructuredParser(config, build_vocabularies(corpus, config), "gat-enc-dec")
    worst, count = 0.0, 0
    for doc in corpus[:8]:
        for run in ("train", "parse"):
            trace = []
            if run == "train":
                model.loss(doc, trace)
            else:
                model.parse(doc, trace=trace)
            for name, entry in trace:
                if name.endswith("_gat"):
                    recv, _, alpha = entry
                    sums = torch.zeros(int(recv.max()) + 1, alpha.shape[1], dtype=alpha.dtype).index_add(0, recv, alpha)
                else:
                    sums = entry.sum(-1)
                worst = max(worst, float((sums.detach() - 1).abs().max()))
                count += sums.numel()
    passed = worst <= 1e-6 and count > 0
    record_acceptance("4 attention normalization", passed, f"{count} distributions, max |sum-1| {worst:.1e}")
    assert passed


def test_5_overfit(record_acceptance, overfit_runs):
    lines, passed = [], True
    for mode, (log, seconds) in overfit_runs.items():
        m = log.last_metrics
        ok = len(log.records) <= 300 and seconds <= 1800 and m["skeleton_f1"] >= 0.95 and m["tuple_f1"] >= 0.95
        passed &= ok
        lines.append(f"{MODE_NAMES[mode]}: epoch {len(log.records)} skeleton {m['skeleton_f1']:.3f} tuple {m['tuple_f1']:.3f} ({seconds:.0f}s)")
    record_acceptance("5 overfit", passed, "; ".join(lines))
    assert passed


def test_6_clause_matcher(record_acceptance):
    rng = random.Random(6)
    instances = [oracles.random_clause_instance(rng, max_vars=6) for _ in range(200)]
    start = time.perf_counter()
    equal = exceeded = 0
    for pred, gold in instances:
        hill = clause_match_f1(pred, gold, restarts=10).matched
        best = clause_match_bruteforce(pred, gold).matched
        equal += hill == best
        exceeded += hill > best
    elapsed = time.perf_counter() - start
    passed = equal >= 190 and exceeded == 0 and elapsed < 60
    record_acceptance("6 clause matcher", passed, f"{equal}/200 optimal, {exceeded} above oracle, {elapsed:.1f}s")
    assert passed


def test_7_metric_sanity(record_acceptance, corpus):
    trees = [d.tree for d in corpus]
    report = evaluate_trees(trees, trees)
    scores = {"bleu": report["bleu"], **{k: report[k]["f1"] for k in ("skeleton", "tuple", "clause")}}
    clause = clause_match_f1(to_clause_format(trees[0]), to_clause_format(trees[0])).f1
    want = (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
    got = bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "f"]])
    passed = all(v == 1.0 for v in scores.values()) and clause == 1.0 and abs(got - want) <= 1e-9
    record_acceptance("7 metric sanity", passed, f"identity {scores}; BLEU case |diff| {abs(got - want):.1e}")
    assert passed


def test_8_determinism(record_acceptance, desk, corpus, overfit_runs):
    config, schedule = desk
    first = overfit_runs["gat-enc-dec"][0].losses
    _, log = train(corpus, config, schedule, "gat-enc-dec")
    passed = log.losses == first
    record_acceptance("8 determinism", passed, f"{len(first)} epoch losses {'identical' if passed else 'differ'}")
    assert passed


def test_9_ablation_harness(record_acceptance, tmp_path):
    corpus_dir = tmp_path / "corpus"
    assert main(["gen-synthetic", "--seed", str(CORPUS_SEED), "--docs", "32", "--max-depth", "4", "--out", str(corpus_dir)]) == 0
    out = tmp_path / "ablation"
    code = main(["train", "--config", str(DESK_CONFIG), "--corpus", str(corpus_dir), "--mode", "all", "--epochs", "2", "--out", str(out)])
    report = (out / "report.txt").read_text() if (out / "report.txt").exists() else ""
    rows = [name for name in MODE_NAMES.values() if name in report]
    models = [m for m in MODE_NAMES if (out / m / "model.npz").exists()]
    passed = code == 0 and len(rows) == 4 and len(models) == 4
    record_acceptance("9 ablation harness", passed, f"report rows for {', '.join(rows)}")
    assert passed
