"""Plain numpy reference implementations used as test oracles."""

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def lstm_step(x, h, c, w_ih, w_hh, b_ih, b_hh):
    """Gate order i, f, g, o."""
    gates = w_ih @ x + b_ih + w_hh @ h + b_hh
    i, f, g, o = np.split(gates, 4)
    c_new = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
    h_new = sigmoid(o) * np.tanh(c_new)
    return h_new, c_new


def lstm_sequence(xs, w_ih, w_hh, b_ih, b_hh, h0=None, c0=None):
    hidden = w_hh.shape[1]
    h = np.zeros(hidden) if h0 is None else h0
    c = np.zeros(hidden) if c0 is None else c0
    out = []
    for x in xs:
        h, c = lstm_step(x, h, c, w_ih, w_hh, b_ih, b_hh)
        out.append(h)
    return np.array(out), (h, c)


def gat_layer_dense(h, adjacency, weight, a_recv, a_send, slope=0.2):
    """Materialize the full n x n score matrix, mask non-edges, softmax, aggregate."""
    heads = []
    alphas = []
    for k in range(weight.shape[0]):
        z = h @ weight[k].T
        scores = (z @ a_recv[k])[:, None] + (z @ a_send[k])[None, :]
        scores = np.where(scores > 0, scores, slope * scores)
        scores = np.where(adjacency, scores, -np.inf)
        alpha = softmax(scores, axis=1)
        alphas.append(alpha)
        heads.append(sigmoid(alpha @ z))
    return np.concatenate(heads, axis=1), alphas


def additive_attention(queries, keys, wq, wk, bk, v):
    scores = np.tanh((queries @ wq.T)[:, None, :] + (keys @ wk.T + bk)[None, :, :]) @ v[0]
    weights = softmax(scores, axis=1)
    return weights @ keys, weights


def spans_from_linearization(skeleton):
    """Labeled spans read off the open/close sequence.

    Every box opens exactly one DRU leaf, in order; a node covers the leaves
    opened between its open and matching close symbols.
    """
    from structdrts.core import OpenNode

    spans = []
    stack = []
    leaves = 0
    for sym in skeleton:
        if isinstance(sym, OpenNode):
            stack.append((sym.label, leaves))
            if sym.label in ("DRS", "SDRS"):
                leaves += 1
        else:
            label, start = stack.pop()
            spans.append((label, start, leaves))
    return spans


def random_clause_instance(rng, max_vars=6, relations=("A", "B", "C", "D")):
    """A gold clause set plus a noisy, renamed copy as the prediction.

    Gold variables are x/e/s<index>, prediction variables use indices from 100
    up, so the namespaces are disjoint.
    """
    n_gold = rng.randint(1, max_vars)
    gold_vars = [f"{rng.choice('xes')}{i}" for i in range(1, n_gold + 1)]
    gold = set()
    for _ in range(rng.randint(1, 10)):
        rel = rng.choice(relations)
        args = rng.sample(gold_vars, min(len(gold_vars), rng.randint(1, 2)))
        gold.add((rel, *args))
    mapped = rng.sample(gold_vars, rng.randint(0, n_gold))
    rename = {v: f"{v[0]}{100 + i}" for i, v in enumerate(mapped)}
    extra = [f"{rng.choice('xes')}{200 + i}" for i in range(rng.randint(0, max_vars - len(mapped)))]
    pred_vars = list(rename.values()) + extra
    pred = set()
    for c in gold:
        if all(t in rename for t in c[1:]) and rng.random() < 0.8:
            pred.add((c[0], *(rename[t] for t in c[1:])))
    if pred_vars:
        for _ in range(rng.randint(0, 4)):
            rel = rng.choice(relations)
            args = rng.sample(pred_vars, min(len(pred_vars), rng.randint(1, 2)))
            pred.add((rel, *args))
    return sorted(pred), sorted(gold)
