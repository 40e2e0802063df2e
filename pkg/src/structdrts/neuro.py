"""Differentiable building blocks: embeddings, MLP, LSTMs, attention, GAT, loss.

Tensors and reverse-mode gradients come from torch.  Layers work on single
(unbatched) sequences: ``(length, dim)`` in, ``(length, dim)`` out.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, OutOfVocabulary, ShapeMismatch

UNK = 0
CHECKPOINT_FORMAT = 1


def init_parameters(module: nn.Module) -> None:
    """Fan-based uniform (Xavier) for matrices, zeros for vectors, N(0, 1) for lookup tables.

    Xavier bounds on a (vocab, dim) table give entries of order 0.1, which
    shrink to near-constant encoder states after a few layers.
    """
    for _, p in module.named_parameters():
        if p.dim() >= 2:
            nn.init.xavier_uniform_(p)
        else:
            nn.init.zeros_(p)
    for sub in module.modules():
        if isinstance(sub, nn.Embedding):
            nn.init.normal_(sub.weight)


class WordEmbedding(nn.Module):
    """Concatenation of a random word table, a frozen pretrained table and a lemma table."""

    def __init__(self, n_words, n_lemmas, d_rand, d_pret, d_lem, pretrained=None, use_unk=True):
        super().__init__()
        self.rand = nn.Embedding(n_words, d_rand)
        self.lemma = nn.Embedding(n_lemmas, d_lem)
        table = torch.zeros(n_words, d_pret)
        if pretrained is not None:
            pretrained = torch.as_tensor(np.asarray(pretrained), dtype=table.dtype)
            if tuple(pretrained.shape) != (n_words, d_pret):
                raise ShapeMismatch(f"pretrained table {tuple(pretrained.shape)} != {(n_words, d_pret)}")
            table = pretrained.clone()
            table[UNK] = 0.0
        # a buffer, not a parameter: never updated
        self.register_buffer("pretrained", table)
        self.use_unk = use_unk

    @property
    def dim(self) -> int:
        return self.rand.embedding_dim + self.pretrained.shape[1] + self.lemma.embedding_dim

    def _check(self, ids, size, what):
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= size):
            raise OutOfVocabulary(f"{what} id outside 0..{size - 1}")

    def forward(self, word_ids: torch.Tensor, lemma_ids: torch.Tensor) -> torch.Tensor:
        if not self.use_unk:
            self._check(word_ids, self.rand.num_embeddings, "word")
            self._check(lemma_ids, self.lemma.num_embeddings, "lemma")
        else:
            word_ids = torch.where((word_ids < 0) | (word_ids >= self.rand.num_embeddings), UNK, word_ids)
            lemma_ids = torch.where((lemma_ids < 0) | (lemma_ids >= self.lemma.num_embeddings), UNK, lemma_ids)
        return torch.cat([self.rand(word_ids), self.pretrained[word_ids], self.lemma(lemma_ids)], dim=-1)


ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "linear": lambda x: x,
}


class MLP(nn.Module):
    """Position-wise affine map followed by a nonlinearity."""

    def __init__(self, d_in, d_out, activation="relu"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.linear = nn.Linear(d_in, d_out)
        self.activation = activation

    def forward(self, x):
        if x.shape[-1] != self.linear.in_features:
            raise ShapeMismatch(f"MLP expects width {self.linear.in_features}, got {x.shape[-1]}")
        return ACTIVATIONS[self.activation](self.linear(x))


class BiLSTM(nn.Module):
    """Stacked bidirectional LSTM; output is forward state ⊕ backward state."""

    def __init__(self, d_in, hidden, layers=1):
        super().__init__()
        self.lstm = nn.LSTM(d_in, hidden, num_layers=layers, bidirectional=True)

    @property
    def out_dim(self):
        return 2 * self.lstm.hidden_size

    def forward(self, x):
        if x.dim() != 2 or x.shape[0] == 0:
            raise ShapeMismatch("BiLSTM needs a non-empty (length, dim) sequence")
        if x.shape[1] != self.lstm.input_size:
            raise ShapeMismatch(f"BiLSTM expects width {self.lstm.input_size}, got {x.shape[1]}")
        out, _ = self.lstm(x)
        return out


class DecoderLSTM(nn.Module):
    """Left-to-right LSTM usable for whole sequences or one step at a time.

    States are ``(h, c)`` pairs of shape ``(layers, hidden)``.
    """

    def __init__(self, d_in, hidden, layers=1):
        super().__init__()
        self.lstm = nn.LSTM(d_in, hidden, num_layers=layers)

    @property
    def hidden(self):
        return self.lstm.hidden_size

    def zero_state(self, dtype=None):
        dtype = dtype or self.lstm.weight_ih_l0.dtype
        z = torch.zeros(self.lstm.num_layers, self.hidden, dtype=dtype)
        return z, z.clone()

    def forward(self, xs, state=None):
        if state is None:
            state = self.zero_state(xs.dtype)
        out, state = self.lstm(xs, state)
        return out, state

    def step(self, state, x):
        """One recurrent step: returns ``(new_state, output_vector)``."""
        out, state = self.lstm(x.unsqueeze(0), state)
        return state, out[0]


class AdditiveAttention(nn.Module):
    """score(q, k) = v · tanh(Wq q + Wk k); batched over queries."""

    def __init__(self, d_query, d_key, d_attn):
        super().__init__()
        self.query = nn.Linear(d_query, d_attn, bias=False)
        self.key = nn.Linear(d_key, d_attn)
        self.v = nn.Linear(d_attn, 1, bias=False)

    def scores(self, queries, keys):
        return self.v(torch.tanh(self.query(queries).unsqueeze(1) + self.key(keys).unsqueeze(0))).squeeze(-1)

    def forward(self, queries, keys):
        """``queries (T, dq)``, ``keys (n, dk)`` -> contexts ``(T, dk)``, weights ``(T, n)``."""
        if keys.shape[0] == 0:
            raise ShapeMismatch("attention over an empty memory")
        weights = torch.softmax(self.scores(queries, keys), dim=-1)
        return weights @ keys, weights


def attention_context(query, keys, scorer: AdditiveAttention):
    """Single-query form of :class:`AdditiveAttention`."""
    ctx, w = scorer(query.unsqueeze(0), keys)
    return ctx[0], w[0]


# --------------------------------------------------------------------------
# graph attention


def edge_softmax(scores: torch.Tensor, receivers: torch.Tensor, n: int) -> torch.Tensor:
    """Softmax of per-edge ``scores (E, K)`` over the edges sharing a receiver."""
    idx = receivers.unsqueeze(-1).expand_as(scores)
    peak = torch.full((n, scores.shape[1]), -math.inf, dtype=scores.dtype)
    peak = peak.scatter_reduce(0, idx, scores.detach(), reduce="amax", include_self=True)
    ex = torch.exp(scores - peak[receivers])
    total = torch.zeros(n, scores.shape[1], dtype=scores.dtype).index_add(0, receivers, ex)
    return ex / total[receivers]


def graph_edges(graph) -> tuple[torch.Tensor, torch.Tensor]:
    dst, src = graph.edge_index()
    return torch.as_tensor(dst, dtype=torch.long), torch.as_tensor(src, dtype=torch.long)


class GATLayer(nn.Module):
    """Multi-head graph attention layer.

    For head k: ``z = W_k h``; ``e_ij = LeakyReLU(a_k · [z_i ∥ z_j])``;
    ``α_ij = softmax_j e_ij`` over the neighbourhood of i (self included);
    ``h'_i = σ(Σ_j α_ij z_j)``; heads are concatenated.  Computed on the edge
    list, so cost grows with edges rather than n².
    """

    def __init__(self, d_in, heads, head_dim, negative_slope=0.2):
        super().__init__()
        self.heads = heads
        self.head_dim = head_dim
        self.negative_slope = negative_slope
        self.weight = nn.Parameter(torch.empty(heads, head_dim, d_in))
        # f = [a_recv ; a_send]: one single-layer scorer per head
        self.a_recv = nn.Parameter(torch.empty(heads, head_dim))
        self.a_send = nn.Parameter(torch.empty(heads, head_dim))
        self.reset_parameters()

    def reset_parameters(self):
        for w in self.weight:
            nn.init.xavier_uniform_(w)
        bound = math.sqrt(6.0 / (2 * self.head_dim + 1))
        nn.init.uniform_(self.a_recv, -bound, bound)
        nn.init.uniform_(self.a_send, -bound, bound)

    @property
    def d_in(self):
        return self.weight.shape[2]

    @property
    def out_dim(self):
        return self.heads * self.head_dim

    def forward(self, h, graph, return_attention=False):
        n = h.shape[0]
        if h.dim() != 2 or h.shape[1] != self.d_in:
            raise ShapeMismatch(f"GAT layer expects (n, {self.d_in}), got {tuple(h.shape)}")
        if graph.n != n:
            raise ShapeMismatch(f"graph has {graph.n} nodes, got {n} vectors")
        recv, send = graph_edges(graph)
        # self-loops guarantee a non-empty neighbourhood
        assert torch.bincount(recv, minlength=n).min() > 0, "node without neighbours"
        z = torch.einsum("nd,khd->nkh", h, self.weight)
        s_recv = (z * self.a_recv).sum(-1)
        s_send = (z * self.a_send).sum(-1)
        e = F.leaky_relu(s_recv[recv] + s_send[send], self.negative_slope)
        alpha = edge_softmax(e, recv, n)
        agg = torch.zeros(n, self.heads, self.head_dim, dtype=h.dtype).index_add(
            0, recv, alpha.unsqueeze(-1) * z[send]
        )
        out = torch.sigmoid(agg).reshape(n, self.out_dim)
        if return_attention:
            return out, (recv, send, alpha)
        return out


class GATStack(nn.Module):
    """``layers`` GAT layers with independent parameters, all concatenating heads."""

    def __init__(self, d_in, out_dim, layers=2, heads=4, negative_slope=0.2):
        super().__init__()
        if layers < 1:
            raise ConfigError("a GAT stack needs at least one layer")
        if out_dim % heads:
            raise ConfigError(f"GAT width {out_dim} is not divisible by {heads} heads")
        head_dim = out_dim // heads
        dims = [d_in] + [out_dim] * layers
        self.layers = nn.ModuleList(
            GATLayer(dims[i], heads, head_dim, negative_slope) for i in range(layers)
        )

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def forward(self, h, graph, return_attention=False):
        attention = []
        for layer in self.layers:
            if return_attention:
                h, att = layer(h, graph, return_attention=True)
                attention.append(att)
            else:
                h = layer(h, graph)
        return (h, attention) if return_attention else h


# --------------------------------------------------------------------------
# loss


def nll_sum(logits: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Summed negative log-probability of the gold ids under softmax(logits)."""
    if logits.shape[0] != gold.shape[0]:
        raise ShapeMismatch(f"{logits.shape[0]} predictions for {gold.shape[0]} gold symbols")
    if gold.numel() and (int(gold.min()) < 0 or int(gold.max()) >= logits.shape[1]):
        raise ShapeMismatch("gold id outside the output vocabulary")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(1, gold.unsqueeze(1)).sum()


def cross_entropy_loss(logits, gold):
    """Mean cross-entropy over a sequence of predictions."""
    return nll_sum(logits, gold) / max(gold.shape[0], 1)


# --------------------------------------------------------------------------
# gradient checking


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor],
    eps: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Largest relative gap between autograd and central finite differences.

    Per coordinate the error is ``|a - n| / max(|a|, |n|, floor)``; above
    ``max_coords`` coordinates a seeded random subsample is checked.
    Parameters must be float64.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        if p.dtype != torch.float64:
            raise ConfigError("grad_check needs float64 parameters")
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    coords = [(pi, ci) for pi, p in enumerate(params) for ci in range(p.numel())]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    with torch.no_grad():
        for pi, ci in coords:
            flat = params[pi].view(-1)
            orig = flat[ci].item()
            flat[ci] = orig + eps
            up = loss_fn().item()
            flat[ci] = orig - eps
            down = loss_fn().item()
            flat[ci] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[pi].reshape(-1)[ci].item()
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoints: npz container, parameter arrays under "param/<name>"


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in tensors.items()}
    header = {"format_version": CHECKPOINT_FORMAT, **meta}
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        tensors = {k[len("param/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("param/")}
    return tensors, meta
