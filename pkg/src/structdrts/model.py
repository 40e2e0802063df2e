"""The structure-aware parser: encoder, skeleton decoder, skeleton GAT, DRU decoder.

Pipeline per document::

    words -> embeddings -> MLP -> BiLSTM -> [syntax GAT]           = memory
    memory -> skeleton LSTM (attention over memory)              = H^skt, Y^skt
    H^skt at open-node steps (+ label embeddings) -> [skeleton GAT] = H^gskt
    memory, H^gskt -> DRU LSTM (one group per (S)DRS)            = Y^dru

Square brackets mark the graph modules switched by ``mode``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .core import (
    BOX_LABELS,
    CLOSE,
    DRU_SEP,
    RELATION_LABELS,
    SKELETON_VARIABLE_SORTS,
    DrtsTree,
    OpenNode,
    RelationSym,
    VariableId,
    VariableSym,
    decode_symbol,
    delinearize,
    encode_symbol,
    linearize,
)
from .data import Document, corpus_digest, env_override
from .decoding import DruConstraint, SkeletonConstraint, repair_drus, repair_skeleton
from .errors import ConfigError, DependencyError, EmptyInput, LinearizationError, VocabularyMiss
from .graphs import END, START, build_skeleton_graph, build_syntax_graph
from .metrics import evaluate_trees
from .neuro import (
    MLP,
    UNK,
    AdditiveAttention,
    BiLSTM,
    DecoderLSTM,
    GATStack,
    WordEmbedding,
    init_parameters,
    load_checkpoint,
    nll_sum,
    save_checkpoint,
)

log = logging.getLogger(__name__)

MODES = ("baseline", "gat-enc", "gat-dec", "gat-enc-dec")
MODE_NAMES = {"baseline": "baseline", "gat-enc": "GAT-encoder", "gat-dec": "GAT-decoder", "gat-enc-dec": "GAT-enc+dec"}
DRU_VARIABLE_SORTS = ("x", "e", "s", "t", "p", "k")


@dataclass(frozen=True)
class ModelConfig:
    word_dim: int = 300
    pretrained_dim: int = 100
    lemma_dim: int = 100
    mlp_dim: int = 300
    encoder_hidden: int = 300
    encoder_layers: int = 2
    decoder_hidden: int = 600
    decoder_layers: int = 1
    encoder_gat_hidden: int = 300
    decoder_gat_hidden: int = 600
    gat_layers: int = 2
    gat_heads: int = 4
    syntax_label_dim: int = 100
    skeleton_label_dim: int = 100
    symbol_dim: int = 100
    attention_dim: int = 300
    max_var_index: int = 64
    max_relations_per_dru: int = 32
    # 0 = derive from the training corpus (4x / 12x the 99th-percentile gold length)
    max_skeleton_len: int = 0
    max_dru_len: int = 0
    negative_slope: float = 0.2
    dropout: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("max_skeleton_len", "max_dru_len", "dropout"):
                if value < 0:
                    raise ConfigError(f"{f.name} must be non-negative, got {value}")
            elif value <= 0:
                raise ConfigError(f"{f.name} must be positive, got {value}")
        if self.dropout >= 1:
            raise ConfigError("dropout must be below 1")
        if self.decoder_gat_hidden != self.decoder_hidden:
            raise ConfigError("decoder_gat_hidden must equal decoder_hidden: GAT outputs replace decoder states")
        for name in ("encoder_gat_hidden", "decoder_gat_hidden"):
            if getattr(self, name) % self.gat_heads:
                raise ConfigError(f"{name} must be divisible by gat_heads")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 300
    learning_rate: float = 1e-3
    grad_clip: float = 5.0
    seed: int = 1
    eval_every: int = 10
    target_f1: float = 0.0  # > 0: stop once skeleton and tuple F1 both reach it
    threads: int = 1
    keep_checkpoints: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.eval_every < 0 or self.threads < 1:
            raise ConfigError("epochs and eval_every must be >= 0, threads >= 1")
        if self.learning_rate < 0 or self.grad_clip < 0:
            raise ConfigError("learning_rate and grad_clip must be >= 0")


def _coerce(kind, text: str, key: str):
    try:
        if kind in (bool, "bool"):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind in (int, "int"):
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_config(text: str) -> tuple[ModelConfig, TrainSchedule]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    model_keys = {f.name: f.type for f in fields(ModelConfig)}
    sched_keys = {f.name: f.type for f in fields(TrainSchedule)}
    model_kw, sched_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key = value")
        if key in model_keys:
            model_kw[key] = _coerce(model_keys[key], value, key)
        elif key in sched_keys:
            sched_kw[key] = _coerce(sched_keys[key], value, key)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    seed = env_override("DRTS_SEED")
    if seed is not None:
        sched_kw["seed"] = _coerce(int, seed, "DRTS_SEED")
    threads = env_override("DRTS_THREADS")
    if threads is not None:
        sched_kw["threads"] = _coerce(int, threads, "DRTS_THREADS")
    return ModelConfig(**model_kw), TrainSchedule(**sched_kw)


def load_config(path) -> tuple[ModelConfig, TrainSchedule]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(config: ModelConfig, schedule: TrainSchedule | None = None) -> str:
    lines = [f"{k} = {v}" for k, v in asdict(config).items()]
    if schedule is not None:
        lines += [f"{k} = {v}" for k, v in asdict(schedule).items()]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# vocabularies


class Vocab:
    """Bidirectional item <-> index table."""

    def __init__(self, items: Iterable):
        self.items = list(dict.fromkeys(items))
        self.index = {x: i for i, x in enumerate(self.items)}

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.index

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def id(self, item, default=None) -> int:
        i = self.index.get(item, default)
        if i is None:
            raise VocabularyMiss(f"{item} is not in the vocabulary")
        return i


_RESERVED = ("<unk>", START, END)


@dataclass
class Vocabularies:
    words: Vocab
    lemmas: Vocab
    syntax: Vocab
    skeleton: Vocab  # output symbols of the skeleton decoder
    dru: Vocab  # output symbols of the DRU decoder

    def to_json(self) -> dict:
        out = {name: list(getattr(self, name)) for name in ("words", "lemmas", "syntax")}
        out["skeleton"] = [encode_symbol(s) for s in self.skeleton]
        out["dru"] = [encode_symbol(s) for s in self.dru]
        return out

    @classmethod
    def from_json(cls, data: dict) -> Vocabularies:
        return cls(
            Vocab(data["words"]),
            Vocab(data["lemmas"]),
            Vocab(data["syntax"]),
            Vocab(decode_symbol(s) for s in data["skeleton"]),
            Vocab(decode_symbol(s) for s in data["dru"]),
        )


def skeleton_symbols(max_var_index: int) -> list:
    syms = [CLOSE] + [OpenNode(b) for b in BOX_LABELS] + [OpenNode(r) for r in RELATION_LABELS]
    syms += [OpenNode(f"{s}{i}") for s in SKELETON_VARIABLE_SORTS for i in range(max_var_index)]
    return syms


def build_vocabularies(docs: Sequence[Document], config: ModelConfig) -> Vocabularies:
    """Vocabularies from a training corpus (min frequency 1, ``<unk>`` reserved)."""
    if not docs:
        raise EmptyInput("cannot build vocabularies from an empty corpus")
    words = Vocab([*_RESERVED, *(w for d in docs for s in d.sentences for w in s)])
    lemmas = Vocab([*_RESERVED, *(w for d in docs for s in d.lemmas for w in s)])
    labels = [lab for d in docs if d.deps for t in d.deps for lab in t.labels]
    syntax = Vocab([*_RESERVED, *labels])
    relations, constants = [], []
    for d in docs:
        if d.tree is None:
            continue
        for t in d.tree.tuples():
            relations.append(RelationSym(t.relation, t.arity))
            constants.extend(VariableSym(a) for a in t.args if a.sort == "c")
    relations.sort(key=lambda r: (r.label, r.arity))
    variables = [VariableSym(VariableId(s, i)) for s in DRU_VARIABLE_SORTS for i in range(config.max_var_index)]
    constants.sort(key=str)
    dru = Vocab([DRU_SEP, *relations, *variables, *constants])
    return Vocabularies(words, lemmas, syntax, Vocab(skeleton_symbols(config.max_var_index)), dru)


def _p99(values: Sequence[int]) -> int:
    return int(math.ceil(np.percentile(np.asarray(values, dtype=float), 99))) if values else 1


def resolve_lengths(config: ModelConfig, docs: Sequence[Document]) -> ModelConfig:
    """Fill in derived maximum decode lengths from gold trees."""
    trees = [d.tree for d in docs if d.tree is not None]
    if not trees:
        return config
    seqs = [linearize(t) for t in trees]
    kw = {}
    if config.max_skeleton_len == 0:
        kw["max_skeleton_len"] = 4 * _p99([len(s) for s, _ in seqs])
    if config.max_dru_len == 0:
        kw["max_dru_len"] = 12 * _p99([len(d) for _, d in seqs])
    return replace(config, **kw) if kw else config


# --------------------------------------------------------------------------
# the network


@dataclass
class EncoderOutput:
    h_enc: torch.Tensor  # BiLSTM states over <s> w.. <e> ...
    h_genc: torch.Tensor | None  # syntax GAT states, when enabled

    @property
    def memory(self) -> torch.Tensor:
        return self.h_enc if self.h_genc is None else self.h_genc


@dataclass
class DecoderState:
    symbols: list  # emitted (or gold) symbol ids
    hidden: torch.Tensor  # one decoder state per symbol
    final: tuple[torch.Tensor, torch.Tensor]
    valid: bool = True
    complete: bool = True


@dataclass
class ParseResult:
    tree: DrtsTree
    skeleton: tuple
    drus: tuple
    valid: bool  # True when the raw decoder output delinearized without repair
    complete: bool  # True when decoding finished within the length budget


Trace = list  # of (name, attention tensor) pairs, filled when requested


class StructuredParser(nn.Module):
    def __init__(self, config: ModelConfig, vocabs: Vocabularies, mode: str = "gat-enc-dec", pretrained=None):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        if config.max_skeleton_len == 0 or config.max_dru_len == 0:
            raise ConfigError("maximum decode lengths must be resolved before building the model")
        self.config = config
        self.vocabs = vocabs
        self.mode = mode
        c = config
        self.embed = WordEmbedding(len(vocabs.words), len(vocabs.lemmas), c.word_dim, c.pretrained_dim, c.lemma_dim, pretrained)
        self.mlp = MLP(self.embed.dim, c.mlp_dim, "relu")
        self.encoder = BiLSTM(c.mlp_dim, c.encoder_hidden, c.encoder_layers)
        self.dropout = nn.Dropout(c.dropout)
        # graph modules exist in every mode; unused ones simply get no gradient
        self.syntax_embed = nn.Embedding(len(vocabs.syntax), c.syntax_label_dim)
        self.encoder_gat = GATStack(self.encoder.out_dim + c.syntax_label_dim, c.encoder_gat_hidden, c.gat_layers, c.gat_heads, c.negative_slope)
        self.skeleton_label_embed = nn.Embedding(len(vocabs.skeleton), c.skeleton_label_dim)
        self.skeleton_gat = GATStack(c.decoder_hidden + c.skeleton_label_dim, c.decoder_gat_hidden, c.gat_layers, c.gat_heads, c.negative_slope)

        mem = c.encoder_gat_hidden if self.gat_encoder else self.encoder.out_dim
        self.memory_dim = mem
        n_skel, n_dru = len(vocabs.skeleton), len(vocabs.dru)
        # skeleton decoder; the extra embedding row is the start symbol
        self.skel_embed = nn.Embedding(n_skel + 1, c.symbol_dim)
        self.skel_init = nn.Linear(mem, c.decoder_hidden * c.decoder_layers)
        self.skel_lstm = DecoderLSTM(c.symbol_dim, c.decoder_hidden, c.decoder_layers)
        self.skel_attn = AdditiveAttention(c.decoder_hidden, mem, c.attention_dim)
        self.skel_combine = nn.Linear(c.decoder_hidden + mem, c.decoder_hidden)
        self.skel_out = nn.Linear(c.decoder_hidden, n_skel)
        # DRU decoder
        self.dru_embed = nn.Embedding(n_dru + 1, c.symbol_dim)
        self.dru_lstm = DecoderLSTM(c.symbol_dim + c.decoder_hidden, c.decoder_hidden, c.decoder_layers)
        self.dru_attn = AdditiveAttention(c.decoder_hidden, mem, c.attention_dim)
        self.dru_skel_attn = AdditiveAttention(c.decoder_hidden, c.decoder_hidden, c.attention_dim)
        self.dru_combine = nn.Linear(2 * c.decoder_hidden + mem, c.decoder_hidden)
        self.dru_out = nn.Linear(c.decoder_hidden, n_dru)
        self.reset_parameters()

    def reset_parameters(self):
        init_parameters(self)
        for stack in (self.encoder_gat, self.skeleton_gat):
            for layer in stack.layers:
                layer.reset_parameters()

    @property
    def gat_encoder(self) -> bool:
        return self.mode in ("gat-enc", "gat-enc-dec")

    @property
    def gat_decoder(self) -> bool:
        return self.mode in ("gat-dec", "gat-enc-dec")

    def gat_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if n.startswith(("encoder_gat.", "skeleton_gat.", "syntax_embed.", "skeleton_label_embed."))]

    @property
    def dtype(self):
        return self.skel_out.weight.dtype

    # -- encoder -------------------------------------------------------------

    def _token_ids(self, doc: Document):
        v = self.vocabs
        words, lemmas = [], []
        for sent, lem in zip(doc.sentences, doc.lemmas):
            words += [v.words.id(START)] + [v.words.id(w, UNK) for w in sent] + [v.words.id(END)]
            lemmas += [v.lemmas.id(START)] + [v.lemmas.id(w, UNK) for w in lem] + [v.lemmas.id(END)]
        return torch.tensor(words), torch.tensor(lemmas)

    def encode_document(self, doc: Document, trace: Trace | None = None) -> EncoderOutput:
        if not doc.sentences:
            raise EmptyInput("empty document")
        words, lemmas = self._token_ids(doc)
        x = self.dropout(self.mlp(self.embed(words, lemmas)))
        h_enc = self.encoder(x)
        if not self.gat_encoder:
            return EncoderOutput(h_enc, None)
        if doc.deps is None:
            raise DependencyError(f"mode {self.mode} needs dependency trees for document {doc.doc_id!r}")
        graph = build_syntax_graph(doc.sentences, doc.deps)
        label_ids = torch.tensor([self.vocabs.syntax.id(lab, UNK) for lab in graph.labels])
        h_in = torch.cat([h_enc, self.syntax_embed(label_ids)], dim=-1)
        if trace is None:
            h_genc = self.encoder_gat(h_in, graph)
        else:
            h_genc, att = self.encoder_gat(h_in, graph, return_attention=True)
            trace.extend(("encoder_gat", a) for a in att)
        return EncoderOutput(h_enc, h_genc)

    # -- skeleton ------------------------------------------------------------

    def _initial_state(self, memory):
        c = self.config
        h0 = torch.tanh(self.skel_init(memory.mean(dim=0))).view(c.decoder_layers, c.decoder_hidden)
        return h0, torch.zeros_like(h0)

    def _skel_logits(self, hidden, memory, trace):
        ctx, w = self.skel_attn(hidden, memory)
        if trace is not None:
            trace.append(("skeleton_attention", w))
        out = torch.tanh(self.skel_combine(torch.cat([hidden, ctx], dim=-1)))
        return self.skel_out(out), out

    def decode_skeleton(self, enc: EncoderOutput, gold: Sequence[int] | None = None, constrained: bool = True, trace: Trace | None = None):
        """Teacher-forced when ``gold`` is given (returns logits too), greedy otherwise."""
        memory = enc.memory
        bos = len(self.vocabs.skeleton)
        state = self._initial_state(memory)
        if gold is not None:
            gold_t = torch.tensor(list(gold), dtype=torch.long)
            inputs = torch.cat([torch.tensor([bos]), gold_t[:-1]])
            h, final = self.skel_lstm(self.skel_embed(inputs), state)
            logits, out = self._skel_logits(h, memory, trace)
            return DecoderState(list(gold), out, final), logits
        tracker = SkeletonConstraint(self.vocabs.skeleton, self.config.max_skeleton_len)
        prev = bos
        symbols, states = [], []
        while not tracker.done and not tracker.exhausted:
            state, h = self.skel_lstm.step(state, self.skel_embed(torch.tensor(prev)))
            logits, out = self._skel_logits(h.unsqueeze(0), memory, trace)
            logits = logits[0]
            if constrained:
                logits = logits.masked_fill(~tracker.mask(), -math.inf)
            prev = int(torch.argmax(logits))
            tracker.push(prev)
            symbols.append(prev)
            states.append(out[0])
        return DecoderState(symbols, torch.stack(states), state, tracker.valid and tracker.done, tracker.done), None

    def encode_skeleton(self, hidden: torch.Tensor, symbols: Sequence[int], trace: Trace | None = None) -> torch.Tensor:
        """H^gskt: open-node rows replaced by skeleton-GAT outputs; close rows unchanged."""
        if not self.gat_decoder:
            return hidden
        seq = [self.vocabs.skeleton[i] for i in symbols]
        graph = build_skeleton_graph(seq)
        pos = torch.tensor(graph.positions, dtype=torch.long)
        labels = torch.tensor([symbols[p] for p in graph.positions], dtype=torch.long)
        h_in = torch.cat([hidden[pos], self.skeleton_label_embed(labels)], dim=-1)
        if trace is None:
            h_g = self.skeleton_gat(h_in, graph)
        else:
            h_g, att = self.skeleton_gat(h_in, graph, return_attention=True)
            trace.extend(("skeleton_gat", a) for a in att)
        return hidden.index_copy(0, pos, h_g)

    # -- DRUs ----------------------------------------------------------------

    def _box_positions(self, symbols: Sequence[int]) -> list[int]:
        skel = self.vocabs.skeleton
        return [i for i, s in enumerate(symbols) if isinstance(skel[s], OpenNode) and skel[s].label in BOX_LABELS]

    def _dru_logits(self, hidden, memory, h_gskt, trace):
        ctx, w = self.dru_attn(hidden, memory)
        sctx, sw = self.dru_skel_attn(hidden, h_gskt)
        if trace is not None:
            trace.append(("dru_attention", w))
            trace.append(("dru_skeleton_attention", sw))
        out = torch.tanh(self.dru_combine(torch.cat([hidden, ctx, sctx], dim=-1)))
        return self.dru_out(out), out

    def decode_drus(self, enc: EncoderOutput, skel: DecoderState, h_gskt: torch.Tensor, gold: Sequence[int] | None = None, constrained: bool = True, trace: Trace | None = None):
        memory = enc.memory
        boxes = self._box_positions(skel.symbols)
        if not boxes:
            raise LinearizationError("skeleton without any (S)DRS node")
        cues = h_gskt[torch.tensor(boxes)]
        bos = len(self.vocabs.dru)
        sep = self.vocabs.dru.id(DRU_SEP)
        state = skel.final
        if gold is not None:
            gold = list(gold)
            group_of, g = [], 0
            for s in gold:
                group_of.append(min(g, len(boxes) - 1))
                g += s == sep
            inputs = torch.tensor([bos] + gold[:-1], dtype=torch.long)
            xs = torch.cat([self.dru_embed(inputs), cues[torch.tensor(group_of, dtype=torch.long)]], dim=-1)
            h, final = self.dru_lstm(xs, state)
            logits, out = self._dru_logits(h, memory, h_gskt, trace)
            return DecoderState(gold, out, final), logits
        tracker = DruConstraint(self.vocabs.dru, len(boxes), self.config.max_dru_len, self.config.max_relations_per_dru)
        prev, group = bos, 0
        symbols, states = [], []
        while group < len(boxes) and not tracker.exhausted:
            x = torch.cat([self.dru_embed(torch.tensor(prev)), cues[group]])
            state, h = self.dru_lstm.step(state, x)
            logits, out = self._dru_logits(h.unsqueeze(0), memory, h_gskt, trace)
            logits = logits[0]
            if constrained:
                logits = logits.masked_fill(~tracker.mask(), -math.inf)
            prev = int(torch.argmax(logits))
            tracker.push(prev)
            symbols.append(prev)
            states.append(out[0])
            group += prev == sep
        hidden = torch.stack(states) if states else torch.zeros(0, self.config.decoder_hidden, dtype=self.dtype)
        return DecoderState(symbols, hidden, state, tracker.valid and tracker.done, tracker.done), None

    # -- training objective ----------------------------------------------------

    def gold_ids(self, tree: DrtsTree) -> tuple[list[int], list[int]]:
        skel, drus = linearize(tree)
        try:
            return [self.vocabs.skeleton.id(s) for s in skel], [self.vocabs.dru.id(s) for s in drus]
        except VocabularyMiss as exc:
            raise VocabularyMiss(f"{exc} (raise max_var_index or rebuild vocabularies)") from None

    def loss_terms(self, doc: Document, trace: Trace | None = None) -> tuple[torch.Tensor, int]:
        """Summed gold negative log-likelihood over both decoders and the symbol count."""
        if doc.tree is None:
            raise EmptyInput(f"document {doc.doc_id!r} has no gold tree")
        skel_gold, dru_gold = self.gold_ids(doc.tree)
        enc = self.encode_document(doc, trace)
        skel, skel_logits = self.decode_skeleton(enc, skel_gold, trace=trace)
        h_gskt = self.encode_skeleton(skel.hidden, skel.symbols, trace)
        _, dru_logits = self.decode_drus(enc, skel, h_gskt, dru_gold, trace=trace)
        total = nll_sum(skel_logits, torch.tensor(skel_gold)) + nll_sum(dru_logits, torch.tensor(dru_gold))
        return total, len(skel_gold) + len(dru_gold)

    def loss(self, doc: Document, trace: Trace | None = None) -> torch.Tensor:
        """Cross-entropy averaged over all gold symbols of the document."""
        total, n = self.loss_terms(doc, trace)
        return total / n

    def corpus_loss(self, docs: Sequence[Document]) -> torch.Tensor:
        totals = [self.loss_terms(d) for d in docs]
        return sum(t for t, _ in totals) / sum(n for _, n in totals)

    # -- inference -------------------------------------------------------------

    @torch.no_grad()
    def parse(self, doc: Document, constrained: bool = True, trace: Trace | None = None) -> ParseResult:
        enc = self.encode_document(doc, trace)
        skel, _ = self.decode_skeleton(enc, constrained=constrained, trace=trace)
        skel_syms = [self.vocabs.skeleton[i] for i in skel.symbols]
        valid, complete = skel.valid, skel.complete
        if not valid:
            skel_syms = repair_skeleton(skel_syms)
            ids = [self.vocabs.skeleton.id(s) for s in skel_syms]
            hidden = skel.hidden
            if len(ids) > hidden.shape[0]:
                pad = hidden[-1:].expand(len(ids) - hidden.shape[0], -1)
                hidden = torch.cat([hidden, pad])
            skel = DecoderState(ids, hidden[: len(ids)], skel.final)
        h_gskt = self.encode_skeleton(skel.hidden, skel.symbols, trace)
        dru, _ = self.decode_drus(enc, skel, h_gskt, constrained=constrained, trace=trace)
        dru_syms = [self.vocabs.dru[i] for i in dru.symbols]
        valid = valid and dru.valid
        complete = complete and dru.complete
        try:
            tree = delinearize(skel_syms, dru_syms)
        except LinearizationError:
            valid = False
            dru_syms = repair_drus(dru_syms, len(self._box_positions(skel.symbols)))
            tree = delinearize(skel_syms, dru_syms)
        return ParseResult(tree, tuple(skel_syms), tuple(dru_syms), valid, complete)


# --------------------------------------------------------------------------
# persistence


def save_model(model: StructuredParser, path, extra: dict | None = None) -> None:
    meta = {
        "config": asdict(model.config),
        "mode": model.mode,
        "vocabs": model.vocabs.to_json(),
        **(extra or {}),
    }
    save_checkpoint(path, dict(model.state_dict()), meta)


def load_model(path) -> StructuredParser:
    tensors, meta = load_checkpoint(path)
    config = ModelConfig(**meta["config"])
    model = StructuredParser(config, Vocabularies.from_json(meta["vocabs"]), meta["mode"])
    model.load_state_dict(tensors)
    return model.eval()


def state_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    metrics: dict | None = None


@dataclass
class TrainLog:
    mode: str
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def last_metrics(self) -> dict | None:
        for r in reversed(self.records):
            if r.metrics is not None:
                return r.metrics
        return None


def set_determinism(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(threads)


def evaluate(model: StructuredParser, docs: Sequence[Document], metrics=("bleu", "skeleton", "tuple"), constrained: bool = True) -> dict:
    model.eval()
    preds = [model.parse(d, constrained=constrained).tree for d in docs]
    return evaluate_trees(preds, [d.tree for d in docs], metrics)


def _summary(report: dict) -> dict:
    out = {}
    if "skeleton" in report:
        out["skeleton_f1"] = report["skeleton"]["f1"]
    if "tuple" in report:
        out["tuple_f1"] = report["tuple"]["f1"]
    if "bleu" in report:
        out["bleu"] = report["bleu"]
    return out


def train(
    docs: Sequence[Document],
    config: ModelConfig = ModelConfig(),
    schedule: TrainSchedule = TrainSchedule(),
    mode: str = "gat-enc-dec",
    out_dir=None,
    pretrained=None,
    vocabs: Vocabularies | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[StructuredParser, TrainLog]:
    """Per-document Adam updates over a fixed document order.

    Each epoch's loss is the symbol-weighted mean cross-entropy of the
    teacher-forced passes made during that epoch.
    """
    if not docs:
        raise EmptyInput("empty training corpus")
    set_determinism(schedule.seed, schedule.threads)
    config = resolve_lengths(config, docs)
    vocabs = vocabs or build_vocabularies(docs, config)
    model = StructuredParser(config, vocabs, mode, pretrained)
    for d in docs:
        if d.tree is None:
            raise EmptyInput(f"training document {d.doc_id!r} has no gold tree")
        model.gold_ids(d.tree)  # VocabularyMiss before any update
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=schedule.learning_rate)
    out = Path(out_dir) if out_dir is not None else None
    manifest = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        manifest = open(out / "manifest.jsonl", "w", encoding="utf-8")
        run = {
            "type": "run",
            "mode": mode,
            "config": asdict(config),
            "schedule": asdict(schedule),
            "corpus_sha256": corpus_digest(docs),
            "documents": len(docs),
            "vocab_sizes": {k: len(getattr(vocabs, k)) for k in ("words", "lemmas", "syntax", "skeleton", "dru")},
        }
        manifest.write(json.dumps(run, sort_keys=True) + "\n")
    log_ = TrainLog(mode)
    try:
        for epoch in range(1, schedule.epochs + 1):
            model.train()
            start = time.perf_counter()
            total, count = 0.0, 0
            for doc in docs:
                opt.zero_grad()
                nll, n = model.loss_terms(doc)
                (nll / n).backward()
                if schedule.grad_clip > 0:
                    nn.utils.clip_grad_norm_(params, schedule.grad_clip)
                opt.step()
                total += nll.item()
                count += n
            record = EpochRecord(epoch, total / count, 0.0)
            last = epoch == schedule.epochs
            if schedule.eval_every and (epoch % schedule.eval_every == 0 or last):
                record.metrics = _summary(evaluate(model, docs))
            record.seconds = time.perf_counter() - start
            log_.records.append(record)
            log.info("epoch %d loss %.6f %s", epoch, record.loss, record.metrics or "")
            entry = {"type": "epoch", **asdict(record)}
            if out is not None:
                ckpt = out / (f"epoch-{epoch:04d}.npz" if schedule.keep_checkpoints else "checkpoint.npz")
                save_model(model, ckpt, {"epoch": epoch})
                entry["checkpoint"] = ckpt.name
                manifest.write(json.dumps(entry, sort_keys=True) + "\n")
                manifest.flush()
            if on_epoch is not None:
                on_epoch(record)
            m = record.metrics
            if schedule.target_f1 > 0 and m and m["skeleton_f1"] >= schedule.target_f1 and m["tuple_f1"] >= schedule.target_f1:
                break
        if out is not None:
            save_model(model, out / "model.npz", {"epochs": len(log_.records)})
    finally:
        if manifest is not None:
            manifest.close()
    model.eval()
    return model, log_


def ablation_report(results: dict[str, tuple[TrainLog, dict]]) -> str:
    """Plain-text table comparing modes."""
    head = f"{'mode':<14}{'epochs':>8}{'loss':>12}{'skeleton F1':>14}{'tuple F1':>10}{'BLEU':>8}"
    lines = [head, "-" * len(head)]
    for mode, (tlog, report) in results.items():
        loss = tlog.losses[-1] if tlog.losses else float("nan")
        lines.append(
            f"{MODE_NAMES.get(mode, mode):<14}{len(tlog.records):>8}{loss:>12.5f}"
            f"{report['skeleton']['f1']:>14.4f}{report['tuple']['f1']:>10.4f}{report['bleu']:>8.4f}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# finite-difference checks of every trainable component


GRAD_CHECK_CONFIG = ModelConfig(
    word_dim=4, pretrained_dim=2, lemma_dim=2, mlp_dim=4, encoder_hidden=3, encoder_layers=2,
    decoder_hidden=4, decoder_layers=1, encoder_gat_hidden=4, decoder_gat_hidden=4, gat_layers=2,
    gat_heads=2, syntax_label_dim=2, skeleton_label_dim=2, symbol_dim=3, attention_dim=3,
    max_var_index=4, max_skeleton_len=40, max_dru_len=40,
)


def grad_check_document() -> Document:
    """Five tokens, one sentence, with a tree that exercises both decoders."""
    from .core import parse_tree
    from .graphs import DependencyTree

    words = ("Tom", "told", "that", "she", "left")
    tree = parse_tree('DRS( {tell(e1,x1) Time(t1,"now")} p1( DRS( {leave(e2,x2)} ) ) NOT( DRS( {} ) ) )')
    deps = (DependencyTree((2, 0, 5, 5, 2), ("nsubj", "root", "mark", "nsubj", "ccomp")),)
    return Document("gradcheck", (words,), (tuple(w.lower() for w in words),), tree, deps)


def grad_check_suite(config: ModelConfig = GRAD_CHECK_CONFIG, seed: int = 0, eps: float = 1e-5, max_coords: int = 2000) -> dict[str, float]:
    """Max relative error per component, all in float64."""
    from .neuro import GATLayer, grad_check

    torch.manual_seed(seed)
    dt = torch.float64
    c = config
    out: dict[str, float] = {}

    x = torch.randn(5, c.mlp_dim, dtype=dt)
    mlp = MLP(c.mlp_dim, c.encoder_hidden, "tanh").to(dt)
    out["mlp"] = grad_check(lambda: (mlp(x) ** 2).sum(), mlp.parameters(), eps, max_coords, seed)

    bilstm = BiLSTM(c.mlp_dim, c.encoder_hidden, c.encoder_layers).to(dt)
    out["bilstm"] = grad_check(lambda: (bilstm(x) ** 2).sum(), bilstm.parameters(), eps, max_coords, seed)

    dec = DecoderLSTM(c.mlp_dim, c.decoder_hidden, c.decoder_layers).to(dt)
    out["decoder_lstm"] = grad_check(lambda: (dec(x)[0] ** 2).sum(), dec.parameters(), eps, max_coords, seed)

    keys = torch.randn(6, c.encoder_hidden, dtype=dt)
    attn = AdditiveAttention(c.mlp_dim, c.encoder_hidden, c.attention_dim).to(dt)
    out["attention"] = grad_check(lambda: (attn(x, keys)[0] ** 2).sum(), attn.parameters(), eps, max_coords, seed)

    doc = grad_check_document()
    graph = build_syntax_graph(doc.sentences, doc.deps)
    h = torch.randn(graph.n, c.mlp_dim, dtype=dt)
    gat = GATLayer(c.mlp_dim, c.gat_heads, c.encoder_gat_hidden // c.gat_heads, c.negative_slope).to(dt)
    out["gat_layer"] = grad_check(lambda: (gat(h, graph) ** 2).sum(), gat.parameters(), eps, max_coords, seed)

    c_full = resolve_lengths(config, [doc])
    model = StructuredParser(c_full, build_vocabularies([doc], c_full), "gat-enc-dec").to(dt)
    out["full_model"] = grad_check(lambda: model.loss(doc), model.parameters(), eps, max_coords, seed)
    return out
