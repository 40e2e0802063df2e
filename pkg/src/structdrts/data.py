"""Documents, corpus files, synthetic corpora and pretrained embeddings.

A corpus directory holds ``docs.conll`` (index, form, lemma, head, deprel;
``# newdoc id = ...`` before each document) and, for gold data,
``gold.trees`` with one bracketed tree per line in document order.
"""

from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    RELATION_ARITY,
    DrtsTree,
    Dru,
    RelationTuple,
    SkeletonNode,
    VariableId,
    format_tree,
    read_trees,
    write_trees,
)
from .errors import AlignmentError, ConfigError, EmptyInput, ParseError
from .graphs import ConllRow, DependencyTree, format_conll, read_conll

DOCS_FILE = "docs.conll"
TREES_FILE = "gold.trees"
TEXT_FILE = "docs.txt"


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[tuple[str, ...], ...]
    lemmas: tuple[tuple[str, ...], ...]
    tree: DrtsTree | None = None
    deps: tuple[DependencyTree, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(tuple(s) for s in self.sentences))
        object.__setattr__(self, "lemmas", tuple(tuple(s) for s in self.lemmas))
        if self.deps is not None:
            object.__setattr__(self, "deps", tuple(self.deps))
        if not self.sentences or any(not s for s in self.sentences):
            raise EmptyInput(f"document {self.doc_id!r} has no sentences or an empty sentence")
        if [len(s) for s in self.sentences] != [len(s) for s in self.lemmas]:
            raise AlignmentError(f"document {self.doc_id!r}: lemma column does not align with tokens")
        if self.deps is not None and [len(s) for s in self.sentences] != [len(d) for d in self.deps]:
            raise AlignmentError(f"document {self.doc_id!r}: dependency trees do not align with tokens")

    @property
    def n_words(self) -> int:
        return sum(len(s) for s in self.sentences)


@dataclass(frozen=True)
class CorpusStats:
    documents: int
    sentences: int
    avg_sentences: float
    avg_words: float


def corpus_stats(docs: Sequence[Document]) -> CorpusStats:
    n = len(docs)
    sents = sum(len(d.sentences) for d in docs)
    words = sum(d.n_words for d in docs)
    return CorpusStats(n, sents, sents / n if n else 0.0, words / n if n else 0.0)


def _default_lemma(form: str) -> str:
    return form.lower()


def documents_from_conll(path) -> list[Document]:
    docs = []
    for i, (doc_id, sentences) in enumerate(read_conll(path)):
        forms = [[r.form for r in s] for s in sentences]
        lemmas = [[r.lemma for r in s] for s in sentences]
        deps = None
        if all(r.head is not None for s in sentences for r in s):
            deps = tuple(DependencyTree([r.head for r in s], [r.deprel for r in s]) for s in sentences)
        docs.append(Document(doc_id or f"d{i}", forms, lemmas, None, deps))
    return docs


def load_corpus(path, schema: str = "drts") -> tuple[list[Document], CorpusStats]:
    """Load a corpus directory (``drts``: docs + optional gold trees) or a bare CoNLL file (``conll``)."""
    path = Path(path)
    if schema == "conll" or path.is_file():
        docs = documents_from_conll(path)
        return docs, corpus_stats(docs)
    if schema != "drts":
        raise ConfigError(f"unknown corpus schema {schema!r}")
    docs = documents_from_conll(path / DOCS_FILE)
    tree_path = path / TREES_FILE
    if tree_path.exists():
        trees = read_trees(tree_path)
        if len(trees) != len(docs):
            raise AlignmentError(f"{len(trees)} trees for {len(docs)} documents", tree_path)
        docs = [Document(d.doc_id, d.sentences, d.lemmas, t, d.deps) for d, t in zip(docs, trees)]
    return docs, corpus_stats(docs)


def save_corpus(docs: Sequence[Document], path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / DOCS_FILE, "w", encoding="utf-8") as fh:
        for d in docs:
            sentences = []
            for si, (forms, lemmas) in enumerate(zip(d.sentences, d.lemmas)):
                dep = d.deps[si] if d.deps is not None else None
                sentences.append(
                    [
                        ConllRow(f, l, dep.heads[i] if dep else None, dep.labels[i] if dep else "_")
                        for i, (f, l) in enumerate(zip(forms, lemmas))
                    ]
                )
            fh.write(format_conll(d.doc_id, sentences))
    write_text_documents(docs, path / TEXT_FILE)
    trees = [d.tree for d in docs]
    if all(t is not None for t in trees):
        write_trees(trees, path / TREES_FILE)


def read_text_documents(path) -> list[list[list[str]]]:
    """Whitespace-tokenized text: one sentence per line, blank lines between documents."""
    docs: list[list[list[str]]] = [[]]
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            toks = line.split()
            if toks:
                docs[-1].append(toks)
            elif docs[-1]:
                docs.append([])
    return [d for d in docs if d]


def write_text_documents(docs: Sequence[Document], path) -> None:
    """Inverse of :func:`read_text_documents`."""
    blocks = ["\n".join(" ".join(s) for s in d.sentences) for d in docs]
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def documents_from_text(path, deps_path=None) -> list[Document]:
    texts = read_text_documents(path)
    if deps_path is None:
        return [
            Document(f"d{i}", sents, [[_default_lemma(w) for w in s] for s in sents])
            for i, sents in enumerate(texts)
        ]
    parsed = documents_from_conll(deps_path)
    if len(parsed) != len(texts):
        raise AlignmentError(f"{len(texts)} documents in text, {len(parsed)} in dependency file", deps_path)
    out = []
    for i, (sents, dep_doc) in enumerate(zip(texts, parsed)):
        if [list(s) for s in dep_doc.sentences] != [list(s) for s in sents]:
            raise AlignmentError(f"document {i}: tokens differ between text and dependency file", deps_path)
        out.append(Document(dep_doc.doc_id, sents, dep_doc.lemmas, None, dep_doc.deps))
    return out


def corpus_digest(docs: Sequence[Document]) -> str:
    h = hashlib.sha256()
    for d in docs:
        h.update(repr((d.doc_id, d.sentences, d.lemmas)).encode())
        if d.tree is not None:
            h.update(format_tree(d.tree).encode())
        if d.deps is not None:
            h.update(repr([(t.heads, t.labels) for t in d.deps]).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# pretrained embeddings (word2vec text format)


def load_embeddings(path, vocab: Sequence[str], dim: int) -> np.ndarray:
    """Table aligned with ``vocab``; words missing from the file get a zero row."""
    index = {w: i for i, w in enumerate(vocab)}
    table = np.zeros((len(vocab), dim))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != dim:
                    raise ConfigError(f"{path}: file has dimension {parts[1]}, config expects {dim}")
                continue
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ConfigError(f"{path}:{lineno}: vector of dimension {len(parts) - 1}, config expects {dim}")
            i = index.get(parts[0])
            if i is not None:
                try:
                    table[i] = [float(x) for x in parts[1:]]
                except ValueError:
                    raise ParseError("non-numeric vector entry", path, lineno) from None
    return table


# --------------------------------------------------------------------------
# synthetic corpora

UNARY_WORDS = (
    "letter", "woman", "man", "wife", "rabbi", "country", "people", "city",
    "report", "group", "official", "year", "child", "house", "war",
)
BINARY_WORDS = (
    "Agent", "Theme", "Patient", "Topic", "Recipient", "Of", "In", "Attribute",
    "sign", "warn", "date", "urge", "avoid",
)
DISCOURSE_WORDS = ("Continuation", "Elaboration", "Contrast", "Narration", "Result")
CONSTANTS = ("now", "israel", "monday")


@dataclass(frozen=True)
class SyntheticSpec:
    docs: int = 32
    max_depth: int = 4
    max_drus: int = 10
    max_tuples: int = 8
    relations: int = 24
    max_var_index: int = 64
    child_rate: float = 0.6


def relation_lexicon(n: int) -> list[tuple[str, int]]:
    """``n`` (label, arity) pairs; synthetic ``relN`` labels extend the base list."""
    out: list[tuple[str, int]] = []
    for i in range(max(len(UNARY_WORDS), len(BINARY_WORDS))):
        if i < len(UNARY_WORDS):
            out.append((UNARY_WORDS[i], 1))
        if i < len(BINARY_WORDS):
            out.append((BINARY_WORDS[i], 2))
    out = out[:n]
    i = 0
    while len(out) < n:
        out.append((f"rel{i}", 1 + i % 2))
        i += 1
    return out


class _TreeBuilder:
    def __init__(self, rng: random.Random, spec: SyntheticSpec, lexicon):
        self.rng = rng
        self.spec = spec
        self.unary = [l for l, a in lexicon if a == 1] or ["thing"]
        self.binary = [l for l, a in lexicon if a == 2] or ["Rel"]
        self.counters = {s: 1 for s in "xestpk"}
        self.entities: list[VariableId] = []
        self.boxes = 0

    def fresh(self, sort):
        idx = self.counters[sort]
        if idx >= self.spec.max_var_index:
            if sort in "pk":
                raise ConfigError(f"max_var_index {self.spec.max_var_index} too small for skeleton variables")
            idx = self.rng.randrange(1, self.spec.max_var_index)
        else:
            self.counters[sort] += 1
        return VariableId(sort, idx)

    def entity(self, sorts="xxxest"):
        if self.entities and self.rng.random() < 0.5:
            return self.rng.choice(self.entities)
        v = self.fresh(self.rng.choice(sorts))
        self.entities.append(v)
        return v

    def box(self, kind, level):
        self.boxes += 1
        children = []
        can_nest = level + 2 <= self.spec.max_depth
        if kind == "SDRS":
            n_kids = self.rng.randint(1, 3) if can_nest else 0
            for _ in range(n_kids):
                if self.boxes >= self.spec.max_drus:
                    break
                if self.rng.random() < 0.8:
                    sub = "SDRS" if level + 4 <= self.spec.max_depth and self.rng.random() < 0.2 else "DRS"
                    children.append(SkeletonNode(str(self.fresh("k")), (self.box(sub, level + 2),)))
                else:
                    children.append(self.relation(level + 1))
        else:
            while can_nest and self.boxes < self.spec.max_drus and self.rng.random() < self.spec.child_rate / (1 + len(children)):
                if self.rng.random() < 0.4:
                    children.append(SkeletonNode(str(self.fresh("p")), (self.box("DRS", level + 2),)))
                else:
                    children.append(self.relation(level + 1))
        children = [c for c in children if c is not None]
        return SkeletonNode(kind, tuple(children), self.dru(kind, children))

    def relation(self, level):
        label = self.rng.choice(sorted(RELATION_ARITY))
        arity = RELATION_ARITY[label]
        if self.boxes + arity > self.spec.max_drus:
            label, arity = "NOT", 1
            if self.boxes + 1 > self.spec.max_drus:
                return None
        return SkeletonNode(label, tuple(self.box("DRS", level + 1) for _ in range(arity)))

    def dru(self, kind, children):
        rng = self.rng
        tuples = []
        limit = self.spec.max_tuples
        if kind == "SDRS":
            segs = [c.variable for c in children if c.variable is not None]
            if len(segs) >= 2:
                for a, b in zip(segs, segs[1:]):
                    if len(tuples) < limit:
                        tuples.append(RelationTuple(rng.choice(DISCOURSE_WORDS), (a, b)))
            return Dru(tuple(tuples))
        props = [c.variable for c in children if c.variable is not None and c.variable.sort == "p"]
        for p in props:
            if len(tuples) < limit:
                tuples.append(RelationTuple("That", (self.entity("x"), p)))
        for _ in range(rng.randint(1, max(1, min(limit, 4)))):
            if len(tuples) >= limit:
                break
            r = rng.random()
            if r < 0.45:
                tuples.append(RelationTuple(rng.choice(self.unary), (self.entity(),)))
            elif r < 0.9:
                tuples.append(RelationTuple(rng.choice(self.binary), (self.entity("es"), self.entity("x"))))
            else:
                tuples.append(RelationTuple("Time", (self.entity("t"), VariableId.const(rng.choice(CONSTANTS)))))
        return Dru(tuple(tuples[:limit]))


def random_tree(rng: random.Random, spec: SyntheticSpec = SyntheticSpec(), lexicon=None) -> DrtsTree:
    lexicon = lexicon or relation_lexicon(spec.relations)
    builder = _TreeBuilder(rng, spec, lexicon)
    kind = "SDRS" if spec.max_depth >= 3 and rng.random() < 0.5 else "DRS"
    return DrtsTree(builder.box(kind, 1))


_BRANCH_WORDS = {"IMP": ("if", "then"), "OR": ("either", "or"), "DUP": ("which", "answer")}


def render_text(tree: DrtsTree) -> tuple[list[list[str]], list[DependencyTree]]:
    """Pseudo-text with one sentence per (S)DRS, in skeleton order.

    A sentence names the box, its nesting level, the skeleton nodes linking it
    to its parent box, and then every tuple as ``relation arg..``.
    """
    sentences: list[list[str]] = []
    deps: list[DependencyTree] = []

    def emit(box, level, path_words):
        words = [box.label.lower(), f"lvl{level}", *path_words]
        heads = [0] + [1] * (1 + len(path_words))
        labels = ["root", "mark"] + ["path"] * len(path_words)
        for t in box.dru:
            rel_pos = len(words) + 1
            words.append(t.relation)
            heads.append(1)
            labels.append("rel")
            for a in t.args:
                words.append(a.payload if a.sort == "c" else str(a))
                heads.append(rel_pos)
                labels.append("arg")
        sentences.append(words)
        deps.append(DependencyTree(heads, labels))
        for child in box.children:
            for i, grandchild in enumerate(child.children):
                extra = [child.label.lower()]
                if child.label in _BRANCH_WORDS:
                    extra.append(_BRANCH_WORDS[child.label][i])
                emit(grandchild, level + 2, extra)

    emit(tree.root, 1, [])
    return sentences, deps


def _lemma(word: str) -> str:
    return word.rstrip("0123456789").lower() or word


def gen_synthetic(seed: int, spec: SyntheticSpec = SyntheticSpec()) -> list[Document]:
    """Seeded corpus of (text, dependency trees, gold tree) documents."""
    rng = random.Random(seed)
    lexicon = relation_lexicon(spec.relations)
    docs = []
    for i in range(spec.docs):
        tree = random_tree(rng, spec, lexicon)
        sentences, deps = render_text(tree)
        lemmas = [[_lemma(w) for w in s] for s in sentences]
        docs.append(Document(f"syn{seed}-{i:04d}", sentences, lemmas, tree, deps))
    return docs


def env_override(name: str, default=None):
    value = os.environ.get(name)
    return default if value in (None, "") else value
