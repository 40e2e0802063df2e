"""Graphs fed to the graph-attention modules.

Both graphs are undirected with a self-loop on every node.  The syntax graph
covers the encoder sequence (tokens plus sentence markers); the skeleton graph
covers the open-node symbols of a skeleton sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Close, OpenNode
from .errors import AlignmentError, CyclicTree, DependencyError, LengthMismatch, ParseError, Unbalanced

START = "<s>"
END = "<e>"
MARKER_LABELS = (START, END)


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric boolean adjacency plus one label per node.

    ``positions`` maps graph nodes back to sequence positions when the graph
    was built over a subset of a sequence (skeleton graphs).
    """

    adjacency: np.ndarray
    labels: tuple[str, ...]
    positions: tuple[int, ...] | None = None

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Receiver and sender indices of every (directed) adjacency entry."""
        dst, src = np.nonzero(self.adjacency)
        return dst, src

    def neighbors(self, i: int) -> list[int]:
        return np.flatnonzero(self.adjacency[i]).tolist()

    def is_symmetric(self) -> bool:
        return bool((self.adjacency == self.adjacency.T).all())

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == self.n

    def same_as(self, other: Graph) -> bool:
        return (
            np.array_equal(self.adjacency, other.adjacency)
            and self.labels == other.labels
            and self.positions == other.positions
        )


def _graph(n: int, edges: Iterable[tuple[int, int]], labels, positions=None) -> Graph:
    adj = np.eye(n, dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    return Graph(adj, tuple(labels), None if positions is None else tuple(positions))


@dataclass(frozen=True)
class DependencyTree:
    """Heads are 1-based token indices, 0 marks the root."""

    heads: tuple[int, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self):
        return len(self.heads)

    def check(self) -> None:
        n = len(self.heads)
        if len(self.labels) != n:
            raise LengthMismatch(f"{n} heads but {len(self.labels)} labels")
        for i, h in enumerate(self.heads, 1):
            if not 0 <= h <= n or h == i:
                raise DependencyError(f"token {i} has head {h} outside 0..{n} or points to itself")
        roots = [i for i, h in enumerate(self.heads, 1) if h == 0]
        if len(roots) != 1:
            raise DependencyError(f"expected exactly one root, found {len(roots)}")
        for i in range(1, n + 1):
            seen = set()
            j = i
            while j != 0:
                if j in seen:
                    raise CyclicTree(f"cycle through token {j}")
                seen.add(j)
                j = self.heads[j - 1]

    @property
    def root(self) -> int:
        return self.heads.index(0) + 1


def build_syntax_graph(sentences: Sequence[Sequence[str]], deps: Sequence[DependencyTree]) -> Graph:
    """Graph over ``<s> w.. <e> <s> w.. <e> ...``.

    Dependency arcs become undirected edges.  Each ``<s>`` links to its
    sentence's root word and to its own ``<e>``; each ``<e>`` links to the next
    sentence's ``<s>``, so the whole document forms one component.
    """
    if len(sentences) != len(deps):
        raise LengthMismatch(f"{len(sentences)} sentences but {len(deps)} dependency trees")
    edges: list[tuple[int, int]] = []
    labels: list[str] = []
    offset = 0
    prev_end = None
    for words, tree in zip(sentences, deps):
        if len(words) != len(tree):
            raise LengthMismatch(f"sentence has {len(words)} tokens, dependency tree {len(tree)}")
        tree.check()
        start = offset
        end = offset + len(words) + 1
        labels.append(START)
        labels.extend(tree.labels)
        labels.append(END)
        for i, h in enumerate(tree.heads, 1):
            edges.append((start + i, start + h))  # h == 0 hits <s>: the root link
        edges.append((start, end))
        if prev_end is not None:
            edges.append((prev_end, start))
        prev_end = end
        offset = end + 1
    return _graph(offset, edges, labels)


def build_skeleton_graph(skel: Sequence) -> Graph:
    """Tree graph over the open-node symbols of a skeleton sequence."""
    edges = []
    labels = []
    positions = []
    stack: list[int] = []
    closed_root = False
    for pos, sym in enumerate(skel):
        if closed_root:
            raise Unbalanced(f"symbol after the root was closed (position {pos})")
        if isinstance(sym, OpenNode):
            node = len(labels)
            labels.append(sym.label)
            positions.append(pos)
            if stack:
                edges.append((stack[-1], node))
            stack.append(node)
        elif isinstance(sym, Close):
            if not stack:
                raise Unbalanced(f"unmatched close at position {pos}")
            stack.pop()
            closed_root = not stack
        else:
            raise Unbalanced(f"unexpected symbol {sym} in a skeleton sequence")
    if stack or not labels:
        raise Unbalanced("skeleton sequence is not balanced")
    return _graph(len(labels), edges, labels, positions)


# --------------------------------------------------------------------------
# CoNLL-style columns: index, form, lemma, head, deprel


@dataclass(frozen=True)
class ConllRow:
    form: str
    lemma: str
    head: int | None
    deprel: str


def read_conll(path) -> list[tuple[str | None, list[list[ConllRow]]]]:
    """Read documents of sentences of rows.

    Documents start with a ``# newdoc`` comment (an optional ``id = X`` is
    kept); files without one hold a single document.
    """
    docs: list[tuple[str | None, list[list[ConllRow]]]] = []
    sentence: list[ConllRow] = []

    def flush():
        nonlocal sentence
        if sentence:
            if not docs:
                docs.append((None, []))
            docs[-1][1].append(sentence)
            sentence = []

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("newdoc"):
                    flush()
                    doc_id = body.partition("=")[2].strip() or None
                    docs.append((doc_id, []))
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise AlignmentError(f"expected 5 columns (index, form, lemma, head, deprel), got {len(cols)}", path, lineno)
            idx, form, lemma, head, deprel = cols
            try:
                if int(idx) != len(sentence) + 1:
                    raise AlignmentError(f"token index {idx} out of sequence", path, lineno)
                head_i = None if head == "_" else int(head)
            except ValueError:
                raise ParseError("non-integer index or head column", path, lineno) from None
            sentence.append(ConllRow(form, lemma, head_i, deprel))
    flush()
    return docs


def format_conll(doc_id: str | None, sentences: Sequence[Sequence[ConllRow]]) -> str:
    lines = [f"# newdoc id = {doc_id}" if doc_id is not None else "# newdoc"]
    for sent in sentences:
        for i, row in enumerate(sent, 1):
            head = "_" if row.head is None else row.head
            lines.append(f"{i}\t{row.form}\t{row.lemma}\t{head}\t{row.deprel}")
        lines.append("")
    return "\n".join(lines) + "\n"
