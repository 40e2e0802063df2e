"""DRTS data model, validation, linearization and clause rendering.

A tree is a skeleton of (S)DRS, relation and variable nodes.  Every (S)DRS
node owns a DRU: an unordered set of relation tuples such as
``That(x16,p4)``.  Trees are immutable; DRUs keep their tuples in the
canonical order (relation label, then rendered arguments), so ordinary
dataclass equality already treats DRUs as sets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

from .errors import AritySyntax, GroupCountMismatch, InvalidTree, ParseError, Unbalanced

SORTS = ("x", "e", "s", "t", "p", "k", "c")
SKELETON_VARIABLE_SORTS = ("p", "k")
BOX_LABELS = ("SDRS", "DRS")
RELATION_ARITY = {"IMP": 2, "OR": 2, "DUP": 2, "POS": 1, "NEC": 1, "NOT": 1}
RELATION_LABELS = tuple(RELATION_ARITY)

_INDEXED_RE = re.compile(r"^([xestpk])(\d+)$")
_CONST_PAYLOAD_RE = re.compile(r'^[^\s"(),{}]+$')
_LABEL_RE = re.compile(r'^[^\s"(),{}]+$')


@dataclass(frozen=True)
class VariableId:
    """A discourse referent: sort letter plus index, or a quoted constant."""

    sort: str
    index: int = 0
    payload: str | None = None

    def __post_init__(self):
        if self.sort not in SORTS:
            raise ValueError(f"unknown variable sort {self.sort!r}")
        if self.sort == "c":
            if self.payload is None or not _CONST_PAYLOAD_RE.match(self.payload):
                raise ValueError(f"bad constant payload {self.payload!r}")
            if self.index != 0:
                raise ValueError("constants carry a payload, not an index")
        else:
            if self.payload is not None:
                raise ValueError("only constants carry a payload")
            if not isinstance(self.index, int) or self.index < 0:
                raise ValueError(f"bad variable index {self.index!r}")

    def __str__(self):
        if self.sort == "c":
            return f'"{self.payload}"'
        return f"{self.sort}{self.index}"

    @classmethod
    def parse(cls, text: str) -> VariableId:
        m = _INDEXED_RE.match(text)
        if m:
            return cls(m.group(1), int(m.group(2)))
        if len(text) >= 3 and text[0] == text[-1] == '"':
            return cls("c", payload=text[1:-1])
        raise ValueError(f"not a variable: {text!r}")

    @classmethod
    def const(cls, payload: str) -> VariableId:
        return cls("c", payload=payload)


def is_variable_label(text: str) -> bool:
    return _INDEXED_RE.match(text) is not None


@dataclass(frozen=True)
class RelationTuple:
    relation: str
    args: tuple[VariableId, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not _LABEL_RE.match(self.relation):
            raise ValueError(f"bad relation label {self.relation!r}")

    @property
    def arity(self) -> int:
        return len(self.args)

    def sort_key(self):
        return (self.relation, [str(a) for a in self.args])

    def __str__(self):
        return f"{self.relation}({','.join(str(a) for a in self.args)})"

    @classmethod
    def parse(cls, text: str) -> RelationTuple:
        m = re.match(r"^([^\s\"(),{}]+)\(([^()]*)\)$", text)
        if not m:
            raise ValueError(f"not a relation tuple: {text!r}")
        args = m.group(2)
        return cls(m.group(1), tuple(VariableId.parse(a) for a in args.split(",")) if args else ())


@dataclass(frozen=True)
class Dru:
    """Unordered set of relation tuples, stored in canonical order."""

    tuples: tuple[RelationTuple, ...] = ()

    def __post_init__(self):
        canonical = tuple(sorted(set(self.tuples), key=RelationTuple.sort_key))
        object.__setattr__(self, "tuples", canonical)

    def __len__(self):
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)


@dataclass(frozen=True)
class SkeletonNode:
    """One skeleton node; ``label`` decides its kind.

    (S)DRS nodes always carry a DRU (empty by default).  Other kinds accept a
    DRU argument only so that malformed trees can be built and reported by
    :func:`validate_tree`.
    """

    label: str
    children: tuple[SkeletonNode, ...] = ()
    dru: Dru | None = None

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if self.label in BOX_LABELS and self.dru is None:
            object.__setattr__(self, "dru", Dru())

    @property
    def category(self) -> str:
        return node_category(self.label)

    @property
    def is_box(self) -> bool:
        return self.label in BOX_LABELS

    @property
    def variable(self) -> VariableId | None:
        return VariableId.parse(self.label) if is_variable_label(self.label) else None


def node_category(label: str) -> str:
    """Return ``box``, ``relation``, ``variable`` or ``unknown``."""
    if label in BOX_LABELS:
        return "box"
    if label in RELATION_ARITY:
        return "relation"
    if is_variable_label(label):
        return "variable"
    return "unknown"


Path = tuple[int, ...]


@dataclass(frozen=True)
class DrtsTree:
    root: SkeletonNode

    def walk(self) -> Iterator[tuple[Path, SkeletonNode]]:
        """Pre-order (top-down, depth-first) traversal with child-index paths."""
        stack: list[tuple[Path, SkeletonNode]] = [((), self.root)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for i in range(len(node.children) - 1, -1, -1):
                stack.append((path + (i,), node.children[i]))

    def nodes(self) -> list[SkeletonNode]:
        return [n for _, n in self.walk()]

    def boxes(self) -> list[SkeletonNode]:
        return [n for _, n in self.walk() if n.is_box]

    def node_count(self) -> int:
        return sum(1 for _ in self.walk())

    def depth(self) -> int:
        def d(node):
            return 1 + max((d(c) for c in node.children), default=0)

        return d(self.root)

    def tuples(self) -> list[RelationTuple]:
        return [t for box in self.boxes() for t in box.dru]

    def __str__(self):
        return format_tree(self)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    path: Path
    rule: str
    message: str

    def __str__(self):
        return f"/{'/'.join(map(str, self.path))} [{self.rule}] {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def __len__(self):
        return len(self.violations)


def validate_tree(tree: DrtsTree) -> ValidationReport:
    """Check every structural rule; violations come back in traversal order.

    Dangling p/k references inside DRU tuples are reported as warnings only.
    """
    report = ValidationReport()

    def bad(path, rule, msg):
        report.violations.append(Violation(path, rule, msg))

    if not tree.root.is_box:
        bad((), "root-kind", f"root must be SDRS or DRS, got {tree.root.label}")

    seen_vars: dict[str, Path] = {}
    referenced: list[tuple[Path, VariableId]] = []
    for path, node in tree.walk():
        cat = node.category
        if cat == "unknown":
            bad(path, "unknown-label", f"unknown skeleton label {node.label!r}")
        var = node.variable
        if var is not None and var.sort not in SKELETON_VARIABLE_SORTS:
            bad(path, "variable-sort", f"variable node {node.label} must be of sort p or k")
        if cat == "variable":
            if var.sort in SKELETON_VARIABLE_SORTS:
                if node.label in seen_vars:
                    bad(path, "duplicate-variable", f"{node.label} already defined at {seen_vars[node.label]}")
                else:
                    seen_vars[node.label] = path
            if node.dru is not None:
                bad(path, "dru-on-variable", f"variable node {node.label} carries a DRU")
            if len(node.children) != 1:
                bad(path, "variable-arity", f"variable node {node.label} has {len(node.children)} children")
            if any(not c.is_box for c in node.children):
                bad(path, "variable-child-kind", f"variable node {node.label} must dominate an (S)DRS")
        elif cat == "relation":
            if node.dru is not None:
                bad(path, "dru-on-relation", f"relation node {node.label} carries a DRU")
            want = RELATION_ARITY[node.label]
            if len(node.children) != want:
                bad(path, "relation-arity", f"{node.label} needs {want} children, has {len(node.children)}")
            if any(not c.is_box for c in node.children):
                bad(path, "relation-child-kind", f"children of {node.label} must be (S)DRS nodes")
        elif cat == "box":
            for i, child in enumerate(node.children):
                if child.is_box:
                    bad(path + (i,), "box-child-kind", "(S)DRS directly below an (S)DRS")
            for tup in node.dru:
                if tup.arity not in (1, 2):
                    bad(path, "tuple-arity", f"{tup} has {tup.arity} arguments")
                referenced.extend((path, a) for a in tup.args)

    for path, var in referenced:
        if var.sort in SKELETON_VARIABLE_SORTS and str(var) not in seen_vars:
            report.warnings.append(Violation(path, "dangling-reference", f"{var} has no skeleton node"))
    return report


def _require_valid(tree: DrtsTree) -> None:
    report = validate_tree(tree)
    if not report.ok:
        raise InvalidTree("; ".join(str(v) for v in report.violations))


# --------------------------------------------------------------------------
# symbols


@dataclass(frozen=True)
class OpenNode:
    label: str

    def __str__(self):
        return f"{self.label}("


@dataclass(frozen=True)
class Close:
    def __str__(self):
        return ")"


@dataclass(frozen=True)
class RelationSym:
    label: str
    arity: int

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class VariableSym:
    var: VariableId

    def __str__(self):
        return str(self.var)


@dataclass(frozen=True)
class DruSep:
    def __str__(self):
        return "|"


Symbol = Union[OpenNode, Close, RelationSym, VariableSym, DruSep]
SymbolSequence = tuple  # tuple[Symbol, ...]

CLOSE = Close()
DRU_SEP = DruSep()


def encode_symbol(sym: Symbol) -> str:
    """Unambiguous string form used for vocabulary files and checkpoints."""
    if isinstance(sym, OpenNode):
        return f"open:{sym.label}"
    if isinstance(sym, Close):
        return "close"
    if isinstance(sym, RelationSym):
        return f"rel:{sym.arity}:{sym.label}"
    if isinstance(sym, VariableSym):
        return f"var:{sym.var}"
    if isinstance(sym, DruSep):
        return "sep"
    raise TypeError(f"not a symbol: {sym!r}")


def decode_symbol(text: str) -> Symbol:
    if text == "close":
        return CLOSE
    if text == "sep":
        return DRU_SEP
    kind, _, rest = text.partition(":")
    if kind == "open":
        return OpenNode(rest)
    if kind == "rel":
        arity, _, label = rest.partition(":")
        return RelationSym(label, int(arity))
    if kind == "var":
        return VariableSym(VariableId.parse(rest))
    raise ValueError(f"not an encoded symbol: {text!r}")


# --------------------------------------------------------------------------
# linearization


def linearize_skeleton(tree: DrtsTree) -> SymbolSequence:
    """Top-down depth-first bracketing of the skeleton; DRUs are left out."""
    _require_valid(tree)
    out: list[Symbol] = []

    def visit(node):
        out.append(OpenNode(node.label))
        for child in node.children:
            visit(child)
        out.append(CLOSE)

    visit(tree.root)
    return tuple(out)


def linearize_drus(tree: DrtsTree) -> SymbolSequence:
    """One group per (S)DRS in skeleton order: relations, then their variables, then a separator."""
    _require_valid(tree)
    out: list[Symbol] = []
    for box in tree.boxes():
        tuples = box.dru.tuples
        out.extend(RelationSym(t.relation, t.arity) for t in tuples)
        out.extend(VariableSym(a) for t in tuples for a in t.args)
        out.append(DRU_SEP)
    return tuple(out)


def linearize(tree: DrtsTree) -> tuple[SymbolSequence, SymbolSequence]:
    return linearize_skeleton(tree), linearize_drus(tree)


def parse_skeleton(skel: Sequence[Symbol]) -> SkeletonNode:
    """Rebuild the bare skeleton (empty DRUs) from a bracket sequence."""
    if not skel or not isinstance(skel[0], OpenNode):
        raise Unbalanced("skeleton sequence must start with an open-node symbol")
    stack: list[tuple[str, list]] = []
    root = None
    for i, sym in enumerate(skel):
        if root is not None:
            raise Unbalanced(f"symbol {sym} after the root was closed (position {i})")
        if isinstance(sym, OpenNode):
            stack.append((sym.label, []))
        elif isinstance(sym, Close):
            if not stack:
                raise Unbalanced(f"unmatched close at position {i}")
            label, kids = stack.pop()
            node = SkeletonNode(label, tuple(kids))
            if stack:
                stack[-1][1].append(node)
            else:
                root = node
        else:
            raise Unbalanced(f"unexpected symbol {sym} in skeleton sequence")
    if root is None:
        raise Unbalanced(f"{len(stack)} node(s) left open")
    return root


def split_dru_groups(drus: Sequence[Symbol]) -> list[list[Symbol]]:
    groups: list[list[Symbol]] = []
    current: list[Symbol] = []
    for sym in drus:
        if isinstance(sym, DruSep):
            groups.append(current)
            current = []
        else:
            current.append(sym)
    if current:
        raise GroupCountMismatch("DRU sequence ends with an unterminated group")
    return groups


def parse_dru_group(group: Sequence[Symbol]) -> Dru:
    rels: list[RelationSym] = []
    i = 0
    while i < len(group) and isinstance(group[i], RelationSym):
        rels.append(group[i])
        i += 1
    variables = group[i:]
    for sym in variables:
        if not isinstance(sym, VariableSym):
            raise AritySyntax(f"unexpected symbol {sym} in the variable part of a DRU group")
    need = sum(r.arity for r in rels)
    if need != len(variables):
        raise AritySyntax(f"relations take {need} variables, group has {len(variables)}")
    tuples = []
    pos = 0
    for r in rels:
        tuples.append(RelationTuple(r.label, tuple(v.var for v in variables[pos : pos + r.arity])))
        pos += r.arity
    return Dru(tuple(tuples))


def delinearize(skel: Sequence[Symbol], drus: Sequence[Symbol]) -> DrtsTree:
    """Inverse of :func:`linearize`."""
    bare = parse_skeleton(skel)
    groups = split_dru_groups(drus)
    n_boxes = sum(1 for s in skel if isinstance(s, OpenNode) and s.label in BOX_LABELS)
    if len(groups) != n_boxes:
        raise GroupCountMismatch(f"{len(groups)} DRU groups for {n_boxes} (S)DRS nodes")
    it = iter(parse_dru_group(g) for g in groups)

    def attach(node):
        # pre-order: the box takes its DRU before its descendants do
        dru = next(it) if node.is_box else None
        return SkeletonNode(node.label, tuple(attach(c) for c in node.children), dru)

    return DrtsTree(attach(bare))


# --------------------------------------------------------------------------
# clause format

Clause = tuple  # tuple[str, ...]


def to_clause_format(tree: DrtsTree) -> tuple[Clause, ...]:
    """Flatten a tree into clauses with synthetic box variables b0, b1, ...

    A tuple r(v1..vn) in the DRU of box bi gives ``(bi, r, v1, .., vn)``; a
    relation or variable node below box bi gives ``(bi, label, child boxes)``.
    """
    _require_valid(tree)
    box_ids: dict[int, str] = {}
    for node in tree.boxes():
        box_ids[id(node)] = f"b{len(box_ids)}"
    clauses: list[Clause] = []
    for node in tree.boxes():
        bid = box_ids[id(node)]
        for t in node.dru:
            clauses.append((bid, t.relation, *(str(a) for a in t.args)))
        for child in node.children:
            clauses.append((bid, child.label, *(box_ids[id(c)] for c in child.children)))
    return tuple(clauses)


def format_clauses(clauses: Iterable[Clause]) -> str:
    return "".join(" ".join(c) + "\n" for c in clauses)


def parse_clauses(text: str, path=None) -> list[list[Clause]]:
    """Parse clause text; blank lines separate documents, ``%`` starts a comment."""
    docs: list[list[Clause]] = []
    current: list[Clause] = []
    for line in text.splitlines():
        line = line.split("%", 1)[0].strip()
        if not line:
            if current:
                docs.append(current)
                current = []
            continue
        current.append(tuple(line.split()))
    if current:
        docs.append(current)
    return docs


# --------------------------------------------------------------------------
# bracketed text format: SDRS( {} k1( DRS( {letter(x4) That(x16,p4)} ) ) )

_TUPLE_RE = re.compile(r'([^\s"(),{}]+)\(((?:[^()"]|"[^"]*")*)\)')
_OPEN_RE = re.compile(r'([^\s"(),{}]+)\(')


def format_tree(tree: DrtsTree) -> str:
    parts: list[str] = []

    def visit(node):
        parts.append(f"{node.label}(")
        if node.dru is not None:
            parts.append("{" + " ".join(str(t) for t in node.dru) + "}")
        for child in node.children:
            visit(child)
        parts.append(")")

    visit(tree.root)
    return " ".join(parts)


def parse_tree(text: str) -> DrtsTree:
    """Parse one tree in bracketed text form."""
    stack: list[list] = []  # [label, children, dru]
    root = None
    pos = 0
    in_dru: list[RelationTuple] | None = None
    text = text.strip()
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        if in_dru is not None:
            if text[pos] == "}":
                if not stack or stack[-1][2] is not None:
                    raise ParseError(f"misplaced DRU at column {pos}")
                stack[-1][2] = Dru(tuple(in_dru))
                in_dru = None
                pos += 1
                continue
            m = _TUPLE_RE.match(text, pos)
            if not m:
                raise ParseError(f"bad relation tuple at column {pos}")
            try:
                in_dru.append(RelationTuple.parse(m.group(0)))
            except ValueError as exc:
                raise ParseError(str(exc)) from None
            pos = m.end()
            continue
        if root is not None:
            raise ParseError(f"trailing text after tree at column {pos}")
        ch = text[pos]
        if ch == "{":
            if not stack:
                raise ParseError("DRU outside of a node")
            in_dru = []
            pos += 1
        elif ch == ")":
            if not stack:
                raise ParseError(f"unmatched ')' at column {pos}")
            label, kids, dru = stack.pop()
            node = SkeletonNode(label, tuple(kids), dru)
            if stack:
                stack[-1][1].append(node)
            else:
                root = node
            pos += 1
        else:
            m = _OPEN_RE.match(text, pos)
            if not m:
                raise ParseError(f"unexpected text at column {pos}: {text[pos:pos + 20]!r}")
            stack.append([m.group(1), [], None])
            pos = m.end()
    if in_dru is not None or root is None:
        raise ParseError("unterminated tree")
    return DrtsTree(root)


def read_trees(path) -> list[DrtsTree]:
    trees = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                trees.append(parse_tree(line))
            except ParseError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return trees


def write_trees(trees: Iterable[DrtsTree], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trees:
            fh.write(format_tree(t) + "\n")
