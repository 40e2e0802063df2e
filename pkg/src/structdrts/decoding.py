"""Legal-next-symbol masks for greedy decoding.

Both trackers also keep a length budget: a symbol is allowed only if the
sequence can still be completed within the maximum length afterwards, so a
constrained decode always ends well-formed.
"""

from __future__ import annotations

import torch

from .core import BOX_LABELS, CLOSE, DRU_SEP, RELATION_ARITY, Close, DruSep, OpenNode, RelationSym, VariableSym


def _need(frame) -> int:
    """Fewest symbols still needed to finish one open node."""
    category, arity, children = frame
    if category == "box":
        return 1
    return 2 * (arity - children) + 1


class SkeletonConstraint:
    """Tracks an open skeleton prefix.

    Grammar: the root is an (S)DRS; (S)DRS nodes dominate relation and
    variable nodes; a relation node dominates exactly its arity of (S)DRS
    nodes; a variable node dominates one (S)DRS node.  Variable labels are
    never reused.
    """

    def __init__(self, vocab, max_len: int):
        self.size = len(vocab)
        self.max_len = max(max_len, 2)
        self.kind_of: list[tuple[str, int] | None] = []
        box, variables, relations = [], [], {1: [], 2: []}
        self.close_id = None
        for i, sym in enumerate(vocab):
            if isinstance(sym, Close):
                self.close_id = i
                self.kind_of.append(("close", 0))
            elif isinstance(sym, OpenNode) and sym.label in BOX_LABELS:
                box.append(i)
                self.kind_of.append(("box", 0))
            elif isinstance(sym, OpenNode) and sym.label in RELATION_ARITY:
                relations[RELATION_ARITY[sym.label]].append(i)
                self.kind_of.append(("relation", RELATION_ARITY[sym.label]))
            elif isinstance(sym, OpenNode):
                variables.append(i)
                self.kind_of.append(("variable", 1))
            else:
                self.kind_of.append(None)
        self.box_ids = torch.tensor(box, dtype=torch.long)
        self.variable_ids = torch.tensor(variables, dtype=torch.long)
        self.relation_ids = {a: torch.tensor(ids, dtype=torch.long) for a, ids in relations.items()}
        self.stack: list[list] = []
        self.used: list[int] = []
        self.length = 0
        self.done = False
        self.valid = True

    def remaining_need(self) -> int:
        return sum(_need(f) for f in self.stack)

    def mask(self) -> torch.Tensor:
        allowed = torch.zeros(self.size, dtype=torch.bool)
        if self.done:
            return allowed
        left = self.max_len - self.length - 1  # after emitting the next symbol
        if not self.stack:
            if left >= 1:
                allowed[self.box_ids] = True
            return allowed
        category, arity, children = self.stack[-1]
        need = self.remaining_need()
        if category == "box":
            allowed[self.close_id] = True
            if left >= need + 3:
                allowed[self.variable_ids] = True
                if self.used:
                    allowed[torch.tensor(self.used)] = False
            for a, ids in self.relation_ids.items():
                if len(ids) and left >= need + 2 * a + 1:
                    allowed[ids] = True
        elif children < arity:
            allowed[self.box_ids] = True
        else:
            allowed[self.close_id] = True
        return allowed

    def push(self, idx: int) -> None:
        kind = self.kind_of[idx]
        self.length += 1
        if kind is None or self.done:
            self.valid = False
            return
        category, arity = kind
        if category == "close":
            if not self.stack:
                self.valid = False
                self.done = True
                return
            top = self.stack.pop()
            if top[0] != "box" and top[2] != top[1]:
                self.valid = False
            if not self.stack:
                self.done = True
            return
        if self.stack:
            parent = self.stack[-1]
            if (parent[0] == "box") == (category == "box") or (parent[0] != "box" and parent[2] >= parent[1]):
                self.valid = False
            parent[2] += 1
        elif category != "box":
            self.valid = False
        if category == "variable":
            if idx in self.used:
                self.valid = False
            self.used.append(idx)
        self.stack.append([category, arity, 0])

    @property
    def exhausted(self) -> bool:
        return self.length >= self.max_len


class DruConstraint:
    """Tracks DRU groups: relations first, then exactly their arity sum of variables, then a separator."""

    def __init__(self, vocab, n_groups: int, max_len: int, max_relations: int):
        self.size = len(vocab)
        self.n_groups = n_groups
        self.max_len = max(max_len, n_groups)
        self.max_relations = max_relations
        self.arity_of: dict[int, int] = {}
        rel, var = {1: [], 2: []}, []
        self.sep_id = None
        for i, sym in enumerate(vocab):
            if isinstance(sym, DruSep):
                self.sep_id = i
            elif isinstance(sym, RelationSym):
                rel.setdefault(sym.arity, []).append(i)
                self.arity_of[i] = sym.arity
            elif isinstance(sym, VariableSym):
                var.append(i)
        self.relation_ids = {a: torch.tensor(ids, dtype=torch.long) for a, ids in rel.items() if ids}
        self.variable_ids = torch.tensor(var, dtype=torch.long)
        self.group = 0
        self.n_rels = 0
        self.arity_sum = 0
        self.vars_left = None  # None while still in the relation phase
        self.length = 0
        self.valid = True
        self.done = n_groups == 0

    def _later(self) -> int:
        return self.n_groups - self.group - 1

    def mask(self) -> torch.Tensor:
        allowed = torch.zeros(self.size, dtype=torch.bool)
        if self.done:
            return allowed
        left = self.max_len - self.length - 1
        if self.vars_left is None:
            if self.n_rels == 0:
                allowed[self.sep_id] = True
            else:
                allowed[self.variable_ids] = True
            if self.n_rels < self.max_relations:
                for a, ids in self.relation_ids.items():
                    if left >= self.arity_sum + a + 1 + self._later():
                        allowed[ids] = True
        elif self.vars_left > 0:
            allowed[self.variable_ids] = True
        else:
            allowed[self.sep_id] = True
        return allowed

    def push(self, idx: int) -> None:
        self.length += 1
        if self.done:
            self.valid = False
            return
        if idx == self.sep_id:
            if self.vars_left not in (None, 0) or (self.vars_left is None and self.n_rels):
                self.valid = False
            self.group += 1
            self.n_rels = self.arity_sum = 0
            self.vars_left = None
            self.done = self.group >= self.n_groups
        elif idx in self.arity_of:
            if self.vars_left is not None:
                self.valid = False
            self.n_rels += 1
            self.arity_sum += self.arity_of[idx]
        else:
            if self.vars_left is None:
                self.vars_left = self.arity_sum
            self.vars_left -= 1
            if self.vars_left < 0:
                self.valid = False

    @property
    def exhausted(self) -> bool:
        return self.length >= self.max_len


# --------------------------------------------------------------------------
# best-effort repair of unconstrained output


def _skeleton_kind(sym) -> tuple[str, int] | None:
    if isinstance(sym, Close):
        return ("close", 0)
    if not isinstance(sym, OpenNode):
        return None
    if sym.label in BOX_LABELS:
        return ("box", 0)
    if sym.label in RELATION_ARITY:
        return ("relation", RELATION_ARITY[sym.label])
    return ("variable", 1)


def repair_skeleton(symbols) -> list:
    """Drop symbols the grammar forbids, then close what is still open.

    Missing children of relation and variable nodes are filled with empty DRS
    boxes.
    """
    out: list = []
    stack: list[list] = []
    used = set()
    for sym in symbols:
        kind = _skeleton_kind(sym)
        if kind is None or (out and not stack):
            continue
        category, arity = kind
        if not stack:
            if category == "box":
                out.append(sym)
                stack.append([category, arity, 0])
            continue
        top = stack[-1]
        if category == "close":
            if top[0] == "box" or top[2] == top[1]:
                out.append(sym)
                stack.pop()
            continue
        if top[0] == "box":
            legal = category != "box" and not (category == "variable" and sym.label in used)
        else:
            legal = category == "box" and top[2] < top[1]
        if legal:
            top[2] += 1
            if category == "variable":
                used.add(sym.label)
            out.append(sym)
            stack.append([category, arity, 0])
    if not out:
        return [OpenNode("DRS"), CLOSE]
    while stack:
        top = stack[-1]
        if top[0] != "box" and top[2] < top[1]:
            out += [OpenNode("DRS"), CLOSE]
            top[2] += 1
        else:
            out.append(CLOSE)
            stack.pop()
    return out


def repair_drus(symbols, n_groups: int) -> list:
    """Keep the first ``n_groups`` groups, each cut to relations whose arguments are present."""
    groups: list[list] = [[]]
    for sym in symbols:
        if isinstance(sym, DruSep):
            groups.append([])
        else:
            groups[-1].append(sym)
    out: list = []
    for i in range(n_groups):
        group = groups[i] if i < len(groups) else []
        rels = []
        j = 0
        while j < len(group) and isinstance(group[j], RelationSym):
            rels.append(group[j])
            j += 1
        variables = [s for s in group[j:] if isinstance(s, VariableSym)]
        kept, need = [], 0
        for r in rels:
            if need + r.arity > len(variables):
                break
            kept.append(r)
            need += r.arity
        out += kept + variables[:need] + [DRU_SEP]
    return out
