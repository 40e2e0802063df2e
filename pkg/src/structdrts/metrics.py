"""Evaluation: BLEU, skeleton bracket F1, tuple F1 and clause matching.

Every score is a :class:`MatchResult` built from counts, so corpus-level
figures are micro-averages obtained by adding per-document results.
"""

from __future__ import annotations

import itertools
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

from .core import DrtsTree, linearize, node_category, to_clause_format
from .errors import EmptyCorpus


@dataclass(frozen=True)
class MatchResult:
    matched: int
    predicted: int
    gold: int
    mapping: dict | None = field(default=None, compare=False)

    @property
    def precision(self) -> float:
        if self.predicted == 0:
            return 1.0 if self.gold == 0 else 0.0
        return self.matched / self.predicted

    @property
    def recall(self) -> float:
        if self.gold == 0:
            return 1.0 if self.predicted == 0 else 0.0
        return self.matched / self.gold

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def __add__(self, other: MatchResult) -> MatchResult:
        return MatchResult(self.matched + other.matched, self.predicted + other.predicted, self.gold + other.gold)

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matched": self.matched,
            "predicted": self.predicted,
            "gold": self.gold,
        }


EMPTY = MatchResult(0, 0, 0)


def _count_match(pred: Counter, gold: Counter) -> MatchResult:
    return MatchResult(sum((pred & gold).values()), sum(pred.values()), sum(gold.values()))


# --------------------------------------------------------------------------
# BLEU

BLEU_EPSILON = 0.1


def _ngrams(seq: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu(candidates: Sequence[Sequence[Hashable]], references: Sequence[Sequence[Hashable]], max_order: int = 4) -> float:
    """Corpus BLEU with uniform weights and brevity penalty, one reference per candidate.

    Clipped n-gram matches and candidate n-gram totals are summed over the
    corpus.  Orders for which the candidate corpus has no n-gram at all are
    left out of the geometric mean.  If no unigram matches, the score is 0.
    Otherwise an order with zero matches gets precision
    ``BLEU_EPSILON / total`` (0.1 / total).  BP = exp(1 - r/c) when c <= r.
    Tokens are compared as given (symbols or strings); nothing is re-tokenized.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates for {len(references)} references")
    if not candidates:
        raise EmptyCorpus("BLEU over an empty corpus")
    matches = [0] * max_order
    totals = [0] * max_order
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = list(cand), list(ref)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            c = _ngrams(cand, n)
            matches[n - 1] += sum((c & _ngrams(ref, n)).values())
            totals[n - 1] += sum(c.values())
    if cand_len == 0:
        return 1.0 if ref_len == 0 else 0.0
    if matches[0] == 0:
        return 0.0
    logs = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        logs.append(math.log((m if m > 0 else BLEU_EPSILON) / t))
    geo = math.exp(sum(logs) / len(logs))
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return geo * bp


def tree_sequence(tree: DrtsTree) -> tuple:
    skel, drus = linearize(tree)
    return skel + drus


def tree_bleu(preds: Sequence[DrtsTree], golds: Sequence[DrtsTree]) -> float:
    """BLEU over the full output symbol sequences (skeleton then DRUs)."""
    return bleu([tree_sequence(t) for t in preds], [tree_sequence(t) for t in golds])


# --------------------------------------------------------------------------
# skeleton brackets

KIND_BUCKETS = ("box", "relation", "variable")


def skeleton_spans(tree: DrtsTree) -> list[tuple[str, str, int, int]]:
    """(bucket, label, first leaf, end leaf) for every skeleton node.

    Leaves are the DRUs, numbered in skeleton order; a node spans the DRUs of
    its subtree.
    """
    spans = []
    counter = 0

    def visit(node):
        nonlocal counter
        start = counter
        if node.is_box:
            counter += 1
        for c in node.children:
            visit(c)
        spans.append((node_category(node.label), node.label, start, counter))

    visit(tree.root)
    return spans


@dataclass(frozen=True)
class SkeletonScore:
    overall: MatchResult
    by_kind: dict

    def __add__(self, other):
        return SkeletonScore(
            self.overall + other.overall,
            {k: self.by_kind.get(k, EMPTY) + other.by_kind.get(k, EMPTY) for k in KIND_BUCKETS},
        )


def skeleton_f1(pred: DrtsTree, gold: DrtsTree) -> SkeletonScore:
    """Labeled bracket scoring of skeleton nodes with DRUs as the words."""
    p = Counter(skeleton_spans(pred))
    g = Counter(skeleton_spans(gold))
    by_kind = {
        k: _count_match(
            Counter({s: c for s, c in p.items() if s[0] == k}),
            Counter({s: c for s, c in g.items() if s[0] == k}),
        )
        for k in KIND_BUCKETS
    }
    return SkeletonScore(_count_match(p, g), by_kind)


# --------------------------------------------------------------------------
# tuples


def _tuples(tree: DrtsTree) -> Counter:
    return Counter((t.relation, tuple(str(a) for a in t.args)) for t in tree.tuples())


def tuple_f1(pred: DrtsTree, gold: DrtsTree) -> MatchResult:
    """Exact (relation, ordered arguments) matches pooled over all DRUs."""
    return _count_match(_tuples(pred), _tuples(gold))


BREAKDOWN_KEYS = ("rel_novar", "rel", "unary", "binary")


def relation_breakdown(pred: DrtsTree, gold: DrtsTree) -> dict[str, MatchResult]:
    """Relation-only, exact, unary-only and binary-only tuple scores."""
    p, g = _tuples(pred), _tuples(gold)

    def labels(c):
        out = Counter()
        for (rel, _), n in c.items():
            out[rel] += n
        return out

    def arity(c, k):
        return Counter({t: n for t, n in c.items() if len(t[1]) == k})

    return {
        "rel_novar": _count_match(labels(p), labels(g)),
        "rel": _count_match(p, g),
        "unary": _count_match(arity(p, 1), arity(g, 1)),
        "binary": _count_match(arity(p, 2), arity(g, 2)),
    }


# --------------------------------------------------------------------------
# clause matching

_VAR_RE = re.compile(r"^[xestpkb]\d+$")


def is_clause_variable(term: str) -> bool:
    return _VAR_RE.match(term) is not None


class _ClauseIndex:
    """Pre-computed view of a clause-set pair for fast mapping scores."""

    def __init__(self, pred, gold):
        self.pred = sorted(set(map(tuple, pred)))
        self.gold = set(map(tuple, gold))
        self.pred_vars = sorted({t for c in self.pred for t in c if is_clause_variable(t)})
        self.gold_vars = sorted({t for c in self.gold for t in c if is_clause_variable(t)})
        self.var_clauses: dict[str, list[int]] = {v: [] for v in self.pred_vars}
        for i, c in enumerate(self.pred):
            for v in sorted({t for t in c if is_clause_variable(t)}):
                self.var_clauses[v].append(i)

    def clause_hit(self, i: int, mapping: dict) -> bool:
        image = []
        for t in self.pred[i]:
            if is_clause_variable(t):
                m = mapping.get(t)
                if m is None:
                    return False
                image.append(m)
            else:
                image.append(t)
        return tuple(image) in self.gold

    def score(self, mapping: dict) -> int:
        return sum(self.clause_hit(i, mapping) for i in range(len(self.pred)))

    def result(self, matched: int, mapping: dict) -> MatchResult:
        return MatchResult(matched, len(self.pred), len(self.gold), dict(mapping))


def _degree(clauses, v):
    return sum(1 for c in clauses for t in c if t == v)


def _sort_of(v):
    return v[0]


def clause_match_bruteforce(pred: Iterable[tuple], gold: Iterable[tuple], max_vars: int = 8) -> MatchResult:
    """Exact optimum over all injective variable alignments (small inputs only)."""
    idx = _ClauseIndex(pred, gold)
    np_, ng = len(idx.pred_vars), len(idx.gold_vars)
    if max(np_, ng) > max_vars:
        raise ValueError(f"brute force limited to {max_vars} variables per side ({np_}/{ng} given)")
    best, best_map = -1, {}
    # leaving a variable unmapped never helps, so full injections suffice
    if np_ <= ng:
        for image in itertools.permutations(idx.gold_vars, np_):
            mapping = dict(zip(idx.pred_vars, image))
            s = idx.score(mapping)
            if s > best:
                best, best_map = s, mapping
    else:
        for image in itertools.permutations(idx.pred_vars, ng):
            mapping = dict(zip(image, idx.gold_vars))
            s = idx.score(mapping)
            if s > best:
                best, best_map = s, mapping
    return idx.result(max(best, 0), best_map)


def identity_mapping(idx: _ClauseIndex) -> dict:
    gold_vars = set(idx.gold_vars)
    return {v: v for v in idx.pred_vars if v in gold_vars}


def smart_mapping(idx: _ClauseIndex) -> dict:
    """Greedy seed: pair variables of equal sort, preferring shared clause context, then close degree."""
    votes: Counter = Counter()
    by_shape: dict = {}
    for g in idx.gold:
        shape = tuple(None if is_clause_variable(t) else t for t in g)
        by_shape.setdefault(shape, []).append(g)
    for c in idx.pred:
        shape = tuple(None if is_clause_variable(t) else t for t in c)
        for g in by_shape.get(shape, ()):
            for a, b in zip(c, g):
                if is_clause_variable(a) and _sort_of(a) == _sort_of(b):
                    votes[a, b] += 1
    pdeg = {v: _degree(idx.pred, v) for v in idx.pred_vars}
    gdeg = {v: _degree(idx.gold, v) for v in idx.gold_vars}
    pairs = sorted(
        ((a, b) for a in idx.pred_vars for b in idx.gold_vars if _sort_of(a) == _sort_of(b)),
        key=lambda ab: (-votes[ab], abs(pdeg[ab[0]] - gdeg[ab[1]]), ab),
    )
    mapping: dict = {}
    used = set()
    for a, b in pairs:
        if a not in mapping and b not in used:
            mapping[a] = b
            used.add(b)
    return mapping


def random_mapping(idx: _ClauseIndex, rng: random.Random) -> dict:
    gold = list(idx.gold_vars)
    rng.shuffle(gold)
    return dict(zip(idx.pred_vars, gold))


def _hill_climb(idx: _ClauseIndex, mapping: dict, max_iters: int) -> tuple[int, dict]:
    mapping = dict(mapping)
    current = idx.score(mapping)
    for _ in range(max_iters):
        inverse = {g: p for p, g in mapping.items()}
        best_gain, best_move = 0, None
        for v in idx.pred_vars:
            old = mapping.get(v)
            for g in [*idx.gold_vars, None]:
                if g == old:
                    continue
                u = inverse.get(g) if g is not None else None
                touched = set(idx.var_clauses[v])
                if u is not None:
                    touched |= set(idx.var_clauses[u])
                before = sum(idx.clause_hit(i, mapping) for i in touched)
                trial = dict(mapping)
                trial[v] = g
                if u is not None:
                    trial[u] = old  # swap
                after = sum(idx.clause_hit(i, trial) for i in touched)
                if after - before > best_gain:
                    best_gain, best_move = after - before, trial
        if best_move is None:
            break
        mapping = {k: val for k, val in best_move.items() if val is not None}
        current += best_gain
    return current, mapping


def clause_match_f1(
    pred: Iterable[tuple],
    gold: Iterable[tuple],
    restarts: int = 10,
    max_iters: int = 1000,
    seed: int = 0,
) -> MatchResult:
    """Best clause overlap found by restarted hill climbing over variable alignments.

    Seeds: the name-identity alignment (if names overlap), a sort/degree
    greedy alignment, then random ones until ``restarts`` climbs have run.
    Moves reassign one variable to a free gold variable, unmap it, or swap
    two images.  Terms matching ``[xestpkb]<digits>`` are variables; all
    others (relation labels, quoted constants, node labels) must match
    literally.
    """
    idx = _ClauseIndex(pred, gold)
    if not idx.pred and not idx.gold:
        return MatchResult(0, 0, 0, {})
    if not idx.pred or not idx.gold:
        return idx.result(0, {})
    rng = random.Random(seed)
    seeds = []
    ident = identity_mapping(idx)
    if ident:
        seeds.append(ident)
    seeds.append(smart_mapping(idx))
    while len(seeds) < max(restarts, 1):
        seeds.append(random_mapping(idx, rng))
    best, best_map = -1, {}
    for s in seeds:
        score, mapping = _hill_climb(idx, s, max_iters)
        if score > best:
            best, best_map = score, mapping
        if best == min(len(idx.pred), len(idx.gold)):
            break
    return idx.result(best, best_map)


def identity_score(pred: Iterable[tuple], gold: Iterable[tuple]) -> MatchResult:
    """Clause overlap when variables are aligned by name only."""
    idx = _ClauseIndex(pred, gold)
    return idx.result(idx.score(identity_mapping(idx)), identity_mapping(idx))


def tree_clause_f1(pred: DrtsTree, gold: DrtsTree, **kw) -> MatchResult:
    return clause_match_f1(to_clause_format(pred), to_clause_format(gold), **kw)


# --------------------------------------------------------------------------
# corpus-level report


def evaluate_trees(preds: Sequence[DrtsTree], golds: Sequence[DrtsTree], metrics=("bleu", "skeleton", "tuple", "clause"), per_document=False, **clause_kw) -> dict:
    """Micro-averaged scores with fixed field names."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predicted trees for {len(golds)} gold trees")
    if not golds:
        raise EmptyCorpus("nothing to evaluate")
    report: dict = {"documents": len(golds)}
    docs = [{"index": i} for i in range(len(golds))]
    if "bleu" in metrics:
        report["bleu"] = tree_bleu(preds, golds)
    if "skeleton" in metrics:
        scores = [skeleton_f1(p, g) for p, g in zip(preds, golds)]
        total = scores[0]
        for s in scores[1:]:
            total = total + s
        report["skeleton"] = total.overall.as_dict()
        report["skeleton_by_kind"] = {k: total.by_kind[k].as_dict() for k in KIND_BUCKETS}
        for d, s in zip(docs, scores):
            d["skeleton_f1"] = s.overall.f1
    if "tuple" in metrics:
        parts = [relation_breakdown(p, g) for p, g in zip(preds, golds)]
        report["tuple"] = sum((b["rel"] for b in parts), EMPTY).as_dict()
        report["relation_breakdown"] = {k: sum((b[k] for b in parts), EMPTY).as_dict() for k in BREAKDOWN_KEYS}
        for d, b in zip(docs, parts):
            d["tuple_f1"] = b["rel"].f1
    if "clause" in metrics:
        results = [tree_clause_f1(p, g, **clause_kw) for p, g in zip(preds, golds)]
        report["clause"] = sum(results, EMPTY).as_dict()
        for d, r in zip(docs, results):
            d["clause_f1"] = r.f1
    if per_document:
        report["per_document"] = docs
    return report


def evaluate_clauses(preds: Sequence[Sequence[tuple]], golds: Sequence[Sequence[tuple]], **clause_kw) -> dict:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predicted clause sets for {len(golds)} gold sets")
    results = [clause_match_f1(p, g, **clause_kw) for p, g in zip(preds, golds)]
    return {"documents": len(golds), "clause": sum(results, EMPTY).as_dict()}
