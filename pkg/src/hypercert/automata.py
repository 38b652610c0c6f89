"""Nondeterministic Buechi automata over tuple-letters.

Edges carry symbolic guards (boolean formulas over indexed atoms) instead of
an expanded letter alphabet: with p traces over k propositions the alphabet
has 2^(p*k) letters, while guards keep the product construction linear in the
number of edges.

``ltl_to_nba`` uses the classic node-expansion tableau: it produces a
generalized Buechi automaton with one acceptance set per Until subformula and
degeneralizes it with the usual round-robin counter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CapacityError, ParseError, ValidationError
from .hyperltl import (
    And,
    Atom,
    Finally_,
    Globally,
    Next,
    Not,
    Or,
    Qf,
    Release,
    TrueF,
    TupleLetter,
    Until,
    eval_guard,
    is_boolean,
    nnf,
    parse_qf,
    trace_indices,
)

DEFAULT_STATE_CAP = 1 << 16


@dataclass(frozen=True)
class Edge:
    src: str
    guard: Qf
    dst: str


@dataclass(frozen=True)
class NBA:
    """Buechi automaton; a word is accepted when some run visits an
    accepting state infinitely often."""

    states: tuple[str, ...]
    initial: str
    accepting: frozenset
    edges: tuple[Edge, ...]
    p: int

    def validate(self) -> "NBA":
        declared = set(self.states)
        if self.initial not in declared:
            raise ValidationError(f"initial state {self.initial!r} is not declared")
        if not self.accepting <= declared:
            raise ValidationError("accepting set contains undeclared states")
        for e in self.edges:
            if e.src not in declared or e.dst not in declared:
                raise ValidationError(f"edge {e.src!r}->{e.dst!r} uses an undeclared state")
            if not is_boolean(e.guard):
                raise ValidationError("edge guards must be temporal-operator-free")
            bad = {i for i in trace_indices(e.guard) if i > self.p}
            if bad:
                raise ValidationError(f"guard references trace index {max(bad)} but p={self.p}")
        return self

    def out_edges(self, q: str) -> list[Edge]:
        return [e for e in self.edges if e.src == q]

    def enabled(self, q: str, letter: TupleLetter) -> frozenset:
        return frozenset(e.dst for e in self.edges if e.src == q and eval_guard(e.guard, letter))


def enabled_edges(a: NBA, q: str, letter: TupleLetter) -> frozenset:
    if q not in a.states:
        raise ValidationError(f"state {q!r} is not declared")
    return a.enabled(q, letter)


@dataclass(frozen=True)
class GBA:
    """Generalized Buechi automaton: accepting runs meet every set in
    ``acc_sets`` infinitely often."""

    states: tuple[str, ...]
    initial: str
    acc_sets: tuple[frozenset, ...]
    edges: tuple[Edge, ...]
    p: int

    def enabled(self, q: str, letter: TupleLetter) -> frozenset:
        return frozenset(e.dst for e in self.edges if e.src == q and eval_guard(e.guard, letter))


# ---------------------------------------------------------------------------
# Lasso acceptance
# ---------------------------------------------------------------------------


def _step_set(aut, current: frozenset, letter: TupleLetter) -> frozenset:
    out = set()
    for q in current:
        out |= aut.enabled(q, letter)
    return frozenset(out)


def _cycle_sccs(aut, start: frozenset, cycle: Sequence[TupleLetter]):
    """SCCs of the cycle-product graph over (state, cycle position),
    restricted to nodes reachable from start x {0}.  Yields (scc, has_edge)."""
    length = len(cycle)

    def succs(node):
        q, i = node
        return [(q2, (i + 1) % length) for q2 in aut.enabled(q, cycle[i])]

    roots = [(q, 0) for q in start]
    reachable = set(roots)
    stack = list(roots)
    while stack:
        node = stack.pop()
        for nxt in succs(node):
            if nxt not in reachable:
                reachable.add(nxt)
                stack.append(nxt)

    # Iterative Tarjan over the reachable subgraph.
    index = {}
    low = {}
    onstack = {}
    order = []
    counter = [0]
    for root in sorted(reachable):
        if root in index:
            continue
        work = [(root, iter(succs(root)))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        order.append(root)
        onstack[root] = True
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in reachable:
                    continue
                if nxt not in index:
                    index[nxt] = low[nxt] = counter[0]
                    counter[0] += 1
                    order.append(nxt)
                    onstack[nxt] = True
                    work.append((nxt, iter(succs(nxt))))
                    advanced = True
                    break
                if onstack.get(nxt):
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                scc = set()
                while True:
                    member = order.pop()
                    onstack[member] = False
                    scc.add(member)
                    if member == node:
                        break
                has_edge = any(n2 in scc for n in scc for n2 in succs(n))
                yield scc, has_edge


def nba_accepts_lasso(a: NBA, prefix: Sequence[TupleLetter], cycle: Sequence[TupleLetter]) -> bool:
    if not cycle:
        raise ValidationError("lasso cycle must be nonempty")
    current = frozenset([a.initial])
    for letter in prefix:
        current = _step_set(a, current, letter)
        if not current:
            return False
    for scc, has_edge in _cycle_sccs(a, current, cycle):
        if has_edge and any(q in a.accepting for q, _ in scc):
            return True
    return False


def gba_accepts_lasso(a: GBA, prefix: Sequence[TupleLetter], cycle: Sequence[TupleLetter]) -> bool:
    if not cycle:
        raise ValidationError("lasso cycle must be nonempty")
    current = frozenset([a.initial])
    for letter in prefix:
        current = _step_set(a, current, letter)
        if not current:
            return False
    if not a.acc_sets:
        return any(has_edge for _, has_edge in _cycle_sccs(a, current, cycle))
    for scc, has_edge in _cycle_sccs(a, current, cycle):
        if has_edge and all(
            any(q in acc for q, _ in scc) for acc in a.acc_sets
        ):
            return True
    return False


# ---------------------------------------------------------------------------
# Tableau construction
# ---------------------------------------------------------------------------


def _core_form(f: Qf) -> Qf:
    """NNF with F/G expanded into Until/Release."""
    f = nnf(f)

    def rewrite(g: Qf) -> Qf:
        if isinstance(g, (TrueF, Atom)):
            return g
        if isinstance(g, Not):
            return g  # NNF: negation only on atoms / true
        if isinstance(g, And):
            return And(rewrite(g.left), rewrite(g.right))
        if isinstance(g, Or):
            return Or(rewrite(g.left), rewrite(g.right))
        if isinstance(g, Next):
            return Next(rewrite(g.arg))
        if isinstance(g, Until):
            return Until(rewrite(g.left), rewrite(g.right))
        if isinstance(g, Release):
            return Release(rewrite(g.left), rewrite(g.right))
        if isinstance(g, Finally_):
            return Until(TrueF(), rewrite(g.arg))
        if isinstance(g, Globally):
            return Release(Not(TrueF()), rewrite(g.arg))
        raise TypeError(f"not a formula node: {g!r}")

    return rewrite(f)


_FALSE = Not(TrueF())


def _is_literal(f: Qf) -> bool:
    return isinstance(f, (TrueF, Atom)) or (
        isinstance(f, Not) and isinstance(f.arg, (Atom, TrueF))
    )


def _neg_literal(f: Qf) -> Qf:
    return f.arg if isinstance(f, Not) else Not(f)


class _Node:
    __slots__ = ("incoming", "new", "old", "next")

    def __init__(self, incoming, new, old, next_):
        self.incoming = set(incoming)
        self.new = list(new)
        self.old = set(old)
        self.next = set(next_)


def _expand_graph(phi: Qf, state_cap: int):
    """Node expansion; returns (nodes, init_marker) where each node is a
    finalized (old, next, incoming) triple."""
    init_marker = "__init__"
    finalized: dict[tuple, dict] = {}
    pending = [
        _Node(incoming={init_marker}, new=[phi], old=(), next_=()),
    ]
    while pending:
        node = pending.pop()
        if not node.new:
            key = (frozenset(node.old), frozenset(node.next))
            hit = finalized.get(key)
            if hit is not None:
                hit["incoming"] |= node.incoming
                continue
            if len(finalized) >= state_cap:
                raise CapacityError(f"automaton construction exceeded {state_cap} states")
            name = f"n{len(finalized)}"
            finalized[key] = {"name": name, "incoming": set(node.incoming)}
            pending.append(_Node(incoming={name}, new=sorted(node.next, key=repr),
                                 old=(), next_=()))
            continue
        eta = node.new.pop(0)
        if _is_literal(eta):
            if eta == _FALSE or _neg_literal(eta) in node.old:
                continue  # contradictory node: drop
            node.old.add(eta)
            pending.append(node)
        elif isinstance(eta, And):
            for part in (eta.left, eta.right):
                if part not in node.old and part not in node.new:
                    node.new.append(part)
            node.old.add(eta)
            pending.append(node)
        elif isinstance(eta, Next):
            node.old.add(eta)
            node.next.add(eta.arg)
            pending.append(node)
        elif isinstance(eta, (Or, Until, Release)):
            if isinstance(eta, Or):
                first_new, first_next = [eta.left], []
                second_new = [eta.right]
            elif isinstance(eta, Until):
                first_new, first_next = [eta.left], [eta]
                second_new = [eta.right]
            else:  # Release: (a R b) = (b and a) or (b and X(a R b))
                first_new, first_next = [eta.right], [eta]
                second_new = [eta.left, eta.right]
            branch1 = _Node(node.incoming,
                            node.new + [g for g in first_new if g not in node.old],
                            node.old | {eta}, node.next | set(first_next))
            branch2 = _Node(node.incoming,
                            node.new + [g for g in second_new if g not in node.old],
                            node.old | {eta}, node.next)
            pending.append(branch1)
            pending.append(branch2)
        else:
            raise TypeError(f"unexpected formula node {eta!r}")
    return finalized, init_marker


def _subformulas(f: Qf):
    yield f
    if isinstance(f, (Not, Next, Finally_, Globally)):
        yield from _subformulas(f.arg)
    elif isinstance(f, (And, Or, Until, Release)):
        yield from _subformulas(f.left)
        yield from _subformulas(f.right)


def _guard_of(old: frozenset) -> Qf:
    literals = sorted((g for g in old if _is_literal(g) and not isinstance(g, TrueF)
                       and g != _FALSE), key=repr)
    guard: Qf = TrueF()
    for lit in literals:
        guard = lit if isinstance(guard, TrueF) else And(guard, lit)
    return guard


def ltl_to_gba(f: Qf, p: int, state_cap: int = DEFAULT_STATE_CAP) -> GBA:
    """Tableau translation to a generalized Buechi automaton."""
    bad = {i for i in trace_indices(f) if i > p or i < 1}
    if bad:
        raise ValidationError(f"formula uses trace index {max(bad)} but p={p}")
    phi = _core_form(f)
    finalized, init_marker = _expand_graph(phi, state_cap)

    by_name = {}
    for (old, next_), info in finalized.items():
        by_name[info["name"]] = (old, next_, info["incoming"])

    order = sorted(by_name, key=lambda s: int(s[1:]))  # creation order
    rename = {}
    states = ["q0"]
    for i, n in enumerate(order):
        rename[n] = f"q{i+1}"
        states.append(f"q{i+1}")

    edges = []
    for n in order:
        old, _next, incoming = by_name[n]
        guard = _guard_of(old)
        for src in sorted(incoming):
            src_name = "q0" if src == init_marker else rename[src]
            edges.append(Edge(src_name, guard, rename[n]))

    untils = []
    for g in _subformulas(phi):
        if isinstance(g, Until) and g not in untils:
            untils.append(g)
    acc_sets = []
    for g in untils:
        members = {
            rename[n]
            for n in order
            if g not in by_name[n][0] or g.right in by_name[n][0]
        }
        acc_sets.append(frozenset(members))

    return GBA(tuple(states), "q0", tuple(acc_sets), tuple(edges), p)


def degeneralize(g: GBA) -> NBA:
    """Round-robin counter construction; with no acceptance sets every state
    is accepting, with one set the automaton is used as-is."""
    if not g.acc_sets:
        return NBA(g.states, g.initial, frozenset(g.states), g.edges, g.p).validate()
    if len(g.acc_sets) == 1:
        return NBA(g.states, g.initial, g.acc_sets[0], g.edges, g.p).validate()
    k = len(g.acc_sets)
    out_by_src: dict[str, list[Edge]] = {}
    for e in g.edges:
        out_by_src.setdefault(e.src, []).append(e)

    def name(q, i):
        return f"{q}#{i}"

    start = name(g.initial, 0)
    states = [start]
    seen = {(g.initial, 0)}
    frontier = [(g.initial, 0)]
    edges = []
    while frontier:
        q, i = frontier.pop(0)
        j = (i + 1) % k if q in g.acc_sets[i] else i
        for e in out_by_src.get(q, []):
            tgt = (e.dst, j)
            if tgt not in seen:
                seen.add(tgt)
                states.append(name(*tgt))
                frontier.append(tgt)
            edges.append(Edge(name(q, i), e.guard, name(*tgt)))
    accepting = frozenset(name(q, 0) for (q, i) in seen if i == 0 and q in g.acc_sets[0])
    return NBA(tuple(states), start, accepting, tuple(edges), g.p).validate()


def ltl_to_nba(f: Qf, p: int, state_cap: int = DEFAULT_STATE_CAP) -> NBA:
    """Buechi automaton accepting exactly the words satisfying ``f``."""
    return degeneralize(ltl_to_gba(f, p, state_cap))


# ---------------------------------------------------------------------------
# Bounded-lasso language comparison
# ---------------------------------------------------------------------------


def letters_for(aps: Sequence[str], p: int) -> list[TupleLetter]:
    """The full tuple-letter alphabet over the given propositions."""
    from itertools import combinations

    singles = []
    props = list(aps)
    for r in range(len(props) + 1):
        for combo in combinations(props, r):
            singles.append(frozenset(combo))
    letters = [()]
    for _ in range(p):
        letters = [prev + (s,) for prev in letters for s in singles]
    return letters


def lasso_agreement(a: NBA, b: NBA, letters: Sequence[TupleLetter], bound: int):
    """Exhaustively compare lasso acceptance up to prefix+cycle <= bound.

    Acceptance of a lasso depends on the automaton only through the state set
    reached after the prefix, so prefixes are collapsed to distinct pairs of
    reachable state sets.  Returns None when the languages agree, otherwise a
    witness (prefix, cycle).
    """
    from itertools import product

    pairs = {(frozenset([a.initial]), frozenset([b.initial])): ()}
    cache: dict = {}

    def accepted(aut, start, cycle):
        key = (id(aut), start, cycle)
        if key not in cache:
            result = False
            if start:
                for scc, has_edge in _cycle_sccs(aut, start, cycle):
                    if has_edge and any(q in aut.accepting for q, _ in scc):
                        result = True
                        break
            cache[key] = result
        return cache[key]

    for prefix_len in range(bound):
        for (ra, rb), witness_prefix in sorted(pairs.items(), key=lambda kv: repr(kv[0])):
            for cycle_len in range(1, bound - prefix_len + 1):
                for cycle in product(letters, repeat=cycle_len):
                    if accepted(a, ra, cycle) != accepted(b, rb, cycle):
                        return witness_prefix, cycle
        nxt = {}
        for (ra, rb), witness_prefix in pairs.items():
            for letter in letters:
                key = (_step_set(a, ra, letter), _step_set(b, rb, letter))
                if key not in nxt:
                    nxt[key] = witness_prefix + (letter,)
        pairs = nxt
    return None


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_nba(path) -> NBA:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return nba_from_json(data)


def nba_from_json(data: dict) -> NBA:
    try:
        p = int(data["p"])
        states = tuple(str(s) for s in data["states"])
        initial = str(data["initial"])
        accepting = frozenset(str(s) for s in data["accepting"])
        raw_edges = data["edges"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed automaton: {exc}") from exc
    trace_vars = data.get("trace_vars", [f"p{i+1}" for i in range(p)])
    edges = []
    for e in raw_edges:
        guard = parse_qf(str(e["guard"]), p, trace_vars)
        edges.append(Edge(str(e["from"]), guard, str(e["to"])))
    return NBA(states, initial, accepting, tuple(edges), p).validate()
