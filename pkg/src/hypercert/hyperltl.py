"""HyperLTL formulas: parsing, printing, normal forms and lasso-word semantics.

Concrete syntax (LL(1), dot-terminated quantifiers, indexed atoms)::

    formula  := (("forall" | "exists") IDENT ".")+ body
    body     := imp
    imp      := orx (("->" | "<->") imp)?          right associative
    orx      := andx ("|" andx)*
    andx     := untilx ("&" untilx)*
    untilx   := unary (("U" | "R") untilx)?        right associative
    unary    := ("!" | "G" | "F" | "X") unary | atom
    atom     := "true" | "false" | IDENT "[" IDENT "]" | "(" body ")"

``->`` and ``<->`` are desugared at parse time; all other operators are AST
node kinds of their own.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .errors import FormulaSyntaxError, FreeVariableError, ValidationError

FORALL = "forall"
EXISTS = "exists"


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Qf:
    """Base class of quantifier-free formula nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class TrueF(Qf):
    pass


@dataclass(frozen=True)
class Atom(Qf):
    prop: str
    trace: int  # 1-based trace index


@dataclass(frozen=True)
class Not(Qf):
    arg: Qf


@dataclass(frozen=True)
class And(Qf):
    left: Qf
    right: Qf


@dataclass(frozen=True)
class Or(Qf):
    left: Qf
    right: Qf


@dataclass(frozen=True)
class Next(Qf):
    arg: Qf


@dataclass(frozen=True)
class Until(Qf):
    left: Qf
    right: Qf


@dataclass(frozen=True)
class Release(Qf):
    left: Qf
    right: Qf


@dataclass(frozen=True)
class Finally_(Qf):
    arg: Qf


@dataclass(frozen=True)
class Globally(Qf):
    arg: Qf


@dataclass(frozen=True)
class HyperFormula:
    """Quantifier prefix plus quantifier-free body.

    Trace variables are identified by their 1-based position in the prefix.
    ``trace_names[i-1]`` keeps the surface name of variable i for printing.
    """

    prefix: tuple[str, ...]  # sequence of FORALL / EXISTS
    trace_names: tuple[str, ...]
    body: Qf

    @property
    def p(self) -> int:
        return len(self.prefix)


def trace_indices(f: Qf) -> set[int]:
    if isinstance(f, Atom):
        return {f.trace}
    if isinstance(f, (TrueF,)):
        return set()
    if isinstance(f, (Not, Next, Finally_, Globally)):
        return trace_indices(f.arg)
    return trace_indices(f.left) | trace_indices(f.right)


def atom_set(f: Qf) -> set[tuple[str, int]]:
    if isinstance(f, Atom):
        return {(f.prop, f.trace)}
    if isinstance(f, TrueF):
        return set()
    if isinstance(f, (Not, Next, Finally_, Globally)):
        return atom_set(f.arg)
    return atom_set(f.left) | atom_set(f.right)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(->|<->|[()\[\].!&|]|[A-Za-z_][A-Za-z0-9_]*)")
_KEYWORDS = {"forall", "exists", "true", "false", "U", "R", "G", "F", "X"}


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list[tuple[str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                rest = text[pos:].lstrip()
                if not rest:
                    break
                raise FormulaSyntaxError(f"unexpected character {rest[0]!r}", pos)
            self.tokens.append((m.group(1), m.start(1)))
            pos = m.end()
        self.idx = 0

    def peek(self):
        return self.tokens[self.idx][0] if self.idx < len(self.tokens) else None

    def next(self):
        if self.idx >= len(self.tokens):
            raise FormulaSyntaxError("unexpected end of input", len(self.text))
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect(self, value):
        tok, at = self.next()
        if tok != value:
            raise FormulaSyntaxError(f"expected {value!r}, found {tok!r}", at)
        return tok

    def position(self):
        return self.tokens[self.idx][1] if self.idx < len(self.tokens) else len(self.text)


def _parse_body(ts: _Tokens, names: dict[str, int]) -> Qf:
    return _parse_imp(ts, names)


def _parse_imp(ts: _Tokens, names) -> Qf:
    left = _parse_or(ts, names)
    tok = ts.peek()
    if tok == "->":
        ts.next()
        right = _parse_imp(ts, names)
        return Or(Not(left), right)
    if tok == "<->":
        ts.next()
        right = _parse_imp(ts, names)
        return And(Or(Not(left), right), Or(Not(right), left))
    return left


def _parse_or(ts, names) -> Qf:
    left = _parse_and(ts, names)
    while ts.peek() == "|":
        ts.next()
        left = Or(left, _parse_and(ts, names))
    return left


def _parse_and(ts, names) -> Qf:
    left = _parse_until(ts, names)
    while ts.peek() == "&":
        ts.next()
        left = And(left, _parse_until(ts, names))
    return left


def _parse_until(ts, names) -> Qf:
    left = _parse_unary(ts, names)
    tok = ts.peek()
    if tok == "U":
        ts.next()
        return Until(left, _parse_until(ts, names))
    if tok == "R":
        ts.next()
        return Release(left, _parse_until(ts, names))
    return left


def _parse_unary(ts, names) -> Qf:
    tok = ts.peek()
    if tok == "!":
        ts.next()
        return Not(_parse_unary(ts, names))
    if tok == "G":
        ts.next()
        return Globally(_parse_unary(ts, names))
    if tok == "F":
        ts.next()
        return Finally_(_parse_unary(ts, names))
    if tok == "X":
        ts.next()
        return Next(_parse_unary(ts, names))
    return _parse_atom(ts, names)


def _parse_atom(ts, names) -> Qf:
    tok, at = ts.next()
    if tok == "(":
        inner = _parse_body(ts, names)
        ts.expect(")")
        return inner
    if tok == "true":
        return TrueF()
    if tok == "false":
        return Not(TrueF())
    if tok in _KEYWORDS or not tok[0].isalpha() and tok[0] != "_":
        raise FormulaSyntaxError(f"unexpected token {tok!r}", at)
    prop = tok
    ts.expect("[")
    var, var_at = ts.next()
    ts.expect("]")
    if var not in names:
        raise FreeVariableError(
            f"trace variable {var!r} is not quantified (at position {var_at})"
        )
    return Atom(prop, names[var])


def parse_formula(text: str) -> HyperFormula:
    """Parse a closed HyperLTL formula; the first quantifier must be universal."""
    ts = _Tokens(text)
    prefix: list[str] = []
    names: dict[str, int] = {}
    surface: list[str] = []
    while ts.peek() in (FORALL, EXISTS):
        q, _ = ts.next()
        var, at = ts.next()
        if var in _KEYWORDS:
            raise FormulaSyntaxError(f"{var!r} cannot name a trace variable", at)
        if var in names:
            raise FormulaSyntaxError(f"trace variable {var!r} quantified twice", at)
        ts.expect(".")
        names[var] = len(prefix) + 1
        prefix.append(q)
        surface.append(var)
    if not prefix:
        raise FormulaSyntaxError("formula needs a quantifier prefix", 0)
    if prefix[0] != FORALL:
        raise ValidationError("the first quantifier must be universal")
    body = _parse_body(ts, names)
    if ts.peek() is not None:
        raise FormulaSyntaxError(f"trailing input {ts.peek()!r}", ts.position())
    return HyperFormula(tuple(prefix), tuple(surface), body)


def parse_qf(text: str, p: int, trace_names: Sequence[str] | None = None) -> Qf:
    """Parse a quantifier-free formula; used for automaton edge guards."""
    names = {n: i + 1 for i, n in enumerate(trace_names or [f"p{i+1}" for i in range(p)])}
    ts = _Tokens(text)
    body = _parse_body(ts, names)
    if ts.peek() is not None:
        raise FormulaSyntaxError(f"trailing input {ts.peek()!r}", ts.position())
    return body


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


def format_qf(f: Qf, trace_names: Sequence[str] | None = None) -> str:
    def name(i):
        return trace_names[i - 1] if trace_names else f"p{i}"

    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, Atom):
        return f"{f.prop}[{name(f.trace)}]"
    if isinstance(f, Not):
        return f"!{format_qf(f.arg, trace_names)}"
    if isinstance(f, Next):
        return f"X {format_qf(f.arg, trace_names)}"
    if isinstance(f, Finally_):
        return f"F {format_qf(f.arg, trace_names)}"
    if isinstance(f, Globally):
        return f"G {format_qf(f.arg, trace_names)}"
    if isinstance(f, And):
        return f"({format_qf(f.left, trace_names)} & {format_qf(f.right, trace_names)})"
    if isinstance(f, Or):
        return f"({format_qf(f.left, trace_names)} | {format_qf(f.right, trace_names)})"
    if isinstance(f, Until):
        return f"({format_qf(f.left, trace_names)} U {format_qf(f.right, trace_names)})"
    if isinstance(f, Release):
        return f"({format_qf(f.left, trace_names)} R {format_qf(f.right, trace_names)})"
    raise TypeError(f"not a formula node: {f!r}")


def format_formula(phi: HyperFormula) -> str:
    head = " ".join(f"{q} {n}." for q, n in zip(phi.prefix, phi.trace_names))
    return f"{head} {format_qf(phi.body, phi.trace_names)}"


# ---------------------------------------------------------------------------
# Normal forms
# ---------------------------------------------------------------------------


def nnf(f: Qf) -> Qf:
    """Negation normal form: negations pushed onto atoms."""
    if isinstance(f, (TrueF, Atom)):
        return f
    if isinstance(f, And):
        return And(nnf(f.left), nnf(f.right))
    if isinstance(f, Or):
        return Or(nnf(f.left), nnf(f.right))
    if isinstance(f, Next):
        return Next(nnf(f.arg))
    if isinstance(f, Until):
        return Until(nnf(f.left), nnf(f.right))
    if isinstance(f, Release):
        return Release(nnf(f.left), nnf(f.right))
    if isinstance(f, Finally_):
        return Finally_(nnf(f.arg))
    if isinstance(f, Globally):
        return Globally(nnf(f.arg))
    if isinstance(f, Not):
        g = f.arg
        if isinstance(g, TrueF):
            return f  # false is kept as !true
        if isinstance(g, Atom):
            return f
        if isinstance(g, Not):
            return nnf(g.arg)
        if isinstance(g, And):
            return Or(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Or):
            return And(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Next):
            return Next(nnf(Not(g.arg)))
        if isinstance(g, Until):
            return Release(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Release):
            return Until(nnf(Not(g.left)), nnf(Not(g.right)))
        if isinstance(g, Finally_):
            return Globally(nnf(Not(g.arg)))
        if isinstance(g, Globally):
            return Finally_(nnf(Not(g.arg)))
    raise TypeError(f"not a formula node: {f!r}")


def negate_qf(f: Qf) -> Qf:
    """Negation-normal form of the negation of ``f``."""
    return nnf(Not(f))


# ---------------------------------------------------------------------------
# Fragment classification
# ---------------------------------------------------------------------------


def classify_fragment(phi: HyperFormula):
    """Return (tag, F, E): universal / existential quantifier positions.

    The tag is "forall_only", "forall_exists" or "general"; "general" means
    some universal quantifier follows an existential one.
    """
    f_set = frozenset(i + 1 for i, q in enumerate(phi.prefix) if q == FORALL)
    e_set = frozenset(i + 1 for i, q in enumerate(phi.prefix) if q == EXISTS)
    if not e_set:
        return "forall_only", f_set, e_set
    if max(f_set) < min(e_set):
        return "forall_exists", f_set, e_set
    return "general", f_set, e_set


# ---------------------------------------------------------------------------
# Lasso-word semantics (testing oracle)
# ---------------------------------------------------------------------------

TupleLetter = tuple[frozenset, ...]  # one proposition set per trace variable


def eval_on_lasso(f: Qf, prefix: Sequence[TupleLetter], cycle: Sequence[TupleLetter]) -> bool:
    """Evaluate ``f`` on the ultimately periodic word prefix . cycle^omega.

    Truth tables per subformula are computed over the prefix positions plus
    one unrolling of the cycle; Until is the least and Release the greatest
    fixpoint over the cycle positions.
    """
    if not cycle:
        raise ValidationError("lasso cycle must be nonempty")
    letters = list(prefix) + list(cycle)
    n = len(letters)
    loop = len(prefix)

    def nxt(i):
        return i + 1 if i + 1 < n else loop

    cache: dict[Qf, list[bool]] = {}

    def table(g: Qf) -> list[bool]:
        if g in cache:
            return cache[g]
        if isinstance(g, TrueF):
            vals = [True] * n
        elif isinstance(g, Atom):
            vals = [g.prop in letters[i][g.trace - 1] for i in range(n)]
        elif isinstance(g, Not):
            vals = [not v for v in table(g.arg)]
        elif isinstance(g, And):
            left, right = table(g.left), table(g.right)
            vals = [a and b for a, b in zip(left, right)]
        elif isinstance(g, Or):
            left, right = table(g.left), table(g.right)
            vals = [a or b for a, b in zip(left, right)]
        elif isinstance(g, Next):
            arg = table(g.arg)
            vals = [arg[nxt(i)] for i in range(n)]
        elif isinstance(g, Finally_):
            vals = _lfp(table(g.arg), [True] * n, nxt, n)
        elif isinstance(g, Globally):
            vals = _gfp(table(g.arg), [False] * n, nxt, n)
        elif isinstance(g, Until):
            vals = _lfp(table(g.right), table(g.left), nxt, n)
        elif isinstance(g, Release):
            vals = _gfp(table(g.right), table(g.left), nxt, n)
        else:
            raise TypeError(f"not a formula node: {g!r}")
        cache[g] = vals
        return vals

    return table(f)[0]


def _lfp(target, hold, nxt, n):
    # a U b: least fixpoint of  v[i] = b[i] or (a[i] and v[next i])
    vals = [False] * n
    for _ in range(n + 1):
        changed = False
        for i in range(n - 1, -1, -1):
            v = target[i] or (hold[i] and vals[nxt(i)])
            if v != vals[i]:
                vals[i] = v
                changed = True
        if not changed:
            break
    return vals


def _gfp(target, hold, nxt, n):
    # a R b: greatest fixpoint of  v[i] = b[i] and (a[i] or v[next i])
    vals = [True] * n
    for _ in range(n + 1):
        changed = False
        for i in range(n - 1, -1, -1):
            v = target[i] and (hold[i] or vals[nxt(i)])
            if v != vals[i]:
                vals[i] = v
                changed = True
        if not changed:
            break
    return vals


def eval_guard(f: Qf, letter: TupleLetter) -> bool:
    """Evaluate a boolean (temporal-operator-free) formula on one letter."""
    if isinstance(f, TrueF):
        return True
    if isinstance(f, Atom):
        return f.prop in letter[f.trace - 1]
    if isinstance(f, Not):
        return not eval_guard(f.arg, letter)
    if isinstance(f, And):
        return eval_guard(f.left, letter) and eval_guard(f.right, letter)
    if isinstance(f, Or):
        return eval_guard(f.left, letter) or eval_guard(f.right, letter)
    raise ValidationError(f"temporal operator in a guard: {format_qf(f)}")


def is_boolean(f: Qf) -> bool:
    if isinstance(f, (TrueF, Atom)):
        return True
    if isinstance(f, Not):
        return is_boolean(f.arg)
    if isinstance(f, (And, Or)):
        return is_boolean(f.left) and is_boolean(f.right)
    return False
