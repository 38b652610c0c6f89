"""Quantified implication constraints over system states and certificates.

A constraint is a quantifier prefix over declared domains plus a body built
from boolean connectives over a small set of leaf predicates.  The same IR is
evaluated three ways: exactly by enumeration on finite systems, numerically
over sampled points on symbolic systems, and as SMT-LIB text.

Comparison leaves expose a signed residual (satisfied iff residual >= 0), so
sampled checks can apply a polarity-aware margin: a borderline residual is
resolved in whichever direction keeps the whole body true, and only instances
that remain false are reported as violations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .composition import letter_of
from .errors import CapacityError, SpecError, ValidationError
from .hyperltl import Qf, eval_guard
from .poly import Pred
from .systems import SECRET_PROP, FiniteSystem, SymbolicSystem

FORALL = "forall"
EXISTS = "exists"


class EvalContext:
    """Carries the system, the certificate under test and sampling data."""

    def __init__(self, system, cert, lookahead_points=None, init_points=None,
                 budget=10**8):
        self.system = system
        self.cert = cert
        self.lookahead_points = lookahead_points
        self.init_points = init_points
        self.budget = budget
        self.instances = 0

    @property
    def xi(self) -> Fraction:
        return self.cert.xi

    def charge(self, n: int = 1):
        self.instances += n
        if self.instances > self.budget:
            raise CapacityError(f"ground-instance budget of {self.budget} exceeded")


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


class Domain:
    def enumerate(self, ctx: EvalContext, binding: dict) -> Iterable:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class AllStates(Domain):
    def enumerate(self, ctx, binding):
        system = ctx.system
        if isinstance(system, FiniteSystem):
            return list(system.states)
        raise CapacityError("cannot enumerate a continuous state space exactly")

    def describe(self):
        return "state space"


@dataclass(frozen=True)
class LookaheadStates(Domain):
    """Lookahead domain: every state on finite systems; on symbolic systems
    the sampled forward-reachable set supplied by the context."""

    def enumerate(self, ctx, binding):
        system = ctx.system
        if isinstance(system, FiniteSystem):
            return list(system.states)
        if ctx.lookahead_points is None:
            raise CapacityError("no lookahead sample set configured")
        return list(ctx.lookahead_points)

    def describe(self):
        return "lookahead states"


@dataclass(frozen=True)
class InitialStates(Domain):
    filter: str | None = None  # None, "secret" or "nonsecret"

    def enumerate(self, ctx, binding):
        system = ctx.system
        if isinstance(system, FiniteSystem):
            if self.filter == "secret":
                return sorted(system.secret_initial())
            if self.filter == "nonsecret":
                return sorted(system.nonsecret_initial())
            return sorted(system.initial)
        if system.init_points is not None:
            points = list(system.init_points)
        elif ctx.init_points is not None:
            points = list(ctx.init_points)
        else:
            raise CapacityError("continuous initial set without a sample set")
        if self.filter is None:
            return points
        secret = system.labels.get(SECRET_PROP)
        if secret is None:
            raise SpecError(f"system declares no {SECRET_PROP!r} label")
        if self.filter == "secret":
            return [p for p in points if secret.holds(p)]
        return [p for p in points if not secret.holds(p)]

    def describe(self):
        return {"secret": "secret initial states", "nonsecret": "non-secret initial states",
                None: "initial states"}[self.filter]


@dataclass(frozen=True)
class SuccessorsOf(Domain):
    var: str

    def enumerate(self, ctx, binding):
        x = binding[self.var]
        succ = ctx.system.successors(x)
        if isinstance(ctx.system, FiniteSystem):
            return sorted(succ)
        return list(succ)

    def describe(self):
        return f"successors of {self.var}"


@dataclass(frozen=True)
class ExplicitSet(Domain):
    values: tuple

    def enumerate(self, ctx, binding):
        return list(self.values)

    def describe(self):
        return "explicit set"


@dataclass(frozen=True)
class Quant:
    kind: str  # FORALL or EXISTS
    var: str
    domain: Domain
    skolem_key: tuple | None = None  # e.g. ("step", 2); selector input vars below
    skolem_args: tuple = ()


# ---------------------------------------------------------------------------
# Body nodes
# ---------------------------------------------------------------------------


class Body:
    pass


@dataclass(frozen=True)
class Conj(Body):
    items: tuple

    def __init__(self, items):
        object.__setattr__(self, "items", tuple(items))


@dataclass(frozen=True)
class Disj(Body):
    items: tuple

    def __init__(self, items):
        object.__setattr__(self, "items", tuple(items))


@dataclass(frozen=True)
class Neg(Body):
    item: Body


@dataclass(frozen=True)
class Imp(Body):
    antecedent: Body
    consequent: Body


@dataclass(frozen=True)
class Quantified(Body):
    kind: str
    var: str
    domain: Domain
    body: Body
    skolem_key: tuple | None = None
    skolem_args: tuple = ()


@dataclass(frozen=True)
class CertCmp(Body):
    """sum(coeff * component(args)) + const + xi_coeff * xi  >=  0."""

    terms: tuple  # ((coeff, component_key, arg_vars), ...)
    const: Fraction = Fraction(0)
    xi_coeff: Fraction = Fraction(0)

    def residual(self, ctx: EvalContext, binding: dict) -> Fraction:
        total = self.const + self.xi_coeff * ctx.xi
        for coeff, key, arg_vars in self.terms:
            args = tuple(binding[v] for v in arg_vars)
            total += coeff * ctx.cert.component_value(key, args, ctx.system)
        return total


@dataclass(frozen=True)
class ObsEq(Body):
    left: str
    right: str


@dataclass(frozen=True)
class StateEq(Body):
    left: str
    right: str


@dataclass(frozen=True)
class HasLabel(Body):
    prop: str
    var: str


@dataclass(frozen=True)
class PredHolds(Body):
    pred: Pred
    var: str


@dataclass(frozen=True)
class GuardSat(Body):
    guard: Qf
    trace_vars: tuple


TRUE_BODY = Conj(())


@dataclass(frozen=True)
class Constraint:
    tag: str
    quants: tuple
    body: Body
    note: str = ""


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple
    definition: str = ""

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def tags(self):
        return [c.tag for c in self.constraints]


# ---------------------------------------------------------------------------
# Exact scalar evaluation
# ---------------------------------------------------------------------------


def eval_body(node: Body, ctx: EvalContext, binding: dict,
              eps: Fraction | None = None, pol: int = 1) -> bool:
    """Evaluate a body node under the binding.

    With ``eps`` set, comparison leaves within ``eps`` of zero are resolved
    in the direction given by the occurrence polarity, so False means the
    instance is violated by more than the margin.
    """
    if isinstance(node, Conj):
        return all(eval_body(i, ctx, binding, eps, pol) for i in node.items)
    if isinstance(node, Disj):
        if not node.items:
            return False
        return any(eval_body(i, ctx, binding, eps, pol) for i in node.items)
    if isinstance(node, Neg):
        return not eval_body(node.item, ctx, binding, eps, -pol)
    if isinstance(node, Imp):
        if eval_body(node.antecedent, ctx, binding, eps, -pol):
            return eval_body(node.consequent, ctx, binding, eps, pol)
        return True
    if isinstance(node, Quantified):
        return _eval_quantified(node, ctx, binding, eps, pol)
    if isinstance(node, CertCmp):
        r = node.residual(ctx, binding)
        if eps is None:
            return r >= 0
        return (r >= -eps) if pol > 0 else (r > eps)
    if isinstance(node, ObsEq):
        return ctx.system.obs_equal(binding[node.left], binding[node.right])
    if isinstance(node, StateEq):
        return binding[node.left] == binding[node.right]
    if isinstance(node, HasLabel):
        x = binding[node.var]
        if isinstance(ctx.system, FiniteSystem):
            return node.prop in ctx.system.labels[x]
        return ctx.system.label_holds(node.prop, x)
    if isinstance(node, PredHolds):
        return node.pred.holds(binding[node.var])
    if isinstance(node, GuardSat):
        letter = letter_of(ctx.system, [binding[v] for v in node.trace_vars])
        return eval_guard(node.guard, letter)
    raise ValidationError(f"unknown body node {node!r}")


def _selector_candidates(ctx, binding, skolem_key, skolem_args, domain):
    """Candidate values for an existential: the bound selector's choice when
    one is attached, otherwise the full domain."""
    if skolem_key is not None and ctx.cert is not None and ctx.cert.skolem is not None:
        value = ctx.cert.skolem.choose(skolem_key,
                                       tuple(binding[v] for v in skolem_args),
                                       ctx.system)
        if value is not None:
            return [value]
    return domain.enumerate(ctx, binding)


def _eval_quantified(node: Quantified, ctx, binding, eps, pol) -> bool:
    if node.kind == FORALL:
        for value in node.domain.enumerate(ctx, binding):
            ctx.charge()
            if not eval_body(node.body, ctx, {**binding, node.var: value}, eps, pol):
                return False
        return True
    for value in _selector_candidates(ctx, binding, node.skolem_key,
                                      node.skolem_args, node.domain):
        ctx.charge()
        if eval_body(node.body, ctx, {**binding, node.var: value}, eps, pol):
            return True
    return False


class StopCheck(Exception):
    """Raised by an on_violation callback to stop exploring a constraint."""


def holds_on(constraint: Constraint, ctx: EvalContext, binding=None,
             eps: Fraction | None = None, on_violation=None) -> bool:
    """Exhaustively evaluate one constraint.

    ``on_violation(binding)`` is invoked once per violating assignment of the
    quantifier prefix; underneath a failing existential it fires once with the
    existential variable bound to the placeholder "(none)".  The callback may
    raise StopCheck to cut the sweep short (the constraint counts as violated).
    """
    binding = dict(binding or {})

    def rec(index: int, bnd: dict, report: bool) -> bool:
        if index == len(constraint.quants):
            ctx.charge()
            ok = eval_body(constraint.body, ctx, bnd, eps, 1)
            if not ok and report and on_violation is not None:
                on_violation(dict(bnd))
            return ok
        q = constraint.quants[index]
        if q.kind == FORALL:
            ok = True
            for value in q.domain.enumerate(ctx, bnd):
                if not rec(index + 1, {**bnd, q.var: value}, report):
                    ok = False
            return ok
        for value in _selector_candidates(ctx, bnd, q.skolem_key, q.skolem_args, q.domain):
            if rec(index + 1, {**bnd, q.var: value}, False):
                return True
        if report and on_violation is not None:
            on_violation({**bnd, q.var: "(none)"})
        return False

    try:
        return rec(0, binding, True)
    except StopCheck:
        return False
