"""Certificate objects and the constraint generators for every supported
condition family.

A certificate bundles a reachability-overapproximation component T over state
pairs, a per-automaton-state value family B, an optional Skolem selector for
existential choices, and the decrease constant xi.  Components are tabular on
finite systems (rational-valued tables) and polynomial on symbolic systems.

Each ``gen_*`` function returns a ConstraintSet; automaton states and edges
are grounded at generation time, so constraints quantify over system states
only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .automata import NBA
from .constraints import (
    EXISTS,
    FORALL,
    AllStates,
    CertCmp,
    Conj,
    Constraint,
    ConstraintSet,
    Disj,
    ExplicitSet,
    GuardSat,
    HasLabel,
    Imp,
    InitialStates,
    LookaheadStates,
    Neg,
    ObsEq,
    PredHolds,
    Quant,
    Quantified,
    StateEq,
    SuccessorsOf,
)
from .errors import ArityError, FragmentError, ParseError, SpecError, ValidationError
from .hyperltl import HyperFormula, classify_fragment
from .poly import Poly, Pred, rat, rat_str
from .systems import OUTPUT_PROP, SECRET_PROP, FiniteSystem, SymbolicSystem

ONE = Fraction(1)
ZERO = Fraction(0)


# ---------------------------------------------------------------------------
# Certificate components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TableFun:
    """Rational-valued table over tuples of finite-system states."""

    arity: int
    entries: dict
    default: Fraction = Fraction(-1)

    def value(self, args: tuple) -> Fraction:
        if len(args) != self.arity:
            raise ArityError(f"table expects {self.arity} arguments, got {len(args)}")
        return self.entries.get(tuple(args), self.default)

    def to_json(self):
        return {
            "kind": "table",
            "arity": self.arity,
            "default": rat_str(self.default),
            "entries": sorted([list(k), rat_str(v)] for k, v in self.entries.items()),
        }


@dataclass(frozen=True)
class PolyFun:
    """Polynomial over the concatenated coordinates of its state arguments."""

    poly: Poly
    dims: tuple  # dimension of each argument

    def value(self, args: tuple) -> Fraction:
        if len(args) != len(self.dims):
            raise ArityError(f"polynomial expects {len(self.dims)} arguments, got {len(args)}")
        flat = []
        for point, d in zip(args, self.dims):
            if len(point) != d:
                raise ArityError("argument dimension mismatch")
            flat.extend(point)
        return self.poly.eval(flat)

    def to_json(self):
        return {"kind": "poly", "dims": list(self.dims), **self.poly.to_json()}


def evaluate(poly: Poly, point) -> Fraction:
    """Exact rational evaluation of a polynomial at a point."""
    return poly.eval([rat(c) for c in point])


# ---------------------------------------------------------------------------
# Skolem selectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TableSelector:
    entries: dict  # key tuple -> chosen value

    def choose(self, args: tuple, system):
        return self.entries.get(tuple(args))

    def to_json(self):
        return {
            "kind": "table",
            "entries": sorted(
                ([_value_json(v) for v in k], _value_json(val))
                for k, val in self.entries.items()
            ),
        }


@dataclass(frozen=True)
class PolySelector:
    """Polynomial vector mapping the flattened key coordinates to a point."""

    polys: tuple  # one Poly per output dimension

    def choose(self, args: tuple, system):
        flat = []
        for a in args:
            flat.extend(a)
        return tuple(p.eval(flat) for p in self.polys)

    def to_json(self):
        return {"kind": "polyvec", "polys": [p.to_json() for p in self.polys]}


@dataclass(frozen=True)
class Skolem:
    selectors: dict  # ("init"|"step", position) -> selector

    def choose(self, key, args, system):
        sel = self.selectors.get(key)
        if sel is None:
            return None
        return sel.choose(args, system)

    def to_json(self):
        return {f"{k[0]}:{k[1]}": sel.to_json() for k, sel in sorted(self.selectors.items())}


@dataclass(frozen=True)
class HyperCertificate:
    """T plus the per-automaton-state family B, with optional selectors."""

    T: object | None
    B: dict
    skolem: Skolem | None = None
    xi: Fraction = Fraction(1)
    fragment: str = ""

    def component_value(self, key, args, system) -> Fraction:
        if key[0] == "T":
            if self.T is None:
                raise ValidationError("certificate has no closure component T")
            return self.T.value(args)
        if key[0] == "B":
            fun = self.B.get(key[1])
            if fun is None:
                raise ValidationError(f"certificate has no B component for state {key[1]!r}")
            return fun.value(args)
        raise ValidationError(f"unknown certificate component {key!r}")


def in_path(t_fun, x, y, z) -> bool:
    """Lookahead membership: y lies on some path from x to z.

    Disjuncts: T nonnegative on both legs, y equal to the target z, or y
    equal to the source x.
    """
    if y == z or y == x:
        return True
    return t_fun.value((x, y)) >= 0 and t_fun.value((y, z)) >= 0


# ---------------------------------------------------------------------------
# Leaf constructors
# ---------------------------------------------------------------------------


def t_ge(x: str, y: str) -> CertCmp:
    return CertCmp(((ONE, ("T",), (x, y)),))


def b_ge(q: str, args: tuple) -> CertCmp:
    return CertCmp(((ONE, ("B", q), tuple(args)),))


def b_le_neg_xi(q: str, args: tuple) -> CertCmp:
    # B <= -xi  encoded as  -B - xi >= 0
    return CertCmp(((-ONE, ("B", q), tuple(args)),), xi_coeff=-ONE)


def b_decrease(q_from: str, args_from: tuple, q_to: str, args_to: tuple) -> CertCmp:
    # B_to <= B_from - xi  encoded as  B_from - B_to - xi >= 0
    return CertCmp(
        ((ONE, ("B", q_from), tuple(args_from)), (-ONE, ("B", q_to), tuple(args_to))),
        xi_coeff=-ONE,
    )


def t_decrease(x0: str, y_from: str, y_to: str) -> CertCmp:
    # T(x0, y_to) <= T(x0, y_from) - xi
    return CertCmp(
        ((ONE, ("T",), (x0, y_from)), (-ONE, ("T",), (x0, y_to))),
        xi_coeff=-ONE,
    )


def in_path_body(x: str, y: str, z: str) -> Disj:
    return Disj([Conj([t_ge(x, y), t_ge(y, z)]), StateEq(y, z), StateEq(y, x)])


def _set_condition(system, spec, var: str):
    """Normalize a state-set description into a membership condition on var.

    Accepts a label name, an explicit collection (finite systems) or a
    predicate (symbolic systems); returns (condition_body, explicit_values).
    """
    if isinstance(spec, str):
        if isinstance(system, FiniteSystem):
            members = tuple(sorted(x for x in system.states if spec in system.labels[x]))
            return HasLabel(spec, var), members
        if spec not in system.labels:
            raise SpecError(f"system declares no {spec!r} label")
        return PredHolds(system.labels[spec], var), None
    if isinstance(spec, Pred):
        return PredHolds(spec, var), None
    members = tuple(sorted(spec))
    return None, members


def _require_secret(system):
    if isinstance(system, FiniteSystem):
        if SECRET_PROP not in system.aps:
            raise SpecError(f"system declares no {SECRET_PROP!r} proposition")
    else:
        if SECRET_PROP not in system.labels:
            raise SpecError(f"system declares no {SECRET_PROP!r} label")
        if system.obs_equiv is None and OUTPUT_PROP not in system.labels:
            raise SpecError("system needs an obs_equiv relation or an output label")


# ---------------------------------------------------------------------------
# Safety and reachability-closure conditions
# ---------------------------------------------------------------------------


def gen_barrier_constraints(system, unsafe_set) -> ConstraintSet:
    """Value nonnegative on initial states, below -xi on unsafe states, and
    nonnegativity preserved along every transition."""
    cs = []
    cs.append(Constraint(
        "barrier:initial",
        (Quant(FORALL, "x0", InitialStates()),),
        b_ge("_", ("x0",)),
    ))
    cond, members = _set_condition(system, unsafe_set, "xu")
    if isinstance(system, FiniteSystem) and members is not None:
        cs.append(Constraint(
            "barrier:unsafe",
            (Quant(FORALL, "xu", ExplicitSet(members)),),
            b_le_neg_xi("_", ("xu",)),
        ))
    else:
        cs.append(Constraint(
            "barrier:unsafe",
            (Quant(FORALL, "xu", AllStates()),),
            Imp(cond, b_le_neg_xi("_", ("xu",))),
        ))
    if isinstance(system, SymbolicSystem):
        for i, branch in enumerate(system.branches):
            choice_dom = ExplicitSet(tuple((c,) for c in branch.choices)) \
                if branch.choices is not None else None
            quants = [Quant(FORALL, "x", AllStates())]
            if choice_dom is not None:
                quants.append(Quant(FORALL, "c", choice_dom))
            cs.append(Constraint(
                "barrier:step",
                tuple(quants),
                Imp(Conj([PredHolds(branch.guard, "x"), b_ge("_", ("x",))]),
                    _branch_image_ge(branch, i)),
                note=f"branch {i}",
            ))
    else:
        cs.append(Constraint(
            "barrier:step",
            (Quant(FORALL, "x", AllStates()), Quant(FORALL, "xp", SuccessorsOf("x"))),
            Imp(b_ge("_", ("x",)), b_ge("_", ("xp",))),
        ))
    return ConstraintSet(tuple(cs), definition="barrier")


@dataclass(frozen=True)
class BranchUpdate:
    """Singleton domain holding the image of the bound state x under one
    branch (with the bound choice c when the branch is nondeterministic)."""

    index: int

    def enumerate(self, ctx, binding):
        branch = ctx.system.branches[self.index]
        x = binding["x"]
        if branch.choices is not None:
            point = tuple(x) + (binding["c"][0],)
        else:
            point = tuple(x)
        return [tuple(u.eval(point) for u in branch.updates)]

    def describe(self):
        return f"image of branch {self.index}"


def _branch_image_ge(branch, index):
    return Quantified(FORALL, "xp", BranchUpdate(index), b_ge("_", ("xp",)))


def gen_closure_constraints(system) -> ConstraintSet:
    """T nonnegative on every transition and backward-propagated along them."""
    step = Constraint(
        "closure:step",
        (Quant(FORALL, "x", AllStates()), Quant(FORALL, "xp", SuccessorsOf("x"))),
        t_ge("x", "xp"),
    )
    trans = Constraint(
        "closure:transitive",
        (Quant(FORALL, "x", AllStates()), Quant(FORALL, "y", AllStates()),
         Quant(FORALL, "xp", SuccessorsOf("x"))),
        Imp(t_ge("xp", "y"), t_ge("x", "y")),
    )
    return ConstraintSet((step, trans), definition="closure")


def gen_persistence_constraints(system, vf_set) -> ConstraintSet:
    """Closure conditions plus the decrease condition over the finitely
    visited set."""
    base = gen_closure_constraints(system)
    cond, members = _set_condition(system, vf_set, "yp")
    if members is not None:
        dom = ExplicitSet(members)
        quants = (
            Quant(FORALL, "x0", InitialStates()),
            Quant(FORALL, "yp", dom),
            Quant(FORALL, "ypp", ExplicitSet(members)),
        )
        body = Imp(Conj([t_ge("x0", "yp"), t_ge("yp", "ypp")]),
                   t_decrease("x0", "yp", "ypp"))
    else:
        cond2, _ = _set_condition(system, vf_set, "ypp")
        quants = (
            Quant(FORALL, "x0", InitialStates()),
            Quant(FORALL, "yp", AllStates()),
            Quant(FORALL, "ypp", AllStates()),
        )
        body = Imp(Conj([cond, cond2, t_ge("x0", "yp"), t_ge("yp", "ypp")]),
                   t_decrease("x0", "yp", "ypp"))
    decrease = Constraint("closure:rank-decrease", quants, body)
    return ConstraintSet(base.constraints + (decrease,), definition="persistence")


# ---------------------------------------------------------------------------
# Paired-trace safety conditions (no lookahead)
# ---------------------------------------------------------------------------


def gen_abc_constraints(system) -> ConstraintSet:
    """Pairwise barrier over the two-fold composition: matched initial pair,
    negativity on output mismatch, and stepwise matching."""
    _require_secret(system)
    initial = Constraint(
        "pairwise:initial-match",
        (Quant(FORALL, "xs", InitialStates("secret")),
         Quant(EXISTS, "xns", InitialStates("nonsecret"),
               skolem_key=("init", 2), skolem_args=("xs",))),
        Conj([ObsEq("xs", "xns"), b_ge("_", ("xs", "xns"))]),
    )
    mismatch = Constraint(
        "pairwise:output-mismatch",
        (Quant(FORALL, "x", AllStates()), Quant(FORALL, "y", AllStates())),
        Imp(Neg(ObsEq("x", "y")), b_le_neg_xi("_", ("x", "y"))),
    )
    step = Constraint(
        "pairwise:step-match",
        (Quant(FORALL, "x", AllStates()), Quant(FORALL, "y", AllStates()),
         Quant(FORALL, "xp", SuccessorsOf("x")),
         Quant(EXISTS, "yp", SuccessorsOf("y"),
               skolem_key=("step", 2), skolem_args=("x", "y", "xp"))),
        Imp(b_ge("_", ("x", "y")), b_ge("_", ("xp", "yp"))),
    )
    return ConstraintSet((initial, mismatch, step), definition="abc")


# ---------------------------------------------------------------------------
# Lookahead conditions for initial-state opacity
# ---------------------------------------------------------------------------


def gen_opacity_hc_constraints(system) -> ConstraintSet:
    """Matched initial pair for every lookahead consistent with T, negativity
    on output mismatch, and stepwise matching restricted to moves on a path
    to the lookahead."""
    _require_secret(system)
    initial = Constraint(
        "opacity:initial-match",
        (Quant(FORALL, "x0", InitialStates("secret")),
         Quant(FORALL, "z", LookaheadStates()),
         Quant(EXISTS, "xns", InitialStates("nonsecret"),
               skolem_key=("init", 2), skolem_args=("x0", "z"))),
        Imp(t_ge("x0", "z"), Conj([ObsEq("x0", "xns"), b_ge("_", ("x0", "xns", "z"))])),
    )
    mismatch = Constraint(
        "opacity:output-mismatch",
        (Quant(FORALL, "x0", InitialStates("secret")),
         Quant(FORALL, "z", LookaheadStates()),
         Quant(FORALL, "x", AllStates()), Quant(FORALL, "y", AllStates())),
        Imp(Conj([t_ge("x0", "z"), Neg(ObsEq("x", "y"))]),
            b_le_neg_xi("_", ("x", "y", "z"))),
    )
    step = Constraint(
        "opacity:step-match",
        (Quant(FORALL, "x0", InitialStates("secret")),
         Quant(FORALL, "z", LookaheadStates()),
         Quant(FORALL, "x", AllStates()), Quant(FORALL, "y", AllStates()),
         Quant(FORALL, "xp", SuccessorsOf("x")),
         Quant(EXISTS, "yp", SuccessorsOf("y"),
               skolem_key=("step", 2), skolem_args=("x0", "z", "x", "y", "xp"))),
        Imp(Conj([t_ge("x0", "z"), in_path_body("x0", "xp", "z"), b_ge("_", ("x", "y", "z"))]),
            b_ge("_", ("xp", "yp", "z"))),
    )
    return ConstraintSet((initial, mismatch, step), definition="opacity-hc")


# ---------------------------------------------------------------------------
# Automaton-directed conditions
# ---------------------------------------------------------------------------


def _b_args(p: int, v_positions) -> tuple:
    return tuple(f"x{i}" for i in range(1, p + 1)) + tuple(f"z{i}" for i in v_positions)


def _b_args_next(p: int, v_positions) -> tuple:
    return tuple(f"xp{i}" for i in range(1, p + 1)) + tuple(f"z{i}" for i in v_positions)


def _z_gate(i: int) -> Quantified:
    # Lookaheads range over states T-reachable from some initial state.
    return Quantified(EXISTS, f"x0g{i}", InitialStates(), t_ge(f"x0g{i}", f"z{i}"))


def _automaton_blocks(nba: NBA, p: int, v_positions) -> Conj:
    """The joint per-automaton-state step conditions: on accepting states the
    value stays nonnegative; on the rest it also decreases by xi."""
    b_now = _b_args(p, v_positions)
    b_next = _b_args_next(p, v_positions)
    trace_vars = tuple(f"x{i}" for i in range(1, p + 1))
    blocks = []
    for q in nba.states:
        for e in nba.out_edges(q):
            ant = Conj([b_ge(q, b_now), GuardSat(e.guard, trace_vars)])
            if q in nba.accepting:
                cons = b_ge(e.dst, b_next)
            else:
                cons = Conj([b_ge(e.dst, b_next),
                             b_decrease(q, b_now, e.dst, b_next)])
            blocks.append(Imp(ant, cons))
    return Conj(blocks)


def gen_fe_hc_constraints(system, formula: HyperFormula, nba: NBA) -> ConstraintSet:
    """Conditions for a block of universal quantifiers followed by a block of
    existential ones; the existential successor choice sees the whole product
    state, the lookaheads and the announced universal successors, but not the
    automaton state."""
    tag, f_set, e_set = classify_fragment(formula)
    if tag == "general":
        raise FragmentError("formula has a universal quantifier after an existential one")
    if nba.p != formula.p:
        raise ValidationError(f"automaton reads {nba.p} traces, formula has {formula.p}")
    p = formula.p
    f_pos = sorted(f_set)
    e_pos = sorted(e_set)

    init_quants = [Quant(FORALL, f"x{i}", InitialStates()) for i in f_pos]
    init_quants += [Quant(FORALL, f"z{i}", LookaheadStates()) for i in f_pos]
    sel_args = tuple(f"x{i}" for i in f_pos) + tuple(f"z{i}" for i in f_pos)
    init_quants += [
        Quant(EXISTS, f"x{l}", InitialStates(), skolem_key=("init", l), skolem_args=sel_args)
        for l in e_pos
    ]
    initial = Constraint(
        "forall-exists:initial",
        tuple(init_quants),
        Imp(Conj([t_ge(f"x{i}", f"z{i}") for i in f_pos]),
            b_ge(nba.initial, _b_args(p, f_pos))),
    )

    step_quants = [Quant(FORALL, f"z{i}", LookaheadStates()) for i in f_pos]
    step_quants += [Quant(FORALL, f"x{i}", AllStates()) for i in range(1, p + 1)]
    step_quants += [Quant(FORALL, f"xp{i}", SuccessorsOf(f"x{i}")) for i in f_pos]
    step_sel_args = tuple(f"x{i}" for i in range(1, p + 1)) \
        + tuple(f"z{i}" for i in f_pos) + tuple(f"xp{i}" for i in f_pos)
    step_quants += [
        Quant(EXISTS, f"xp{l}", SuccessorsOf(f"x{l}"),
              skolem_key=("step", l), skolem_args=step_sel_args)
        for l in e_pos
    ]
    gates = [_z_gate(i) for i in f_pos]
    gates += [in_path_body(f"x{i}", f"xp{i}", f"z{i}") for i in f_pos]
    step = Constraint(
        "forall-exists:step",
        tuple(step_quants),
        Imp(Conj(gates), _automaton_blocks(nba, p, f_pos)),
    )
    return ConstraintSet((initial, step), definition="fe-hc")


def gen_general_hc_constraints(system, formula: HyperFormula, nba: NBA) -> ConstraintSet:
    """Alternation-ordered conditions: quantifiers follow the prefix order, so
    each existential choice depends only on earlier-quantified components and
    on lookaheads of earlier universal components."""
    tag, f_set, e_set = classify_fragment(formula)
    if nba.p != formula.p:
        raise ValidationError(f"automaton reads {nba.p} traces, formula has {formula.p}")
    p = formula.p
    f_pos = sorted(f_set)

    init_quants: list[Quant] = []
    ladder: list[str] = []
    for i in range(1, p + 1):
        if i in f_set:
            init_quants.append(Quant(FORALL, f"x{i}", InitialStates()))
            ladder.append(f"x{i}")
            init_quants.append(Quant(FORALL, f"z{i}", LookaheadStates()))
            ladder.append(f"z{i}")
        else:
            init_quants.append(Quant(EXISTS, f"x{i}", InitialStates(),
                                     skolem_key=("init", i), skolem_args=tuple(ladder)))
            ladder.append(f"x{i}")
    initial = Constraint(
        "general:initial",
        tuple(init_quants),
        Imp(Conj([t_ge(f"x{i}", f"z{i}") for i in f_pos]),
            b_ge(nba.initial, _b_args(p, f_pos))),
    )

    step_quants: list[Quant] = []
    ladder = []
    for i in range(1, p + 1):
        step_quants.append(Quant(FORALL, f"x{i}", AllStates()))
        ladder.append(f"x{i}")
        if i in f_set:
            step_quants.append(Quant(FORALL, f"z{i}", LookaheadStates()))
            ladder.append(f"z{i}")
            step_quants.append(Quant(FORALL, f"xp{i}", SuccessorsOf(f"x{i}")))
            ladder.append(f"xp{i}")
        else:
            step_quants.append(Quant(EXISTS, f"xp{i}", SuccessorsOf(f"x{i}"),
                                     skolem_key=("step", i), skolem_args=tuple(ladder)))
            ladder.append(f"xp{i}")
    gates = [_z_gate(i) for i in f_pos]
    gates += [in_path_body(f"x{i}", f"xp{i}", f"z{i}") for i in f_pos]
    step = Constraint(
        "general:step",
        tuple(step_quants),
        Imp(Conj(gates), _automaton_blocks(nba, p, f_pos)),
    )
    return ConstraintSet((initial, step), definition="general-hc")


# ---------------------------------------------------------------------------
# Certificate serialization
# ---------------------------------------------------------------------------


def _value_json(v):
    if isinstance(v, tuple):
        return [rat_str(c) for c in v]
    return v


def _value_from_json(v):
    if isinstance(v, list):
        return tuple(rat(c) for c in v)
    return v


def _fun_to_json(fun):
    return fun.to_json() if fun is not None else None


def _fun_from_json(data):
    if data is None:
        return None
    kind = data.get("kind", "table")
    if kind == "table":
        entries = {}
        for key, value in data.get("entries", []):
            entries[tuple(_value_from_json(k) for k in key)] = rat(value)
        return TableFun(arity=int(data["arity"]), entries=entries,
                        default=rat(data.get("default", "-1")))
    if kind == "poly":
        dims = tuple(int(d) for d in data["dims"])
        return PolyFun(Poly.from_json(data, sum(dims)), dims)
    raise ParseError(f"unknown certificate component kind {kind!r}")


def _selector_from_json(data):
    kind = data.get("kind", "table")
    if kind == "table":
        entries = {}
        for key, value in data.get("entries", []):
            entries[tuple(_value_from_json(k) for k in key)] = _value_from_json(value)
        return TableSelector(entries)
    if kind == "polyvec":
        return PolySelector(tuple(Poly.from_json(p) for p in data["polys"]))
    raise ParseError(f"unknown selector kind {kind!r}")


def certificate_to_json(cert: HyperCertificate) -> dict:
    return {
        "xi": rat_str(cert.xi),
        "fragment": cert.fragment,
        "T": _fun_to_json(cert.T),
        "B": {q: _fun_to_json(f) for q, f in sorted(cert.B.items())},
        "skolem": cert.skolem.to_json() if cert.skolem else None,
    }


def certificate_from_json(data: dict) -> HyperCertificate:
    skolem = None
    if data.get("skolem"):
        selectors = {}
        for key, sel in data["skolem"].items():
            kind, _, pos = key.partition(":")
            selectors[(kind, int(pos))] = _selector_from_json(sel)
        skolem = Skolem(selectors)
    b_map = {q: _fun_from_json(f) for q, f in data.get("B", {}).items()}
    return HyperCertificate(
        T=_fun_from_json(data.get("T")),
        B=b_map,
        skolem=skolem,
        xi=rat(data.get("xi", "1")),
        fragment=data.get("fragment", ""),
    )


def load_certificate(path) -> HyperCertificate:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return certificate_from_json(data)


def save_certificate(cert: HyperCertificate, path):
    Path(path).write_text(json.dumps(certificate_to_json(cert), indent=2, sort_keys=True))
