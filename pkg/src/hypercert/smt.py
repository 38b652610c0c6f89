"""SMT-LIB2 export of constraint negations and a subprocess solver driver.

Each constraint contributes one (push)...(pop) block asserting the negation
of the constraint, so a sat answer is a counterexample.  Universally
quantified prefix variables become declared constants (model-extractable);
inner alternations stay as explicit quantifiers.  Floor expressions are
expanded into integer-valued auxiliary constants over interval bounds derived
from the sampling box.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction

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
    Quantified,
    StateEq,
    SuccessorsOf,
)
from .certificates import PolyFun, PolySelector
from .errors import ConfigError, SolverError, ValidationError
from .hyperltl import And as FAnd, Atom, Not as FNot, Or as FOr, Qf, TrueF
from .poly import Expr, FloorExpr, Poly, PolyExpr, ScaleExpr, SumExpr, rat_to_smt
from .systems import SECRET_PROP, SymbolicSystem


# ---------------------------------------------------------------------------
# Interval bounds for floor expansion
# ---------------------------------------------------------------------------


def _interval_poly(p: Poly, boxes):
    lo = hi = Fraction(0)
    for coeff, powers in p.terms:
        term_lo = term_hi = coeff
        for (vlo, vhi), e in zip(boxes, powers):
            if e == 0:
                continue
            candidates = [vlo**e, vhi**e]
            if vlo < 0 < vhi and e % 2 == 0:
                candidates.append(Fraction(0))
            plo, phi = min(candidates), max(candidates)
            options = [term_lo * plo, term_lo * phi, term_hi * plo, term_hi * phi]
            term_lo, term_hi = min(options), max(options)
        lo += term_lo
        hi += term_hi
    return lo, hi


def _interval_expr(e: Expr, boxes):
    if isinstance(e, PolyExpr):
        return _interval_poly(e.poly, boxes)
    if isinstance(e, FloorExpr):
        lo, hi = _interval_expr(e.arg, boxes)
        return Fraction(lo.numerator // lo.denominator), Fraction(hi.numerator // hi.denominator)
    if isinstance(e, SumExpr):
        lo = hi = Fraction(0)
        for a in e.args:
            alo, ahi = _interval_expr(a, boxes)
            lo += alo
            hi += ahi
        return lo, hi
    if isinstance(e, ScaleExpr):
        alo, ahi = _interval_expr(e.arg, boxes)
        opts = [e.coeff * alo, e.coeff * ahi]
        return min(opts), max(opts)
    raise ValidationError(f"unknown expression {e!r}")


class _Emitter:
    def __init__(self, system: SymbolicSystem, cert, box):
        self.system = system
        self.cert = cert
        self.box = box
        self.decls: list[str] = []
        self.asserts: list[str] = []
        self.fresh = 0

    def var_names(self, var: str) -> list[str]:
        return [f"{var}_{k}" for k in range(self.system.dim)]

    def declare_point(self, var: str) -> list[str]:
        names = self.var_names(var)
        for n in names:
            self.decls.append(f"(declare-const {n} Real)")
        return names

    def fresh_const(self, hint: str) -> str:
        self.fresh += 1
        name = f"{hint}_{self.fresh}"
        self.decls.append(f"(declare-const {name} Real)")
        return name

    # -- expressions ---------------------------------------------------------

    def expr_smt(self, e: Expr, names, extra_asserts, boxes) -> str:
        if isinstance(e, PolyExpr):
            return e.poly.to_smt(names)
        if isinstance(e, SumExpr):
            parts = [self.expr_smt(a, names, extra_asserts, boxes) for a in e.args]
            return "(+ " + " ".join(parts) + ")" if len(parts) > 1 else parts[0]
        if isinstance(e, ScaleExpr):
            return f"(* {rat_to_smt(e.coeff)} {self.expr_smt(e.arg, names, extra_asserts, boxes)})"
        if isinstance(e, FloorExpr):
            if boxes is None:
                raise ConfigError("floor export needs a sampling box for bounds")
            arg = self.expr_smt(e.arg, names, extra_asserts, boxes)
            lo, hi = _interval_expr(e.arg, boxes)
            k = self.fresh_const("floor")
            extra_asserts.append(f"(<= {k} {arg})")
            extra_asserts.append(f"(< {arg} (+ {k} 1.0))")
            values = range(lo.numerator // lo.denominator, hi.numerator // hi.denominator + 1)
            cases = " ".join(f"(= {k} {v}.0)" for v in values)
            extra_asserts.append(f"(or {cases})" if cases else "false")
            return k
        raise ValidationError(f"unknown expression {e!r}")

    # -- domains --------------------------------------------------------------

    def space_smt(self, names) -> str:
        conds = [p.to_smt(names) for p in self.system.space]
        if not conds:
            return "true"
        return conds[0] if len(conds) == 1 else "(and " + " ".join(conds) + ")"

    def domain_smt(self, domain, names, binding_names) -> str:
        if isinstance(domain, (AllStates, LookaheadStates)):
            return self.space_smt(names)
        if isinstance(domain, InitialStates):
            base = self._initial_smt(names)
            if domain.filter is None:
                return base
            secret = self.system.labels.get(SECRET_PROP)
            if secret is None:
                raise ValidationError(f"system declares no {SECRET_PROP!r} label")
            cond = secret.to_smt(names)
            if domain.filter == "nonsecret":
                cond = f"(not {cond})"
            return f"(and {base} {cond})"
        if isinstance(domain, ExplicitSet):
            cases = []
            for value in domain.values:
                eqs = " ".join(f"(= {n} {rat_to_smt(Fraction(c))})"
                               for n, c in zip(names, value))
                cases.append(f"(and {eqs})" if len(value) > 1 else eqs)
            return "(or " + " ".join(cases) + ")" if len(cases) > 1 else cases[0]
        if isinstance(domain, SuccessorsOf):
            return self._successor_smt(names, binding_names[domain.var])
        raise ValidationError(f"cannot export domain {domain!r}")

    def _initial_smt(self, names) -> str:
        if self.system.init_points is not None:
            cases = []
            for point in self.system.init_points:
                eqs = " ".join(f"(= {n} {rat_to_smt(c)})" for n, c in zip(names, point))
                cases.append(f"(and {eqs})" if len(point) > 1 else eqs)
            return "(or " + " ".join(cases) + ")" if len(cases) > 1 else cases[0]
        return self.system.init_pred.to_smt(names)

    def _successor_smt(self, succ_names, base_names) -> str:
        boxes = self.box
        cases = []
        for branch in self.system.branches:
            guard = branch.guard.to_smt(base_names)
            choices = branch.choices if branch.choices is not None else (None,)
            for c in choices:
                names = list(base_names)
                arg_boxes = list(boxes) if boxes is not None else None
                if c is not None:
                    names = names + [rat_to_smt(c)]
                    if arg_boxes is not None:
                        arg_boxes = arg_boxes + [(c, c)]
                extra: list[str] = []
                eqs = []
                for k, upd in enumerate(branch.updates):
                    # the choice "name" is an smt literal; substitute directly
                    term = self.expr_smt(upd, names, extra, arg_boxes)
                    eqs.append(f"(= {succ_names[k]} {term})")
                parts = [guard] + extra + eqs
                cases.append("(and " + " ".join(parts) + ")")
        return "(or " + " ".join(cases) + ")" if len(cases) > 1 else cases[0]

    # -- bodies ---------------------------------------------------------------

    def guard_smt(self, guard: Qf, trace_names) -> str:
        if isinstance(guard, TrueF):
            return "true"
        if isinstance(guard, Atom):
            pred = self.system.labels.get(guard.prop)
            if pred is None:
                return "false"
            return pred.to_smt(trace_names[guard.trace - 1])
        if isinstance(guard, FNot):
            return f"(not {self.guard_smt(guard.arg, trace_names)})"
        if isinstance(guard, FAnd):
            return (f"(and {self.guard_smt(guard.left, trace_names)} "
                    f"{self.guard_smt(guard.right, trace_names)})")
        if isinstance(guard, FOr):
            return (f"(or {self.guard_smt(guard.left, trace_names)} "
                    f"{self.guard_smt(guard.right, trace_names)})")
        raise ValidationError("temporal operator in a guard")

    def cert_term(self, key, arg_vars, binding_names) -> str:
        if key[0] == "T":
            fun = self.cert.T
        else:
            fun = self.cert.B.get(key[1])
        if not isinstance(fun, PolyFun):
            raise ConfigError("SMT export needs polynomial certificate components")
        names = []
        for v in arg_vars:
            names.extend(binding_names[v])
        return fun.poly.to_smt(names)

    def body_smt(self, node, binding_names) -> str:
        if isinstance(node, Conj):
            if not node.items:
                return "true"
            parts = [self.body_smt(i, binding_names) for i in node.items]
            return parts[0] if len(parts) == 1 else "(and " + " ".join(parts) + ")"
        if isinstance(node, Disj):
            if not node.items:
                return "false"
            parts = [self.body_smt(i, binding_names) for i in node.items]
            return parts[0] if len(parts) == 1 else "(or " + " ".join(parts) + ")"
        if isinstance(node, Neg):
            return f"(not {self.body_smt(node.item, binding_names)})"
        if isinstance(node, Imp):
            return (f"(=> {self.body_smt(node.antecedent, binding_names)} "
                    f"{self.body_smt(node.consequent, binding_names)})")
        if isinstance(node, CertCmp):
            parts = []
            for coeff, key, arg_vars in node.terms:
                term = self.cert_term(key, arg_vars, binding_names)
                parts.append(term if coeff == 1 else f"(* {rat_to_smt(coeff)} {term})")
            const = node.const + node.xi_coeff * self.cert.xi
            if const != 0 or not parts:
                parts.append(rat_to_smt(const))
            total = parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"
            return f"(>= {total} 0.0)"
        if isinstance(node, ObsEq):
            if self.system.obs_equiv is None:
                raise ConfigError("SMT export of output equality needs obs_equiv")
            names = binding_names[node.left] + binding_names[node.right]
            return self.system.obs_equiv.to_smt(names)
        if isinstance(node, StateEq):
            eqs = [f"(= {a} {b})" for a, b in
                   zip(binding_names[node.left], binding_names[node.right])]
            return eqs[0] if len(eqs) == 1 else "(and " + " ".join(eqs) + ")"
        if isinstance(node, HasLabel):
            pred = self.system.labels.get(node.prop)
            if pred is None:
                return "false"
            return pred.to_smt(binding_names[node.var])
        if isinstance(node, PredHolds):
            return node.pred.to_smt(binding_names[node.var])
        if isinstance(node, GuardSat):
            trace_names = [binding_names[v] for v in node.trace_vars]
            return self.guard_smt(node.guard, trace_names)
        if isinstance(node, Quantified):
            return self.quantified_smt(node, binding_names)
        raise ValidationError(f"cannot export body node {node!r}")

    def quantified_smt(self, node: Quantified, binding_names) -> str:
        selector = None
        if node.skolem_key is not None and self.cert.skolem is not None:
            selector = self.cert.skolem.selectors.get(node.skolem_key)
        if node.kind == EXISTS and isinstance(selector, PolySelector):
            flat = []
            for v in node.skolem_args:
                flat.extend(binding_names[v])
            names = [p.to_smt(flat) for p in selector.polys]
            inner = self.body_smt(node.body, {**binding_names, node.var: names})
            return inner
        names = [f"{node.var}_{k}" for k in range(self.system.dim)]
        dom = self.domain_smt(node.domain, names, binding_names)
        inner = self.body_smt(node.body, {**binding_names, node.var: names})
        bound = " ".join(f"({n} Real)" for n in names)
        if node.kind == EXISTS:
            return f"(exists ({bound}) (and {dom} {inner}))"
        return f"(forall ({bound}) (=> {dom} {inner}))"


def export_constraint(constraint: Constraint, cert, system: SymbolicSystem,
                      box=None) -> str:
    """One block asserting the negation of the constraint."""
    em = _Emitter(system, cert, box)
    binding_names: dict = {}
    idx = 0
    quants = list(constraint.quants)
    # Leading universals become declared constants; from the first existential
    # onward the remainder is folded into the body as explicit quantifiers.
    while idx < len(quants) and quants[idx].kind == FORALL:
        q = quants[idx]
        names = em.declare_point(q.var)
        binding_names[q.var] = names
        em.asserts.append(em.domain_smt(q.domain, names, binding_names))
        idx += 1
    body = constraint.body
    for q in reversed(quants[idx:]):
        body = Quantified(q.kind, q.var, q.domain, body, q.skolem_key, q.skolem_args)
    em.asserts.append(f"(not {em.body_smt(body, binding_names)})")
    lines = [f'(echo "{constraint.tag}")', "(push 1)"]
    lines.extend(em.decls)
    lines.extend(f"(assert {a})" for a in em.asserts)
    lines.append("(check-sat)")
    lines.append("(pop 1)")
    return "\n".join(lines)


def export_smtlib(cs: ConstraintSet, cert, system, box=None,
                  get_values: bool = False) -> str:
    """SMT-LIB2 script with one negated block per constraint.

    With ``get_values`` the declared constants of each block are queried after
    check-sat (use one constraint per script when driving a solver, since
    get-value on an unsat block is an error most solvers report but survive).
    """
    if not isinstance(system, SymbolicSystem):
        raise ConfigError("SMT export targets symbolic systems")
    blocks = ["(set-logic NRA)", "(set-option :produce-models true)"]
    if not len(cs):
        blocks.append('(echo "empty")\n(push 1)\n(assert false)\n(check-sat)\n(pop 1)')
        return "\n".join(blocks)
    for c in cs:
        text = export_constraint(c, cert, system, box=box)
        if get_values:
            names = [line.split()[1] for line in text.splitlines()
                     if line.startswith("(declare-const")]
            if names:
                text = text.replace("(pop 1)",
                                    f"(get-value ({' '.join(names)}))\n(pop 1)")
        blocks.append(text)
    return "\n".join(blocks)


# ---------------------------------------------------------------------------
# External solver driver
# ---------------------------------------------------------------------------


@dataclass
class SolverResult:
    status: str  # "sat", "unsat" or "unknown"
    model: dict = field(default_factory=dict)
    raw: str = ""


def _tokenize_sexpr(text: str):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _parse_sexprs(tokens, pos=0):
    items = []
    while pos < len(tokens):
        tok = tokens[pos]
        if tok == "(":
            sub, pos = _parse_sexprs(tokens, pos + 1)
            items.append(sub)
        elif tok == ")":
            return items, pos + 1
        else:
            items.append(tok)
            pos += 1
    return items, pos


def _sexpr_value(node) -> Fraction:
    if isinstance(node, str):
        return Fraction(node)
    if not node:
        raise SolverError("empty value expression")
    head = node[0]
    if head == "-":
        if len(node) == 2:
            return -_sexpr_value(node[1])
        return _sexpr_value(node[1]) - _sexpr_value(node[2])
    if head == "/":
        return _sexpr_value(node[1]) / _sexpr_value(node[2])
    if head == "+":
        return sum((_sexpr_value(n) for n in node[1:]), Fraction(0))
    if head == "*":
        out = Fraction(1)
        for n in node[1:]:
            out *= _sexpr_value(n)
        return out
    raise SolverError(f"cannot parse model value {node!r}")


def run_external_solver(script: str, command: str = "z3 -in",
                        timeout: float = 60.0) -> SolverResult:
    """Feed an SMT-LIB2 script to a solver subprocess and parse the outcome.

    Timeouts map to an unknown result; unparseable output or a nonzero exit
    without any verdict raises SolverError.
    """
    argv = shlex.split(command)
    try:
        proc = subprocess.run(argv, input=script.encode(), stdout=subprocess.PIPE,
                              stderr=subprocess.STDOUT, timeout=timeout)
    except subprocess.TimeoutExpired:
        return SolverResult("unknown", raw="timeout")
    except OSError as exc:
        raise SolverError(f"cannot launch solver {command!r}: {exc}") from exc
    out = proc.stdout.decode(errors="replace")
    status = None
    for line in out.splitlines():
        line = line.strip()
        if line in ("sat", "unsat", "unknown"):
            status = line
            break
    if status is None:
        raise SolverError(f"solver produced no verdict (exit {proc.returncode}): {out[:500]}")
    result = SolverResult(status, raw=out)
    if status == "sat":
        tail = out[out.index("sat") + 3:]
        tokens = _tokenize_sexpr(tail)
        parsed, _ = _parse_sexprs(tokens)
        for group in parsed:
            if not isinstance(group, list):
                continue
            for pair in group:
                if isinstance(pair, list) and len(pair) == 2 and isinstance(pair[0], str):
                    try:
                        result.model[pair[0]] = _sexpr_value(pair[1])
                    except (SolverError, ValueError, ZeroDivisionError):
                        continue
    return result
