"""Exact polynomial expressions, update expressions and semi-algebraic predicates.

All coefficients are rationals (``fractions.Fraction``) so that point
evaluations are exact.  A fast float path over numpy arrays is provided for
sampling-based falsification; any candidate violation found on that path is
re-confirmed exactly before it is reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ArityError, ParseError

Rat = Fraction


def rat(value) -> Fraction:
    """Parse a rational from a string ("3/4", "0.0028", "1.3e-5"), int or Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # Floats only enter through internal sampling; convert exactly.
        return Fraction(value).limit_denominator(10**12)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ParseError(f"not a rational: {value!r}") from exc
    raise ParseError(f"not a rational: {value!r}")


def rat_str(q: Fraction) -> str:
    """Canonical string form used in JSON output."""
    return str(q)


def rat_to_smt(q: Fraction) -> str:
    if q < 0:
        return f"(- {rat_to_smt(-q)})"
    if q.denominator == 1:
        return f"{q.numerator}.0"
    return f"(/ {q.numerator}.0 {q.denominator}.0)"


class Poly:
    """A multivariate polynomial with rational coefficients.

    Monomials are kept in graded-lexicographic order with zero coefficients
    dropped, so two equal polynomials print identically.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Iterable[tuple[Fraction, tuple[int, ...]]] = ()):
        self.nvars = nvars
        merged: dict[tuple[int, ...], Fraction] = {}
        for coeff, powers in terms:
            powers = tuple(int(p) for p in powers)
            if len(powers) != nvars:
                raise ArityError(f"monomial has {len(powers)} exponents, expected {nvars}")
            c = merged.get(powers, Fraction(0)) + coeff
            if c == 0:
                merged.pop(powers, None)
            else:
                merged[powers] = c
        self.terms = tuple(
            (merged[p], p) for p in sorted(merged, key=lambda p: (sum(p), tuple(-e for e in p)))
        )

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def constant(nvars: int, value) -> "Poly":
        return Poly(nvars, [(rat(value), (0,) * nvars)])

    @staticmethod
    def variable(nvars: int, index: int, coeff=1) -> "Poly":
        powers = [0] * nvars
        powers[index] = 1
        return Poly(nvars, [(rat(coeff), tuple(powers))])

    def __add__(self, other: "Poly") -> "Poly":
        if self.nvars != other.nvars:
            raise ArityError("mixed variable counts")
        return Poly(self.nvars, list(self.terms) + list(other.terms))

    def scale(self, factor) -> "Poly":
        f = rat(factor)
        return Poly(self.nvars, [(c * f, p) for c, p in self.terms])

    # -- evaluation ------------------------------------------------------------

    def eval(self, point: Sequence[Fraction]) -> Fraction:
        if len(point) != self.nvars:
            raise ArityError(f"point has {len(point)} coords, expected {self.nvars}")
        total = Fraction(0)
        for coeff, powers in self.terms:
            term = coeff
            for value, power in zip(point, powers):
                if power:
                    term *= Fraction(value) ** power
            total += term
        return total

    def eval_array(self, columns: Sequence[np.ndarray]) -> np.ndarray:
        """Evaluate over numpy columns (one broadcastable array per variable)."""
        if len(columns) != self.nvars:
            raise ArityError(f"{len(columns)} columns, expected {self.nvars}")
        total = None
        for coeff, powers in self.terms:
            term = np.float64(coeff)
            for col, power in zip(columns, powers):
                if power == 1:
                    term = term * col
                elif power:
                    term = term * (col ** power)
            total = term if total is None else total + term
        if total is None:
            return np.float64(0.0)
        return total

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "monomials": [
                {"coeff": rat_str(c), "powers": list(p)} for c, p in self.terms
            ]
        }

    @staticmethod
    def from_json(data: dict, nvars: int | None = None) -> "Poly":
        if not isinstance(data, dict) or "monomials" not in data:
            raise ParseError("polynomial object must have a 'monomials' list")
        monos = data["monomials"]
        if nvars is None:
            if not monos:
                raise ParseError("cannot infer variable count of an empty polynomial")
            nvars = len(monos[0]["powers"])
        terms = []
        for m in monos:
            powers = m.get("powers")
            if not isinstance(powers, list) or len(powers) != nvars:
                raise ParseError(f"monomial powers must have length {nvars}")
            terms.append((rat(m.get("coeff", "0")), tuple(powers)))
        return Poly(nvars, terms)

    def to_smt(self, names: Sequence[str]) -> str:
        if len(names) != self.nvars:
            raise ArityError("name list does not match variable count")
        if not self.terms:
            return "0.0"
        parts = []
        for coeff, powers in self.terms:
            factors = [rat_to_smt(coeff)]
            for name, power in zip(names, powers):
                factors.extend([name] * power)
            parts.append(factors[0] if len(factors) == 1 else "(* " + " ".join(factors) + ")")
        return parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"

    def pretty(self, names: Sequence[str] | None = None) -> str:
        names = names or [f"x{i+1}" for i in range(self.nvars)]
        if not self.terms:
            return "0"
        chunks = []
        for coeff, powers in self.terms:
            body = "*".join(
                f"{names[i]}^{e}" if e > 1 else names[i]
                for i, e in enumerate(powers)
                if e
            )
            if body:
                chunks.append(f"{coeff}*{body}" if coeff != 1 else body)
            else:
                chunks.append(str(coeff))
        return " + ".join(chunks)

    def __eq__(self, other):
        return isinstance(other, Poly) and self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, self.terms))

    def __repr__(self):
        return f"Poly({self.pretty()})"


def monomial_basis(nvars: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent vectors of total degree <= degree, graded-lex ordered."""
    basis: list[tuple[int, ...]] = []

    def rec(prefix, remaining, slots):
        if slots == 0:
            basis.append(tuple(prefix))
            return
        for e in range(remaining + 1):
            rec(prefix + [e], remaining - e, slots - 1)

    for total in range(degree + 1):
        chunk: list[tuple[int, ...]] = []

        def rec2(prefix, remaining, slots):
            if slots == 0:
                if remaining == 0:
                    chunk.append(tuple(prefix))
                return
            for e in range(remaining, -1, -1):
                rec2(prefix + [e], remaining - e, slots - 1)

        rec2([], total, nvars)
        basis.extend(chunk)
    return basis


# ---------------------------------------------------------------------------
# Update expressions: polynomials closed under floor, sums and rational scaling.
# ---------------------------------------------------------------------------


class Expr:
    """Base class for update expressions over state variables (plus an
    optional trailing choice variable)."""

    nvars: int

    def eval(self, point: Sequence[Fraction]) -> Fraction:
        raise NotImplementedError

    def eval_array(self, columns: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def has_floor(self) -> bool:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PolyExpr(Expr):
    poly: Poly

    @property
    def nvars(self):
        return self.poly.nvars

    def eval(self, point):
        return self.poly.eval(point)

    def eval_array(self, columns):
        return self.poly.eval_array(columns)

    def has_floor(self):
        return False

    def to_json(self):
        return {"kind": "poly", **self.poly.to_json()}


@dataclass(frozen=True)
class FloorExpr(Expr):
    arg: Expr

    @property
    def nvars(self):
        return self.arg.nvars

    def eval(self, point):
        value = self.arg.eval(point)
        return Fraction(value.numerator // value.denominator)

    def eval_array(self, columns):
        return np.floor(self.arg.eval_array(columns))

    def has_floor(self):
        return True

    def to_json(self):
        return {"kind": "floor", "arg": self.arg.to_json()}


@dataclass(frozen=True)
class SumExpr(Expr):
    args: tuple[Expr, ...]

    @property
    def nvars(self):
        return self.args[0].nvars

    def eval(self, point):
        return sum((a.eval(point) for a in self.args), Fraction(0))

    def eval_array(self, columns):
        total = self.args[0].eval_array(columns)
        for a in self.args[1:]:
            total = total + a.eval_array(columns)
        return total

    def has_floor(self):
        return any(a.has_floor() for a in self.args)

    def to_json(self):
        return {"kind": "add", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class ScaleExpr(Expr):
    coeff: Fraction
    arg: Expr

    @property
    def nvars(self):
        return self.arg.nvars

    def eval(self, point):
        return self.coeff * self.arg.eval(point)

    def eval_array(self, columns):
        return float(self.coeff) * self.arg.eval_array(columns)

    def has_floor(self):
        return self.arg.has_floor()

    def to_json(self):
        return {"kind": "scale", "coeff": rat_str(self.coeff), "arg": self.arg.to_json()}


def expr_from_json(data: dict, nvars: int) -> Expr:
    if not isinstance(data, dict):
        raise ParseError("expression must be a JSON object")
    kind = data.get("kind", "poly")
    if kind == "poly":
        return PolyExpr(Poly.from_json(data, nvars))
    if kind == "floor":
        return FloorExpr(expr_from_json(data["arg"], nvars))
    if kind == "add":
        args = tuple(expr_from_json(a, nvars) for a in data["args"])
        if not args:
            raise ParseError("'add' needs at least one argument")
        return SumExpr(args)
    if kind == "scale":
        return ScaleExpr(rat(data["coeff"]), expr_from_json(data["arg"], nvars))
    raise ParseError(f"unknown expression kind {kind!r}")


# ---------------------------------------------------------------------------
# Semi-algebraic predicates.
# ---------------------------------------------------------------------------


class Pred:
    """Boolean combination of polynomial comparisons over a state vector."""

    nvars: int

    def holds(self, point: Sequence[Fraction]) -> bool:
        raise NotImplementedError

    def holds_array(self, columns: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def to_smt(self, names: Sequence[str]) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class TruePred(Pred):
    nvars: int = 0

    def holds(self, point):
        return True

    def holds_array(self, columns):
        return True

    def to_json(self):
        return {"op": "true"}

    def to_smt(self, names):
        return "true"


@dataclass(frozen=True)
class CmpPred(Pred):
    op: str  # "ge" (>= 0), "gt" (> 0) or "eq" (= 0)
    poly: Poly

    @property
    def nvars(self):
        return self.poly.nvars

    def holds(self, point):
        value = self.poly.eval(point)
        if self.op == "ge":
            return value >= 0
        if self.op == "gt":
            return value > 0
        return value == 0

    def holds_array(self, columns):
        value = self.poly.eval_array(columns)
        if self.op == "ge":
            return value >= 0
        if self.op == "gt":
            return value > 0
        return value == 0

    def to_json(self):
        return {"op": self.op, "poly": self.poly.to_json()}

    def to_smt(self, names):
        term = self.poly.to_smt(names)
        sym = {"ge": ">=", "gt": ">", "eq": "="}[self.op]
        return f"({sym} {term} 0.0)"


@dataclass(frozen=True)
class NotPred(Pred):
    arg: Pred

    @property
    def nvars(self):
        return self.arg.nvars

    def holds(self, point):
        return not self.arg.holds(point)

    def holds_array(self, columns):
        return np.logical_not(self.arg.holds_array(columns))

    def to_json(self):
        return {"op": "not", "arg": self.arg.to_json()}

    def to_smt(self, names):
        return f"(not {self.arg.to_smt(names)})"


@dataclass(frozen=True)
class AndPred(Pred):
    args: tuple[Pred, ...]

    @property
    def nvars(self):
        return max((a.nvars for a in self.args), default=0)

    def holds(self, point):
        return all(a.holds(point) for a in self.args)

    def holds_array(self, columns):
        result = True
        for a in self.args:
            result = np.logical_and(result, a.holds_array(columns))
        return result

    def to_json(self):
        return {"op": "and", "args": [a.to_json() for a in self.args]}

    def to_smt(self, names):
        if not self.args:
            return "true"
        return "(and " + " ".join(a.to_smt(names) for a in self.args) + ")"


@dataclass(frozen=True)
class OrPred(Pred):
    args: tuple[Pred, ...]

    @property
    def nvars(self):
        return max((a.nvars for a in self.args), default=0)

    def holds(self, point):
        return any(a.holds(point) for a in self.args)

    def holds_array(self, columns):
        result = False
        for a in self.args:
            result = np.logical_or(result, a.holds_array(columns))
        return result

    def to_json(self):
        return {"op": "or", "args": [a.to_json() for a in self.args]}

    def to_smt(self, names):
        if not self.args:
            return "false"
        return "(or " + " ".join(a.to_smt(names) for a in self.args) + ")"


def pred_from_json(data: dict, nvars: int) -> Pred:
    if not isinstance(data, dict):
        raise ParseError("predicate must be a JSON object")
    op = data.get("op")
    if op == "true":
        return TruePred(nvars)
    if op in ("ge", "gt", "eq"):
        return CmpPred(op, Poly.from_json(data["poly"], nvars))
    if op == "not":
        return NotPred(pred_from_json(data["arg"], nvars))
    if op == "and":
        return AndPred(tuple(pred_from_json(a, nvars) for a in data["args"]))
    if op == "or":
        return OrPred(tuple(pred_from_json(a, nvars) for a in data["args"]))
    raise ParseError(f"unknown predicate op {op!r}")
