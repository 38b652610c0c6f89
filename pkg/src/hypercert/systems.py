"""System models: finite explicit transition systems and symbolic polynomial systems.

A finite system state is identified by a string; a symbolic system state is a
tuple of rationals of length ``dim``.  Both kinds are immutable after loading
and all operations here are pure, so systems can be shared freely across
worker threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import DomainError, ParseError, ValidationError
from .poly import Expr, Pred, expr_from_json, pred_from_json, rat

FinState = str
SymState = tuple[Fraction, ...]
StatePoint = Union[FinState, SymState]

SECRET_PROP = "s"
OUTPUT_PROP = "o"


@dataclass(frozen=True)
class FiniteSystem:
    """Explicit nondeterministic transition system with a labeling map."""

    states: tuple[str, ...]
    initial: frozenset
    transitions: dict
    labels: dict
    aps: frozenset
    name: str = ""

    @property
    def kind(self) -> str:
        return "finite"

    def label(self, x: str) -> frozenset:
        return self.labels[x]

    def successors(self, x: str) -> frozenset:
        if x not in self.transitions:
            raise DomainError(f"state {x!r} is not declared")
        return self.transitions[x]

    def secret_states(self) -> frozenset:
        return frozenset(x for x in self.states if SECRET_PROP in self.labels[x])

    def secret_initial(self) -> frozenset:
        return frozenset(x for x in self.initial if SECRET_PROP in self.labels[x])

    def nonsecret_initial(self) -> frozenset:
        return frozenset(x for x in self.initial if SECRET_PROP not in self.labels[x])

    def obs_equal(self, x: str, y: str) -> bool:
        if x not in self.transitions or y not in self.transitions:
            raise DomainError("state outside the declared state set")
        return (OUTPUT_PROP in self.labels[x]) == (OUTPUT_PROP in self.labels[y])

    def reachability_closure(self) -> frozenset:
        """All pairs (x, y) with y reachable from x in one or more steps."""
        pairs = set()
        for src in self.states:
            seen = set()
            frontier = set(self.transitions[src])
            while frontier:
                seen |= frontier
                frontier = {n for y in frontier for n in self.transitions[y]} - seen
            pairs.update((src, y) for y in seen)
        return frozenset(pairs)


@dataclass(frozen=True)
class Branch:
    """One guarded update of a symbolic system.

    ``updates`` has one expression per dimension.  When ``choices`` is set the
    update expressions take one extra trailing variable bound to the chosen
    element, so nondeterminism stays finitely enumerable at every point.
    """

    guard: Pred
    updates: tuple[Expr, ...]
    choices: tuple[Fraction, ...] | None = None


@dataclass(frozen=True)
class SymbolicSystem:
    """Discrete-time polynomial system over a semi-algebraic state space."""

    dim: int
    space: tuple[Pred, ...]
    init_points: tuple[SymState, ...] | None
    init_pred: Pred | None
    branches: tuple[Branch, ...]
    labels: dict
    obs_equiv: Pred | None
    var_names: tuple[str, ...]
    name: str = ""

    @property
    def kind(self) -> str:
        return "symbolic"

    def in_space(self, x: SymState) -> bool:
        if len(x) != self.dim:
            raise DomainError(f"point of dimension {len(x)}, system has {self.dim}")
        return all(p.holds(x) for p in self.space)

    def successors(self, x: SymState) -> list[SymState]:
        if not self.in_space(x):
            raise DomainError(f"point {tuple(map(str, x))} outside the state space")
        result: list[SymState] = []
        seen = set()
        for branch in self.branches:
            if not branch.guard.holds(x):
                continue
            choice_values: Iterable = branch.choices if branch.choices is not None else (None,)
            for c in choice_values:
                point = tuple(x) + ((c,) if c is not None else ())
                succ = tuple(u.eval(point) for u in branch.updates)
                if succ not in seen:
                    seen.add(succ)
                    result.append(succ)
        if not result:
            raise DomainError(f"no branch guard holds at {tuple(map(str, x))}")
        return result

    def label_holds(self, prop: str, x: SymState) -> bool:
        pred = self.labels.get(prop)
        if pred is None:
            return False
        return pred.holds(x)

    def obs_equal(self, x: SymState, y: SymState) -> bool:
        if not self.in_space(x) or not self.in_space(y):
            raise DomainError("point outside the state space")
        if self.obs_equiv is not None:
            return self.obs_equiv.holds(tuple(x) + tuple(y))
        return self.label_holds(OUTPUT_PROP, x) == self.label_holds(OUTPUT_PROP, y)


System = Union[FiniteSystem, SymbolicSystem]


def successors(system: System, x: StatePoint):
    return system.successors(x)


def obs_equal(system: System, x: StatePoint, y: StatePoint) -> bool:
    return system.obs_equal(x, y)


def reachability_closure(system: FiniteSystem) -> frozenset:
    return system.reachability_closure()


def simulate_reachable(system: System, seeds: Sequence[StatePoint], depth: int,
                       cap: int = 100000) -> list:
    """Seeds plus every state reachable from them within ``depth`` steps.

    Symbolic successors that leave the declared state space are dropped, so
    the result is usable as a lookahead sample domain.
    """
    ordered = list(seeds)
    seen = set(ordered)
    frontier = list(ordered)
    for _ in range(depth):
        nxt = []
        for x in frontier:
            for y in system.successors(x):
                if isinstance(system, SymbolicSystem) and not system.in_space(y):
                    continue
                if y not in seen:
                    seen.add(y)
                    ordered.append(y)
                    nxt.append(y)
                    if len(ordered) > cap:
                        raise ValidationError("reachable sample set exceeds cap")
        frontier = nxt
    return ordered


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _load_finite(data: dict, name: str) -> FiniteSystem:
    try:
        states = tuple(str(s) for s in data["states"])
        initial = frozenset(str(s) for s in data["initial"])
        edges = [(str(a), str(b)) for a, b in data["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed finite system: {exc}") from exc
    state_set = set(states)
    if len(state_set) != len(states):
        raise ValidationError("duplicate state identifiers")
    if not initial:
        raise ValidationError("initial set is empty")
    for s in initial:
        if s not in state_set:
            raise ValidationError(f"initial state {s!r} is not declared")
    transitions = {s: set() for s in states}
    for a, b in edges:
        if a not in state_set or b not in state_set:
            raise ValidationError(f"edge ({a!r}, {b!r}) references an undeclared state")
        transitions[a].add(b)
    for s in states:
        if not transitions[s]:
            raise ValidationError(f"state {s!r} has no successor")
    raw_labels = data.get("labels", {})
    labels = {}
    for s in states:
        props = raw_labels.get(s, [])
        labels[s] = frozenset(str(p) for p in props)
    for s in raw_labels:
        if s not in state_set:
            raise ValidationError(f"label entry for undeclared state {s!r}")
    aps = frozenset(data.get("aps", sorted({p for ps in labels.values() for p in ps})))
    for s, props in labels.items():
        if not props <= aps:
            raise ValidationError(f"state {s!r} uses propositions outside the alphabet")
    return FiniteSystem(
        states=states,
        initial=initial,
        transitions={s: frozenset(ts) for s, ts in transitions.items()},
        labels=labels,
        aps=aps,
        name=name,
    )


def _load_symbolic(data: dict, name: str) -> SymbolicSystem:
    try:
        dim = int(data["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed symbolic system: {exc}") from exc
    if dim <= 0:
        raise ValidationError("dimension must be positive")
    var_names = tuple(data.get("vars", [f"x{i+1}" for i in range(dim)]))
    if len(var_names) != dim:
        raise ValidationError("vars list does not match the dimension")
    space = tuple(pred_from_json(p, dim) for p in data.get("space", []))

    init = data.get("init")
    init_points = init_pred = None
    if isinstance(init, dict) and "points" in init:
        init_points = tuple(tuple(rat(c) for c in pt) for pt in init["points"])
        if not init_points:
            raise ValidationError("initial point set is empty")
        for pt in init_points:
            if len(pt) != dim:
                raise ValidationError("initial point has wrong dimension")
    elif isinstance(init, dict) and "set" in init:
        init_pred = pred_from_json(init["set"], dim)
    else:
        raise ParseError("init must carry either 'points' or 'set'")

    branches = []
    for b in data.get("branches", []):
        choices = None
        if b.get("choices") is not None:
            choices = tuple(rat(c) for c in b["choices"])
            if not choices:
                raise ValidationError("choice set must be nonempty when present")
        arity = dim + (1 if choices is not None else 0)
        guard = pred_from_json(b["guard"], dim) if b.get("guard") else None
        updates = tuple(expr_from_json(u, arity) for u in b["update"])
        if len(updates) != dim:
            raise ValidationError("update vector does not match the dimension")
        from .poly import TruePred

        branches.append(Branch(guard or TruePred(dim), updates, choices))
    if not branches:
        raise ValidationError("symbolic system needs at least one branch")

    labels = {str(p): pred_from_json(q, dim) for p, q in data.get("labels", {}).items()}
    obs = data.get("obs_equiv")
    obs_equiv = pred_from_json(obs, 2 * dim) if obs is not None else None

    system = SymbolicSystem(
        dim=dim,
        space=space,
        init_points=init_points,
        init_pred=init_pred,
        branches=tuple(branches),
        labels=labels,
        obs_equiv=obs_equiv,
        var_names=var_names,
        name=name,
    )
    if init_points:
        for pt in init_points:
            if not system.in_space(pt):
                raise ValidationError("initial point lies outside the state space")
            if not any(b.guard.holds(pt) for b in system.branches):
                raise ValidationError("no branch guard holds at an initial point")
    return system


def load_system(path, fmt: str | None = None) -> System:
    """Load a system description from a JSON file.

    ``fmt`` may force "finite" or "symbolic"; a mismatch with the file's
    "kind" field is a ValidationError.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return system_from_json(data, fmt=fmt, name=path.stem)


def system_from_json(data: dict, fmt: str | None = None, name: str = "") -> System:
    kind = data.get("kind")
    if kind not in ("finite", "symbolic"):
        raise ParseError(f"system kind must be 'finite' or 'symbolic', got {kind!r}")
    if fmt is not None and fmt != kind:
        raise ValidationError(f"expected a {fmt} system, file declares {kind}")
    if kind == "finite":
        return _load_finite(data, name)
    return _load_symbolic(data, name)
