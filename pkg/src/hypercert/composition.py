"""Self-composition of a system and the augmented game arena.

Product states are tuples of component states; successors are componentwise.
Finite products are only materialized on demand and within a size budget;
symbolic products stay lazy.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as iter_product
from typing import Iterable, Sequence

from .automata import NBA
from .errors import CapacityError, DomainError, ValidationError
from .systems import FiniteSystem, SymbolicSystem, System

MATERIALIZE_CAP = 10**6


@dataclass(frozen=True)
class ProductSystem:
    """The p-fold self-composition of a system."""

    base: System
    p: int

    def successors(self, xs: tuple) -> list[tuple]:
        if len(xs) != self.p:
            raise DomainError(f"product state has {len(xs)} components, expected {self.p}")
        per_component = [sorted(self.base.successors(x), key=repr) for x in xs]
        return [tuple(choice) for choice in iter_product(*per_component)]

    def initial_states(self) -> list[tuple]:
        if isinstance(self.base, FiniteSystem):
            init = sorted(self.base.initial)
        elif self.base.init_points is not None:
            init = list(self.base.init_points)
        else:
            raise ValidationError("initial set of the product is not an explicit point set")
        if len(init) ** self.p > MATERIALIZE_CAP:
            raise CapacityError("product initial set too large to materialize")
        return [tuple(choice) for choice in iter_product(init, repeat=self.p)]

    def states(self) -> list[tuple]:
        if not isinstance(self.base, FiniteSystem):
            raise ValidationError("only finite products can be materialized")
        if len(self.base.states) ** self.p > MATERIALIZE_CAP:
            raise CapacityError("product state set too large to materialize")
        return [tuple(choice) for choice in iter_product(self.base.states, repeat=self.p)]


def self_compose(system: System, p: int) -> ProductSystem:
    if p < 1:
        raise ValidationError("composition arity must be at least 1")
    return ProductSystem(system, p)


def split_moves(xs: Sequence, f_set: Iterable[int], e_set: Iterable[int]):
    """Partition the components of a product state by quantifier position.

    ``f_set`` / ``e_set`` are 1-based positions of universal / existential
    quantifiers and must partition {1..p}.
    """
    f_sorted = sorted(f_set)
    e_sorted = sorted(e_set)
    p = len(xs)
    if sorted(f_sorted + e_sorted) != list(range(1, p + 1)):
        raise ValidationError("universal and existential positions must partition 1..p")
    return tuple(xs[i - 1] for i in f_sorted), tuple(xs[i - 1] for i in e_sorted)


def letter_of(system: System, xs: Sequence) -> tuple:
    """The tuple letter (L(x1), ..., L(xp)) of a product state."""
    if isinstance(system, FiniteSystem):
        return tuple(system.labels[x] for x in xs)
    if isinstance(system, SymbolicSystem):
        letter = []
        for x in xs:
            props = frozenset(p for p in sorted(system.labels) if system.labels[p].holds(x))
            letter.append(props)
        return tuple(letter)
    raise ValidationError(f"unsupported system type {type(system).__name__}")


def step_automaton(a: NBA, q: str, xs: Sequence, system: System) -> frozenset:
    """Automaton states reachable by reading the letter of the product state."""
    if q not in a.states:
        raise ValidationError(f"state {q!r} is not declared")
    if isinstance(system, FiniteSystem):
        for x in xs:
            if x not in system.transitions:
                raise DomainError(f"state {x!r} is not declared")
    else:
        for x in xs:
            if not system.in_space(x):
                raise DomainError("component outside the state space")
    return a.enabled(q, letter_of(system, xs))
