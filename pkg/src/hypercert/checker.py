"""Constraint-set checking: exact on finite systems, sampled on symbolic ones.

``check_finite`` enumerates every quantifier over its finite domain with
exact rational arithmetic.  ``falsify`` scans sampled grids with vectorized
float evaluation, then re-confirms every candidate violation exactly before
reporting it; absence of violations on a symbolic system is reported as
"unknown" since sampling is not a proof.

``bounded_hyper_oracle`` is the brute-force ground truth used in tests: it
enumerates lasso-shaped traces and matches universal against existential
lassos under full foresight.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

from .automata import NBA, nba_accepts_lasso
from .certificates import HyperCertificate, PolyFun, PolySelector
from .composition import letter_of
from .constraints import (
    EXISTS,
    FORALL,
    AllStates,
    CertCmp,
    Conj,
    Constraint,
    ConstraintSet,
    Disj,
    EvalContext,
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
    StopCheck,
    SuccessorsOf,
    eval_body,
    holds_on,
)
from .certificates import BranchUpdate
from .errors import CapacityError, ConfigError, FragmentError, ValidationError
from .hyperltl import And as FAnd, Atom, HyperFormula, Not as FNot, Or as FOr, Qf, TrueF
from .hyperltl import classify_fragment
from .poly import rat, rat_str
from .systems import FiniteSystem, SymbolicSystem, simulate_reachable

LOOP_THRESHOLD = 64
MAX_CELLS = 5 * 10**7


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------


@dataclass
class ConditionReport:
    tag: str
    instances: int = 0
    violations: int = 0

    def to_json(self):
        return {"tag": self.tag, "instances": self.instances, "violations": self.violations}


@dataclass
class Verdict:
    status: str  # "holds", "violated" or "unknown"
    witnesses: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self):
        return {
            "status": self.status,
            "witnesses": self.witnesses,
            "conditions": [c.to_json() for c in self.conditions],
            "stats": self.stats,
            "notes": self.notes,
        }


def _display(value):
    if isinstance(value, tuple):
        return [rat_str(Fraction(v)) for v in value]
    return value


def _binding_json(binding: dict) -> dict:
    return {k: _display(v) for k, v in sorted(binding.items())}


# ---------------------------------------------------------------------------
# Exact checking on finite systems
# ---------------------------------------------------------------------------


def check_finite(cs: ConstraintSet, cert: HyperCertificate, system: FiniteSystem,
                 budget: int = 10**8, witness_cap: int = 20) -> Verdict:
    """Exhaustively instantiate every quantifier; exact rational arithmetic."""
    if not isinstance(system, FiniteSystem):
        raise ValidationError("check_finite needs a finite system")
    ctx = EvalContext(system, cert, budget=budget)
    verdict = Verdict(status="holds")
    start = time.perf_counter()
    for constraint in cs:
        report = ConditionReport(tag=constraint.tag)
        before = ctx.instances
        collected = []

        def on_violation(binding):
            report.violations += 1
            if len(collected) < witness_cap:
                collected.append({"tag": constraint.tag, "binding": _binding_json(binding)})

        ok = holds_on(constraint, ctx, eps=None, on_violation=on_violation)
        report.instances = ctx.instances - before
        verdict.conditions.append(report)
        verdict.witnesses.extend(collected)
        if not ok:
            verdict.status = "violated"
    verdict.witnesses.sort(key=lambda w: (w["tag"], repr(w["binding"])))
    verdict.stats = {"instances": ctx.instances,
                     "time_s": round(time.perf_counter() - start, 6)}
    return verdict


# ---------------------------------------------------------------------------
# Sampling configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingConfig:
    """Grid and random sampling parameters for symbolic falsification."""

    box: tuple  # ((lo, hi), ...) per dimension, rational bounds
    grid_points: tuple  # samples per dimension, endpoints included
    random_samples: int = 0
    seed: int = 0
    eps: Fraction = Fraction(1, 10**6)
    lookahead_depth: int = 8
    lookahead_cap: int = 4096
    witness_cap: int = 20
    init_grid_points: tuple | None = None

    def validate(self, dim: int) -> "SamplingConfig":
        if len(self.box) != dim or len(self.grid_points) != dim:
            raise ConfigError("box and grid_points must match the system dimension")
        for (lo, hi), n in zip(self.box, self.grid_points):
            if hi < lo:
                raise ConfigError("empty box interval")
            if hi > lo and n < 2:
                raise ConfigError("bounded dimensions need at least 2 grid points")
            if n < 1:
                raise ConfigError("grid resolution must be positive")
        if self.eps < 0:
            raise ConfigError("margin must be nonnegative")
        return self

    @staticmethod
    def from_json(data: dict, dim: int) -> "SamplingConfig":
        box = tuple((rat(lo), rat(hi)) for lo, hi in data["box"])
        cfg = SamplingConfig(
            box=box,
            grid_points=tuple(int(n) for n in data["grid_points"]),
            random_samples=int(data.get("random_samples", 0)),
            seed=int(data.get("seed", 0)),
            eps=rat(data.get("eps", "1/1000000")),
            lookahead_depth=int(data.get("lookahead_depth", 8)),
            lookahead_cap=int(data.get("lookahead_cap", 4096)),
            witness_cap=int(data.get("witness_cap", 20)),
            init_grid_points=tuple(int(n) for n in data["init_grid_points"])
            if data.get("init_grid_points") else None,
        )
        return cfg.validate(dim)

    def to_json(self) -> dict:
        return {
            "box": [[rat_str(lo), rat_str(hi)] for lo, hi in self.box],
            "grid_points": list(self.grid_points),
            "random_samples": self.random_samples,
            "seed": self.seed,
            "eps": rat_str(self.eps),
            "lookahead_depth": self.lookahead_depth,
            "lookahead_cap": self.lookahead_cap,
            "witness_cap": self.witness_cap,
            "init_grid_points": list(self.init_grid_points) if self.init_grid_points else None,
        }


def _axis_values(lo: Fraction, hi: Fraction, n: int) -> list:
    if n == 1 or hi == lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + k * step for k in range(n)]


def build_samples(system: SymbolicSystem, cfg: SamplingConfig):
    """Grid + seeded random state samples, initial samples and the lookahead
    sample set (bounded forward simulation from initial points)."""
    cfg.validate(system.dim)
    axes = [_axis_values(lo, hi, n) for (lo, hi), n in zip(cfg.box, cfg.grid_points)]
    grid = [tuple(p) for p in itertools.product(*axes)]
    points = [p for p in grid if system.in_space(p)]
    if cfg.random_samples:
        rng = np.random.default_rng(cfg.seed)
        lows = [float(lo) for lo, _ in cfg.box]
        highs = [float(hi) for _, hi in cfg.box]
        raw = rng.uniform(lows, highs, size=(cfg.random_samples, system.dim))
        for row in raw:
            p = tuple(Fraction(x).limit_denominator(10**9) for x in row)
            if system.in_space(p):
                points.append(p)

    if system.init_points is not None:
        init = list(system.init_points)
    else:
        if cfg.init_grid_points:
            iaxes = [_axis_values(lo, hi, n)
                     for (lo, hi), n in zip(cfg.box, cfg.init_grid_points)]
            candidates = [tuple(p) for p in itertools.product(*iaxes)]
        else:
            candidates = grid
        init = [p for p in candidates
                if system.in_space(p) and system.init_pred is not None
                and system.init_pred.holds(p)]
    lookahead = simulate_reachable(system, init, cfg.lookahead_depth,
                                   cap=cfg.lookahead_cap)
    return points, init, lookahead


# ---------------------------------------------------------------------------
# Vectorized evaluation
# ---------------------------------------------------------------------------


def _point_cols(point):
    return tuple(np.float64(c) for c in point)


def _axis_cols(points, axis, total_axes, dim):
    arr = np.asarray([[float(c) for c in p] for p in points], dtype=np.float64)
    shape = [1] * total_axes
    shape[axis] = len(points)
    return tuple(arr[:, d].reshape(shape) for d in range(dim))


class _VecEngine:
    def __init__(self, ctx: EvalContext, system: SymbolicSystem, eps: float):
        self.ctx = ctx
        self.system = system
        self.eps = eps

    # -- leaves ----------------------------------------------------------------

    def component_cols(self, key, arg_vars, env):
        if key[0] == "T":
            fun = self.ctx.cert.T
        else:
            fun = self.ctx.cert.B.get(key[1])
        if not isinstance(fun, PolyFun):
            raise ConfigError("sampled falsification needs polynomial components")
        cols = []
        for v in arg_vars:
            cols.extend(env[v])
        return fun.poly.eval_array(cols)

    def guard_mask(self, guard: Qf, trace_cols):
        if isinstance(guard, TrueF):
            return True
        if isinstance(guard, Atom):
            pred = self.system.labels.get(guard.prop)
            if pred is None:
                return False
            return pred.holds_array(trace_cols[guard.trace - 1])
        if isinstance(guard, FNot):
            return np.logical_not(self.guard_mask(guard.arg, trace_cols))
        if isinstance(guard, FAnd):
            return np.logical_and(self.guard_mask(guard.left, trace_cols),
                                  self.guard_mask(guard.right, trace_cols))
        if isinstance(guard, FOr):
            return np.logical_or(self.guard_mask(guard.left, trace_cols),
                                 self.guard_mask(guard.right, trace_cols))
        raise ValidationError("temporal operator in a guard")

    def body(self, node, env, pol):
        if isinstance(node, Conj):
            out = True
            for item in node.items:
                out = np.logical_and(out, self.body(item, env, pol))
            return out
        if isinstance(node, Disj):
            out = False
            for item in node.items:
                out = np.logical_or(out, self.body(item, env, pol))
            return out
        if isinstance(node, Neg):
            return np.logical_not(self.body(node.item, env, -pol))
        if isinstance(node, Imp):
            ant = self.body(node.antecedent, env, -pol)
            return np.logical_or(np.logical_not(ant), self.body(node.consequent, env, pol))
        if isinstance(node, CertCmp):
            total = float(node.const + node.xi_coeff * self.ctx.xi)
            for coeff, key, arg_vars in node.terms:
                total = total + float(coeff) * self.component_cols(key, arg_vars, env)
            if pol > 0:
                return total >= -self.eps
            return total > self.eps
        if isinstance(node, ObsEq):
            cols = tuple(env[node.left]) + tuple(env[node.right])
            if self.system.obs_equiv is not None:
                return self.system.obs_equiv.holds_array(cols)
            left = self._label_mask("o", env[node.left])
            right = self._label_mask("o", env[node.right])
            return np.logical_not(np.logical_xor(left, right))
        if isinstance(node, StateEq):
            out = True
            for a, b in zip(env[node.left], env[node.right]):
                out = np.logical_and(out, np.abs(a - b) <= 1e-9)
            return out
        if isinstance(node, HasLabel):
            return self._label_mask(node.prop, env[node.var])
        if isinstance(node, PredHolds):
            return node.pred.holds_array(env[node.var])
        if isinstance(node, GuardSat):
            return self.guard_mask(node.guard, [env[v] for v in node.trace_vars])
        if isinstance(node, Quantified):
            return self.quantified(node, env, pol)
        raise ValidationError(f"cannot evaluate body node {node!r}")

    def _label_mask(self, prop, cols):
        pred = self.system.labels.get(prop)
        if pred is None:
            return False
        return pred.holds_array(cols)

    def quantified(self, node: Quantified, env, pol):
        quant = Quant(node.kind, node.var, node.domain, node.skolem_key, node.skolem_args)
        return self.quants([quant], node.body, env, pol)

    # -- quantifier tail (successor expansions and trailing existentials) ------

    def quants(self, remaining, body, env, pol):
        if not remaining:
            return self.body(body, env, pol)
        q = remaining[0]
        rest = remaining[1:]
        if isinstance(q.domain, SuccessorsOf):
            return self._successor_quant(q, rest, body, env, pol)
        if isinstance(q.domain, BranchUpdate):
            branch = self.system.branches[q.domain.index]
            cols = self._update_cols(branch, env["x"],
                                     env["c"][0] if branch.choices is not None else None)
            return self.quants(rest, body, {**env, q.var: cols}, pol)
        # sampled or explicit domain
        candidates = self._candidates(q, env)
        if q.kind == FORALL:
            out = True
            for cand in candidates:
                sub = self.quants(rest, body, {**env, q.var: cand}, pol)
                out = np.logical_and(out, sub)
            return out
        out = False
        for cand in candidates:
            sub = self.quants(rest, body, {**env, q.var: cand}, pol)
            out = np.logical_or(out, sub)
        return out

    def _candidates(self, q: Quant, env):
        selector = None
        if q.skolem_key is not None and self.ctx.cert.skolem is not None:
            selector = self.ctx.cert.skolem.selectors.get(q.skolem_key)
        if q.kind == EXISTS and isinstance(selector, PolySelector):
            flat = []
            for v in q.skolem_args:
                flat.extend(env[v])
            return [tuple(p.eval_array(flat) for p in selector.polys)]
        return [_point_cols(p) for p in q.domain.enumerate(self.ctx, {})]

    def _update_cols(self, branch, base_cols, choice):
        cols = list(base_cols)
        if branch.choices is not None:
            cols.append(np.float64(choice))
        return tuple(u.eval_array(cols) for u in branch.updates)

    def _successor_quant(self, q, rest, body, env, pol):
        base = env[q.domain.var]
        result = True if q.kind == FORALL else False
        for branch in self.system.branches:
            guard = branch.guard.holds_array(base)
            choices = branch.choices if branch.choices is not None else (None,)
            for c in choices:
                cols = self._update_cols(branch, base, c)
                sub = self.quants(rest, body, {**env, q.var: cols}, pol)
                if q.kind == FORALL:
                    piece = np.logical_or(np.logical_not(guard), sub)
                    result = np.logical_and(result, piece)
                else:
                    piece = np.logical_and(guard, sub)
                    result = np.logical_or(result, piece)
        return result


def _sampled_domain(domain) -> bool:
    return isinstance(domain, (AllStates, LookaheadStates, InitialStates, ExplicitSet))


def _vectorizable(constraint: Constraint) -> bool:
    seen_exists = False
    for q in constraint.quants:
        if q.kind == EXISTS:
            seen_exists = True
        elif seen_exists:
            return False
    return True


def _pin_constraint(constraint: Constraint, pinned: dict, exists_pools: dict) -> Constraint:
    quants = []
    for q in constraint.quants:
        if q.var in pinned:
            quants.append(Quant(FORALL, q.var, ExplicitSet((pinned[q.var],))))
        elif q.kind == EXISTS and q.var in exists_pools:
            quants.append(Quant(EXISTS, q.var, ExplicitSet(tuple(exists_pools[q.var])),
                                q.skolem_key, q.skolem_args))
        else:
            quants.append(q)
    return Constraint(constraint.tag, tuple(quants), constraint.body, constraint.note)


def falsify(cs: ConstraintSet, cert: HyperCertificate, system: SymbolicSystem,
            cfg: SamplingConfig) -> Verdict:
    """Evaluate every constraint over grid/random samples.

    Returns "violated" with exactly re-confirmed witnesses, else "unknown".
    Existential quantifiers over continuous domains are searched over the
    sampled candidate set only (noted in the verdict).
    """
    if not isinstance(system, SymbolicSystem):
        raise ConfigError("falsify targets symbolic systems; use check_finite instead")
    points, init, lookahead = build_samples(system, cfg)
    ctx = EvalContext(system, cert, lookahead_points=lookahead, init_points=init)
    ctx.state_points = points
    engine = _VecEngine(ctx, system, float(cfg.eps))
    verdict = Verdict(status="unknown")
    start = time.perf_counter()
    sampled_exists_noted = False

    for constraint in cs:
        report = ConditionReport(tag=constraint.tag)
        # note incomplete existential search over continuous pools
        exists_pools = {}
        for q in constraint.quants:
            if q.kind == EXISTS and _sampled_domain(q.domain):
                pool = list(q.domain.enumerate(ctx, {}))
                exists_pools[q.var] = pool
                if system.init_points is None and isinstance(q.domain, InitialStates):
                    sampled_exists_noted = True

        if not _vectorizable(constraint):
            _falsify_scalar(constraint, ctx, cfg, report, verdict, exists_pools)
            verdict.conditions.append(report)
            continue

        loops, axes = [], []
        tail = []
        for q in constraint.quants:
            if q.kind == FORALL and _sampled_domain(q.domain):
                cands = list(q.domain.enumerate(ctx, {}))
                if len(cands) > LOOP_THRESHOLD:
                    axes.append((q.var, cands))
                else:
                    loops.append((q.var, cands))
            else:
                tail.append(q)
        while axes and _cells(axes) > MAX_CELLS:
            var, cands = max(axes, key=lambda it: len(it[1]))
            axes.remove((var, cands))
            loops.append((var, cands))

        total_axes = len(axes)
        axis_env = {}
        for k, (var, cands) in enumerate(axes):
            axis_env[var] = _axis_cols(cands, k, total_axes, system.dim)

        confirmed = 0
        for loop_vals in itertools.product(*(cands for _, cands in loops)):
            loop_binding = {var: val for (var, _), val in zip(loops, loop_vals)}
            env = dict(axis_env)
            for var, val in loop_binding.items():
                env[var] = _point_cols(val)
            mask = engine.quants(tail, constraint.body, env, 1)
            cells = int(np.size(mask)) if total_axes else 1
            report.instances += max(cells, 1)
            violated = np.logical_not(mask)
            if not np.any(violated):
                continue
            if total_axes:
                idx_list = np.argwhere(np.broadcast_to(violated,
                                                       tuple(len(c) for _, c in axes)))
            else:
                idx_list = [()]
            for idx in idx_list[: max(cfg.witness_cap * 3, 8)]:
                binding = dict(loop_binding)
                for k, (var, cands) in enumerate(axes):
                    binding[var] = cands[idx[k]]
                pinned = _pin_constraint(constraint, binding, exists_pools)
                ok = holds_on(pinned, ctx, eps=cfg.eps)
                if not ok:
                    report.violations += 1
                    confirmed += 1
                    if len(verdict.witnesses) < cfg.witness_cap * len(cs):
                        verdict.witnesses.append({
                            "tag": constraint.tag,
                            "binding": _binding_json(binding),
                        })
            if confirmed >= cfg.witness_cap:
                break
        if report.violations:
            verdict.status = "violated"
        verdict.conditions.append(report)

    if sampled_exists_noted:
        verdict.notes.append(
            "existential choices over continuous sets searched on sampled candidates only")
    verdict.notes.append("sampled check: absence of violations is not a proof")
    verdict.witnesses.sort(key=lambda w: (w["tag"], repr(w["binding"])))
    verdict.stats = {"instances": sum(c.instances for c in verdict.conditions),
                     "time_s": round(time.perf_counter() - start, 6),
                     "state_samples": len(points),
                     "lookahead_samples": len(lookahead)}
    return verdict


def _cells(axes) -> int:
    total = 1
    for _, cands in axes:
        total *= len(cands)
    return total


def _falsify_scalar(constraint, ctx, cfg, report, verdict, exists_pools):
    """Slow exact path over sampled domains for alternation-heavy prefixes."""
    collected = []

    def on_violation(binding):
        report.violations += 1
        if len(collected) < cfg.witness_cap:
            collected.append({"tag": constraint.tag, "binding": _binding_json(binding)})
        if report.violations >= cfg.witness_cap * 10:
            raise StopCheck

    before = ctx.instances
    pinned = _pin_constraint(constraint, {}, exists_pools)
    ok = holds_on(pinned, ctx, eps=cfg.eps, on_violation=on_violation)
    report.instances = ctx.instances - before
    verdict.witnesses.extend(collected)
    if not ok:
        verdict.status = "violated"


# ---------------------------------------------------------------------------
# Bounded hyperproperty oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleOutcome:
    status: str  # "holds", "violated" or "inconclusive"
    witness: dict | None = None
    checks: int = 0

    def to_json(self):
        return {"status": self.status, "witness": self.witness, "checks": self.checks}


def _enumerate_lassos(system: FiniteSystem, bound: int, cap: int):
    """All (head, loop) decompositions of paths from initial states with
    head and loop lengths bounded by ``bound``."""
    lassos = []
    seen = set()

    def extend(path):
        if len(lassos) > cap:
            raise CapacityError("lasso enumeration exceeded its budget")
        last = path[-1]
        for i, state in enumerate(path[:-1]):
            if state == last:
                head, loop = path[:i], path[i:-1]
                if len(head) <= bound and 1 <= len(loop) <= bound:
                    key = (tuple(head), tuple(loop))
                    if key not in seen:
                        seen.add(key)
                        lassos.append(key)
        if len(path) - 1 < 2 * bound:
            for nxt in sorted(system.transitions[last]):
                extend(path + [nxt])

    for init in sorted(system.initial):
        extend([init])
    return lassos


def _paths_all_repeat(system: FiniteSystem, bound: int) -> bool:
    """True if every path of ``bound`` edges from an initial state revisits
    some state (so it decomposes into a bounded lasso)."""

    def rec(path):
        if len(set(path)) < len(path):
            return True
        if len(path) - 1 == bound:
            return False
        return all(rec(path + [nxt]) for nxt in sorted(system.transitions[path[-1]]))

    return all(rec([init]) for init in sorted(system.initial))


def _lasso_state(head, loop, t):
    if t < len(head):
        return head[t]
    return loop[(t - len(head)) % len(loop)]


def _combine_lassos(system: FiniteSystem, components):
    """Tuple-letter lasso of a tuple of per-trace lassos."""
    head_len = max(len(h) for h, _ in components)
    loop_len = lcm(*[len(l) for _, l in components])

    def letter(t):
        return tuple(system.labels[_lasso_state(h, l, t)] for h, l in components)

    prefix = [letter(t) for t in range(head_len)]
    cycle = [letter(head_len + t) for t in range(loop_len)]
    return prefix, cycle


def bounded_hyper_oracle(system: FiniteSystem, formula: HyperFormula, nba: NBA,
                         bound: int, budget: int = 200000) -> OracleOutcome:
    """Ground-truth matching of bounded lasso traces under full foresight."""
    tag, f_set, e_set = classify_fragment(formula)
    if tag == "general":
        raise FragmentError("the oracle supports the forall*exists* fragment")
    if formula.p > 3:
        raise CapacityError("the oracle is limited to at most 3 trace variables")
    if nba.p != formula.p:
        raise ValidationError("automaton arity does not match the formula")
    if not _paths_all_repeat(system, bound):
        return OracleOutcome("inconclusive")
    lassos = _enumerate_lassos(system, bound, cap=budget)
    f_pos = sorted(f_set)
    e_pos = sorted(e_set)
    checks = 0
    for universal in itertools.product(lassos, repeat=len(f_pos)):
        matched = False
        for existential in itertools.product(lassos, repeat=len(e_pos)):
            by_pos = {}
            for pos, lasso in zip(f_pos, universal):
                by_pos[pos] = lasso
            for pos, lasso in zip(e_pos, existential):
                by_pos[pos] = lasso
            components = [by_pos[i] for i in range(1, formula.p + 1)]
            prefix, cycle = _combine_lassos(system, components)
            checks += 1
            if checks > budget:
                raise CapacityError("oracle matching exceeded its budget")
            if nba_accepts_lasso(nba, prefix, cycle):
                matched = True
                break
        if not matched:
            witness = {
                "universal": [{"head": list(h), "loop": list(l)} for h, l in universal]
            }
            return OracleOutcome("violated", witness=witness, checks=checks)
    return OracleOutcome("holds", checks=checks)
