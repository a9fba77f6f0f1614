"""Lukasiewicz soft logic and rule grounding into hinge-loss potentials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rules import EvidenceSet, Literal, Program, Rule

__all__ = [
    "GroundAtom",
    "GroundPotential",
    "GroundingError",
    "PotentialSet",
    "distance_to_satisfaction",
    "dump_ground_program",
    "ground",
    "soft_and",
    "soft_not",
    "soft_or",
]


class GroundingError(ValueError):
    pass


def _unit(x, name="value"):
    arr = np.asarray(x, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def _out(arr):
    return float(arr) if arr.ndim == 0 else arr


def soft_and(a, b):
    """Lukasiewicz t-norm ``max(0, a + b - 1)``; works elementwise on arrays."""
    return _out(np.maximum(0.0, _unit(a, "a") + _unit(b, "b") - 1.0))


def soft_or(a, b):
    """Lukasiewicz t-conorm ``min(1, a + b)``."""
    return _out(np.minimum(1.0, _unit(a, "a") + _unit(b, "b")))


def soft_not(a):
    return _out(1.0 - _unit(a, "a"))


@dataclass(frozen=True)
class GroundAtom:
    predicate: str
    args: tuple[str, ...]
    value: float | None = None  # observed truth value
    index: int | None = None  # position in the free-variable vector

    @property
    def observed(self) -> bool:
        return self.index is None

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(self.args)})"


@dataclass(frozen=True)
class GroundPotential:
    """Weighted ground clause ``OR(pos) | OR(!neg)``.

    ``pos``/``neg`` hold free-variable indices; ``pos_obs``/``neg_obs`` hold the
    truth values of observed literals in the same polarity.
    """

    weight: float
    pos: tuple[int, ...] = ()
    neg: tuple[int, ...] = ()
    pos_obs: tuple[float, ...] = ()
    neg_obs: tuple[float, ...] = ()
    rule_index: int = -1
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.weight >= 0:
            raise GroundingError(f"potential weight must be non-negative, got {self.weight}")
        if not (self.pos or self.neg or self.pos_obs or self.neg_obs):
            raise GroundingError("potential needs at least one entry")

    @property
    def constant(self) -> float:
        """Value of ``1 - sum(observed contributions)``."""
        return 1.0 - sum(self.pos_obs) - sum(1.0 - v for v in self.neg_obs)

    @property
    def is_hard(self) -> bool:
        return math.isinf(self.weight)

    def linear(self) -> tuple[float, dict[int, float]]:
        """Return ``(b, a)`` with ``distance(y) = max(b + sum_i a[i] * y[i], 0)``."""
        b = self.constant - len(self.neg)
        coef: dict[int, float] = {}
        for i in self.pos:
            coef[i] = coef.get(i, 0.0) - 1.0
        for i in self.neg:
            coef[i] = coef.get(i, 0.0) + 1.0
        return b, {i: c for i, c in coef.items() if c != 0.0}

    def max_distance(self) -> float:
        """Largest hinge argument over the unit box (<= 0 means always satisfied)."""
        b, coef = self.linear()
        return b + sum(c for c in coef.values() if c > 0)


@dataclass
class PotentialSet:
    potentials: list[GroundPotential] = field(default_factory=list)
    free_atoms: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    observed: dict[tuple[str, tuple[str, ...]], float] = field(default_factory=dict)

    def __post_init__(self):
        self._index = {key: i for i, key in enumerate(self.free_atoms)}
        if len(self._index) != len(self.free_atoms):
            raise GroundingError("duplicate free atom")
        n = len(self.free_atoms)
        for p in self.potentials:
            if any(not 0 <= i < n for i in p.pos + p.neg):
                raise GroundingError("potential refers to an unknown free variable")

    @property
    def n_free(self) -> int:
        return len(self.free_atoms)

    def index_of(self, predicate: str, args) -> int:
        return self._index[(predicate, tuple(args))]

    def get_index(self, predicate: str, args) -> int | None:
        return self._index.get((predicate, tuple(args)))

    def atom(self, i: int) -> GroundAtom:
        pred, args = self.free_atoms[i]
        return GroundAtom(pred, args, index=i)

    def soft_potentials(self) -> list[GroundPotential]:
        return [p for p in self.potentials if not p.is_hard]

    def hard_potentials(self) -> list[GroundPotential]:
        return [p for p in self.potentials if p.is_hard]

    def linear_form(self):
        """Dense ``(w, b, A)`` for the soft potentials: ``energy = w . max(b + A y, 0)``."""
        soft = self.soft_potentials()
        w = np.array([p.weight for p in soft], dtype=float)
        b = np.empty(len(soft))
        A = np.zeros((len(soft), self.n_free))
        for j, p in enumerate(soft):
            b[j], coef = p.linear()
            for i, c in coef.items():
                A[j, i] = c
        return w, b, A

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-variable box implied by single-variable hard potentials."""
        lo = np.zeros(self.n_free)
        hi = np.ones(self.n_free)
        for p in self.hard_potentials():
            b, coef = p.linear()
            if not coef:
                if b > 0:
                    raise GroundingError("hard constraint violated by observed atoms")
                continue
            if len(coef) > 1:
                raise GroundingError("only single-variable hard constraints are supported")
            (i, c), = coef.items()
            # b + c*y <= 0
            if c > 0:
                hi[i] = min(hi[i], -b / c)
            else:
                lo[i] = max(lo[i], -b / c)
        if np.any(lo > hi + 1e-12):
            raise GroundingError("hard constraints are infeasible")
        return lo, np.maximum(lo, hi)


def distance_to_satisfaction(p: GroundPotential, y) -> float:
    """Hinge ``max(1 - sum_pos V - sum_neg (1 - V), 0)`` at interpretation ``y``."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0] if y.ndim else 0
    for i in p.pos + p.neg:
        if not 0 <= i < n:
            raise IndexError(f"free variable index {i} out of range for interpretation of length {n}")
    total = p.constant
    for i in p.pos:
        total -= y[i]
    for i in p.neg:
        total -= 1.0 - y[i]
    return max(total, 0.0)


# ---------------------------------------------------------------------------
# Grounding
# ---------------------------------------------------------------------------


def _binding_literals(rule: Rule, program: Program) -> list[Literal]:
    """Clause literals that are negated closed-world atoms (positive body atoms).

    Only substitutions under which all of them are nonzero can yield a
    potential that is not identically satisfied.
    """
    table = program.predicate_table()
    return [lit for lit in rule.clause() if lit.negated and table[lit.atom.predicate].closed_world]


def _check_domains(program: Program, evidence: EvidenceSet) -> None:
    if not evidence.domains:
        return
    domains = {name: set(consts) for name, consts in evidence.domains.items()}
    table = program.predicate_table()
    for pred in program.predicates:
        for t in pred.arg_types or ():
            if t not in domains:
                raise GroundingError(f"unknown constant type {t!r} (predicate {pred.name})")
    for (pred_name, args), _ in sorted(evidence.entries.items()):
        pred = table.get(pred_name)
        if pred is None or pred.arg_types is None:
            continue
        for t, a in zip(pred.arg_types, args):
            if a not in domains[t]:
                raise GroundingError(f"constant {a!r} in {pred_name}({', '.join(args)}) is not in domain {t!r}")


def _substitutions(lits: list[Literal], rows: dict[str, list[tuple[tuple[str, ...], float]]]):
    """Join the binding literals over nonzero evidence rows."""
    results = []

    def extend(remaining: list[Literal], theta: dict[str, str]):
        if not remaining:
            results.append(dict(theta))
            return
        # most-constrained literal first; ties keep declaration order
        def score(lit):
            bound = sum(1 for t in lit.atom.args if not t.is_variable or t.symbol in theta)
            return (-bound, len(rows.get(lit.atom.predicate, ())))

        k = min(range(len(remaining)), key=lambda idx: score(remaining[idx]))
        lit = remaining[k]
        rest = remaining[:k] + remaining[k + 1 :]
        for args, value in rows.get(lit.atom.predicate, ()):
            if value <= 0.0:
                continue
            new = dict(theta)
            ok = True
            for term, const in zip(lit.atom.args, args):
                if term.is_variable:
                    have = new.get(term.symbol)
                    if have is None:
                        new[term.symbol] = const
                    elif have != const:
                        ok = False
                        break
                elif term.symbol != const:
                    ok = False
                    break
            if ok:
                extend(rest, new)

    extend(list(lits), {})
    return results


def ground(program: Program, evidence: EvidenceSet) -> PotentialSet:
    """Instantiate every rule over the evidence.

    Closed-world atoms missing from the evidence are false (0.0). Open-world
    atoms listed in the evidence are observed; the rest become free variables,
    indexed in order of first appearance in a kept potential. Potentials whose
    hinge is zero for every ``y`` in the box are dropped.

    Raises:
        GroundingError: for unsafe rules, unknown constant types, or constants
            outside their declared domain.
    """
    _check_domains(program, evidence)
    table = program.predicate_table()
    rows = evidence.by_predicate()
    free_index: dict[tuple[str, tuple[str, ...]], int] = {}
    free_atoms: list[tuple[str, tuple[str, ...]]] = []
    potentials: list[GroundPotential] = []
    observed: dict[tuple[str, tuple[str, ...]], float] = {}

    for r_idx, rule in enumerate(program.rules):
        binders = _binding_literals(rule, program)
        bound_vars = {v for lit in binders for v in lit.atom.variables()}
        unbound = [v for v in rule.variables() if v not in bound_vars]
        if unbound:
            raise GroundingError(
                f"unsafe rule {r_idx} ({rule}): variable(s) {', '.join(unbound)} "
                "do not occur in a positive closed-world body atom"
            )
        order = rule.variables()
        subs = _substitutions(binders, rows)
        subs.sort(key=lambda th: tuple(th[v] for v in order))
        clause = rule.clause()
        for theta in subs:
            pos, neg, pos_obs, neg_obs, labels = [], [], [], [], []
            pending = []
            for lit in clause:
                key = (lit.atom.predicate, tuple(theta.get(t.symbol, t.symbol) for t in lit.atom.args))
                value = evidence.entries.get(key)
                if value is None and table[lit.atom.predicate].closed_world:
                    value = 0.0
                if value is not None:
                    observed[key] = value
                    (neg_obs if lit.negated else pos_obs).append(value)
                else:
                    pending.append((lit.negated, key))
                label = f"{key[0]}({', '.join(key[1])})"
                labels.append(("!" if lit.negated else "") + label)
            # prune before allocating indices so dropped clauses leave no variables
            const = 1.0 - sum(pos_obs) - sum(1.0 - v for v in neg_obs)
            coef: dict = {}
            for negated, key in pending:
                if negated:
                    const -= 1.0
                coef[key] = coef.get(key, 0.0) + (1.0 if negated else -1.0)
            if const + sum(c for c in coef.values() if c > 0) <= 0.0:
                continue
            for negated, key in pending:
                idx = free_index.get(key)
                if idx is None:
                    idx = free_index[key] = len(free_atoms)
                    free_atoms.append(key)
                (neg if negated else pos).append(idx)
            potentials.append(
                GroundPotential(
                    rule.weight, tuple(pos), tuple(neg), tuple(pos_obs), tuple(neg_obs), r_idx, tuple(labels)
                )
            )
    return PotentialSet(potentials, free_atoms, observed)


def dump_ground_program(potentials: PotentialSet, path=None) -> str:
    """One ``weight: clause`` line per potential; writes to ``path`` if given."""
    lines = []
    for p in potentials.potentials:
        w = "inf" if p.is_hard else repr(p.weight)
        lines.append(f"{w}: {' | '.join(p.labels)}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
