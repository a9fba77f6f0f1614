"""Weighted first-order rule language and evidence files.

Program files (``.psl``) hold predicate declarations and weighted rules::

    // predicates: closed ones are fully observed, open ones are inferred
    closed object(obj).
    closed attr_o/3.
    open candidate(men, obj).

    1.0: candidate(M, O) <- object(O) & mention(M) & attr_o(O, A, V) & attr_m(M, A, V).
    0.1: !candidate(M, O) <- object(O) & mention(M).
    inf: a(X) | b(X) <- c(X).

A rule is ``weight ':' head '<-' body '.'`` where the head is a ``|``-disjunction
and the body an ``&``-conjunction of literals (``!`` negates). Either side may be
omitted but not both. Variables start with an uppercase letter or ``_``;
constants with a lowercase letter or a digit.

Evidence files (``.evd``) hold one ``atom = value`` entry per line plus optional
``domain <type>: c1, c2, ...`` lines.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

__all__ = [
    "Atom",
    "EvidenceError",
    "EvidenceSet",
    "Literal",
    "Predicate",
    "Program",
    "ProgramError",
    "PSLSyntaxError",
    "Rule",
    "Term",
    "format_evidence",
    "format_program",
    "parse_evidence",
    "parse_program",
]


class PSLSyntaxError(ValueError):
    """Malformed program or evidence text."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ProgramError(ValueError):
    """Well-formed text that violates a program invariant."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


class EvidenceError(ValueError):
    """Invalid evidence entry (range, groundness, conflicts)."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    name: str
    arity: int
    closed_world: bool = True
    arg_types: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name:
            raise ProgramError("predicate name must be nonempty")
        if self.arity < 0:
            raise ProgramError(f"predicate {self.name}: negative arity")
        if self.arg_types is not None and len(self.arg_types) != self.arity:
            raise ProgramError(f"predicate {self.name}: {len(self.arg_types)} types for arity {self.arity}")


@dataclass(frozen=True)
class Term:
    symbol: str

    @property
    def is_variable(self) -> bool:
        return self.symbol[0].isupper() or self.symbol[0] == "_"

    def __str__(self) -> str:
        return self.symbol


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...]

    @property
    def is_ground(self) -> bool:
        return not any(t.is_variable for t in self.args)

    def variables(self) -> list[str]:
        return [t.symbol for t in self.args if t.is_variable]

    def key(self) -> tuple[str, tuple[str, ...]]:
        return self.predicate, tuple(t.symbol for t in self.args)

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False

    def negate(self) -> Literal:
        return Literal(self.atom, not self.negated)

    def __str__(self) -> str:
        return ("!" if self.negated else "") + str(self.atom)


@dataclass(frozen=True)
class Rule:
    weight: float
    head: tuple[Literal, ...] = ()
    body: tuple[Literal, ...] = ()

    def __post_init__(self):
        if math.isnan(self.weight) or self.weight < 0:
            raise ProgramError(f"rule weight must be non-negative, got {self.weight}")
        if not self.head and not self.body:
            raise ProgramError("rule needs at least one literal")

    @property
    def is_hard(self) -> bool:
        return math.isinf(self.weight)

    def clause(self) -> tuple[Literal, ...]:
        """Single disjunction equivalent to ``head <- body``.

        Body literals are negated and placed first, so a rule with k body and
        m head literals yields k + m literals.
        """
        return tuple(lit.negate() for lit in self.body) + self.head

    def variables(self) -> list[str]:
        seen: dict[str, None] = {}
        for lit in self.head + self.body:
            for v in lit.atom.variables():
                seen.setdefault(v)
        return list(seen)

    def __str__(self) -> str:
        return format_rule(self)


@dataclass(frozen=True)
class Program:
    predicates: tuple[Predicate, ...] = ()
    rules: tuple[Rule, ...] = ()

    def __post_init__(self):
        names = [p.name for p in self.predicates]
        if len(set(names)) != len(names):
            raise ProgramError("duplicate predicate declaration")
        table = self.predicate_table()
        for rule in self.rules:
            for lit in rule.head + rule.body:
                _check_atom(lit.atom, table)

    def predicate_table(self) -> dict[str, Predicate]:
        return {p.name: p for p in self.predicates}


def _check_atom(atom: Atom, table: dict[str, Predicate], line=None, column=None):
    pred = table.get(atom.predicate)
    if pred is None:
        raise ProgramError(f"undeclared predicate {atom.predicate!r}", line, column)
    if len(atom.args) != pred.arity:
        raise ProgramError(
            f"arity mismatch: {atom.predicate} declared with {pred.arity} argument(s), used with {len(atom.args)}",
            line,
            column,
        )


@dataclass
class EvidenceSet:
    """Observed ground atoms and optional constant domains."""

    entries: dict[tuple[str, tuple[str, ...]], float] = field(default_factory=dict)
    domains: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def add(self, predicate: str, args: Iterable[str], value: float) -> None:
        args = tuple(args)
        for a in args:
            if a[:1].isupper() or a[:1] == "_":
                raise EvidenceError(f"non-ground atom {predicate}({', '.join(args)})")
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise EvidenceError(f"value {value} for {predicate}({', '.join(args)}) outside [0, 1]")
        key = (predicate, args)
        old = self.entries.get(key)
        if old is not None and old != value:
            raise EvidenceError(f"conflicting values {old} and {value} for {predicate}({', '.join(args)})")
        self.entries[key] = value

    def get(self, predicate: str, args: tuple[str, ...], default=None):
        return self.entries.get((predicate, args), default)

    def by_predicate(self) -> dict[str, list[tuple[tuple[str, ...], float]]]:
        out: dict[str, list] = {}
        for (pred, args), value in self.entries.items():
            out.setdefault(pred, []).append((args, value))
        for rows in out.values():
            rows.sort()
        return out

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>//[^\n]*)
  | (?P<arrow><-)
  | (?P<number>(?:\d+\.\d+|\d+)(?:[eE][+-]?\d+)?(?![A-Za-z_]))
  | (?P<ident>[A-Za-z0-9_]+)
  | (?P<punct>[():,.&|!/=-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str, first_line: int = 1) -> list[_Token]:
    tokens = []
    line, line_start, pos = first_line, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "newline":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            if kind == "punct" or kind == "arrow":
                kind = m.group()
            tokens.append(_Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, first_line: int = 1):
        self.tokens = _tokenize(text, first_line)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def peek(self, offset=1) -> _Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Token | None = None) -> PSLSyntaxError:
        tok = tok or self.tok
        found = tok.text or "end of input"
        return PSLSyntaxError(f"{message}, found {found!r}", tok.line, tok.column)

    def expect(self, kind: str) -> _Token:
        if self.tok.kind != kind:
            raise self.error(f"expected {kind!r}")
        return self.advance()

    def name(self) -> _Token:
        tok = self.tok
        if tok.kind == "ident" and not tok.text[0].isdigit():
            return self.advance()
        raise self.error("expected identifier")

    def term(self) -> Term:
        if self.tok.kind in ("ident", "number"):
            return Term(self.advance().text)
        raise self.error("expected term")

    def atom(self) -> tuple[Atom, _Token]:
        start = self.name()
        self.expect("(")
        args = []
        if self.tok.kind != ")":
            args.append(self.term())
            while self.tok.kind == ",":
                self.advance()
                args.append(self.term())
        self.expect(")")
        return Atom(start.text, tuple(args)), start

    def literal(self) -> tuple[Literal, _Token]:
        negated = False
        if self.tok.kind == "!":
            self.advance()
            negated = True
        atom, start = self.atom()
        return Literal(atom, negated), start


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------


def parse_program(text: str) -> Program:
    """Parse rule-language source into a validated :class:`Program`.

    Raises:
        PSLSyntaxError: on malformed input (with line and column).
        ProgramError: on undeclared predicates, arity mismatches, duplicate
            declarations or negative weights.
    """
    p = _Parser(text)
    predicates: list[Predicate] = []
    table: dict[str, Predicate] = {}
    rules: list[Rule] = []
    pending: list[tuple[Atom, _Token]] = []

    while p.tok.kind != "eof":
        tok = p.tok
        if tok.kind == "ident" and tok.text in ("open", "closed") and p.peek().kind == "ident":
            pred = _parse_declaration(p)
            if pred.name in table:
                raise ProgramError(f"duplicate predicate declaration {pred.name!r}", tok.line, tok.column)
            table[pred.name] = pred
            predicates.append(pred)
            continue
        rule, atoms = _parse_rule(p)
        rules.append(rule)
        pending.extend(atoms)

    for atom, tok in pending:
        _check_atom(atom, table, tok.line, tok.column)
    return Program(tuple(predicates), tuple(rules))


def _parse_declaration(p: _Parser) -> Predicate:
    closed = p.advance().text == "closed"
    name = p.name().text
    if p.tok.kind == "/":
        p.advance()
        tok = p.expect("number")
        if not tok.text.isdigit():
            raise p.error("expected integer arity", tok)
        pred = Predicate(name, int(tok.text), closed)
    else:
        p.expect("(")
        types = []
        if p.tok.kind != ")":
            types.append(p.name().text)
            while p.tok.kind == ",":
                p.advance()
                types.append(p.name().text)
        p.expect(")")
        pred = Predicate(name, len(types), closed, tuple(types))
    p.expect(".")
    return pred


def _parse_weight(p: _Parser) -> float:
    tok = p.tok
    if tok.kind == "number":
        p.advance()
        return float(tok.text)
    if tok.kind == "ident" and tok.text == "inf":
        p.advance()
        return math.inf
    raise p.error("expected rule weight")


def _parse_rule(p: _Parser) -> tuple[Rule, list[tuple[Atom, _Token]]]:
    start = p.tok
    if start.kind == "-":
        raise ProgramError("rule weight must be non-negative", start.line, start.column)
    weight = _parse_weight(p)
    p.expect(":")
    atoms = []
    head: list[Literal] = []
    body: list[Literal] = []
    if p.tok.kind not in ("<-", "."):
        lit, tok = p.literal()
        head.append(lit)
        atoms.append((lit.atom, tok))
        while p.tok.kind == "|":
            p.advance()
            lit, tok = p.literal()
            head.append(lit)
            atoms.append((lit.atom, tok))
    if p.tok.kind == "<-":
        p.advance()
        lit, tok = p.literal()
        body.append(lit)
        atoms.append((lit.atom, tok))
        while p.tok.kind == "&":
            p.advance()
            lit, tok = p.literal()
            body.append(lit)
            atoms.append((lit.atom, tok))
    p.expect(".")
    if not head and not body:
        raise ProgramError("rule needs at least one literal", start.line, start.column)
    return Rule(weight, tuple(head), tuple(body)), atoms


def _format_weight(w: float) -> str:
    return "inf" if math.isinf(w) else repr(float(w))


def format_rule(rule: Rule) -> str:
    text = _format_weight(rule.weight) + ":"
    if rule.head:
        text += " " + " | ".join(map(str, rule.head))
    if rule.body:
        text += " <- " + " & ".join(map(str, rule.body))
    return text + "."


def _format_predicate(pred: Predicate) -> str:
    kw = "closed" if pred.closed_world else "open"
    if pred.arg_types is None:
        return f"{kw} {pred.name}/{pred.arity}."
    return f"{kw} {pred.name}({', '.join(pred.arg_types)})."


def format_program(program: Program) -> str:
    """Canonical text: declarations first, then one rule per line."""
    lines = [_format_predicate(p) for p in program.predicates]
    if program.rules:
        if lines:
            lines.append("")
        lines.extend(format_rule(r) for r in program.rules)
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Evidence
# ---------------------------------------------------------------------------


def _lines(text: str) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if line:
            yield lineno, line


def parse_evidence(text: str) -> EvidenceSet:
    """Parse ``atom = value`` lines and ``domain <type>: consts`` lines."""
    evidence = EvidenceSet()
    for lineno, line in _lines(text):
        p = _Parser(line, first_line=lineno)
        if p.tok.text == "domain" and p.peek().kind == "ident" and p.peek(2).kind == ":":
            p.advance()
            dname = p.name().text
            p.expect(":")
            consts = []
            while p.tok.kind != "eof":
                consts.append(p.term().symbol)
                if p.tok.kind == ",":
                    p.advance()
            if dname in evidence.domains:
                raise EvidenceError(f"line {lineno}: duplicate domain {dname!r}")
            evidence.domains[dname] = tuple(consts)
            continue
        atom, _ = p.atom()
        p.expect("=")
        sign = 1.0
        if p.tok.kind == "-":
            p.advance()
            sign = -1.0
        tok = p.expect("number")
        p.expect("eof")
        try:
            evidence.add(atom.predicate, (t.symbol for t in atom.args), sign * float(tok.text))
        except EvidenceError as exc:
            raise EvidenceError(f"line {lineno}: {exc}") from None
    return evidence


def format_evidence(evidence: EvidenceSet) -> str:
    lines = [f"domain {name}: {', '.join(consts)}" for name, consts in sorted(evidence.domains.items())]
    for (pred, args), value in sorted(evidence.entries.items()):
        lines.append(f"{pred}({', '.join(args)}) = {value!r}")
    return "\n".join(lines) + ("\n" if lines else "")
