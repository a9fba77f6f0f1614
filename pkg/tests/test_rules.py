import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatial_psl.rules import (
    Atom,
    EvidenceError,
    Literal,
    Predicate,
    Program,
    ProgramError,
    PSLSyntaxError,
    Rule,
    Term,
    format_evidence,
    format_program,
    parse_evidence,
    parse_program,
)

DECLS = """
closed object(obj).
closed mention(men).
closed attr_o(obj, attr, val).
closed attr_m(men, attr, val).
open candidate(men, obj).
"""


def test_candidate_rule_parses_to_one_rule_five_predicates():
    prog = parse_program(DECLS + "1.0: candidate(M,O) <- object(O) & mention(M) & attr_o(O,A,V) & attr_m(M,A,V).")
    assert len(prog.rules) == 1
    assert len(prog.predicates) == 5
    rule = prog.rules[0]
    assert rule.weight == 1.0
    assert [lit.atom.predicate for lit in rule.body] == ["object", "mention", "attr_o", "attr_m"]


def test_declarations_only_gives_empty_program():
    prog = parse_program(DECLS)
    assert prog.rules == ()
    assert format_program(prog).count(".") == 5
    assert parse_program("") == Program()


def test_arity_mismatch_is_rejected():
    with pytest.raises(ProgramError, match="arity"):
        parse_program(DECLS + "1.0: candidate(M) <- object(O).")


def test_undeclared_predicate_and_negative_weight():
    with pytest.raises(ProgramError, match="undeclared"):
        parse_program(DECLS + "1.0: candidate(M, O) <- blob(O) & mention(M).")
    with pytest.raises((ProgramError, PSLSyntaxError)):
        parse_program(DECLS + "-1.0: candidate(M, O) <- object(O) & mention(M).")


def test_syntax_error_reports_line_and_column():
    with pytest.raises(PSLSyntaxError) as info:
        parse_program(DECLS + "1.0 candidate(M, O) <- object(O).")
    assert info.value.line == 7
    assert info.value.column >= 1


def test_clause_normal_form_negates_body():
    prog = parse_program(DECLS + "2.5: candidate(M, O) | !mention(M) <- object(O) & !attr_o(O, A, V) & attr_m(M, A, V).")
    clause = prog.rules[0].clause()
    assert len(clause) == 5
    assert [(lit.atom.predicate, lit.negated) for lit in clause] == [
        ("object", True),
        ("attr_o", False),
        ("attr_m", True),
        ("candidate", False),
        ("mention", True),
    ]


def test_two_candidate_rules_format_as_two_lines():
    text = DECLS + (
        "closed compatible(men, obj). closed related(rel, men, men). open consistent(rel, obj, obj, men, men).\n"
        "1.0: candidate(M, O) <- object(O) & mention(M) & attr_o(O, A, V) & attr_m(M, A, V).\n"
        "1.0: candidate(M, O) <- candidate(M1, O1) & consistent(R, O, O1, M, M1) & related(R, M, M1) & object(O).\n"
    )
    prog = parse_program(text)
    out = format_program(prog)
    rule_lines = [ln for ln in out.splitlines() if "<-" in ln]
    assert len(rule_lines) == 2
    assert parse_program(out) == prog


def test_hard_rule_weight_keyword():
    prog = parse_program("open y(item).\ninf: y(a).")
    assert prog.rules[0].is_hard
    assert parse_program(format_program(prog)) == prog


def test_evidence_examples():
    ev = parse_evidence("attr_o(o1,size,small) = 1.0\nconsistent(left,o3,o6,x1,x2) = 1.0\n")
    assert ev.get("attr_o", ("o1", "size", "small")) == 1.0
    assert ev.get("consistent", ("left", "o3", "o6", "x1", "x2")) == 1.0
    with pytest.raises(EvidenceError):
        parse_evidence("p(a) = 1.5")
    with pytest.raises(EvidenceError):
        parse_evidence("p(X) = 0.5")
    with pytest.raises(EvidenceError):
        parse_evidence("p(a) = 0.5\np(a) = 0.6")
    # repeating an identical value is allowed
    assert len(parse_evidence("p(a) = 0.5\np(a) = 0.5")) == 1


def test_evidence_domains_and_round_trip():
    text = "domain obj: o1, o2\n// comment\nobject(o1) = 1.0\nobject(o2) = 0.25\n"
    ev = parse_evidence(text)
    assert ev.domains == {"obj": ("o1", "o2")}
    assert parse_evidence(format_evidence(ev)) == ev


# random valid programs -----------------------------------------------------

_NAMES = ["p", "q", "r", "s"]


@st.composite
def programs(draw):
    arities = draw(st.lists(st.integers(0, 3), min_size=1, max_size=4))
    preds = tuple(
        Predicate(_NAMES[i], a, draw(st.booleans()), tuple(f"t{k}" for k in range(a))) for i, a in enumerate(arities)
    )
    symbols = st.sampled_from(["X", "Y", "Z", "a", "b", "c1"])

    def literal():
        p = draw(st.sampled_from(preds))
        args = tuple(Term(draw(symbols)) for _ in range(p.arity))
        return Literal(Atom(p.name, args), draw(st.booleans()))

    rules = []
    for _ in range(draw(st.integers(0, 4))):
        head = tuple(literal() for _ in range(draw(st.integers(0, 2))))
        body = tuple(literal() for _ in range(draw(st.integers(0 if head else 1, 3))))
        weight = draw(st.one_of(st.floats(0, 100, allow_nan=False), st.just(float("inf"))))
        rules.append(Rule(weight, head, body))
    return Program(preds, tuple(rules))


@settings(max_examples=150, deadline=None)
@given(programs())
def test_format_parse_round_trip(prog):
    assert parse_program(format_program(prog)) == prog


@settings(max_examples=100, deadline=None)
@given(programs())
def test_clause_length_is_body_plus_head(prog):
    for rule in prog.rules:
        clause = rule.clause()
        assert len(clause) == len(rule.body) + len(rule.head)
        assert all(c.negated != b.negated for c, b in zip(clause, rule.body))


@settings(max_examples=100, deadline=None)
@given(programs(), st.integers(0, 5))
def test_wrong_arity_never_parses(prog, extra):
    pred = prog.predicates[0]
    n = pred.arity + 1 + extra
    text = format_program(Program(prog.predicates)) + f"1.0: {pred.name}({', '.join(['a'] * n)}).\n"
    with pytest.raises(ProgramError):
        parse_program(text)
