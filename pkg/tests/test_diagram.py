from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_aligned, random_nested
from sdot.compose import compose_cost
from sdot.diagram import (
    AlignedDiagram,
    DiagramSyntaxError,
    DiagramType,
    DiagramTypeError,
    Id,
    Leaf,
    LeafShapeError,
    NotLeftRootedError,
    Par,
    Seq,
    UnknownLeafError,
    ValidationError,
    leaves,
    parse_diagram,
    pretty,
    to_sequential_normal_form,
    type_check,
    validate_aligned,
)


def mats(**shapes):
    return {k: np.arange(m * n, dtype=float).reshape(m, n) for k, (m, n) in shapes.items()}


M = mats(A=(2, 4), B=(1, 2), C=(3, 2), D=(2, 1), E=(3, 1))


class TestParse:
    def test_seq_par(self):
        d = parse_diagram("A ; (B # id(3))", M)
        assert isinstance(d, Seq)
        assert d.left.name == "A"
        assert isinstance(d.right, Par)
        assert d.right.top.name == "B" and d.right.bottom == Id(3)

    def test_figure_shape(self):
        d = parse_diagram("A ; (B # id(3)) ; (C # D)", M)
        assert type_check(d) == DiagramType(2, 3)

    def test_par_binds_tighter(self):
        assert parse_diagram("A ; B # id(3)", M) == parse_diagram("A ; (B # id(3))", M)

    def test_whitespace_and_comments(self):
        d1 = parse_diagram("A;(B#id(3))", M)
        d2 = parse_diagram("// header\n  A ;\n ( B  #  id( 3 ) )\n", M)
        assert d1 == d2

    def test_dangling_operator(self):
        with pytest.raises(DiagramSyntaxError) as e:
            parse_diagram("A ;", M)
        assert e.value.line == 1 and e.value.col == 4

    def test_error_position_multiline(self):
        with pytest.raises(DiagramSyntaxError) as e:
            parse_diagram("A ;\n  ( B # )", M)
        assert (e.value.line, e.value.col) == (2, 9)

    def test_bad_character(self):
        with pytest.raises(DiagramSyntaxError):
            parse_diagram("A $ B", M)

    def test_unknown_leaf(self):
        with pytest.raises(UnknownLeafError):
            parse_diagram("A ; Z", M)

    def test_loader_callable_called_once_per_name(self):
        calls = []
        d = parse_diagram("A ; (B # id(1) # B)", {"A": np.zeros((2, 3)), "B": np.zeros((1, 1))})
        assert type_check(d).n == 3
        d = parse_diagram("D ; D ; D", lambda name: calls.append(name) or np.zeros((1, 1)))
        assert calls == ["D"]
        assert d.left.left is d.right

    def test_declared_shape_mismatch(self):
        with pytest.raises(LeafShapeError):
            parse_diagram("A", M, declared={"A": (4, 2)})
        parse_diagram("A", M, declared={"A": (2, 4)})


class TestTypeCheck:
    def test_leaf(self):
        assert type_check(Leaf("A", 2, 4, M["A"])) == DiagramType(2, 4)

    def test_seq_par(self):
        d = Seq(Leaf("A", 2, 4, M["A"]), Par(Leaf("B", 1, 2, M["B"]), Id(3)))
        assert type_check(d) == DiagramType(2, 5)

    def test_mismatch_names_both_sides(self):
        d = Seq(Leaf("A", 2, 4, M["A"]), Leaf("C", 3, 2, M["C"]))
        with pytest.raises(DiagramTypeError) as e:
            type_check(d)
        msg = str(e.value)
        assert "A" in msg and "C" in msg and "4" in msg and "3" in msg

    def test_leaf_shape_checked(self):
        with pytest.raises(ValueError):
            Leaf("A", 2, 2, np.zeros((2, 3)))


class TestNormalForm:
    def test_aligned_is_fixpoint(self):
        d = parse_diagram("A ; (B # id(3)) ; (C # D)", M)
        nf = to_sequential_normal_form(d)
        assert nf.head.name == "A"
        assert [[getattr(f, "name", f) for f in layer] for layer in nf.layers] == [["B", Id(3)], ["C", "D"]]
        assert to_sequential_normal_form(nf.to_diagram()) == nf

    def test_depth_padding(self):
        # A ; ((B ; C') # D): B:1->2, C':2->3, D:3->1  ->  [[B, D], [C', id(1)]]
        m = dict(A=np.zeros((2, 4)), B=np.zeros((1, 2)), Cp=np.zeros((2, 3)), D=np.zeros((3, 1)))
        d = parse_diagram("A ; ((B ; Cp) # D)", m)
        nf = to_sequential_normal_form(d)
        names = [[getattr(f, "name", f) for f in layer] for layer in nf.layers]
        assert names == [["B", "D"], ["Cp", Id(1)]]

    @pytest.mark.parametrize("text", ["id(2) ; A", "(A # B) ; C", "(id(2) # B) ; A"])
    def test_not_left_rooted(self, text):
        m = dict(A=np.zeros((2, 2)), B=np.zeros((1, 1)), C=np.zeros((3, 1)))
        with pytest.raises((NotLeftRootedError, DiagramTypeError)):
            to_sequential_normal_form(parse_diagram(text, m))

    def test_left_nested_sequence(self):
        m = dict(A=np.zeros((2, 2)), B=np.zeros((2, 3)), C=np.zeros((3, 1)))
        nf = to_sequential_normal_form(parse_diagram("(A ; B) ; C", m))
        assert nf.head.name == "A" and nf.depth == 2


class TestValidate:
    def test_ok(self):
        d = AlignedDiagram(Leaf("A", 2, 4, M["A"]), ((Leaf("B", 1, 2, M["B"]), Id(3)),))
        assert validate_aligned(d).ok

    def test_boundary_mismatch(self):
        d = AlignedDiagram(Leaf("A", 2, 4, M["A"]), ((Leaf("B", 1, 2, M["B"]), Id(2)),))
        rep = validate_aligned(d)
        assert not rep.ok
        assert "4 != 3 at layer 1" in rep.violations
        with pytest.raises(ValidationError):
            rep.raise_if_failed()

    def test_deadend(self):
        d = AlignedDiagram(Leaf("A", 2, 4, M["A"]), ((Leaf("Z", 0, 2, np.zeros((0, 2))), Id(4)),))
        rep = validate_aligned(d)
        assert any("deadend" in v for v in rep.violations)

    def test_zero_identity_is_deadend(self):
        d = AlignedDiagram(Leaf("A", 2, 4, M["A"]), ((Id(0), Id(4)),))
        assert any("deadend" in v for v in validate_aligned(d).violations)

    def test_infinite_entries_warn(self):
        d = AlignedDiagram(Leaf("A", 1, 2, np.array([[0.0, np.inf]])), ())
        rep = validate_aligned(d)
        assert rep.ok and rep.warnings


def test_deep_chain_no_recursion_limit():
    # 3000 leaves in one sequence: the evaluator must not recurse per leaf
    leaf = Leaf("A", 2, 2, np.array([[0.0, 1.0], [1.0, 0.0]]))
    d = leaf
    for _ in range(2999):
        d = Seq(d, leaf)
    assert type_check(d) == DiagramType(2, 2)
    nf = to_sequential_normal_form(d)
    assert nf.depth == 2999
    assert compose_cost(d).tolist() == [[0, 1], [1, 0]]


def _leaf_counter(d):
    return Counter(l.name for l in leaves(d))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normal_form_properties(seed):
    d = random_nested(np.random.default_rng(seed))
    nf = to_sequential_normal_form(d)
    assert type_check(nf) == type_check(d)
    assert validate_aligned(nf).ok
    assert Counter(l.name for l in nf.leaves()) == _leaf_counter(d)
    assert np.array_equal(compose_cost(nf), compose_cost(d))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pretty_parse_round_trip(seed):
    rng = np.random.default_rng(seed)
    d = random_nested(rng)
    table = {l.name: l.cost for l in leaves(d)}
    text = pretty(d)
    assert parse_diagram(text, table) == d
    assert pretty(parse_diagram(text, table)) == text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_aligned_round_trip_through_text(seed):
    d = random_aligned(np.random.default_rng(seed))
    table = {l.name: l.cost for l in d.leaves()}
    back = to_sequential_normal_form(parse_diagram(pretty(d.to_diagram()), table))
    assert np.array_equal(compose_cost(back), compose_cost(d))
    assert validate_aligned(back).ok
