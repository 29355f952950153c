import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyrecourse.polynomials import (
    MonomialBasis,
    Polynomial,
    SpaceMismatchError,
    VariableSpace,
    poly_from_json,
    poly_to_json,
)


def space_xyxi(n1=1, n2=1, n0=1):
    return VariableSpace.make(x=n1, y=n2, xi=n0)


def test_space_basics():
    sp = space_xyxi(2, 3, 1)
    assert sp.dim == 6
    assert sp.block_names == ("x", "y", "xi")
    assert sp.block_slice("y") == slice(2, 5)
    with pytest.raises(KeyError):
        sp.block_slice("z")
    with pytest.raises(ValueError):
        VariableSpace((("x", 1), ("x", 2)))


def test_evaluate_root_of_square():
    sp = space_xyxi()
    x = Polynomial.variable(sp, "x")
    y = Polynomial.variable(sp, "y")
    xi = Polynomial.variable(sp, "xi")
    p = (x + y - xi) ** 2
    assert p.evaluate({"x": [1], "y": [1], "xi": [2]}) == 0.0


def test_evaluate_cubic():
    sp = VariableSpace.make(x=1, xi=1)
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    p = x**3 - x * xi**2
    assert p.evaluate({"x": [1], "xi": [0]}) == 1.0


def test_evaluate_scenario_recourse_closed_form():
    # -0.2 x^2 - 0.01 x at x = 0.5 equals -0.055
    sp = VariableSpace.make(x=1)
    x = Polynomial.variable(sp, "x")
    p = -0.2 * x**2 - 0.01 * x
    assert p.evaluate({"x": [0.5]}) == pytest.approx(-0.055, abs=1e-15)


def test_mul_difference_of_squares():
    sp = VariableSpace.make(x=1, xi=1)
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    prod = (x + xi) * (x - xi)
    assert prod.terms == (x**2 - xi**2).terms


def test_add_cancellation_gives_zero():
    sp = space_xyxi()
    x = Polynomial.variable(sp, "x")
    y = Polynomial.variable(sp, "y")
    p = 3.0 * x * y + 0.5 * y**2
    assert (p + (-p)).is_zero


def test_square_expansion():
    sp = space_xyxi()
    x = Polynomial.variable(sp, "x")
    y = Polynomial.variable(sp, "y")
    xi = Polynomial.variable(sp, "xi")
    p = (x + y - xi) ** 2
    expected = x**2 + y**2 + xi**2 + 2 * x * y - 2 * x * xi - 2 * y * xi
    assert p.terms == expected.terms


def test_space_mismatch_raises():
    a = Polynomial.variable(VariableSpace.make(x=1), "x")
    b = Polynomial.variable(VariableSpace.make(x=2), "x")
    with pytest.raises(SpaceMismatchError):
        a + b


def test_substitute_block_fix_xi():
    sp = VariableSpace.make(x=1, y=2, xi=1)
    x = Polynomial.variable(sp, "x")
    y1 = Polynomial.variable(sp, "y", 0)
    y2 = Polynomial.variable(sp, "y", 1)
    xi = Polynomial.variable(sp, "xi")
    F = x**2 * y1 + xi * x * y2

    fixed = F.substitute_block("xi", [-0.1])
    rsp = sp.drop(["xi"])
    xx = Polynomial.variable(rsp, "x")
    z1 = Polynomial.variable(rsp, "y", 0)
    z2 = Polynomial.variable(rsp, "y", 1)
    assert fixed.terms == (xx**2 * z1 - 0.1 * xx * z2).terms

    zeroed = F.substitute_block("xi", [0.0])
    assert zeroed.terms == (xx**2 * z1).terms


def test_substitute_block_two_blocks():
    # g = xi^2 - (y - x)^2 with (x, xi) := (0, 1) becomes 1 - y^2
    sp = space_xyxi()
    x = Polynomial.variable(sp, "x")
    y = Polynomial.variable(sp, "y")
    xi = Polynomial.variable(sp, "xi")
    g = xi**2 - (y - x) ** 2
    h = g.substitute_block("x", [0.0]).substitute_block("xi", [1.0])
    ysp = VariableSpace.make(y=1)
    yy = Polynomial.variable(ysp, "y")
    assert h.terms == (1.0 - yy**2).terms


def test_monomial_basis_sizes():
    sp = VariableSpace.make(w=1)
    b = MonomialBasis.total_degree(sp, 2)
    assert [e for e in b] == [(0,), (1,), (2,)]

    sp3 = VariableSpace.make(w=3)
    assert len(MonomialBasis.total_degree(sp3, 2)) == math.comb(5, 2)

    for n in range(1, 7):
        for d in range(0, 7):
            basis = MonomialBasis.total_degree(VariableSpace.make(w=n), d)
            assert len(basis) == math.comb(n + d, d)


def test_bidegree_basis():
    sp = VariableSpace.make(x=1, xi=1)
    b = MonomialBasis.bidegree(sp, {"x": 1, "xi": 2})
    assert len(b) == 6
    assert set(b.exponents) == {(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2)}
    # graded-lex: degree first, then earlier-block power first
    assert b.exponents[:3] == ((0, 0), (1, 0), (0, 1))


def test_bidegree_on_larger_space_caps_unlisted_blocks():
    sp = space_xyxi()
    b = MonomialBasis.bidegree(sp, {"x": 1, "xi": 1})
    assert all(e[1] == 0 for e in b.exponents)
    assert len(b) == 4


def test_partial_degrees_example():
    # deg_x F = 1, deg g1 = 2, deg_x g2 = 2 for the interval-constrained
    # cubic second stage; the x-degree constant is their max.
    sp = space_xyxi()
    x = Polynomial.variable(sp, "x")
    y = Polynomial.variable(sp, "y")
    xi = Polynomial.variable(sp, "xi")
    F = (x + xi) * y**3 - xi * y**2 + x * y
    g1 = 1.0 - x * x
    g2 = xi**2 - (y - x) ** 2
    assert F.partial_degree("x") == 1
    assert g1.degree() == 2
    assert g2.partial_degree("x") == 2
    assert max(F.partial_degree("x"), g1.degree(), g2.partial_degree("x")) == 2


def test_constant_polynomial_degrees():
    sp = space_xyxi()
    c = Polynomial.constant(sp, 4.0)
    assert c.partial_degree("x") == 0
    assert c.degree() == 0


def test_json_roundtrip():
    sp = space_xyxi(2, 1, 1)
    x1 = Polynomial.variable(sp, "x", 0)
    x2 = Polynomial.variable(sp, "x", 1)
    xi = Polynomial.variable(sp, "xi")
    p = 2.0 * x1 * x2**2 - x1**2 + 0.123456789012345678 * xi
    q = poly_from_json(sp, poly_to_json(p))
    assert q.terms == p.terms


def test_embed_restrict_roundtrip():
    small = VariableSpace.make(x=1)
    big = space_xyxi()
    p = Polynomial.variable(small, "x") ** 2 + 1.0
    q = p.embed(big)
    assert q.partial_degree("y") == 0
    assert q.restrict_space(small).terms == p.terms
    r = Polynomial.variable(big, "y")
    with pytest.raises(SpaceMismatchError):
        r.restrict_space(small)


coef = st.integers(min_value=-5, max_value=5)
expo = st.tuples(
    st.integers(min_value=0, max_value=3),
    st.integers(min_value=0, max_value=3),
)


def polys(space):
    return st.dictionaries(expo, coef, max_size=6).map(
        lambda d: Polynomial(space, {k: float(v) for k, v in d.items()})
    )


SP2 = VariableSpace.make(x=1, xi=1)


@settings(max_examples=60, deadline=None)
@given(polys(SP2), polys(SP2), polys(SP2))
def test_ring_axioms_on_integer_coefficients(p, q, r):
    assert (p + q).terms == (q + p).terms
    assert ((p + q) + r).terms == (p + (q + r)).terms
    assert (p * q).terms == (q * p).terms
    assert ((p * q) * r).terms == (p * (q * r)).terms
    assert (p * (q + r)).terms == (p * q + p * r).terms


@settings(max_examples=60, deadline=None)
@given(
    polys(SP2),
    polys(SP2),
    st.tuples(
        st.floats(min_value=-1, max_value=1, allow_nan=False),
        st.floats(min_value=-1, max_value=1, allow_nan=False),
    ),
)
def test_evaluate_is_ring_morphism(p, q, v):
    pv, qv = p.evaluate(v), q.evaluate(v)
    prod = (p * q).evaluate(v)
    assert prod == pytest.approx(pv * qv, rel=1e-10, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(
    polys(SP2),
    st.floats(min_value=-1, max_value=1, allow_nan=False),
    st.floats(min_value=-1, max_value=1, allow_nan=False),
)
def test_substitute_then_evaluate_matches_joint_evaluate(p, a, b):
    fixed = p.substitute_block("xi", [b])
    lhs = fixed.evaluate({"x": [a]})
    rhs = p.evaluate({"x": [a], "xi": [b]})
    assert lhs == pytest.approx(rhs, abs=1e-12, rel=1e-12)
