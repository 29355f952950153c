import numpy as np
import pytest

from polyrecourse.conic import SolverConfig, program_stats
from polyrecourse.conic_solver import solve as conic_solve
from polyrecourse.measures import MomentList, UniformBox, expected_polynomial
from polyrecourse.polynomials import MonomialBasis, Polynomial, VariableSpace
from polyrecourse.pop import solve_pop
from polyrecourse.relaxation import (
    PreorderingCertificate,
    RelaxationOrder,
    add_cut,
    build_lower_approx_program,
    build_scenario_program,
    qmod_membership_constraints,
    recover_polynomial,
    solve_lower_approx,
    verify_recourse_certificate,
)
from polyrecourse.semialg import SemialgebraicSet


def toy_quadratic():
    """Unconstrained quadratic: F = (x + y - xi)^2 with Gaussian metric."""
    sp = VariableSpace.make(x=1, y=1, xi=1)
    x, y, xi = (Polynomial.variable(sp, b) for b in ("x", "y", "xi"))
    F = (x + y - xi) ** 2
    nsp = VariableSpace.make(x=1, xi=1)
    nu = MomentList(
        nsp, 2,
        {(0, 0): 1.0, (1, 0): 0.0, (0, 1): 0.0, (2, 0): 1.0, (1, 1): 0.0, (0, 2): 1.0},
    )
    return sp, F, nu


def interval_cubic():
    """Cubic objective over an interval coupling: the bidegree table case."""
    sp = VariableSpace.make(x=1, y=1, xi=1)
    x, y, xi = (Polynomial.variable(sp, b) for b in ("x", "y", "xi"))
    F = (x + xi) * y**3 - xi * y**2 + x * y
    g1 = SemialgebraicSet(VariableSpace.make(x=1), (1.0 - Polynomial.variable(VariableSpace.make(x=1), "x") ** 2,), ("g1",))
    g0 = SemialgebraicSet(
        VariableSpace.make(xi=1),
        (Polynomial.variable(VariableSpace.make(xi=1), "xi") * (1.0 - Polynomial.variable(VariableSpace.make(xi=1), "xi")),),
        ("g0",),
    )
    g2 = SemialgebraicSet(sp, (xi**2 - (y - x) ** 2,), ("g2",))
    nu = UniformBox(VariableSpace.make(x=1, xi=1), (-1.0, 0.0), (1.0, 1.0))
    return sp, F, g0, g1, g2, nu


def test_toy_quadratic_gives_zero_polynomial():
    sp, F, nu = toy_quadratic()
    prog = build_lower_approx_program(F, None, None, None, nu, RelaxationOrder(k=1))
    p, val, sol = solve_lower_approx(prog)
    assert sol.status == "optimal"
    assert val == pytest.approx(0.0, abs=1e-6)
    assert all(abs(c) <= 1e-6 for c in p.terms.values()) or p.is_zero


def test_bidegree_row_reproduces_reference_surrogate():
    # the optimal p is not unique (the metric only sees certain
    # coefficient combinations), so compare the invariant quantities:
    # the attained integral and the noise-averaged surrogate built from
    # the reference coefficients
    sp, F, g0, g1, g2, nu = interval_cubic()
    prog = build_lower_approx_program(F, g0, g1, g2, nu, (1, 2, 2))
    p, val, sol = solve_lower_approx(prog)
    assert sol.usable
    psp = VariableSpace.make(x=1, xi=1)
    ref = {
        (0, 0): -0.3426, (1, 0): 0.4788, (0, 1): 2.2407,
        (1, 1): -3.1747, (0, 2): -4.0833, (1, 2): 4.8810,
    }
    p_ref = Polynomial(psp, ref)
    ref_val = sum(c * nu.moment(e) for e, c in ref.items())
    assert val == pytest.approx(ref_val, abs=5e-3)

    mu = UniformBox(VariableSpace.make(xi=1), (0.0,), (1.0,))
    mine = expected_polynomial(p, mu, ("xi",))
    theirs = expected_polynomial(p_ref, mu, ("xi",))
    for e in set(mine.terms) | set(theirs.terms):
        assert mine.coefficient(e) == pytest.approx(theirs.coefficient(e), abs=5e-3)
    # no coefficient outside the bidegree box
    assert all(e[0] <= 1 and e[-1] <= 2 for e in p.terms)


def test_hierarchy_monotone_in_order():
    sp, F, g0, g1, g2, nu = interval_cubic()
    vals = []
    for order in [(1, 2, 2), (1, 3, 2), (2, 3, 3)]:
        prog = build_lower_approx_program(F, g0, g1, g2, nu, order)
        p, val, sol = solve_lower_approx(prog)
        assert sol.usable
        vals.append(val)
    # richer coefficient spaces can only improve the attained integral
    assert vals[1] >= vals[0] - 1e-7
    assert vals[2] >= vals[1] - 1e-7


def test_full_degree_dominates_bidegree():
    sp, F, g0, g1, g2, nu = interval_cubic()
    prog_b = build_lower_approx_program(F, g0, g1, g2, nu, (2, 2, 2))
    _, val_b, sol_b = solve_lower_approx(prog_b)
    prog_f = build_lower_approx_program(F, g0, g1, g2, nu, RelaxationOrder(k=2))
    _, val_f, sol_f = solve_lower_approx(prog_f)
    assert sol_b.usable and sol_f.usable
    assert val_f >= val_b - 1e-7


def test_lower_bound_soundness_on_feasible_grid():
    sp, F, g0, g1, g2, nu = interval_cubic()
    prog = build_lower_approx_program(F, g0, g1, g2, nu, (2, 2, 2))
    p, _, sol = solve_lower_approx(prog)
    assert sol.usable
    rng = np.random.default_rng(42)
    count = 0
    worst = 0.0
    while count < 1000:
        xv = rng.uniform(-1, 1)
        xiv = rng.uniform(0, 1)
        yv = rng.uniform(xv - xiv, xv + xiv)
        count += 1
        gap = F.evaluate({"x": [xv], "y": [yv], "xi": [xiv]}) - p.evaluate(
            {"x": [xv], "xi": [xiv]}
        )
        worst = min(worst, gap)
    assert worst >= -1e-6


def test_scenario_programs_match_reference():
    sp = VariableSpace.make(x=1, y=2, xi=1)
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    y1 = Polynomial.variable(sp, "y", 0)
    y2 = Polynomial.variable(sp, "y", 1)
    F = x * x * y1 + xi * x * y2
    XS = VariableSpace.make(x=1)
    xx = Polynomial.variable(XS, "x")
    g1 = SemialgebraicSet(XS, (xx * (1.0 - xx),), ("g1",))
    g2 = SemialgebraicSet(sp, (y1 - xi, y2, x - y1 - y2), ("g2",) * 3)

    ref1 = [-0.0004, -0.0066, -0.2112, 0.0150, -0.0069]
    nu1 = UniformBox(XS, (0.0,), (1.0,))
    prog1 = build_scenario_program(F, g1, g2, (-0.1,), nu1, 2)
    p1, _, sol1 = solve_lower_approx(prog1)
    assert sol1.usable
    for d, c in enumerate(ref1):
        assert p1.coefficient((d,)) == pytest.approx(c, abs=1e-3)

    ref2 = [-0.0004, 0.0028, 0.1926, 0.0084, -0.0034]
    nu2 = UniformBox(XS, (0.2,), (1.0,))
    prog2 = build_scenario_program(F, g1, g2, (0.2,), nu2, 2)
    p2, _, sol2 = solve_lower_approx(prog2)
    assert sol2.usable
    for d, c in enumerate(ref2):
        assert p2.coefficient((d,)) == pytest.approx(c, abs=1e-3)

    # decision count: binomial(n1 + 2k, 2k) coefficient rows
    assert len(prog1.metadata["pbasis"]) == 5


def test_scenario_gap_bounds_match_closed_form():
    # sup-grid gaps of the true piecewise recourse minus its degree-4
    # approximations stay within the published envelopes
    sp = VariableSpace.make(x=1, y=2, xi=1)
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    y1 = Polynomial.variable(sp, "y", 0)
    y2 = Polynomial.variable(sp, "y", 1)
    F = x * x * y1 + xi * x * y2
    XS = VariableSpace.make(x=1)
    xx = Polynomial.variable(XS, "x")
    g1 = SemialgebraicSet(XS, (xx * (1.0 - xx),), ("g1",))
    g2 = SemialgebraicSet(sp, (y1 - xi, y2, x - y1 - y2), ("g2",) * 3)

    p1, _, _ = solve_lower_approx(build_scenario_program(F, g1, g2, (-0.1,), UniformBox(XS, (0.0,), (1.0,)), 2))
    p2, _, _ = solve_lower_approx(build_scenario_program(F, g1, g2, (0.2,), UniformBox(XS, (0.2,), (1.0,)), 2))

    grid1 = np.linspace(0.0, 1.0, 1001)
    f1 = -0.2 * grid1**2 - 0.01 * grid1
    gaps1 = f1 - np.array([p1.evaluate({"x": [v]}) for v in grid1])
    assert gaps1.min() >= -1e-6
    assert gaps1.max() <= 5e-4

    grid2 = np.linspace(0.2, 1.0, 1001)
    f2 = 0.2 * grid2**2
    gaps2 = f2 - np.array([p2.evaluate({"x": [v]}) for v in grid2])
    assert gaps2.min() >= -1e-6
    assert gaps2.max() <= 1e-4


def test_add_cut_trivial_and_duplicate():
    sp, F, g0, g1, g2, nu = interval_cubic()
    prog = build_lower_approx_program(F, g0, g1, g2, nu, (1, 2, 2))
    p0, v0, _ = solve_lower_approx(prog)

    # a vacuous bound changes nothing
    zero_exp = prog.metadata["pbasis"].exponents[0]
    cut_coeffs = {zero_exp: 1.0}
    prog_inf = add_cut(prog, cut_coeffs, -np.inf)
    p1, v1, sol1 = solve_lower_approx(prog_inf)
    assert v1 == pytest.approx(v0, abs=1e-7)

    # binding the constant coefficient from below at its current value,
    # twice, leaves the optimum unchanged
    c0 = p0.coefficient((0, 0))
    prog_c = add_cut(prog, cut_coeffs, c0 - 1e-6)
    pc, vc, _ = solve_lower_approx(prog_c)
    assert vc == pytest.approx(v0, abs=1e-6)
    prog_cc = add_cut(prog_c, cut_coeffs, c0 - 1e-6)
    pcc, vcc, _ = solve_lower_approx(prog_cc)
    assert vcc == pytest.approx(vc, abs=1e-9 * max(1.0, abs(vc)))


def test_add_cut_rejects_foreign_exponent():
    sp, F, g0, g1, g2, nu = interval_cubic()
    prog = build_lower_approx_program(F, g0, g1, g2, nu, (1, 2, 2))
    with pytest.raises(ValueError):
        add_cut(prog, {(9, 9, 9): 1.0}, 0.0)


def test_qmod_membership_plain_sos():
    sp = VariableSpace.make(w=1)
    w = Polynomial.variable(sp, "w")
    prog = qmod_membership_constraints(w * w + 1.0, (), SemialgebraicSet.empty(sp), 1)
    sol = conic_solve(prog)
    assert sol.status == "optimal"


def test_qmod_membership_linear_generator():
    sp = VariableSpace.make(w=1)
    w = Polynomial.variable(sp, "w")
    g = SemialgebraicSet(sp, (w,), ("g",))
    sol = conic_solve(qmod_membership_constraints(w, (), g, 1))
    assert sol.status == "optimal"


def test_qmod_membership_infeasible():
    sp = VariableSpace.make(w=1)
    w = Polynomial.variable(sp, "w")
    # -1 - w^2 is nowhere nonnegative: no SOS representation
    sol = conic_solve(qmod_membership_constraints(-1.0 - w * w, (), SemialgebraicSet.empty(sp), 1))
    assert sol.status == "infeasible"


def test_qmod_rows_accept_reference_gram_matrix():
    # the displayed rank-one Gram matrix of the toy quadratic satisfies
    # every coefficient identity with p = 0
    sp, F, _ = toy_quadratic()
    unknowns = []
    basis = MonomialBasis.bidegree(sp, {"x": 2, "xi": 2})
    mono_basis = [e for e in MonomialBasis.total_degree(sp, 2) if e[1] == 0]
    for e in mono_basis:
        unknowns.append((f"p{e}", -Polynomial(sp, {e: 1.0})))
    prog = qmod_membership_constraints(F, unknowns, SemialgebraicSet.empty(sp), 1)
    # Gram over [1, x, y, xi] for (x + y - xi)^2 with all p coefficients zero
    G = np.array(
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, -1.0],
            [0.0, 1.0, 1.0, -1.0],
            [0.0, -1.0, -1.0, 1.0],
        ]
    )
    values = {("s", i): 0.0 for i in range(len(unknowns))}
    for row in prog.rows:
        acc = -row.rhs
        for ref, c in row.coeffs:
            if ref[0] == "s":
                acc += c * values[ref]
            else:
                _, b, i, j = ref
                acc += c * G[i, j]
        assert acc == pytest.approx(0.0, abs=1e-12)


def section_2_3_certificate():
    sp = VariableSpace.make(x=1, y=2, xi=1)
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    y1 = Polynomial.variable(sp, "y", 0)
    y2 = Polynomial.variable(sp, "y", 1)
    F = x * x * y1 - x * y2 * y2
    gt = SemialgebraicSet(
        sp,
        (xi, 1.0 - xi, x, 1.0 - x, y1 - x, y2, x + xi - y1 - y2),
        ("g0", "g0", "g1", "g1", "g2", "g2", "g2"),
    )
    unit = MonomialBasis(sp, (sp.zero_exponent(),))
    xbasis = MonomialBasis(sp, ((1, 0, 0, 0),))
    one = np.array([[1.0]])
    cert = PreorderingCertificate(
        (
            ((4,), one, xbasis),        # x^2 (y1 - x)
            ((2, 4, 5), one, unit),     # x y2 (y1 - x)
            ((0, 2, 4), one, unit),     # x xi (y1 - x)
            ((2, 5, 6), one, unit),     # x y2 (x + xi - y1 - y2)
            ((0, 2, 6), one, unit),     # x xi (x + xi - y1 - y2)
        )
    )
    return sp, F, gt, cert


def test_recourse_certificate_recovers_polynomial():
    sp, F, gt, cert = section_2_3_certificate()
    probes = [
        {"x": [0.5], "xi": [0.3]},
        {"x": [0.9], "xi": [0.1]},
        {"x": [0.2], "xi": [0.8]},
    ]
    report = verify_recourse_certificate(F, gt, cert, [tuple(p.items()) for p in probes])
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    expected = (x**3 - x * xi**2).restrict_space(VariableSpace.make(x=1, xi=1))
    assert report.p.terms == pytest.approx(expected.terms)
    assert report.max_residual <= 1e-5
    assert all(ok for _, _, ok in report.probe_rows)


def test_recourse_certificate_quadratic_unconstrained():
    # F = y1^2 + y2^2 + x y1 + xi y2 has recourse -(x^2 + xi^2)/4
    sp = VariableSpace.make(x=1, y=2, xi=1)
    x = Polynomial.variable(sp, "x")
    xi = Polynomial.variable(sp, "xi")
    y1 = Polynomial.variable(sp, "y", 0)
    y2 = Polynomial.variable(sp, "y", 1)
    F = y1 * y1 + y2 * y2 + x * y1 + xi * y2
    gt = SemialgebraicSet.empty(sp)
    basis = MonomialBasis(sp, ((1, 0, 0, 0), (0, 0, 0, 1), (0, 1, 0, 0), (0, 0, 1, 0)))
    v1 = np.array([0.5, 0.0, 1.0, 0.0])
    v2 = np.array([0.0, 0.5, 0.0, 1.0])
    cert = PreorderingCertificate((((), np.outer(v1, v1) + np.outer(v2, v2), basis),))
    report = verify_recourse_certificate(F, gt, cert, [])
    xs = VariableSpace.make(x=1, xi=1)
    xv = Polynomial.variable(xs, "x")
    xiv = Polynomial.variable(xs, "xi")
    expected = -(xv * xv + xiv * xiv) * 0.25
    for e in set(report.p.terms) | set(expected.terms):
        assert report.p.coefficient(e) == pytest.approx(expected.coefficient(e), abs=1e-12)


def test_recourse_certificate_rejects_y_dependence():
    sp = VariableSpace.make(x=1, y=1, xi=1)
    y = Polynomial.variable(sp, "y")
    gt = SemialgebraicSet.empty(sp)
    unit = MonomialBasis(sp, (sp.zero_exponent(),))
    cert = PreorderingCertificate((((), np.zeros((1, 1)), unit),))
    with pytest.raises(ValueError):
        verify_recourse_certificate(y * y, gt, cert, [])


def test_generator_beyond_truncation_is_dropped(caplog):
    sp = VariableSpace.make(x=1)
    x = Polynomial.variable(sp, "x")
    g = SemialgebraicSet(sp, (1.0 - x**6,), ("g1",))
    import logging

    with caplog.at_level(logging.WARNING, logger="polyrecourse.semialg"):
        from polyrecourse.semialg import QuadraticModuleTruncation

        qm = QuadraticModuleTruncation.build(sp, [("g1[0]", 1.0 - x**6)], 2)
    assert qm.dropped == ("g1[0]",)
    assert len(qm.layouts) == 1
