"""Relaxations that bound the recourse function from below.

The target problem: find the polynomial p(x, xi) maximizing its integral
against a metric measure, subject to F - p being certifiably nonnegative
on the lifted feasible region (membership in a truncated quadratic
module).  The programs are assembled in moment form; the polynomial is
read off the duals of the fixed-moment rows.  A scenario variant fixes
xi at one realization and searches over p_i(x) only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .conic import ConicProgram, ConicSolution, LinearRow, SolverConfig, entry_ref, scalar_ref
from .conic_solver import solve as conic_solve
from .measures import Measure
from .polynomials import MonomialBasis, Polynomial, VariableSpace
from .pop import POPResult, solve_pop
from .semialg import Cut, QuadraticModuleTruncation, SemialgebraicSet, moment_form_program

__all__ = [
    "RelaxationOrder",
    "build_lower_approx_program",
    "build_scenario_program",
    "add_cut",
    "solve_lower_approx",
    "recover_polynomial",
    "qmod_membership_constraints",
    "PreorderingCertificate",
    "CertificateReport",
    "verify_recourse_certificate",
]


@dataclass(frozen=True)
class RelaxationOrder:
    """Either a plain order k (p of total degree <= 2k) or a triple
    (k1, k2, k) bounding the partial degrees of p in x and xi."""

    k: int
    k1: Optional[int] = None
    k2: Optional[int] = None

    @classmethod
    def parse(cls, spec) -> "RelaxationOrder":
        if isinstance(spec, RelaxationOrder):
            return spec
        if isinstance(spec, int):
            return cls(k=spec)
        if isinstance(spec, str):
            parts = [int(v) for v in spec.split(",")]
            spec = tuple(parts)
        if isinstance(spec, (tuple, list)):
            if len(spec) == 1:
                return cls(k=int(spec[0]))
            if len(spec) == 3:
                k1, k2, k = (int(v) for v in spec)
                return cls(k=k, k1=k1, k2=k2)
        raise ValueError(f"cannot parse relaxation order from {spec!r}")

    @property
    def bidegree(self) -> bool:
        return self.k1 is not None

    def __str__(self):
        if self.bidegree:
            return f"({self.k1},{self.k2},{self.k})"
        return str(self.k)


def _check_order(order: RelaxationOrder, F: Polynomial):
    k_floor = math.ceil(F.degree() / 2)
    if order.bidegree:
        k_floor = max(k_floor, math.ceil((order.k1 + order.k2) / 2))
    if order.k < k_floor:
        raise ValueError(
            f"relaxation order k={order.k} below the admissible minimum {k_floor}"
        )


def _p_basis(space: VariableSpace, order: RelaxationOrder, xblocks, xiblock) -> MonomialBasis:
    if order.bidegree:
        bounds = {b: order.k1 for b in xblocks}
        if xiblock is not None:
            bounds[xiblock] = order.k2
        return MonomialBasis.bidegree(space, bounds)
    keep = set(xblocks) | ({xiblock} if xiblock else set())
    full = MonomialBasis.total_degree(space, 2 * order.k)
    drop = [n for n, _ in space.blocks if n not in keep]
    exps = []
    for e in full:
        parts = space.split_exponent(e)
        if all(sum(parts[n]) == 0 for n in drop):
            exps.append(e)
    return MonomialBasis(space, tuple(exps))


def _generators(g0, g1, g2, space):
    gens = []
    for gset in (g0, g1, g2):
        if gset is None:
            continue
        for i, (poly, tag) in enumerate(zip(gset.polys, gset.tags)):
            gens.append((f"{tag}[{i}]", poly.embed(space)))
    return gens


def build_lower_approx_program(
    F: Polynomial,
    g0: Optional[SemialgebraicSet],
    g1: Optional[SemialgebraicSet],
    g2: Optional[SemialgebraicSet],
    nu: Measure,
    order,
    cuts: Sequence[Cut] = (),
) -> ConicProgram:
    """Moment-form program whose fixed-row duals are the coefficients of
    the best lower-approximating polynomial p(x, xi) at this order.

    ``nu`` lives on the (x, xi) blocks of F's space and supplies the
    objective moments.
    """
    order = RelaxationOrder.parse(order)
    _check_order(order, F)
    space = F.space
    xiblock = "xi" if space.has_block("xi") else None
    xblocks = [n for n, _ in space.blocks if n not in ("y", "xi")]
    qm = QuadraticModuleTruncation.build(space, _generators(g0, g1, g2, space), order.k)
    pbasis = _p_basis(space, order, xblocks, xiblock)

    nu_space = nu.space
    fixed = []
    for e in pbasis:
        parts = space.split_exponent(e)
        m_exp = nu_space.join_exponent({n: parts[n] for n in nu_space.block_names})
        fixed.append((e, nu.moment(m_exp)))

    prog = moment_form_program(qm, F, fixed, cuts=tuple(cuts), name="lower-approx")
    prog.metadata["pbasis"] = pbasis
    prog.metadata["pspace"] = space.restrict([n for n, _ in space.blocks if n != "y"])
    prog.metadata["rebuild"] = lambda new_cuts: build_lower_approx_program(
        F, g0, g1, g2, nu, order, cuts=new_cuts
    )
    prog.metadata["cuts"] = tuple(cuts)
    prog.metadata["order"] = order.k
    return prog


def build_scenario_program(
    F: Polynomial,
    g1: Optional[SemialgebraicSet],
    g2: Optional[SemialgebraicSet],
    xi_value: Sequence[float],
    nu_i: Measure,
    k: int,
    cuts: Sequence[Cut] = (),
) -> ConicProgram:
    """Scenario variant: fix xi at one realization and search over
    p_i(x) of total degree <= 2k; the membership set couples only
    (x, y)."""
    if F.space.has_block("xi"):
        F_i = F.substitute_block("xi", xi_value)
        g2_i = g2.substitute_block("xi", xi_value) if g2 is not None else None
    else:
        F_i, g2_i = F, g2
    space = F_i.space
    order = RelaxationOrder(k=max(k, math.ceil(F_i.degree() / 2)))
    if k < math.ceil(F_i.degree() / 2):
        raise ValueError(
            f"scenario order k={k} below ceil(deg(F)/2) = {math.ceil(F_i.degree() / 2)}"
        )
    xblocks = [n for n, _ in space.blocks if n != "y"]
    qm = QuadraticModuleTruncation.build(space, _generators(None, g1, g2_i, space), k)
    pbasis = _p_basis(space, RelaxationOrder(k=k), xblocks, None)

    nu_space = nu_i.space
    fixed = []
    for e in pbasis:
        parts = space.split_exponent(e)
        m_exp = nu_space.join_exponent({n: parts[n] for n in nu_space.block_names})
        fixed.append((e, nu_i.moment(m_exp)))

    prog = moment_form_program(qm, F_i, fixed, cuts=tuple(cuts), name="scenario")
    prog.metadata["pbasis"] = pbasis
    prog.metadata["pspace"] = space.restrict(xblocks)
    prog.metadata["rebuild"] = lambda new_cuts: build_scenario_program(
        F, g1, g2, xi_value, nu_i, k, cuts=new_cuts
    )
    prog.metadata["cuts"] = tuple(cuts)
    prog.metadata["order"] = k
    return prog


def add_cut(prog: ConicProgram, coefficients: Mapping, bound: float) -> ConicProgram:
    """Append one linear lower bound on the recovered coefficients and
    re-emit the program; earlier cuts are retained."""
    pbasis = prog.metadata.get("pbasis")
    rebuild = prog.metadata.get("rebuild")
    pspace = prog.metadata.get("pspace")
    if pbasis is None or rebuild is None:
        raise ValueError("program does not carry coefficient metadata for cuts")
    full = pbasis.space
    coeffs = {}
    for exp, v in coefficients.items():
        exp = tuple(int(e) for e in exp)
        if len(exp) == pspace.dim and pspace.dim != full.dim:
            exp = full.embed_exponent(exp, pspace)
        if exp not in pbasis:
            raise ValueError(f"cut references exponent {exp} outside the coefficient basis")
        coeffs[exp] = float(v)
    if not np.isfinite(bound) and bound < 0:
        # a vacuous bound constrains nothing; keep the program as built
        return rebuild(prog.metadata["cuts"])
    cuts = prog.metadata["cuts"] + (Cut(coeffs, float(bound)),)
    return rebuild(cuts)


def recover_polynomial(prog: ConicProgram, sol: ConicSolution) -> Polynomial:
    """The optimal p, read off the fixed-row duals (negated)."""
    if sol.row_duals is None:
        raise ValueError(f"no duals available (status {sol.status})")
    space = prog.metadata["pspace"]
    full_space = prog.metadata["zbasis"].space
    acc = {}
    for row, exp in prog.metadata["fixed_rows"]:
        parts = full_space.split_exponent(exp)
        sub_exp = space.join_exponent({n: parts[n] for n in space.block_names})
        acc[sub_exp] = -float(sol.row_duals[row])
    p = Polynomial(space, {e: c for e, c in acc.items() if abs(c) > 1e-12})
    return p


def solve_lower_approx(prog: ConicProgram, cfg: SolverConfig = SolverConfig()):
    """Solve and return (p, objective value, solution)."""
    sol = conic_solve(prog, cfg)
    if not sol.usable:
        return None, None, sol
    p = recover_polynomial(prog, sol)
    # the reported objective of the moment form equals the attained
    # integral of p by strong duality; recompute from p for reporting
    return p, float(sol.objective), sol


# ----- Gram-side membership fragments ---------------------------------------


def qmod_membership_constraints(
    fixed: Polynomial,
    unknowns: Sequence,
    g: Union[SemialgebraicSet, Sequence],
    k: int,
) -> ConicProgram:
    """Gram-form feasibility program for membership of
    ``fixed + sum_i c_i q_i`` in the order-k truncated quadratic module.

    ``unknowns`` is a sequence of (name, Polynomial) pairs whose scalar
    coefficients c_i become free variables.  One PSD Gram block is
    introduced per generator (plus the plain SOS block) and one equality
    per monomial of degree <= 2k.
    """
    space = fixed.space
    if isinstance(g, SemialgebraicSet):
        gens = [(f"{t}[{i}]", p) for i, (p, t) in enumerate(zip(g.polys, g.tags))]
    else:
        gens = list(g)
    qm = QuadraticModuleTruncation.build(space, gens, k)
    zbasis = MonomialBasis.total_degree(space, 2 * k)
    if fixed.degree() > 2 * k:
        over = max(fixed.terms, key=lambda e: sum(e))
        raise ValueError(f"monomial {over} of the target exceeds degree {2 * k}")
    for name, q in unknowns:
        if q.degree() > 2 * k:
            over = max(q.terms, key=lambda e: sum(e))
            raise ValueError(f"monomial {over} of unknown {name!r} exceeds degree {2 * k}")

    # coefficient identity per monomial: sum over Gram blocks of the
    # generator-shifted entries minus the unknown contributions equals
    # the fixed coefficient
    contrib = {e: [] for e in zbasis.exponents}
    for b, layout in enumerate(qm.layouts):
        basis = layout.basis
        for ia in range(len(basis)):
            for ib in range(ia, len(basis)):
                mult = 1.0 if ia == ib else 2.0
                ea, eb = basis.exponents[ia], basis.exponents[ib]
                for eg, cg in layout.poly.terms.items():
                    exp = tuple(a + bb + g_ for a, bb, g_ in zip(ea, eb, eg))
                    contrib[exp].append((entry_ref(b, ia, ib), mult * cg))

    rows = []
    for e in zbasis.exponents:
        coeffs = list(contrib[e])
        for i, (name, q) in enumerate(unknowns):
            c = q.coefficient(e)
            if c != 0.0:
                coeffs.append((scalar_ref(i), -c))
        rhs = fixed.coefficient(e)
        if not coeffs and rhs == 0.0:
            continue
        rows.append(LinearRow(tuple(coeffs), rhs))

    return ConicProgram(
        sense="min",
        scalar_names=tuple(name for name, _ in unknowns),
        blocks=tuple((l.name, l.side) for l in qm.layouts),
        objective=(),
        rows=tuple(rows),
        metadata={"kind": "qmod-membership", "zbasis": zbasis, "layouts": qm.layouts},
    )


# ----- recourse certificates --------------------------------------------------


@dataclass(frozen=True)
class PreorderingCertificate:
    """q = sum over subsets J of (prod_{i in J} g_i) * sigma_J with each
    sigma_J given by an explicit Gram matrix over a stated basis."""

    terms: tuple  # tuple of (subset tuple, gram ndarray, MonomialBasis)

    def reconstruct(self, g: SemialgebraicSet) -> Polynomial:
        space = g.space
        q = Polynomial.zero(space)
        for subset, gram, basis in self.terms:
            gram = np.asarray(gram, dtype=float)
            n = len(basis)
            if gram.shape != (n, n):
                raise ValueError("Gram matrix does not match its basis")
            eigs = np.linalg.eigvalsh(0.5 * (gram + gram.T))
            if eigs.min() < -1e-8 * max(1.0, abs(eigs).max()):
                raise ValueError(f"Gram block for subset {subset} is not PSD")
            sigma = Polynomial.zero(space)
            for i in range(n):
                for j in range(n):
                    c = gram[i, j]
                    if c == 0.0:
                        continue
                    exp = tuple(a + b for a, b in zip(basis.exponents[i], basis.exponents[j]))
                    sigma = sigma + Polynomial(space, {exp: c})
            term = sigma
            for idx in subset:
                term = term * g.polys[idx]
            q = q + term
        return q


@dataclass(frozen=True)
class CertificateReport:
    p: Polynomial  # recovered recourse polynomial in (x, xi)
    q: Polynomial
    probe_rows: tuple  # (point, min_q, ok)
    max_residual: float


def verify_recourse_certificate(
    F: Polynomial,
    g_tilde: SemialgebraicSet,
    cert: PreorderingCertificate,
    probe_points: Sequence,
    tol: float = 1e-6,
    y_block: str = "y",
) -> CertificateReport:
    """Check a user-supplied certificate that the recourse is polynomial.

    Verifies (a) that F - q has no dependence on the second-stage block,
    returning p = F - q, and (b) at each probe (x, xi) in the region,
    that min_y q over the second stage vanishes (so the certificate's
    zero set is attainable there).  Probe failures are reported softly.
    """
    q = cert.reconstruct(g_tilde)
    p_full = F - q
    if p_full.partial_degree(y_block) > 0:
        raise ValueError("not a recourse certificate: F - q still involves the second stage")
    pspace = F.space.drop([y_block])
    p = p_full.restrict_space(pspace)

    rows = []
    worst = 0.0
    for point in probe_points:
        parts = dict(point)
        q_y = q
        g_y = g_tilde
        for name, vals in parts.items():
            q_y = q_y.substitute_block(name, vals)
            g_y = g_y.substitute_block(name, vals)
        res = solve_pop(q_y, g_y, k_max=4)
        val = res.value if res.value is not None else float("inf")
        ok = res.status == "ok" and abs(val) <= tol
        worst = max(worst, abs(val) if np.isfinite(val) else float("inf"))
        rows.append((point, val, ok))
    return CertificateReport(p=p, q=q, probe_rows=tuple(rows), max_residual=worst)
