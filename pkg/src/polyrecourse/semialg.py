"""Semialgebraic sets, truncated quadratic modules, and the shared
assembly of moment-side conic programs.

Every relaxation in the package bottoms out in the same program shape:
scalar variables are the entries of a truncated moment sequence z, one
PSD block per quadratic-module generator is pinned to z through linking
equalities (entry = localizing combination of z), and a handful of extra
rows fix chosen moments or couple in cut multipliers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .conic import ConicProgram, LinearRow, entry_ref, scalar_ref
from .polynomials import MonomialBasis, Polynomial, VariableSpace

logger = logging.getLogger(__name__)

__all__ = [
    "SemialgebraicSet",
    "GeneratorLayout",
    "QuadraticModuleTruncation",
    "Cut",
    "moment_form_program",
    "ball_constraint",
]


@dataclass(frozen=True)
class SemialgebraicSet:
    """Region cut out by polynomial inequalities g_j >= 0.

    ``tags`` records the provenance of each constraint (first-stage,
    scenario, coupling, ...); it is carried along for diagnostics.
    """

    space: VariableSpace
    polys: tuple
    tags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "polys", tuple(self.polys))
        tags = tuple(self.tags) if self.tags else ("g",) * len(self.polys)
        if len(tags) != len(self.polys):
            raise ValueError("one tag per constraint polynomial")
        for g in self.polys:
            if g.space != self.space:
                raise ValueError("constraint polynomial lives on a different space")
        object.__setattr__(self, "tags", tags)

    def __len__(self) -> int:
        return len(self.polys)

    @classmethod
    def empty(cls, space: VariableSpace) -> "SemialgebraicSet":
        return cls(space, (), ())

    def contains(self, point, tol: float = 1e-9) -> bool:
        return all(g.evaluate(point) >= -tol for g in self.polys)

    def violations(self, point, tol: float = 1e-9):
        out = []
        for i, g in enumerate(self.polys):
            v = g.evaluate(point)
            if v < -tol:
                out.append((i, self.tags[i], v))
        return out

    def embed(self, space: VariableSpace) -> "SemialgebraicSet":
        return SemialgebraicSet(space, tuple(g.embed(space) for g in self.polys), self.tags)

    def substitute_block(self, block: str, values) -> "SemialgebraicSet":
        polys = []
        tags = []
        for g, t in zip(self.polys, self.tags):
            h = g.substitute_block(block, values)
            if h.is_zero and g.partial_degrees().get(block, 0) == g.degree():
                # constraint collapsed to 0 >= 0: keep nothing
                continue
            polys.append(h)
            tags.append(t)
        space = self.space.drop([block])
        return SemialgebraicSet(space, tuple(polys), tuple(tags))

    def max_degree(self) -> int:
        return max((g.degree() for g in self.polys), default=0)


def ball_constraint(space: VariableSpace, radius_sq: float) -> Polynomial:
    """R - ||w||^2, the standard compactness safeguard generator."""
    p = Polynomial.constant(space, float(radius_sq))
    for name, d in space.blocks:
        for i in range(d):
            v = Polynomial.variable(space, name, i)
            p = p - v * v
    return p


@dataclass(frozen=True)
class GeneratorLayout:
    """One generator of the truncated quadratic module with its Gram basis."""

    name: str
    poly: Polynomial  # the constant 1 for the plain SOS block
    basis: MonomialBasis

    @property
    def side(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class QuadraticModuleTruncation:
    """Order-k truncation: one SOS block plus one block per generator
    whose degree fits; generators with deg > 2k are dropped with a
    warning (their multiplier set is empty at this order)."""

    space: VariableSpace
    order: int
    layouts: tuple
    dropped: tuple

    @classmethod
    def build(
        cls,
        space: VariableSpace,
        generators: Sequence,
        order: int,
    ) -> "QuadraticModuleTruncation":
        if order < 1:
            raise ValueError("order must be >= 1")
        layouts = [
            GeneratorLayout("sos", Polynomial.constant(space, 1.0), MonomialBasis.total_degree(space, order))
        ]
        dropped = []
        for name, g in generators:
            if g.space != space:
                g = g.embed(space)
            deg = g.degree()
            if deg > 2 * order:
                dropped.append(name)
                logger.warning(
                    "generator %s has degree %d > 2k = %d; excluded from the order-%d truncation",
                    name, deg, 2 * order, order,
                )
                continue
            half = order - math.ceil(deg / 2)
            layouts.append(GeneratorLayout(name, g, MonomialBasis.total_degree(space, half)))
        return cls(space, order, tuple(layouts), tuple(dropped))

    @property
    def gram_sides(self):
        return tuple(l.side for l in self.layouts)


@dataclass(frozen=True)
class Cut:
    """Linear lower bound on the recovered coefficients: sum phi_b p_b >= bound."""

    coefficients: Mapping[tuple, float]  # exponent (in the fixed basis) -> weight
    bound: float


def moment_form_program(
    qm: QuadraticModuleTruncation,
    objective: Polynomial,
    fixed_moments: Sequence,  # iterable of (exponent, value) in z-space
    cuts: Sequence[Cut] = (),
    name: str = "moment",
) -> ConicProgram:
    """Assemble the moment-side conic program.

    minimize <objective, z> - sum_t bound_t * w_t over
        z in R^{N^n_{2k}},  w_t >= 0,
        M[z] and all localizing matrices PSD (as linked block variables),
        z_b - sum_t phi_t(b) * w_t = m_b  for each fixed moment b.

    Each cut multiplier w_t reweights the fixed moments toward its probe
    point, which is exactly the dual of imposing the cut on the
    recovered coefficient vector; the coefficients themselves are read
    off the duals of the fixed-moment rows (negated).
    """
    space = qm.space
    two_k = 2 * qm.order
    zbasis = MonomialBasis.total_degree(space, two_k)
    nz = len(zbasis)

    if objective.degree() > two_k:
        raise ValueError(
            f"objective degree {objective.degree()} exceeds the truncation degree {two_k}"
        )

    scalar_names = [f"z[{''.join(map(str, e))}]" for e in zbasis]
    cut_cols = []
    for t, _ in enumerate(cuts):
        cut_cols.append(len(scalar_names))
        scalar_names.append(f"w[{t}]")

    blocks = [(layout.name, layout.side) for layout in qm.layouts]
    blocks += [(f"cut[{t}]", 1) for t in range(len(cuts))]

    rows = []
    for b, layout in enumerate(qm.layouts):
        basis = layout.basis
        g = layout.poly
        for ia in range(len(basis)):
            ea = basis.exponents[ia]
            for ib in range(ia, len(basis)):
                eb = basis.exponents[ib]
                coeffs = [(entry_ref(b, ia, ib), 1.0)]
                for eg, cg in g.terms.items():
                    exp = tuple(x + y + w for x, y, w in zip(ea, eb, eg))
                    coeffs.append((scalar_ref(zbasis.position(exp)), -cg))
                rows.append(LinearRow(tuple(coeffs), 0.0))
    n_link = len(rows)

    fix_rows = []
    fixed_list = list(fixed_moments)
    for exp, val in fixed_list:
        exp = tuple(int(e) for e in exp)
        coeffs = [(scalar_ref(zbasis.position(exp)), 1.0)]
        for t, cut in enumerate(cuts):
            phi = cut.coefficients.get(exp, 0.0)
            if phi != 0.0:
                coeffs.append((scalar_ref(cut_cols[t]), -phi))
        fix_rows.append(len(rows))
        rows.append(LinearRow(tuple(coeffs), float(val)))

    for t in range(len(cuts)):
        b = len(qm.layouts) + t
        rows.append(LinearRow(((entry_ref(b, 0, 0), 1.0), (scalar_ref(cut_cols[t]), -1.0)), 0.0))

    obj = []
    for exp, c in objective.terms.items():
        obj.append((scalar_ref(zbasis.position(exp)), c))
    for t, cut in enumerate(cuts):
        if cut.bound != 0.0 and np.isfinite(cut.bound):
            obj.append((scalar_ref(cut_cols[t]), -float(cut.bound)))

    return ConicProgram(
        sense="min",
        scalar_names=tuple(scalar_names),
        blocks=tuple(blocks),
        objective=tuple(obj),
        rows=tuple(rows),
        metadata={
            "kind": name,
            "zbasis": zbasis,
            "fixed_rows": list(zip(fix_rows, [tuple(e) for e, _ in fixed_list])),
            "n_link_rows": n_link,
            "cut_columns": cut_cols,
            "order": qm.order,
        },
    )
