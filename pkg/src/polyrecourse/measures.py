"""Moment oracles for the probability measures used by the solver.

Every measure answers ``moment(exponent)`` queries on its variable
space.  Mixtures are stored symbolically as trees rather than flattened
into samples, so their moments combine exactly across iterations of the
bounding algorithms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .polynomials import MonomialBasis, Polynomial, VariableSpace, grlex_key

__all__ = [
    "Measure",
    "UniformBox",
    "FinitelyAtomic",
    "DiracProduct",
    "BlockProduct",
    "Mixture",
    "MomentList",
    "EmpiricalSample",
    "MomentVector",
    "InsufficientMomentsError",
    "EmptySupportSampleError",
    "moment_vector",
    "expected_polynomial",
    "mixture_update",
    "atomize",
    "sample_support",
    "measure_to_json",
    "measure_from_json",
]

WEIGHT_TOL = 1e-12


class InsufficientMomentsError(ValueError):
    """A moment of higher degree than the measure can provide was requested."""

    def __init__(self, required_degree: int, available_degree: int):
        self.required_degree = required_degree
        self.available_degree = available_degree
        super().__init__(
            f"insufficient moment data: degree {required_degree} requested, "
            f"only degree {available_degree} available"
        )


class EmptySupportSampleError(RuntimeError):
    """Rejection sampling accepted no points within the attempt budget."""


class Measure:
    """Base class; concrete measures implement ``moment``."""

    space: VariableSpace

    def moment(self, exp) -> float:
        raise NotImplementedError

    def max_degree(self) -> Optional[int]:
        """Highest queryable total degree, or None when unlimited."""
        return None

    def _check_exp(self, exp):
        exp = tuple(int(e) for e in exp)
        if len(exp) != self.space.dim:
            raise ValueError(
                f"exponent length {len(exp)} does not match measure space dim {self.space.dim}"
            )
        return exp


@dataclass(frozen=True)
class UniformBox(Measure):
    """Uniform probability measure on a coordinate box."""

    space: VariableSpace
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != self.space.dim or len(hi) != self.space.dim:
            raise ValueError("box bounds must match the space dimension")
        if any(l >= u for l, u in zip(lo, hi)):
            raise ValueError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def moment(self, exp) -> float:
        exp = self._check_exp(exp)
        out = 1.0
        for l, u, a in zip(self.lower, self.upper, exp):
            out *= (u ** (a + 1) - l ** (a + 1)) / ((a + 1) * (u - l))
        return out


@dataclass(frozen=True)
class FinitelyAtomic(Measure):
    """Weighted atoms; weights are positive and sum to one."""

    space: VariableSpace
    points: tuple
    weights: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in p) for p in self.points)
        w = tuple(float(v) for v in self.weights)
        if len(pts) != len(w) or not pts:
            raise ValueError("need matching, nonempty points and weights")
        if any(len(p) != self.space.dim for p in pts):
            raise ValueError("atom dimension does not match the space")
        if any(v <= 0 for v in w):
            raise ValueError("atom weights must be positive")
        if abs(sum(w) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"atom weights sum to {sum(w)!r}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, space: VariableSpace, point: Sequence[float]) -> "FinitelyAtomic":
        return cls(space, (tuple(point),), (1.0,))

    def moment(self, exp) -> float:
        exp = self._check_exp(exp)
        total = 0.0
        for w, p in zip(self.weights, self.points):
            m = 1.0
            for v, a in zip(p, exp):
                if a:
                    m *= v**a
            total += w * m
        return total


@dataclass(frozen=True)
class BlockProduct(Measure):
    """Independent product of measures on disjoint block groups."""

    parts: tuple  # tuple of Measure, in block order

    def __post_init__(self):
        blocks = []
        for part in self.parts:
            blocks.extend(part.space.blocks)
        object.__setattr__(self, "space", VariableSpace(tuple(blocks)))

    def moment(self, exp) -> float:
        exp = self._check_exp(exp)
        out, offset = 1.0, 0
        for part in self.parts:
            d = part.space.dim
            out *= part.moment(exp[offset : offset + d])
            offset += d
        return out

    def max_degree(self) -> Optional[int]:
        degs = [p.max_degree() for p in self.parts]
        known = [d for d in degs if d is not None]
        return min(known) if known else None


def DiracProduct(space_x: VariableSpace, point, inner: Measure) -> BlockProduct:
    """Dirac mass at ``point`` on the first block group, times ``inner``."""
    return BlockProduct((FinitelyAtomic.dirac(space_x, point), inner))


@dataclass(frozen=True)
class Mixture(Measure):
    """Convex combination ``alpha * left + (1 - alpha) * right``."""

    alpha: float
    left: Measure
    right: Measure

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"mixture weight must lie in (0, 1), got {self.alpha}")
        if self.left.space != self.right.space:
            raise ValueError("mixture components live on different spaces")
        object.__setattr__(self, "space", self.left.space)

    def moment(self, exp) -> float:
        return self.alpha * self.left.moment(exp) + (1.0 - self.alpha) * self.right.moment(exp)

    def max_degree(self) -> Optional[int]:
        degs = [d for d in (self.left.max_degree(), self.right.max_degree()) if d is not None]
        return min(degs) if degs else None


@dataclass(frozen=True)
class MomentList(Measure):
    """Measure known only through explicit moments up to a degree cap."""

    space: VariableSpace
    degree: int
    values: Mapping[tuple, float]

    def __post_init__(self):
        vals = {tuple(int(e) for e in k): float(v) for k, v in self.values.items()}
        zero = self.space.zero_exponent()
        if abs(vals.get(zero, 0.0) - 1.0) > WEIGHT_TOL:
            raise ValueError("moment of the zero exponent must equal 1")
        if any(not math.isfinite(v) for v in vals.values()):
            raise ValueError("moments must be finite")
        object.__setattr__(self, "values", vals)

    def moment(self, exp) -> float:
        exp = self._check_exp(exp)
        if sum(exp) > self.degree:
            raise InsufficientMomentsError(sum(exp), self.degree)
        try:
            return self.values[exp]
        except KeyError:
            raise InsufficientMomentsError(sum(exp), self.degree) from None

    def max_degree(self) -> Optional[int]:
        return self.degree


def EmpiricalSample(space: VariableSpace, points: Sequence[Sequence[float]]) -> FinitelyAtomic:
    """Uniformly weighted atoms at the sample points."""
    n = len(points)
    if n == 0:
        raise ValueError("empirical sample needs at least one point")
    return FinitelyAtomic(space, tuple(tuple(p) for p in points), (1.0 / n,) * n)


# ----- batch queries and expectations --------------------------------------


@dataclass(frozen=True)
class MomentVector:
    """Moments of one measure along a monomial basis."""

    basis: MonomialBasis
    values: np.ndarray = field(compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.basis),):
            raise ValueError("moment vector length must match the basis")
        object.__setattr__(self, "values", v)

    def __getitem__(self, exp) -> float:
        return float(self.values[self.basis.position(tuple(exp))])


def moment_vector(m: Measure, basis: MonomialBasis) -> MomentVector:
    if basis.space != m.space:
        raise ValueError("basis and measure live on different spaces")
    return MomentVector(basis, np.array([m.moment(e) for e in basis], dtype=float))


def expected_polynomial(p: Polynomial, m: Measure, block_names: Sequence[str] = ("xi",)) -> Polynomial:
    """Integrate the named blocks out of ``p`` against ``m``.

    The measure's space must consist exactly of the integrated blocks;
    the result lives on the remaining blocks.
    """
    sub = p.space.restrict(block_names)
    if m.space != sub:
        raise ValueError(
            f"measure space {m.space.blocks} does not match integrated blocks {sub.blocks}"
        )
    keep = [n for n in p.space.block_names if n not in set(block_names)]
    out_space = p.space.restrict(keep)
    acc: dict = {}
    for exp, c in p.terms.items():
        parts = p.space.split_exponent(exp)
        m_exp = sub.join_exponent({n: parts[n] for n in sub.block_names})
        x_exp = out_space.join_exponent({n: parts[n] for n in keep})
        acc[x_exp] = acc.get(x_exp, 0.0) + c * m.moment(m_exp)
    return Polynomial(out_space, acc)


def mixture_update(nu: Measure, alpha: float, point, inner: Optional[Measure] = None) -> Mixture:
    """Reweight toward the latest candidate: ``alpha*nu + (1-alpha)*delta``.

    With ``inner`` given, the new mass is the product of a Dirac at
    ``point`` (on the leading blocks of ``nu.space``) with ``inner`` on
    the remaining blocks; without it, the new mass is a plain Dirac on
    the whole space.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"update weight must lie in (0, 1), got {alpha}")
    if inner is None:
        fresh: Measure = FinitelyAtomic.dirac(nu.space, point)
    else:
        lead = [n for n in nu.space.block_names if n not in set(inner.space.block_names)]
        fresh = DiracProduct(nu.space.restrict(lead), point, inner)
        if fresh.space != nu.space:
            raise ValueError("Dirac-product blocks do not recompose the measure space")
    return Mixture(alpha, nu, fresh)


# ----- finite atomization ---------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    """Atoms, weights and the polynomial degree they integrate exactly."""

    atoms: tuple
    weights: tuple
    exact_degree: Optional[int]  # None means exact for all polynomials


def _univariate_rule_from_moments(ms: Sequence[float], degree: int) -> Quadrature:
    # Two-point rule matching (m0, m1, m2); enough for the quadratic
    # information a degree-2 moment list carries.
    if degree >= 2:
        mean = ms[1]
        var = ms[2] - ms[1] ** 2
        if var < -1e-10:
            raise ValueError("moment list is not positive semidefinite (negative variance)")
        s = math.sqrt(max(var, 0.0))
        if s == 0.0:
            return Quadrature(((mean,),), (1.0,), degree)
        return Quadrature(((mean - s,), (mean + s,)), (0.5, 0.5), 2)
    return Quadrature(((ms[1] if degree >= 1 else 0.0,),), (1.0,), degree)


def atomize(m: Measure) -> Quadrature:
    """Represent ``m`` by finitely many atoms for expectation evaluation.

    Atomic measures convert losslessly.  A univariate moment list of
    degree >= 2 becomes a two-point rule matching its first three
    moments, so expectations of polynomials up to the stated
    ``exact_degree`` are exact.
    """
    if isinstance(m, FinitelyAtomic):
        return Quadrature(m.points, m.weights, None)
    if isinstance(m, Mixture):
        ql, qr = atomize(m.left), atomize(m.right)
        atoms = ql.atoms + qr.atoms
        weights = tuple(m.alpha * w for w in ql.weights) + tuple(
            (1.0 - m.alpha) * w for w in qr.weights
        )
        degs = [q.exact_degree for q in (ql, qr) if q.exact_degree is not None]
        return Quadrature(atoms, weights, min(degs) if degs else None)
    if isinstance(m, BlockProduct):
        qs = [atomize(p) for p in m.parts]
        atoms, weights = [], []
        for combo in itertools.product(*(zip(q.atoms, q.weights) for q in qs)):
            pt = tuple(v for a, _ in combo for v in a)
            w = math.prod(w for _, w in combo)
            atoms.append(pt)
            weights.append(w)
        degs = [q.exact_degree for q in qs if q.exact_degree is not None]
        return Quadrature(tuple(atoms), tuple(weights), min(degs) if degs else None)
    if isinstance(m, MomentList):
        if m.space.dim != 1:
            raise ValueError("only univariate moment lists can be atomized")
        ms = [m.moment((d,)) for d in range(min(m.degree, 2) + 1)]
        return _univariate_rule_from_moments(ms, m.degree)
    raise ValueError(f"cannot atomize measure of type {type(m).__name__}")


# ----- rejection sampling ----------------------------------------------------


def sample_support(
    space: VariableSpace,
    lower: Sequence[float],
    upper: Sequence[float],
    membership: Callable[[tuple], bool],
    count: int,
    seed: int,
    max_attempts: Optional[int] = None,
) -> FinitelyAtomic:
    """Uniform rejection sampling of ``count`` points inside a region.

    Draws from the box until ``count`` points pass ``membership``;
    deterministic for a fixed ``seed``.  Raises
    ``EmptySupportSampleError`` when the attempt budget is exhausted
    with no acceptances.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != (space.dim,) or hi.shape != (space.dim,):
        raise ValueError("box bounds must match the space dimension")
    budget = max_attempts if max_attempts is not None else max(10_000, 200 * count)
    rng = np.random.default_rng(seed)
    accepted = []
    attempts = 0
    while len(accepted) < count and attempts < budget:
        draw = lo + (hi - lo) * rng.random(space.dim)
        attempts += 1
        if membership(tuple(draw)):
            accepted.append(tuple(draw))
    if not accepted:
        raise EmptySupportSampleError(
            f"empty support sample: 0 of {attempts} draws accepted"
        )
    if len(accepted) < count:
        raise EmptySupportSampleError(
            f"only {len(accepted)} of the requested {count} points accepted "
            f"within {attempts} draws"
        )
    n = len(accepted)
    return FinitelyAtomic(space, tuple(accepted), (1.0 / n,) * n)


# ----- JSON descriptors ------------------------------------------------------


def _space_to_json(space: VariableSpace) -> list:
    return [[n, d] for n, d in space.blocks]


def _space_from_json(data) -> VariableSpace:
    return VariableSpace(tuple((n, int(d)) for n, d in data))


def measure_to_json(m: Measure) -> dict:
    if isinstance(m, UniformBox):
        return {
            "type": "uniform_box",
            "space": _space_to_json(m.space),
            "lower": list(m.lower),
            "upper": list(m.upper),
        }
    if isinstance(m, FinitelyAtomic):
        return {
            "type": "atomic",
            "space": _space_to_json(m.space),
            "points": [list(p) for p in m.points],
            "weights": list(m.weights),
        }
    if isinstance(m, Mixture):
        return {
            "type": "mixture",
            "alpha": m.alpha,
            "left": measure_to_json(m.left),
            "right": measure_to_json(m.right),
        }
    if isinstance(m, BlockProduct):
        return {"type": "block_product", "parts": [measure_to_json(p) for p in m.parts]}
    if isinstance(m, MomentList):
        keys = sorted(m.values, key=grlex_key)
        return {
            "type": "moment_list",
            "space": _space_to_json(m.space),
            "degree": m.degree,
            "moments": [[list(k), m.values[k]] for k in keys],
        }
    raise ValueError(f"cannot serialize measure of type {type(m).__name__}")


def measure_from_json(data: Mapping) -> Measure:
    kind = data["type"]
    if kind == "uniform_box":
        return UniformBox(_space_from_json(data["space"]), tuple(data["lower"]), tuple(data["upper"]))
    if kind == "atomic":
        return FinitelyAtomic(
            _space_from_json(data["space"]),
            tuple(tuple(p) for p in data["points"]),
            tuple(data["weights"]),
        )
    if kind == "empirical":
        return EmpiricalSample(_space_from_json(data["space"]), data["points"])
    if kind == "mixture":
        return Mixture(float(data["alpha"]), measure_from_json(data["left"]), measure_from_json(data["right"]))
    if kind == "block_product":
        return BlockProduct(tuple(measure_from_json(p) for p in data["parts"]))
    if kind == "moment_list":
        values = {tuple(int(e) for e in k): float(v) for k, v in data["moments"]}
        return MomentList(_space_from_json(data["space"]), int(data["degree"]), values)
    raise ValueError(f"unknown measure type {kind!r}")
