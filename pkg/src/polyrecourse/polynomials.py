"""Sparse multivariate polynomials over named variable blocks.

Variables are organized into ordered blocks (canonically ``x``, ``y``,
``xi``).  A monomial is a flat exponent tuple over the concatenation of
all blocks; polynomials are dictionaries mapping exponents to float
coefficients.  Everything is immutable after construction, so values can
be shared freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

__all__ = [
    "VariableSpace",
    "Polynomial",
    "MonomialBasis",
    "SpaceMismatchError",
    "grlex_key",
    "total_degree_exponents",
    "poly_to_json_dict",
    "poly_from_json_dict",
]

# Coefficients below this magnitude are dropped after arithmetic so that
# cancellation noise does not destroy sparsity.
COEFF_EPS = 1e-14

Exponent = tuple  # flat tuple[int, ...] over the concatenated block order


class SpaceMismatchError(ValueError):
    """Raised when operands live on incompatible variable spaces."""


def grlex_key(exp: Exponent):
    """Sort key for graded lexicographic order (degree, then lex with
    earlier variables taking higher powers first)."""
    return (sum(exp), tuple(-e for e in exp))


@dataclass(frozen=True)
class VariableSpace:
    """Ordered, named blocks of real variables.

    ``blocks`` is a tuple of ``(name, dimension)`` pairs.  The flat
    variable order is the concatenation of the blocks in declared order.
    """

    blocks: tuple

    def __post_init__(self):
        names = [name for name, _ in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names in {names}")
        for name, dim in self.blocks:
            if dim < 0:
                raise ValueError(f"block {name!r} has negative dimension {dim}")
        object.__setattr__(self, "blocks", tuple((str(n), int(d)) for n, d in self.blocks))

    @classmethod
    def make(cls, **dims: int) -> "VariableSpace":
        """Build a space from keyword dims, e.g. ``make(x=2, xi=1)``.

        Python keeps keyword order, which becomes the block order.
        """
        return cls(tuple(dims.items()))

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.blocks)

    @property
    def block_names(self) -> tuple:
        return tuple(name for name, _ in self.blocks)

    def block_dim(self, name: str) -> int:
        for n, d in self.blocks:
            if n == name:
                return d
        raise KeyError(f"no block named {name!r}")

    def block_slice(self, name: str) -> slice:
        offset = 0
        for n, d in self.blocks:
            if n == name:
                return slice(offset, offset + d)
            offset += d
        raise KeyError(f"no block named {name!r}")

    def has_block(self, name: str) -> bool:
        return any(n == name for n, _ in self.blocks)

    def restrict(self, names: Sequence[str]) -> "VariableSpace":
        """Subspace keeping only the named blocks, in this space's order."""
        keep = set(names)
        missing = keep - set(self.block_names)
        if missing:
            raise KeyError(f"no blocks named {sorted(missing)}")
        return VariableSpace(tuple((n, d) for n, d in self.blocks if n in keep))

    def drop(self, names: Sequence[str]) -> "VariableSpace":
        gone = set(names)
        return VariableSpace(tuple((n, d) for n, d in self.blocks if n not in gone))

    def zero_exponent(self) -> Exponent:
        return (0,) * self.dim

    def split_exponent(self, exp: Exponent) -> dict:
        """Per-block view of a flat exponent."""
        out = {}
        for name, _ in self.blocks:
            out[name] = tuple(exp[self.block_slice(name)])
        return out

    def join_exponent(self, parts: Mapping[str, Sequence[int]]) -> Exponent:
        """Flat exponent from per-block parts; absent blocks are zero."""
        out = []
        for name, d in self.blocks:
            part = tuple(parts.get(name, (0,) * d))
            if len(part) != d:
                raise ValueError(f"block {name!r} expects {d} exponents, got {len(part)}")
            out.extend(int(e) for e in part)
        return tuple(out)

    def embed_exponent(self, exp: Exponent, sub: "VariableSpace") -> Exponent:
        """Lift an exponent on a subspace into this space (zeros elsewhere)."""
        return self.join_exponent(sub.split_exponent(exp))

    def join_point(self, parts: Mapping[str, Sequence[float]]):
        """Flat point vector from per-block coordinates."""
        out = []
        for name, d in self.blocks:
            if name not in parts:
                raise KeyError(f"missing coordinates for block {name!r}")
            vals = list(parts[name])
            if len(vals) != d:
                raise ValueError(f"block {name!r} expects {d} values, got {len(vals)}")
            out.extend(float(v) for v in vals)
        return tuple(out)


def total_degree_exponents(dim: int, degree: int) -> Iterator[Exponent]:
    """All exponents in ``dim`` variables with total degree <= degree."""
    if dim == 0:
        yield ()
        return

    def rec(prefix, remaining, budget):
        if remaining == 1:
            for e in range(budget + 1):
                yield prefix + (e,)
            return
        for e in range(budget + 1):
            yield from rec(prefix + (e,), remaining - 1, budget - e)

    yield from rec((), dim, degree)


@dataclass(frozen=True)
class MonomialBasis:
    """Graded-lex ordered list of exponents on a variable space."""

    space: VariableSpace
    exponents: tuple
    index: Mapping[Exponent, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "index", {e: i for i, e in enumerate(self.exponents)})

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self):
        return iter(self.exponents)

    def position(self, exp: Exponent) -> int:
        return self.index[exp]

    def __contains__(self, exp: Exponent) -> bool:
        return exp in self.index

    @classmethod
    def total_degree(cls, space: VariableSpace, degree: int) -> "MonomialBasis":
        """The full monomial basis of degree <= ``degree``; its size is
        binomial(n + degree, degree)."""
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        exps = sorted(total_degree_exponents(space.dim, degree), key=grlex_key)
        return cls(space, tuple(exps))

    @classmethod
    def bidegree(cls, space: VariableSpace, bounds: Mapping[str, int]) -> "MonomialBasis":
        """Monomials whose per-block total degree respects each bound.

        Blocks not mentioned in ``bounds`` are capped at degree 0, so a
        basis in (x, xi) on a (x, y, xi) space is requested with
        ``bounds={'x': k1, 'xi': k2}``.
        """
        for name in bounds:
            space.block_slice(name)  # raise early on unknown block
        caps = {name: int(bounds.get(name, 0)) for name, _ in space.blocks}
        for name, cap in caps.items():
            if cap < 0:
                raise ValueError(f"degree bound for block {name!r} must be >= 0")
        per_block = []
        for name, d in space.blocks:
            per_block.append(list(total_degree_exponents(d, caps[name])))

        exps = []

        def rec(i, acc):
            if i == len(per_block):
                exps.append(tuple(acc))
                return
            for part in per_block[i]:
                rec(i + 1, acc + list(part))

        rec(0, [])
        exps.sort(key=grlex_key)
        return cls(space, tuple(exps))


def _clean_terms(terms: Mapping[Exponent, float], eps: float = 0.0) -> dict:
    out = {}
    for exp, c in terms.items():
        c = float(c)
        if c != 0.0 and abs(c) > eps:
            out[tuple(int(e) for e in exp)] = c
    return out


@dataclass(frozen=True)
class Polynomial:
    """Sparse polynomial: map from flat exponent tuples to coefficients.

    Zero coefficients are never stored.  Arithmetic drops coefficients
    with magnitude below ``COEFF_EPS`` to keep cancellation noise from
    inflating the support.
    """

    space: VariableSpace
    terms: Mapping[Exponent, float]

    def __post_init__(self):
        clean = _clean_terms(self.terms)
        for exp in clean:
            if len(exp) != self.space.dim:
                raise ValueError(
                    f"exponent {exp} has length {len(exp)}, space has dim {self.space.dim}"
                )
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
        object.__setattr__(self, "terms", clean)

    # ----- constructors -------------------------------------------------

    @classmethod
    def zero(cls, space: VariableSpace) -> "Polynomial":
        return cls(space, {})

    @classmethod
    def constant(cls, space: VariableSpace, c: float) -> "Polynomial":
        return cls(space, {space.zero_exponent(): float(c)})

    @classmethod
    def variable(cls, space: VariableSpace, block: str, i: int = 0) -> "Polynomial":
        sl = space.block_slice(block)
        if not 0 <= i < sl.stop - sl.start:
            raise IndexError(f"index {i} out of range for block {block!r}")
        exp = [0] * space.dim
        exp[sl.start + i] = 1
        return cls(space, {tuple(exp): 1.0})

    @classmethod
    def from_block_terms(cls, space: VariableSpace, terms: Iterable) -> "Polynomial":
        """Build from ``(coeff, {block: exponents})`` pairs."""
        acc = {}
        for coeff, parts in terms:
            exp = space.join_exponent(parts)
            acc[exp] = acc.get(exp, 0.0) + float(coeff)
        return cls(space, acc)

    # ----- structure ----------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0."""
        return max((sum(e) for e in self.terms), default=0)

    def partial_degree(self, block: str) -> int:
        sl = self.space.block_slice(block)
        return max((sum(e[sl]) for e in self.terms), default=0)

    def partial_degrees(self) -> dict:
        return {name: self.partial_degree(name) for name, _ in self.space.blocks}

    def coefficient(self, exp: Exponent) -> float:
        exp = tuple(exp)
        if len(exp) != self.space.dim:
            raise ValueError(
                f"exponent {exp} has length {len(exp)}, space has dim {self.space.dim}"
            )
        return self.terms.get(exp, 0.0)

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: grlex_key(kv[0]))

    # ----- arithmetic ---------------------------------------------------

    def _check_space(self, other: "Polynomial"):
        if self.space != other.space:
            raise SpaceMismatchError(
                f"operands on different spaces: {self.space.blocks} vs {other.space.blocks}"
            )

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        self._check_space(other)
        acc = dict(self.terms)
        for exp, c in other.terms.items():
            acc[exp] = acc.get(exp, 0.0) + c
        return Polynomial(self.space, _clean_terms(acc, COEFF_EPS))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(
                self.space, _clean_terms({e: c * other for e, c in self.terms.items()}, COEFF_EPS)
            )
        self._check_space(other)
        acc = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                acc[e] = acc.get(e, 0.0) + c1 * c2
        return Polynomial(self.space, _clean_terms(acc, COEFF_EPS))

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        out = Polynomial.constant(self.space, 1.0)
        for _ in range(n):
            out = out * self
        return out

    # ----- evaluation and substitution -----------------------------------

    def evaluate(self, point) -> float:
        """Evaluate at a point given per block (mapping) or flat (sequence)."""
        if isinstance(point, Mapping):
            flat = self.space.join_point(point)
        else:
            flat = tuple(float(v) for v in point)
            if len(flat) != self.space.dim:
                raise ValueError(
                    f"point has {len(flat)} coordinates, space has dim {self.space.dim}"
                )
        total = 0.0
        for exp, c in self.sorted_terms():
            m = 1.0
            for v, e in zip(flat, exp):
                if e:
                    m *= v**e
            total += c * m
        return total

    def substitute_block(self, block: str, values: Sequence[float]) -> "Polynomial":
        """Fix one block to numeric values; result lives on the remaining blocks."""
        sl = self.space.block_slice(block)
        vals = [float(v) for v in values]
        if len(vals) != sl.stop - sl.start:
            raise ValueError(
                f"block {block!r} expects {sl.stop - sl.start} values, got {len(vals)}"
            )
        new_space = self.space.drop([block])
        acc = {}
        for exp, c in self.terms.items():
            scale = 1.0
            for v, e in zip(vals, exp[sl]):
                if e:
                    scale *= v**e
            rest = exp[: sl.start] + exp[sl.stop :]
            acc[rest] = acc.get(rest, 0.0) + c * scale
        return Polynomial(new_space, _clean_terms(acc, COEFF_EPS))

    def embed(self, space: VariableSpace) -> "Polynomial":
        """Reinterpret on a larger space containing this one's blocks."""
        return Polynomial(
            space, {space.embed_exponent(e, self.space): c for e, c in self.terms.items()}
        )

    def restrict_space(self, space: VariableSpace) -> "Polynomial":
        """Project onto a smaller space; fails if the polynomial actually
        involves a dropped block."""
        dropped = [n for n in self.space.block_names if not space.has_block(n)]
        for name in dropped:
            if self.partial_degree(name) > 0:
                raise SpaceMismatchError(f"polynomial involves dropped block {name!r}")
        acc = {}
        for exp, c in self.terms.items():
            parts = self.space.split_exponent(exp)
            acc[space.join_exponent({n: parts[n] for n in space.block_names})] = c
        return Polynomial(space, acc)

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        names = []
        for bname, d in self.space.blocks:
            if d == 1:
                names.append(bname)
            else:
                names.extend(f"{bname}{i + 1}" for i in range(d))
        parts = []
        for exp, c in self.sorted_terms():
            mono = "*".join(
                (f"{n}^{e}" if e > 1 else n) for n, e in zip(names, exp) if e
            )
            if mono:
                parts.append(f"{c:+.6g}*{mono}")
            else:
                parts.append(f"{c:+.6g}")
        return " ".join(parts)


# ----- JSON encoding ------------------------------------------------------


def poly_to_json_dict(p: Polynomial) -> list:
    """Encode as a list of ``{"coeff": c, "exp": {block: [..]}}`` entries.

    Blocks whose exponents are all zero are omitted; coefficients are
    emitted with full double precision via ``repr``-faithful floats.
    """
    out = []
    for exp, c in p.sorted_terms():
        parts = p.space.split_exponent(exp)
        exp_dict = {name: list(part) for name, part in parts.items() if any(part)}
        out.append({"coeff": c, "exp": exp_dict})
    return out


def poly_from_json_dict(space: VariableSpace, data: Iterable) -> Polynomial:
    acc = {}
    for entry in data:
        exp = space.join_exponent(entry.get("exp", {}))
        acc[exp] = acc.get(exp, 0.0) + float(entry["coeff"])
    return Polynomial(space, acc)


def poly_to_json(p: Polynomial) -> str:
    return json.dumps(poly_to_json_dict(p))


def poly_from_json(space: VariableSpace, text: str) -> Polynomial:
    return poly_from_json_dict(space, json.loads(text))


def binomial(n: int, k: int) -> int:
    return math.comb(n, k)
