"""Linear conic (semidefinite) programs: free scalars plus PSD blocks.

A program has named scalar variables, PSD matrix block variables, a
linear objective, and sparse linear equality constraints over both kinds
of variables.  Matrix blocks are symmetric by construction: rows and the
objective reference upper-triangle entries only, and a coefficient on an
off-diagonal reference multiplies the shared value of the mirrored pair,
so inner products against a full Gram matrix carry weight 2 there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "scalar_ref",
    "entry_ref",
    "LinearRow",
    "ConicProgram",
    "ConicSolution",
    "SolverConfig",
    "ProgramStats",
    "program_stats",
]

# Variable references: ("s", scalar_index) or ("m", block_index, i, j) with i <= j.


def scalar_ref(i: int):
    return ("s", int(i))


def entry_ref(block: int, i: int, j: int):
    if i > j:
        i, j = j, i
    return ("m", int(block), int(i), int(j))


@dataclass(frozen=True)
class LinearRow:
    """One equality constraint: sum of coeff * var == rhs."""

    coeffs: tuple  # tuple of (ref, float)
    rhs: float

    def __post_init__(self):
        object.__setattr__(
            self, "coeffs", tuple((ref, float(c)) for ref, c in self.coeffs)
        )
        object.__setattr__(self, "rhs", float(self.rhs))


@dataclass(frozen=True)
class ConicProgram:
    sense: str  # "min" or "max"
    scalar_names: tuple
    blocks: tuple  # tuple of (name, side)
    objective: tuple  # tuple of (ref, float)
    rows: tuple  # tuple of LinearRow
    metadata: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        object.__setattr__(self, "scalar_names", tuple(str(n) for n in self.scalar_names))
        object.__setattr__(self, "blocks", tuple((str(n), int(s)) for n, s in self.blocks))
        for ref, _ in self.objective:
            self._check_ref(ref)
        for row in self.rows:
            for ref, _ in row.coeffs:
                self._check_ref(ref)

    def _check_ref(self, ref):
        kind = ref[0]
        if kind == "s":
            if not 0 <= ref[1] < len(self.scalar_names):
                raise ValueError(f"scalar reference out of range: {ref}")
        elif kind == "m":
            _, b, i, j = ref
            if not 0 <= b < len(self.blocks):
                raise ValueError(f"block reference out of range: {ref}")
            side = self.blocks[b][1]
            if not (0 <= i <= j < side):
                raise ValueError(f"matrix entry out of range: {ref}")
        else:
            raise ValueError(f"unknown reference kind: {ref}")

    @property
    def num_scalars(self) -> int:
        return len(self.scalar_names)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class ProgramStats:
    scalar_vars: int
    matrix_blocks: int
    scalarized_matrix_vars: int
    constraints: int

    def as_dict(self) -> dict:
        return {
            "scalar_vars": self.scalar_vars,
            "matrix_blocks": self.matrix_blocks,
            "scalarized_matrix_vars": self.scalarized_matrix_vars,
            "constraints": self.constraints,
        }


def program_stats(prog: ConicProgram) -> ProgramStats:
    """Size accounting: scalar count, block count, upper-triangle matrix
    entries, and constraint rows."""
    scalarized = sum(s * (s + 1) // 2 for _, s in prog.blocks)
    return ProgramStats(
        scalar_vars=prog.num_scalars,
        matrix_blocks=prog.num_blocks,
        scalarized_matrix_vars=scalarized,
        constraints=len(prog.rows),
    )


@dataclass(frozen=True)
class SolverConfig:
    feasibility_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    scaling: bool = True
    # "auto" picks the structure-aware KKT solver when the program
    # reduces to scalar variables with PSD-image constraints.
    kkt: str = "auto"
    verbose: bool = False

    def __post_init__(self):
        if self.feasibility_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.kkt not in ("auto", "custom", "default"):
            raise ValueError(f"unknown kkt choice {self.kkt!r}")


@dataclass(frozen=True)
class ConicSolution:
    status: str  # optimal | infeasible | unbounded | max_iters | numerical_failure
    objective: Optional[float]
    scalars: Optional[np.ndarray]
    block_values: Optional[tuple]
    row_duals: Optional[np.ndarray]
    block_duals: Optional[tuple]
    residuals: dict
    iterations: int = 0

    @property
    def usable(self) -> bool:
        """True when the returned point is accurate enough to act on."""
        if self.status == "optimal":
            return True
        if self.status in ("max_iters", "numerical_failure") and self.scalars is not None:
            r = self.residuals
            return (
                r.get("primal_infeasibility", np.inf) < 1e-5
                and r.get("dual_infeasibility", np.inf) < 1e-5
                and r.get("relative_gap", np.inf) < 1e-5
            )
        return False

    def scalar(self, name_to_index: Mapping[str, int], name: str) -> float:
        return float(self.scalars[name_to_index[name]])
