"""Interior-point solve for ConicProgram via cvxopt's conelp.

The program is first reduced to a form with only the free scalars as
variables: every matrix entry that is pinned by a single "defining"
equality row (the pattern all moment-side programs here follow) is
substituted away, turning each PSD block into a PSD constraint on an
affine image of the scalars.  Entries without defining rows stay as
explicit variables (the Gram-side pattern).

For the reduced form we install a KKT solver that assembles the Schur
complement blockwise from the sparse coefficient matrices, which keeps
per-iteration cost near ``n_scalars * side^3`` instead of the dense
``cone_dim * n^2`` of the generic solvers.  Ruiz-style equilibration of
the constraint data is applied by default.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from cvxopt import matrix as cvxmat
from cvxopt import solvers as cvxsolvers
from cvxopt import spmatrix as cvxsp

from .conic import ConicProgram, ConicSolution, SolverConfig

__all__ = ["solve"]

_ZERO_COEF = 1e-300


class _Block:
    """PSD constraint on an affine image of the scalar vector.

    ``D`` maps scalars to the full (side x side) matrix stored row-major;
    the constraint is ``mat(D @ u + d) >> 0``.
    """

    def __init__(self, side: int, D: sp.csr_matrix, d: np.ndarray, name: str):
        self.side = side
        self.D = D
        self.d = d
        self.name = name


class _Form:
    """Solver-ready reduction of a ConicProgram (min sense)."""

    def __init__(self, n, c, obj_const, A, b, kept_rows, blocks, lin_D, lin_d, lin_block_refs, defs):
        self.n = n
        self.c = c
        self.obj_const = obj_const
        self.A = A  # csr (p, n)
        self.b = b
        self.kept_rows = kept_rows  # original row index per A row
        self.blocks = blocks  # list of _Block (side >= 2)
        self.lin_D = lin_D  # csr (nl, n): 1x1 blocks folded into the 'l' cone
        self.lin_d = lin_d
        self.lin_block_refs = lin_block_refs  # block index per 'l' row
        self.defs = defs  # entry -> (orig row, coef, scalar part, rhs) or None


def _flat(side, i, j):
    return i * side + j


def _sym_packed(V: np.ndarray) -> np.ndarray:
    """Symmetric matrix from the triangle cvxopt's packed storage keeps.

    cvxopt stores 's' components column-major and only maintains the
    lower triangle, which is the upper triangle of the C-order view.
    """
    U = np.triu(V)
    return U + np.triu(V, 1).T


def _reduce(prog: ConicProgram):
    """Try to substitute matrix entries away; None when not possible."""
    n = prog.num_scalars
    entry_def = {}
    kept = []
    # pass 1: claim defining rows (single matrix entry, unclaimed)
    for r, row in enumerate(prog.rows):
        mrefs = [(ref, c) for ref, c in row.coeffs if ref[0] == "m" and abs(c) > _ZERO_COEF]
        if len(mrefs) == 1:
            ref, coef = mrefs[0]
            key = ref[1:]
            if key not in entry_def:
                scal = [(ref2[1], c) for ref2, c in row.coeffs if ref2[0] == "s"]
                entry_def[key] = (r, coef, scal, row.rhs)
                continue
        kept.append(r)
    # pass 2: every entry referenced anywhere must now be defined
    for row in prog.rows:
        for ref, c in row.coeffs:
            if ref[0] == "m" and ref[1:] not in entry_def:
                return None
    for ref, c in prog.objective:
        if ref[0] == "m" and ref[1:] not in entry_def:
            return None
    for bidx, (_, side) in enumerate(prog.blocks):
        for i in range(side):
            for j in range(i, side):
                if (bidx, i, j) not in entry_def:
                    return None
    return entry_def, kept


def _entry_expr(entry_def, key):
    """Entry as (coef vector over scalars as dict, constant)."""
    _, coef, scal, rhs = entry_def[key]
    col = {s: -c / coef for s, c in scal}
    return col, rhs / coef


def _build_form(prog: ConicProgram) -> _Form:
    n = prog.num_scalars
    sense_sign = 1.0 if prog.sense == "min" else -1.0

    reduced = _reduce(prog)
    if reduced is None:
        return _build_general_form(prog)
    entry_def, kept = reduced

    # objective over scalars (+ constant) after substitution
    c = np.zeros(n)
    obj_const = 0.0
    for ref, coef in prog.objective:
        if ref[0] == "s":
            c[ref[1]] += coef
        else:
            col, const = _entry_expr(entry_def, ref[1:])
            for s, v in col.items():
                c[s] += coef * v
            obj_const += coef * const
    c *= sense_sign
    obj_const *= sense_sign

    # kept equality rows after substitution
    ar, ac, av, b = [], [], [], []
    for out_r, r in enumerate(kept):
        row = prog.rows[r]
        rhs = row.rhs
        acc = {}
        for ref, coef in row.coeffs:
            if ref[0] == "s":
                acc[ref[1]] = acc.get(ref[1], 0.0) + coef
            else:
                col, const = _entry_expr(entry_def, ref[1:])
                for s, v in col.items():
                    acc[s] = acc.get(s, 0.0) + coef * v
                rhs -= coef * const
        for s, v in acc.items():
            if abs(v) > _ZERO_COEF:
                ar.append(out_r)
                ac.append(s)
                av.append(v)
        b.append(rhs)
    A = sp.csr_matrix((av, (ar, ac)), shape=(len(kept), n))
    b = np.array(b)

    # cone blocks as affine images of the scalars
    blocks = []
    lr, lc, lv, ld, lrefs = [], [], [], [], []
    for bidx, (name, side) in enumerate(prog.blocks):
        dr, dc, dv = [], [], []
        dconst = np.zeros(side * side)
        for i in range(side):
            for j in range(i, side):
                col, const = _entry_expr(entry_def, (bidx, i, j))
                for f in {_flat(side, i, j), _flat(side, j, i)}:
                    dconst[f] = const
                    for s, v in col.items():
                        dr.append(f)
                        dc.append(s)
                        dv.append(v)
        if side == 1:
            row_out = len(ld)
            for r, s, v in zip(dr, dc, dv):
                lr.append(row_out)
                lc.append(s)
                lv.append(v)
            ld.append(dconst[0])
            lrefs.append(bidx)
        else:
            D = sp.csr_matrix((dv, (dr, dc)), shape=(side * side, n))
            blocks.append(_Block(side, D, dconst, name))
    lin_D = sp.csr_matrix((lv, (lr, lc)), shape=(len(ld), n))
    return _Form(n, c, obj_const, A, b, list(kept), blocks, lin_D, np.array(ld), lrefs, entry_def)


def _build_general_form(prog: ConicProgram) -> _Form:
    """Fallback when substitution is impossible: matrix entries become
    explicit scalar variables tied to their blocks by selector maps."""
    n0 = prog.num_scalars
    sense_sign = 1.0 if prog.sense == "min" else -1.0
    entry_col = {}
    col = n0
    for bidx, (_, side) in enumerate(prog.blocks):
        for i in range(side):
            for j in range(i, side):
                entry_col[(bidx, i, j)] = col
                col += 1
    n = col

    def ref_col(ref):
        return ref[1] if ref[0] == "s" else entry_col[ref[1:]]

    c = np.zeros(n)
    for ref, coef in prog.objective:
        c[ref_col(ref)] += coef
    c *= sense_sign

    ar, ac, av, b = [], [], [], []
    for r, row in enumerate(prog.rows):
        for ref, coef in row.coeffs:
            ar.append(r)
            ac.append(ref_col(ref))
            av.append(coef)
        b.append(row.rhs)
    A = sp.csr_matrix((av, (ar, ac)), shape=(len(prog.rows), n))

    blocks = []
    lr, lc, lv, ld, lrefs = [], [], [], [], []
    for bidx, (name, side) in enumerate(prog.blocks):
        if side == 1:
            lr.append(len(ld))
            lc.append(entry_col[(bidx, 0, 0)])
            lv.append(1.0)
            ld.append(0.0)
            lrefs.append(bidx)
            continue
        dr, dc, dv = [], [], []
        for i in range(side):
            for j in range(i, side):
                for f in {_flat(side, i, j), _flat(side, j, i)}:
                    dr.append(f)
                    dc.append(entry_col[(bidx, i, j)])
                    dv.append(1.0)
        blocks.append(_Block(side, sp.csr_matrix((dv, (dr, dc)), shape=(side * side, n)), np.zeros(side * side), name))
    lin_D = sp.csr_matrix((lv, (lr, lc)), shape=(len(ld), n))
    form = _Form(n, c, sense_sign * 0.0, A, np.array(b), list(range(len(prog.rows))), blocks, lin_D, np.array(ld), lrefs, None)
    form.entry_col = entry_col
    return form


# ----- Ruiz equilibration ----------------------------------------------------


def _equilibrate(form: _Form, iters: int = 4):
    """Jointly scale scalar columns, equality rows, and cone blocks."""
    n = form.n
    e = np.ones(n)
    rA = np.ones(form.A.shape[0])
    rl = np.ones(form.lin_D.shape[0])
    tb = np.ones(len(form.blocks))

    A = form.A.copy().tocsr()
    L = form.lin_D.copy().tocsr()
    Ds = [blk.D.copy().tocsr() for blk in form.blocks]

    def colmax(M):
        M = M.tocsc()
        out = np.zeros(M.shape[1])
        absdata = np.abs(M.data)
        for j in range(M.shape[1]):
            seg = absdata[M.indptr[j] : M.indptr[j + 1]]
            if seg.size:
                out[j] = seg.max()
        return out

    for _ in range(iters):
        cm = np.maximum.reduce(
            [colmax(A), colmax(L)] + [colmax(D) for D in Ds]
            or [np.zeros(n)]
        )
        cm[cm == 0] = 1.0
        s = 1.0 / np.sqrt(cm)
        e *= s
        diag = sp.diags(s)
        A = (A @ diag).tocsr()
        L = (L @ diag).tocsr()
        Ds = [(D @ diag).tocsr() for D in Ds]

        rm = np.abs(A).max(axis=1).toarray().ravel() if A.nnz else np.zeros(A.shape[0])
        rm[rm == 0] = 1.0
        rs = 1.0 / np.sqrt(rm)
        rA *= rs
        A = (sp.diags(rs) @ A).tocsr()

        lm = np.abs(L).max(axis=1).toarray().ravel() if L.nnz else np.zeros(L.shape[0])
        lm[lm == 0] = 1.0
        ls = 1.0 / np.sqrt(lm)
        rl *= ls
        L = (sp.diags(ls) @ L).tocsr()

        for k, D in enumerate(Ds):
            m = np.abs(D.data).max() if D.nnz else 0.0
            if m == 0:
                m = 1.0
            f = 1.0 / np.sqrt(m)
            tb[k] *= f
            Ds[k] = (D * f).tocsr()

    scaled = _Form(
        form.n,
        form.c * e,
        form.obj_const,
        A,
        form.b * rA,
        form.kept_rows,
        [
            _Block(blk.side, D, blk.d * t, blk.name)
            for blk, D, t in zip(form.blocks, Ds, tb)
        ],
        L,
        form.lin_d * rl,
        form.lin_block_refs,
        form.defs,
    )
    if hasattr(form, "entry_col"):
        scaled.entry_col = form.entry_col
    return scaled, e, rA, rl, tb


# ----- structure-aware KKT solver ---------------------------------------------


def _make_kktsolver(form: _Form):
    n = form.n
    A = form.A.tocsr()
    AT = A.T.tocsr()
    p = A.shape[0]
    L = form.lin_D.tocsr()
    LT = L.T.tocsr()
    first_factor = [True]

    per_block = []
    for blk in form.blocks:
        s = blk.side
        Dc = blk.D.tocsc()
        active = np.flatnonzero(np.diff(Dc.indptr))
        Da = Dc[:, active].tocsr()
        DaT = Da.T.tocsr()
        # stacked (na*s, s) matrix whose j-th s-row slab is the coefficient
        # matrix of active scalar j
        coo = Da.tocoo()
        i_cell, j_cell = np.divmod(coo.row, s)
        rows = coo.col * s + i_cell
        stack = sp.csr_matrix((coo.data, (rows, j_cell)), shape=(len(active) * s, s))
        per_block.append((blk, active, Da, DaT, stack))

    def kktsolver(W):
        di = np.asarray(W["di"]).ravel() if p >= 0 else None
        rtis = [np.asarray(r) for r in W["rti"]]

        S = np.zeros((n, n))
        if L.shape[0]:
            w = np.asarray(W["di"]).ravel() ** 2
            S += (LT @ sp.diags(w) @ L).toarray()
        pinvs = []
        for (blk, active, Da, DaT, stack), rti in zip(per_block, rtis):
            s = blk.side
            na = len(active)
            pinv = rti @ rti.T  # (W'W)^{-1} acts as congruence by pinv
            # U_j = pinv A_j pinv via two large GEMMs: the slabs of
            # stack@pinv are A_j pinv, and U_j = (A_j pinv)' pinv.
            X = (stack @ pinv).reshape(na, s, s)
            U = X.transpose(0, 2, 1).reshape(na * s, s) @ pinv
            Sb = (DaT @ U.reshape(na, s * s).T).T  # <U_j, A_j'>
            S[np.ix_(active, active)] += Sb
            pinvs.append(pinv)
        S = 0.5 * (S + S.T)

        # static regularization; the refinement step below corrects
        # against the unregularized operators, so accuracy is preserved
        # while the factorization stays well posed near convergence
        reg = 1e-11 * max(1.0, float(np.abs(np.diag(S)).max()))
        jitter = reg
        for attempt in range(4):
            try:
                chol = sla.cho_factor(S + jitter * np.eye(n), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                jitter = max(100 * jitter, 1e-10 * max(1.0, np.abs(S).max()))
        else:
            raise ArithmeticError("singular Schur complement")

        if p:
            SiAT = sla.cho_solve(chol, AT.toarray(), check_finite=False)
            Mys = A @ SiAT
            Mys = 0.5 * (Mys + Mys.T)
            regy = 1e-11 * max(1.0, float(np.abs(np.diag(Mys)).max()))
            chol_y = sla.cho_factor(Mys + regy * np.eye(p), lower=True, check_finite=False)
            dg = np.diag(chol_y[0])
            if first_factor[0] and dg.min() ** 2 < 1e-13 * max(1.0, dg.max() ** 2):
                raise ArithmeticError("rank-deficient equality system")
        first_factor[0] = False

        nl = L.shape[0]
        sides = [blk.side for blk, _, _, _, _ in per_block]
        offs = np.cumsum([nl] + [s * s for s in sides])
        rs = [np.asarray(r) for r in W["r"]]
        d_l = np.asarray(W["d"]).ravel()

        def G_mul(u):
            out = np.empty(offs[-1])
            if nl:
                out[:nl] = -(L @ u)
            for k, (blk, active, Da, DaT, stack) in enumerate(per_block):
                out[offs[k] : offs[k + 1]] = -(Da @ u[active])
            return out

        def GT_mul(v):
            out = np.zeros(n)
            if nl:
                out -= LT @ v[:nl]
            for k, (blk, active, Da, DaT, stack) in enumerate(per_block):
                out[active] -= Da.T @ v[offs[k] : offs[k + 1]]
            return out

        def WtW_mul(v):
            out = np.empty_like(v)
            if nl:
                out[:nl] = v[:nl] * d_l**2
            for k, ((blk, active, Da, DaT, stack), r) in enumerate(zip(per_block, rs)):
                s = blk.side
                P = r @ r.T
                V = v[offs[k] : offs[k + 1]].reshape(s, s)
                out[offs[k] : offs[k + 1]] = (P @ V @ P).ravel()
            return out

        def WtW_inv(v):
            out = np.empty_like(v)
            if nl:
                out[:nl] = v[:nl] * di**2
            for k, ((blk, active, Da, DaT, stack), pinv) in enumerate(zip(per_block, pinvs)):
                s = blk.side
                V = v[offs[k] : offs[k + 1]].reshape(s, s)
                out[offs[k] : offs[k + 1]] = (pinv @ V @ pinv).ravel()
            return out

        def saddle_solve(r1, r2):
            w1 = sla.cho_solve(chol, r1, check_finite=False)
            if p:
                vy = sla.cho_solve(chol_y, A @ w1 - r2, check_finite=False)
                vx = w1 - SiAT @ vy
            else:
                vy = np.zeros(0)
                vx = w1
            return vx, vy

        def solve_once(bx, by, bz):
            t = WtW_inv(bz)
            rx = bx + GT_mul(t)
            ux, uy = saddle_solve(rx, by)
            uz = WtW_inv(G_mul(ux) - bz)
            return ux, uy, uz

        def f(x, y, z):
            bx = np.asarray(x).ravel().copy()
            by = np.asarray(y).ravel().copy()
            bz = np.asarray(z).ravel().copy()
            # conelp keeps only the packed (lower, column-major) triangle
            # of 's' components meaningful; mirror it before use
            for k, (blk, active, Da, DaT, stack) in enumerate(per_block):
                s = blk.side
                bz[offs[k] : offs[k + 1]] = _sym_packed(
                    bz[offs[k] : offs[k + 1]].reshape(s, s)
                ).ravel()

            ux, uy, uz = solve_once(bx, by, bz)

            def kkt_residual(vx, vy, vz):
                res_x = bx - (AT @ vy if p else 0.0) - GT_mul(vz)
                res_y = by - A @ vx if p else np.zeros(0)
                res_z = bz - G_mul(vx) + WtW_mul(vz)
                norm = max(
                    np.abs(res_x).max(initial=0.0),
                    np.abs(res_y).max(initial=0.0),
                    np.abs(res_z).max(initial=0.0),
                )
                return norm, res_x, res_y, res_z

            # refine against the full unregularized KKT system so neither
            # Schur-assembly rounding nor the static regularization can
            # stall the interior-point iteration; corrections are accepted
            # only while they actually shrink the residual
            norm, res_x, res_y, res_z = kkt_residual(ux, uy, uz)
            for _ in range(6):
                if norm == 0.0:
                    break
                dx, dy, dz = solve_once(res_x, res_y, res_z)
                cand = (ux + dx, uy + dy, uz + dz)
                cnorm, cres_x, cres_y, cres_z = kkt_residual(*cand)
                if cnorm >= norm:
                    break
                ux, uy, uz = cand
                norm, res_x, res_y, res_z = cnorm, cres_x, cres_y, cres_z
                if cnorm < 1e-13 * max(1.0, np.abs(bx).max(initial=0.0), np.abs(bz).max(initial=0.0)):
                    break

            # output z := W uz
            zout = np.empty_like(bz)
            if nl:
                zout[:nl] = uz[:nl] * d_l
            for k, ((blk, active, Da, DaT, stack), r) in enumerate(zip(per_block, rs)):
                s = blk.side
                V = uz[offs[k] : offs[k + 1]].reshape(s, s)
                zout[offs[k] : offs[k + 1]] = (r.T @ V @ r).ravel()

            x[:] = cvxmat(ux)
            if p:
                y[:] = cvxmat(uy)
            z[:] = cvxmat(zout)

        return f

    return kktsolver


def _columns_covered(form: _Form) -> bool:
    cover = np.zeros(form.n, dtype=bool)
    if form.lin_D.shape[0]:
        cover[np.unique(form.lin_D.tocoo().col)] = True
    for blk in form.blocks:
        cover[np.unique(blk.D.tocoo().col)] = True
    return bool(cover.all())


# ----- main entry -------------------------------------------------------------


def _to_cvx_sparse(M: sp.csr_matrix):
    coo = M.tocoo()
    return cvxsp(
        coo.data.tolist(),
        coo.row.tolist(),
        coo.col.tolist(),
        (M.shape[0], M.shape[1]),
    )


def _status_failure(status, prog, iterations, residuals=None):
    return ConicSolution(
        status=status,
        objective=None,
        scalars=None,
        block_values=None,
        row_duals=None,
        block_duals=None,
        residuals=residuals or {},
        iterations=iterations,
    )


def _drop_dependent_rows(prog: ConicProgram):
    """Row-reduce the equality system; returns (program, kept, inconsistent)."""
    refs = {}
    for row in prog.rows:
        for ref, _ in row.coeffs:
            refs.setdefault(ref, len(refs))
    dense = np.zeros((len(prog.rows), len(refs) + 1))
    for r, row in enumerate(prog.rows):
        for ref, c in row.coeffs:
            dense[r, refs[ref]] += c
        dense[r, -1] = row.rhs
    lhs = dense[:, :-1]
    _, _, piv = sla.qr(lhs.T, mode="economic", pivoting=True)
    ranks = np.linalg.matrix_rank(lhs, tol=1e-12 * max(1.0, np.abs(lhs).max()))
    keep = sorted(piv[:ranks])
    lam, res, _, _ = np.linalg.lstsq(lhs[keep].T, lhs.T, rcond=None)
    pred_rhs = lam.T @ dense[keep, -1]
    inconsistent = bool(np.any(np.abs(pred_rhs - dense[:, -1]) > 1e-8 * max(1.0, np.abs(dense[:, -1]).max())))
    pruned = ConicProgram(
        sense=prog.sense,
        scalar_names=prog.scalar_names,
        blocks=prog.blocks,
        objective=prog.objective,
        rows=tuple(prog.rows[i] for i in keep),
        metadata=prog.metadata,
    )
    return pruned, keep, inconsistent


def solve(prog: ConicProgram, cfg: SolverConfig = SolverConfig()) -> ConicSolution:
    """Solve a conic program; statuses are reported, never raised."""
    # structural screen: a zero row with nonzero rhs is an immediate
    # infeasibility (and would crash the rank checks downstream)
    for row in prog.rows:
        if all(abs(c) <= _ZERO_COEF for _, c in row.coeffs):
            if abs(row.rhs) > 1e-12:
                return _status_failure("infeasible", prog, 0)
    live_rows = tuple(r for r in prog.rows if any(abs(c) > _ZERO_COEF for _, c in r.coeffs))
    live_idx = [i for i, r in enumerate(prog.rows) if any(abs(c) > _ZERO_COEF for _, c in r.coeffs)]
    work = ConicProgram(prog.sense, prog.scalar_names, prog.blocks, prog.objective, live_rows, prog.metadata)

    sol = _solve_clean(work, cfg, dropped=None)
    if sol is None:
        pruned, keep, inconsistent = _drop_dependent_rows(work)
        if inconsistent:
            return _status_failure("infeasible", prog, 0)
        sol = _solve_clean(pruned, cfg, dropped=(len(work.rows), keep))
        if sol is None:
            return _status_failure("numerical_failure", prog, 0)

    # re-embed row duals into the original row numbering
    if sol.row_duals is not None and len(live_idx) != len(prog.rows):
        duals = np.zeros(len(prog.rows))
        duals[live_idx] = sol.row_duals
        sol = ConicSolution(
            sol.status, sol.objective, sol.scalars, sol.block_values, duals,
            sol.block_duals, sol.residuals, sol.iterations,
        )
    return sol


def _solve_clean(prog: ConicProgram, cfg: SolverConfig, dropped):
    form = _build_form(prog)
    general = hasattr(form, "entry_col")

    if cfg.scaling:
        sform, e, rA, rl, tb = _equilibrate(form)
    else:
        sform = form
        e = np.ones(form.n)
        rA = np.ones(form.A.shape[0])
        rl = np.ones(form.lin_D.shape[0])
        tb = np.ones(len(form.blocks))

    n = sform.n
    nl = sform.lin_D.shape[0]
    sides = [blk.side for blk in sform.blocks]
    if not (nl or sides):
        return None
    G_parts = [-sform.lin_D] + [-blk.D for blk in sform.blocks]
    G = _to_cvx_sparse(sp.vstack(G_parts).tocsr())
    h = cvxmat(np.concatenate([sform.lin_d] + [blk.d for blk in sform.blocks]))
    dims = {"l": nl, "q": [], "s": sides}
    Acvx = _to_cvx_sparse(sform.A)
    bcvx = cvxmat(sform.b)
    ccvx = cvxmat(sform.c)

    options = {
        "show_progress": cfg.verbose,
        "maxiters": cfg.max_iters,
        "abstol": cfg.gap_tol,
        "reltol": cfg.gap_tol,
        "feastol": cfg.feasibility_tol,
        "refinement": 1,
    }

    # the structure-aware solver pays off on large blocks; below that the
    # built-in dense 'qr' factorization is both fast enough and the most
    # battle-tested path
    big = n >= 400 or max(sides, default=0) >= 40
    use_custom = cfg.kkt == "custom" or (
        cfg.kkt == "auto" and big and _columns_covered(sform)
    )
    attempts = []
    if use_custom:
        attempts.append(_make_kktsolver(sform))
    attempts.append(None)

    raw = None
    for kkt in attempts:
        try:
            raw = cvxsolvers.conelp(
                ccvx, G, h, dims, Acvx, bcvx, kktsolver=kkt, options=options
            )
            break
        except (ArithmeticError, np.linalg.LinAlgError, ValueError):
            raw = None
            continue
    if raw is None:
        return None

    status = raw["status"]
    iterations = raw.get("iterations", 0)
    if status == "primal infeasible":
        return _status_failure("infeasible", prog, iterations)
    if status == "dual infeasible":
        return _status_failure("unbounded", prog, iterations)

    if raw["x"] is None:
        return _status_failure("numerical_failure", prog, iterations)

    u = e * np.asarray(raw["x"]).ravel()
    yA = rA * np.asarray(raw["y"]).ravel()
    zraw = np.asarray(raw["z"]).ravel() if raw["z"] is not None else np.zeros(nl + sum(s * s for s in sides))
    off = nl
    z_lin = zraw[:nl] * rl
    Zs = []
    for s_i, t in zip(sides, tb):
        Zs.append(zraw[off : off + s_i * s_i].reshape(s_i, s_i) * t)
        off += s_i * s_i

    # values of all blocks (affine images on the unscaled data)
    block_values = []
    block_duals = []
    li = 0
    si = 0
    lin_pos = {b: k for k, b in enumerate(form.lin_block_refs)}
    big_pos = {}
    k = 0
    for bidx, (name, side) in enumerate(prog.blocks):
        if side == 1 and bidx in lin_pos:
            r = lin_pos[bidx]
            val = form.lin_D[r] @ u + form.lin_d[r]
            block_values.append(np.array([[val]]))
            block_duals.append(np.array([[z_lin[r]]]))
        else:
            blk = form.blocks[big_pos.setdefault(bidx, len(big_pos))]
            V = (blk.D @ u + blk.d).reshape(side, side)
            block_values.append(0.5 * (V + V.T))
            Z = Zs[big_pos[bidx]]
            block_duals.append(0.5 * (Z + Z.T))

    # duals per original row: kept rows directly, defining rows reconstructed
    row_duals = np.zeros(len(prog.rows))
    for out_r, r in enumerate(form.kept_rows):
        row_duals[r] = yA[out_r]
    if form.defs is not None:
        obj_sign = 1.0 if prog.sense == "min" else -1.0
        obj_on_entry = {}
        for ref, cval in prog.objective:
            if ref[0] == "m":
                obj_on_entry[ref[1:]] = obj_on_entry.get(ref[1:], 0.0) + cval * obj_sign
        hit = {}
        for out_r, r in enumerate(form.kept_rows):
            for ref, cval in prog.rows[r].coeffs:
                if ref[0] == "m":
                    hit.setdefault(ref[1:], []).append((out_r, cval))
        for key, (r, coef, _, _) in form.defs.items():
            bidx, i, j = key
            mult = 1.0 if i == j else 2.0
            Z = block_duals[bidx]
            acc = mult * Z[i, j] - obj_on_entry.get(key, 0.0)
            for out_r, cval in hit.get(key, []):
                acc -= cval * yA[out_r]
            row_duals[r] = acc / coef

    sense_sign = 1.0 if prog.sense == "min" else -1.0
    objective = sense_sign * (form.c @ u + form.obj_const)

    prim_res = float(np.max(np.abs(form.A @ u - form.b))) if form.A.shape[0] else 0.0
    lin_vals = form.lin_D @ u + form.lin_d if nl else np.zeros(0)
    eigs = [float(np.linalg.eigvalsh(V).min()) for V in block_values if V.shape[0] > 1]
    if nl:
        eigs.append(float(lin_vals.min()))
    residuals = {
        "primal_infeasibility": prim_res / max(1.0, float(np.max(np.abs(form.b))) if form.b.size else 1.0),
        "dual_infeasibility": float(raw.get("dual infeasibility") or 0.0),
        "relative_gap": float(raw.get("relative gap") or 0.0),
        "min_block_eigenvalue": min(eigs) if eigs else 0.0,
        "duality_gap": float(raw.get("gap") or 0.0),
    }

    mapped = "optimal" if status == "optimal" else (
        "max_iters" if iterations >= cfg.max_iters else "numerical_failure"
    )
    if mapped == "optimal" and (
        residuals["primal_infeasibility"] > 1e-6
        or residuals["min_block_eigenvalue"] < -1e-6
    ):
        mapped = "numerical_failure"
    if dropped is not None:
        total, keep = dropped
        duals = np.zeros(total)
        duals[keep] = row_duals
        row_duals = duals
    return ConicSolution(
        status=mapped,
        objective=float(objective),
        scalars=u,
        block_values=tuple(block_values),
        row_duals=row_duals,
        block_duals=tuple(block_duals),
        residuals=residuals,
        iterations=iterations,
    )
