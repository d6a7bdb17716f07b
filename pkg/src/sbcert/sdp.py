"""Semidefinite programs in equality standard form and an interior-point solver.

A problem has PSD matrix blocks X_b, free scalars u, a linear objective and
linear equality constraints::

    minimize    <C, X> + c_u . u
    subject to  <A_i, X> + f_i . u = b_i,   X_b PSD for every block.

Linear forms address a block entry as ``(block_id, i, j)`` with ``i <= j``;
the coefficient multiplies the single entry ``X_b[i, j]`` (off-diagonal
entries are not double counted).  Free scalars are addressed by name.

The bundled solver runs a primal-dual path-following method on the
homogeneous self-dual embedding, with Nesterov-Todd scaling and a Mehrotra
predictor-corrector step.  The embedding gives infeasibility certificates for
free, so infeasible and unbounded problems terminate with a ray instead of
diverging.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

Key = Union[tuple, str]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible-certificate"
UNBOUNDED = "unbounded-certificate"
MAX_ITER = "max-iterations"
NUMERICAL = "numerical-failure"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


class SdpValidationError(ValueError):
    """Structurally inconsistent problem (bad ids, indices or shapes)."""


@dataclass(frozen=True, eq=False)
class SdpProblem:
    """Immutable SDP in the layout described in the module docstring.

    Decision variables are laid out as the upper triangles of the blocks (row
    major, in block order) followed by the free scalars.  ``A`` is a sparse
    (m, nvars) matrix over that layout and ``c`` the objective vector.
    """

    blocks: tuple[tuple[str, int], ...]
    scalars: tuple[str, ...]
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    constraint_names: tuple[str, ...] = ()

    def __post_init__(self):
        ids = [bid for bid, _ in self.blocks]
        if len(set(ids)) != len(ids):
            raise SdpValidationError("duplicate block ids")
        if len(set(self.scalars)) != len(self.scalars) or set(self.scalars) & set(ids):
            raise SdpValidationError("duplicate scalar ids")
        for bid, n in self.blocks:
            if int(n) < 1:
                raise SdpValidationError(f"block {bid!r} has dimension {n}")
        nv = self.nvars
        if self.c.shape != (nv,):
            raise SdpValidationError(f"objective has length {self.c.shape}, expected {nv}")
        if self.A.shape != (self.b.shape[0], nv):
            raise SdpValidationError(f"constraint matrix shape {self.A.shape} does not match {self.b.shape[0]} x {nv}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.A.data))):
            raise SdpValidationError("non-finite problem data")

    # layout

    @property
    def offsets(self) -> dict[str, int]:
        out, pos = {}, 0
        for bid, n in self.blocks:
            out[bid] = pos
            pos += n * (n + 1) // 2
        return out

    @property
    def n_block_vars(self) -> int:
        return sum(n * (n + 1) // 2 for _, n in self.blocks)

    @property
    def nvars(self) -> int:
        return self.n_block_vars + len(self.scalars)

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def index(self, key: Key) -> int:
        return _Layout(self.blocks, self.scalars).index(key)

    @classmethod
    def from_forms(
        cls,
        blocks: Sequence[tuple[str, int]],
        scalars: Sequence[str],
        objective: Mapping[Key, float],
        equalities: Sequence[tuple[Mapping[Key, float], float]],
    ) -> "SdpProblem":
        """Build from dictionary linear forms (convenient for small problems)."""
        layout = _Layout(tuple((b, int(n)) for b, n in blocks), tuple(scalars))
        c = np.zeros(layout.nvars)
        for k, v in objective.items():
            c[layout.index(k)] += v
        rows, cols, vals, rhs = [], [], [], []
        for r, (form, rhs_value) in enumerate(equalities):
            for k, v in form.items():
                rows.append(r)
                cols.append(layout.index(k))
                vals.append(float(v))
            rhs.append(float(rhs_value))
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(equalities), layout.nvars))
        return cls(layout.blocks, layout.scalars, c, A, np.asarray(rhs, dtype=float).reshape(-1))

    def unpack(self, vec: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, float]]:
        """Split a layout vector into symmetric block matrices and scalar values."""
        blocks, pos = {}, 0
        for bid, n in self.blocks:
            k = n * (n + 1) // 2
            blocks[bid] = triu_to_sym(vec[pos:pos + k], n)
            pos += k
        scalars = {s: float(vec[pos + i]) for i, s in enumerate(self.scalars)}
        return blocks, scalars

    def pack(self, blocks: Mapping[str, np.ndarray], scalars: Mapping[str, float] | None = None) -> np.ndarray:
        parts = [sym_to_triu(np.asarray(blocks[bid], dtype=float)) for bid, _ in self.blocks]
        parts.append(np.array([float((scalars or {}).get(s, 0.0)) for s in self.scalars]))
        return np.concatenate(parts)

    def dump(self, path) -> None:
        """Write the sparse text dump: ``constraint block row col value`` per nonzero.

        Constraint 0 is the objective and constraints 1..m the equalities.  Free
        scalars use block ``scalar:<name>`` with row = col = 0; right-hand sides
        use block ``rhs``.  Values carry 17 significant digits.
        """
        with open(path, "w", newline="\n") as fh:
            fh.write(dump_text(self))


class _Layout:
    def __init__(self, blocks, scalars):
        self.blocks = tuple(blocks)
        self.scalars = tuple(scalars)
        self.dims = dict(self.blocks)
        self.offsets, pos = {}, 0
        for bid, n in self.blocks:
            self.offsets[bid] = pos
            pos += n * (n + 1) // 2
        self.scalar_pos = {s: pos + i for i, s in enumerate(self.scalars)}
        self.nvars = pos + len(self.scalars)

    def index(self, key: Key) -> int:
        if isinstance(key, str):
            if key not in self.scalar_pos:
                raise SdpValidationError(f"undeclared scalar {key!r}")
            return self.scalar_pos[key]
        try:
            bid, i, j = key
        except (TypeError, ValueError):
            raise SdpValidationError(f"bad variable key {key!r}") from None
        if bid not in self.dims:
            raise SdpValidationError(f"undeclared block {bid!r}")
        n = self.dims[bid]
        if not (0 <= i <= j < n):
            raise SdpValidationError(f"entry ({i}, {j}) invalid for block {bid!r} of size {n} (need i <= j)")
        return self.offsets[bid] + triu_index(i, j, n)


def triu_index(i: int, j: int, n: int) -> int:
    return i * n - i * (i - 1) // 2 + (j - i)


def sym_to_triu(X: np.ndarray) -> np.ndarray:
    return X[np.triu_indices(X.shape[0])]


def triu_to_sym(v: np.ndarray, n: int) -> np.ndarray:
    X = np.zeros((n, n))
    X[np.triu_indices(n)] = v
    return X + np.triu(X, 1).T


def dump_text(prob: SdpProblem) -> str:
    inv = []
    for bid, n in prob.blocks:
        iu, ju = np.triu_indices(n)
        inv.extend((bid, int(i), int(j)) for i, j in zip(iu, ju))
    inv.extend((f"scalar:{s}", 0, 0) for s in prob.scalars)
    lines = []
    for k in np.nonzero(prob.c)[0]:
        bid, i, j = inv[k]
        lines.append(f"0 {bid} {i} {j} {prob.c[k]:.17g}")
    A = prob.A.tocsr()
    for r in range(prob.m):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        for k, v in sorted(zip(A.indices[lo:hi].tolist(), A.data[lo:hi].tolist())):
            if v != 0.0:
                bid, i, j = inv[k]
                lines.append(f"{r + 1} {bid} {i} {j} {v:.17g}")
        if prob.b[r] != 0.0:
            lines.append(f"{r + 1} rhs 0 0 {prob.b[r]:.17g}")
    return "\n".join(lines) + "\n"


@dataclass
class SdpSolution:
    status: str
    blocks: dict[str, np.ndarray]
    scalars: dict[str, float]
    objective: float
    dual_objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    duality_gap: float
    iterations: int
    solve_time: float
    y: np.ndarray
    dual_blocks: dict[str, np.ndarray] = field(default_factory=dict)
    certificate: np.ndarray | None = None
    message: str = ""
    timed_out: bool = False

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class SdpBackend(Protocol):
    def solve(self, prob: SdpProblem, tol: float, max_iter: int) -> SdpSolution: ...


# interior-point internals


class _Cones:
    """Standard-form data split by cone: PSD blocks, a nonnegative orthant made
    of the 1x1 blocks, and free variables."""

    def __init__(self, prob: SdpProblem):
        A = prob.A.tocsc()
        self.m = prob.m
        self.psd: list[tuple[str, int, np.ndarray, sp.csr_matrix, np.ndarray]] = []
        lp_cols, lp_ids = [], []
        offsets = prob.offsets
        for bid, n in prob.blocks:
            off = offsets[bid]
            if n == 1:
                lp_cols.append(off)
                lp_ids.append(bid)
                continue
            iu, ju = np.triu_indices(n)
            cols = off + np.arange(iu.size)
            sub = A[:, cols].tocoo()
            # expand upper-triangle coefficients into symmetric full-vec form
            i_, j_ = iu[sub.col], ju[sub.col]
            diag = i_ == j_
            r = np.concatenate([sub.row, sub.row[~diag]])
            cidx = np.concatenate([i_ * n + j_, (j_ * n + i_)[~diag]])
            v = np.concatenate([np.where(diag, sub.data, sub.data / 2), sub.data[~diag] / 2])
            full = sp.csr_matrix((v, (r, cidx)), shape=(self.m, n * n))
            rows = np.unique(full.tocoo().row)
            cfull = np.zeros(n * n)
            cu = prob.c[cols]
            cfull[iu * n + ju] += np.where(iu == ju, cu, cu / 2)
            cfull[ju * n + iu] += np.where(iu == ju, 0.0, cu / 2)
            self.psd.append((bid, n, rows, full[rows].tocsr(), cfull.reshape(n, n)))
        self.lp_ids = lp_ids
        self.A_lp = A[:, lp_cols].tocsr() if lp_cols else sp.csr_matrix((self.m, 0))
        self.c_lp = prob.c[lp_cols] if lp_cols else np.zeros(0)
        fcols = [prob.n_block_vars + i for i in range(len(prob.scalars))]
        self.F = A[:, fcols].toarray() if fcols else np.zeros((self.m, 0))
        self.c_f = prob.c[fcols] if fcols else np.zeros(0)
        self.nu = sum(n for _, n, *_ in self.psd) + len(lp_cols)

    def apply(self, Xs, xl, u) -> np.ndarray:
        out = np.zeros(self.m)
        for (bid, n, rows, Ab, _), X in zip(self.psd, Xs):
            out[rows] += Ab @ X.reshape(-1)
        out += self.A_lp @ xl + self.F @ u
        return out

    def adjoint(self, y):
        Xs = []
        for bid, n, rows, Ab, _ in self.psd:
            v = Ab.T @ y[rows]
            Xs.append(v.reshape(n, n))
        return Xs, self.A_lp.T @ y, self.F.T @ y

    def cdot(self, Xs, xl, u) -> float:
        return sum(float(np.vdot(C, X)) for (_, _, _, _, C), X in zip(self.psd, Xs)) + float(self.c_lp @ xl) + float(self.c_f @ u)


def _jordan_solve(lam: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve lam o Z = rhs for symmetric Z, where lam is diagonal and
    u o v = (uv + vu) / 2."""
    return 2.0 * rhs / (lam[:, None] + lam[None, :])


def _nt_scaling(X: np.ndarray, S: np.ndarray):
    """Return R with R^T S R = R^{-1} X R^{-T} = diag(lam)."""
    Lx = np.linalg.cholesky(X)
    Ls = np.linalg.cholesky(S)
    U, sig, Vt = np.linalg.svd(Ls.T @ Lx)
    R = Lx @ Vt.T / np.sqrt(sig)[None, :]
    Rinv = (U.T / np.sqrt(sig)[:, None]) @ Ls.T
    return R, Rinv, sig


def _max_step(lam: np.ndarray, D: np.ndarray) -> float:
    """Largest a with diag(lam) + a D PSD (inf if unbounded)."""
    s = 1.0 / np.sqrt(lam)
    E = np.linalg.eigvalsh(s[:, None] * D * s[None, :])
    lo = E[0]
    return np.inf if lo >= 0 else -1.0 / lo


def _schur_block(Ab: sp.csr_matrix, W: np.ndarray, chunk_bytes: float = 2.0e8) -> np.ndarray:
    """Ab (W kron W) Ab^T for a block whose rows are flattened symmetric matrices."""
    mb, nn = Ab.shape
    n = W.shape[0]
    out = np.empty((mb, mb))
    step = max(1, int(chunk_bytes // (8 * nn * 2)))
    # Gram-type rows touch few entries: W A_j W = W[:, p] diag(a) W[q, :]
    sparse_rows = Ab.nnz < mb * n / 4
    for lo in range(0, mb, step):
        hi = min(mb, lo + step)
        if sparse_rows:
            T = np.empty((hi - lo, nn))
            for r in range(lo, hi):
                s, e = Ab.indptr[r], Ab.indptr[r + 1]
                p, q = np.divmod(Ab.indices[s:e], n)
                T[r - lo] = ((W[:, p] * Ab.data[s:e]) @ W[q, :]).reshape(-1)
        else:
            D = Ab[lo:hi].toarray().reshape(hi - lo, n, n)
            T = np.matmul(np.matmul(W, D), W).reshape(hi - lo, nn)
        out[lo:hi] = (Ab @ T.T).T
    return 0.5 * (out + out.T)


_TIME_MSG = "time limit reached"
# normalized residual level at which a stalled run still counts as solved
_NEAR = 100.0


class InteriorPointSolver:
    """Bundled primal-dual interior-point SDP solver (default backend)."""

    def __init__(self, step_fraction: float = 0.99, verbose: bool = False, time_limit: float | None = None,
                 max_schur_bytes: float = 2.5e9):
        self.step_fraction = step_fraction
        self.verbose = verbose
        self.time_limit = time_limit
        self.max_schur_bytes = max_schur_bytes

    def solve(self, prob: SdpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SdpSolution:
        if not tol > 0:
            raise ValueError("tol must be positive")
        t0 = time.perf_counter()
        # normalize equality rows to unit norm and the objective to norm <= 1
        A = prob.A.tocsr()
        row_norm = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).reshape(-1))
        empty = row_norm == 0
        if np.any(empty & (np.abs(prob.b) > 0)):
            # 0 = b_i with b_i != 0: trivially infeasible; y = e_i is a Farkas ray
            i = int(np.nonzero(empty & (np.abs(prob.b) > 0))[0][0])
            y = np.zeros(prob.m)
            y[i] = np.sign(prob.b[i])
            return _trivial(prob, INFEASIBLE, y, t0, "empty constraint row with nonzero right-hand side")
        keep = ~empty
        row_norm[empty] = 1.0
        Dr = 1.0 / row_norm
        gamma = max(1.0, float(np.linalg.norm(prob.c)))
        scaled = SdpProblem(prob.blocks, prob.scalars, prob.c / gamma,
                            sp.diags(Dr[keep]) @ A[keep], prob.b[keep] * Dr[keep])
        if 8.0 * (prob.m + len(prob.scalars)) ** 2 > self.max_schur_bytes:
            return _trivial(prob, NUMERICAL, None, t0,
                            f"{prob.m} equality rows exceed the dense Schur complement memory budget")
        self._deadline = t0 + self.time_limit if self.time_limit else np.inf
        offsets = prob.offsets

        def to_original(Xs, xl, u, y, Ss, sl, tau, ray=False):
            y_full = np.zeros(prob.m)
            y_full[keep] = y * Dr[keep]
            vec = np.zeros(prob.nvars)
            svec = np.zeros(prob.nvars)
            for (bid, n), X, S in zip(psd_ids, Xs, Ss):
                k = offsets[bid]
                vec[k:k + n * (n + 1) // 2] = sym_to_triu(X)
                # layout dual of an off-diagonal entry counts both halves
                svec[k:k + n * (n + 1) // 2] = sym_to_triu(2.0 * S - np.diag(np.diag(S)))
            for bid, xv, sv in zip(lp_ids, xl, sl):
                vec[offsets[bid]] = xv
                svec[offsets[bid]] = sv
            vec[prob.n_block_vars:] = u
            div = 1.0 if ray else tau
            return vec / div, gamma * y_full / div, gamma * svec / div

        psd_ids = [(bid, n) for bid, n in prob.blocks if n > 1]
        lp_ids = [bid for bid, n in prob.blocks if n == 1]
        self._measure = lambda *state: residuals(prob, *to_original(*state))
        result = self._run(scaled, tol, max_iter)
        status, Xs, xl, u, y, Ss, sl, tau, kappa, it, msg = result
        ray = status in (INFEASIBLE, UNBOUNDED)
        x_sol, y_sol, s_sol = to_original(Xs, xl, u, y, Ss, sl, tau, ray)
        cert = None
        if status == INFEASIBLE:
            cert = y_sol.copy()
        elif status == UNBOUNDED:
            cert = x_sol.copy()
        blocks, scalars = prob.unpack(x_sol)
        t_div = 1.0 if ray else tau
        dual_blocks = {bid: gamma * S / t_div for (bid, _), S in zip(psd_ids, Ss)}
        dual_blocks.update({bid: np.array([[gamma * sv / t_div]]) for bid, sv in zip(lp_ids, sl)})
        pobj = float(prob.c @ x_sol)
        dobj = float(prob.b @ y_sol)
        pres, dres, gap = residuals(prob, x_sol, y_sol, s_sol)
        if status == OPTIMAL and not gap <= tol:
            status, msg = NUMERICAL, f"duality gap {gap:.2e} above tolerance"
        return SdpSolution(status, blocks, scalars, pobj, dobj, pres, dres, gap, it,
                           time.perf_counter() - t0, y_sol, dual_blocks, cert, msg, msg == _TIME_MSG)

    def _run(self, prob: SdpProblem, tol: float, max_iter: int):
        cones = _Cones(prob)
        m = cones.m
        b = prob.b
        Xs = [np.eye(n) for _, n, *_ in cones.psd]
        Ss = [np.eye(n) for _, n, *_ in cones.psd]
        nl = cones.A_lp.shape[1]
        xl, sl = np.ones(nl), np.ones(nl)
        nf = cones.F.shape[1]
        u = np.zeros(nf)
        y = np.zeros(m)
        tau, kappa = 1.0, 1.0
        nu = cones.nu
        bnorm = max(1.0, float(np.linalg.norm(b)))
        cnorm = max(1.0, float(np.sqrt(sum(np.sum(C * C) for *_, C in cones.psd) + cones.c_lp @ cones.c_lp + cones.c_f @ cones.c_f)))
        status, msg = MAX_ITER, "iteration limit reached"
        it = 0
        best = (np.inf,)
        for it in range(max_iter + 1):
            # residuals of the embedding
            Ax = cones.apply(Xs, xl, u)
            ATy, ATy_l, ATy_f = cones.adjoint(y)
            rp = b * tau - Ax
            rd = [C * tau - aty - S for (*_, C), aty, S in zip(cones.psd, ATy, Ss)]
            rd_l = cones.c_lp * tau - ATy_l - sl
            rf = cones.c_f * tau - ATy_f
            cx = cones.cdot(Xs, xl, u)
            by = float(b @ y)
            rg = cx - by + kappa
            xs = sum(float(np.vdot(X, S)) for X, S in zip(Xs, Ss)) + float(xl @ sl)
            mu = (xs + tau * kappa) / (nu + 1)

            pres = np.linalg.norm(rp) / tau / bnorm
            dres = np.sqrt(sum(np.sum(r * r) for r in rd) + rd_l @ rd_l + rf @ rf) / tau / cnorm
            pcost, dcost = cx / tau, by / tau
            gap = max(abs(pcost - dcost), xs / tau**2) / (1.0 + abs(pcost) + abs(dcost))
            if self.verbose:
                log.info("it %3d pcost %+.8e dcost %+.8e gap %.1e pres %.1e dres %.1e tau %.1e kappa %.1e",
                         it, pcost, dcost, gap, pres, dres, tau, kappa)
            score = max(pres, dres, gap)
            if score <= _NEAR * tol:
                # the objective gap must also hold in original units
                measured = self._measure(Xs, xl, u, y, Ss, sl, tau)
                if self.verbose:
                    log.info("    original pres %.1e dres %.1e gap %.1e", *measured)
                if measured[2] <= tol:
                    if score <= tol:
                        status, msg = OPTIMAL, "converged"
                        break
                    if score < best[0]:
                        best = (score, [X.copy() for X in Xs], xl.copy(), u.copy(), y.copy(),
                                [S.copy() for S in Ss], sl.copy(), tau, kappa)
            # infeasibility tests on the unnormalized rays
            aty_s = np.sqrt(sum(np.sum((aty + S) ** 2) for aty, S in zip(ATy, Ss)) + np.sum((ATy_l + sl) ** 2) + ATy_f @ ATy_f)
            if by > 0 and aty_s / by <= tol:
                status, msg = INFEASIBLE, "primal infeasibility certificate found"
                break
            ax_n = np.linalg.norm(Ax)
            if cx < 0 and ax_n / -cx <= tol:
                status, msg = UNBOUNDED, "dual infeasibility certificate found"
                break
            if it == max_iter:
                break
            if time.perf_counter() > getattr(self, "_deadline", np.inf):
                msg = _TIME_MSG
                break

            try:
                scal = [_nt_scaling(X, S) for X, S in zip(Xs, Ss)]
            except np.linalg.LinAlgError:
                status, msg = NUMERICAL, "lost positive definiteness"
                break
            Ws = [R @ R.T for R, _, _ in scal]
            dl = xl / sl
            lam_l = np.sqrt(xl * sl)
            try:
                kkt = _Kkt(cones, Ws, dl, b, tau, kappa)
            except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
                status, msg = NUMERICAL, f"Schur complement factorization failed: {exc}"
                break

            def direction(eta, sigma, corr=None):
                rc = []
                for k, (R, Rinv, lam) in enumerate(scal):
                    t = -np.diag(lam * lam) + sigma * mu * np.eye(lam.size)
                    if corr is not None:
                        t = t - corr[0][k]
                    rc.append(t)
                rc_l = -lam_l * lam_l + sigma * mu - (corr[1] if corr is not None else 0.0)
                rtk = -tau * kappa + sigma * mu - (corr[2] if corr is not None else 0.0)
                return kkt.solve(scal, lam_l, eta * rp, [eta * r for r in rd], eta * rd_l, eta * rf, eta * rg, rc, rc_l, rtk)

            def step_length(d):
                dX, dxl, du, dy, dS, dsl, dtau, dkappa = d
                a = np.inf
                for (R, Rinv, lam), DX, DS in zip(scal, dX, dS):
                    a = min(a, _max_step(lam, Rinv @ DX @ Rinv.T), _max_step(lam, R.T @ DS @ R))
                if nl:
                    for v, dv in ((xl, dxl), (sl, dsl)):
                        neg = dv < 0
                        if np.any(neg):
                            a = min(a, float(np.min(-v[neg] / dv[neg])))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            try:
                aff = direction(1.0, 0.0)
                a_aff = min(1.0, step_length(aff))
                sigma = (1.0 - a_aff) ** 3
                # second-order correction in scaled coordinates
                corr_psd = []
                for (R, Rinv, lam), DX, DS in zip(scal, aff[0], aff[4]):
                    dxt = Rinv @ DX @ Rinv.T
                    dst = R.T @ DS @ R
                    corr_psd.append(0.5 * (dxt @ dst + dst @ dxt))
                corr_l = (aff[1] / np.sqrt(dl)) * (aff[5] * np.sqrt(dl)) if nl else 0.0
                corr = (corr_psd, corr_l, aff[6] * aff[7])
                d = direction(1.0 - sigma, sigma, corr)
                alpha = min(1.0, self.step_fraction * step_length(d))
                if self.verbose:
                    log.info("    sigma %.1e step %.2e affine %.2e", sigma, alpha, a_aff)
            except (np.linalg.LinAlgError, sla.LinAlgError, FloatingPointError) as exc:
                status, msg = NUMERICAL, f"search direction failed: {exc}"
                break
            if not np.isfinite(alpha) or alpha < 1e-10:
                status, msg = NUMERICAL, "step length collapsed"
                break
            dX, dxl, du, dy, dS, dsl, dtau, dkappa = d
            Xs = [X + alpha * D for X, D in zip(Xs, dX)]
            Ss = [S + alpha * D for S, D in zip(Ss, dS)]
            Xs = [0.5 * (X + X.T) for X in Xs]
            Ss = [0.5 * (S + S.T) for S in Ss]
            xl, sl = xl + alpha * dxl, sl + alpha * dsl
            u = u + alpha * du
            y = y + alpha * dy
            tau, kappa = tau + alpha * dtau, kappa + alpha * dkappa
            # rescale the embedding when tau drifts, to keep numbers moderate
            scale = max(tau, kappa)
            if scale > 1e6 or scale < 1e-6:
                Xs = [X / scale for X in Xs]
                Ss = [S / scale for S in Ss]
                xl, sl, u, y = xl / scale, sl / scale, u / scale, y / scale
                tau, kappa = tau / scale, kappa / scale
        if status in (MAX_ITER, NUMERICAL) and len(best) > 1 and msg != _TIME_MSG:
            # stalled close to the optimum: accept the most accurate iterate seen
            Xs, xl, u, y, Ss, sl, tau, kappa = best[1:]
            status, msg = OPTIMAL, f"converged to reduced accuracy ({best[0]:.1e})"
        return status, Xs, xl, u, y, Ss, sl, tau, kappa, it, msg


class _Kkt:
    """Factored reduced Newton system for one interior-point iteration."""

    def __init__(self, cones: _Cones, Ws, dl, b, tau, kappa):
        self.cones, self.Ws, self.dl, self.b = cones, Ws, dl, b
        self.tau, self.kappa = tau, kappa
        m = cones.m
        M = np.zeros((m, m))
        for (bid, n, rows, Ab, _), W in zip(cones.psd, Ws):
            M[np.ix_(rows, rows)] += _schur_block(Ab, W)
        if cones.A_lp.shape[1]:
            Al = cones.A_lp
            M += (Al @ sp.diags(dl) @ Al.T).toarray()
        self.nf = cones.F.shape[1]
        # tiny regularization guards against rank loss from roundoff
        M[np.diag_indices(m)] += 1e-14 * max(1.0, float(np.max(np.abs(np.diag(M))))) if m else 0.0
        if self.nf:
            K = np.block([[M, cones.F], [cones.F.T, np.zeros((self.nf, self.nf))]])
            self.lu = sla.lu_factor(K)
            self.chol = None
        else:
            self.chol = sla.cho_factor(M, lower=True, check_finite=False)
        self.M = M
        # second right-hand side, independent of the residuals
        WcW = [W @ C @ W for (*_, C), W in zip(cones.psd, Ws)]
        self.g = cones.apply(WcW, dl * cones.c_lp, np.zeros(self.nf))
        self.cWc = sum(float(np.vdot(C, wcw)) for (*_, C), wcw in zip(cones.psd, WcW)) + float(cones.c_lp @ (dl * cones.c_lp))
        self.p2, self.q2 = self._solve(self.g + b, cones.c_f)

    def _solve(self, r1, r2):
        if self.chol is not None:
            sol = sla.cho_solve(self.chol, r1, check_finite=False)
            # one step of iterative refinement
            sol += sla.cho_solve(self.chol, r1 - self.M @ sol, check_finite=False)
            return sol, np.zeros(0)
        rhs = np.concatenate([r1, r2])
        sol = sla.lu_solve(self.lu, rhs)
        m = self.cones.m
        return sol[:m], sol[m:]

    def solve(self, scal, lam_l, rp, rd, rd_l, rf, rg, rc, rc_l, rtk):
        d = self._solve1(scal, lam_l, rp, rd, rd_l, rf, rg, rc, rc_l, rtk)
        # one round of iterative refinement on the primal equation, which the
        # Schur route resolves least accurately
        err = rp - (self.cones.apply(d[0], d[1], d[2]) - self.b * d[6])
        zero = [np.zeros_like(r) for r in rd]
        e = self._solve1(scal, lam_l, err, zero, np.zeros_like(rd_l), np.zeros_like(rf), 0.0,
                         [np.zeros_like(c) for c in rc], np.zeros_like(rc_l), 0.0)
        fixed = _add_dirs(d, e)
        err2 = rp - (self.cones.apply(fixed[0], fixed[1], fixed[2]) - self.b * fixed[6])
        if np.linalg.norm(err2) < np.linalg.norm(err):
            d = fixed
        return d

    def _solve1(self, scal, lam_l, rp, rd, rd_l, rf, rg, rc, rc_l, rtk):
        cones, Ws, dl, b = self.cones, self.Ws, self.dl, self.b
        tau, kappa = self.tau, self.kappa
        # D0 = R (lam^{-1} o rc) R^T - W rd W
        D0 = []
        for (R, Rinv, lam), W, r, c in zip(scal, Ws, rd, rc):
            dtil = _jordan_solve(lam, c)
            D0.append(R @ dtil @ R.T - W @ r @ W)
        d_l = rc_l / lam_l  # scaled complementarity for the orthant
        D0_l = np.sqrt(dl) * d_l - dl * rd_l
        h1 = rp - cones.apply(D0, D0_l, np.zeros(self.nf))
        p1, q1 = self._solve(h1, rf)
        cD0 = cones.cdot(D0, D0_l, np.zeros(self.nf))
        r3 = rg + cD0 + rtk / tau
        bg = b - self.g
        num = r3 - bg @ p1 + cones.c_f @ q1
        den = bg @ self.p2 - cones.c_f @ self.q2 + self.cWc + kappa / tau
        dtau = num / den
        dy = p1 + self.p2 * dtau
        du = q1 + self.q2 * dtau if self.nf else np.zeros(0)
        dkappa = (rtk - kappa * dtau) / tau
        ATdy, ATdy_l, _ = cones.adjoint(dy)
        dX = [d0 + W @ (a - C * dtau) @ W for d0, W, a, (*_, C) in zip(D0, Ws, ATdy, cones.psd)]
        dX = [0.5 * (D + D.T) for D in dX]
        dxl = D0_l + dl * (ATdy_l - cones.c_lp * dtau)
        dS = [r - a + C * dtau for r, a, (*_, C) in zip(rd, ATdy, cones.psd)]
        dS = [0.5 * (D + D.T) for D in dS]
        dsl = rd_l - ATdy_l + cones.c_lp * dtau
        return dX, dxl, du, dy, dS, dsl, dtau, dkappa


def _add_dirs(d, e):
    out = []
    for a, b in zip(d, e):
        out.append([x + y for x, y in zip(a, b)] if isinstance(a, list) else a + b)
    return tuple(out)


def _trivial(prob, status, y, t0, msg) -> SdpSolution:
    blocks, scalars = prob.unpack(np.zeros(prob.nvars))
    return SdpSolution(status, blocks, scalars, np.nan, np.nan, np.inf, np.inf, np.inf, 0,
                       time.perf_counter() - t0, y, {}, y, msg)


def residuals(prob: SdpProblem, x: np.ndarray, y: np.ndarray, s: np.ndarray) -> tuple[float, float, float]:
    """Relative primal infeasibility, dual infeasibility and duality gap.

    ``s`` is the dual slack in the variable layout (zero on free scalars).
    """
    pres = float(np.linalg.norm(prob.A @ x - prob.b)) / (1.0 + float(np.linalg.norm(prob.b)))
    dres = float(np.linalg.norm(prob.A.T @ y + s - prob.c)) / (1.0 + float(np.linalg.norm(prob.c)))
    pobj, dobj = float(prob.c @ x), float(prob.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return pres, dres, gap


def min_eigenvalue(X: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (X + X.T))[0]) if X.size else 0.0


def passes_psd_check(X: np.ndarray, shift: float) -> bool:
    """Cholesky test of X + shift * I."""
    try:
        np.linalg.cholesky(0.5 * (X + X.T) + shift * np.eye(X.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return False


def solve_sdp(prob: SdpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              backend: SdpBackend | None = None, time_limit: float | None = None) -> SdpSolution:
    """Solve ``prob`` with the given backend (bundled interior-point by default).

    ``time_limit`` (seconds) applies to the bundled solver only.
    """
    return (backend or InteriorPointSolver(time_limit=time_limit)).solve(prob, tol, max_iter)
