"""Independent reference answers for small SDPs."""

import numpy as np
import scipy.sparse as sp

from sbcert.sdp import SdpProblem, sym_to_triu


def constructed_sdp(rng: np.random.Generator, dims, n_free: int = 0):
    """Random SDP with a known optimal value from a strictly complementary pair.

    Each block gets X* = Q diag(a) Q^T and S* = Q diag(s) Q^T with a_i s_i = 0
    and a_i + s_i > 0, so c . x* = b . y* is the optimum by the KKT conditions.
    """
    blocks = [(f"B{k}", n) for k, n in enumerate(dims)]
    scalars = [f"u{k}" for k in range(n_free)]
    xs, ss = [], []
    for n in dims:
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        r = int(rng.integers(0, n + 1))
        a = np.r_[rng.uniform(0.5, 2.0, r), np.zeros(n - r)]
        s = np.r_[np.zeros(r), rng.uniform(0.5, 2.0, n - r)]
        X, S = Q @ np.diag(a) @ Q.T, Q @ np.diag(s) @ Q.T
        xs.append(sym_to_triu(X))
        ss.append(sym_to_triu(2 * S - np.diag(np.diag(S))))
    x = np.concatenate(xs + [rng.standard_normal(n_free)])
    svec = np.concatenate(ss + [np.zeros(n_free)])
    nv = x.size
    m = int(rng.integers(max(1, n_free), nv + 1))
    A = rng.standard_normal((m, nv))
    y = rng.standard_normal(m)
    c = A.T @ y + svec
    prob = SdpProblem(tuple(blocks), tuple(scalars), c, sp.csr_matrix(A), A @ x)
    return prob, float(c @ x)


def rank_one_min(C, A1, b1, levels=8, n=2001):
    """Zoomed grid search of min <C,X> over 2x2 PSD X with <A1,X> = b1, A1 positive definite.

    The feasible set is compact and its extreme points have rank one
    (X = v v^T), so the minimum is b1 * min over unit v of (v'Cv) / (v'A1v).
    """
    def f(t):
        v = np.stack([np.cos(t), np.sin(t)])
        return b1 * np.einsum("in,ij,jn->n", v, C, v) / np.einsum("in,ij,jn->n", v, A1, v)

    lo, hi = 0.0, np.pi
    for _ in range(levels):
        t = np.linspace(lo, hi, n)
        k = int(np.argmin(f(t)))
        step = (hi - lo) / (n - 1)
        lo, hi = t[k] - 2 * step, t[k] + 2 * step
    return float(f(np.array([0.5 * (lo + hi)]))[0])
