"""Pareto-efficient objective weights via a Frank-Wolfe min-norm-point solver.

The weights ``w`` minimise ``|sum_k w_k g_k|`` over ``w >= 0, sum w = K``. The
solver works on the unit simplex and rescales by ``K`` at the end; only the Gram
matrix ``M = G G^T`` of the objective gradients is needed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


def gram_matrix(grads) -> np.ndarray:
    """``M[i, j] = g_i . g_j`` for a ``(K, P)`` array or a list of equal-length vectors."""
    if isinstance(grads, np.ndarray) and grads.ndim == 2:
        g = grads
    else:
        vecs = [np.ravel(np.asarray(v, dtype=np.float64)) for v in grads]
        if len({len(v) for v in vecs}) > 1:
            raise ValueError("all gradient vectors must have the same length")
        g = np.stack(vecs) if vecs else np.zeros((0, 0))
    g = np.asarray(g, dtype=np.float64)
    m = g @ g.T
    return 0.5 * (m + m.T)


def line_search_gamma(w, t: int, M) -> float:
    """Exact step towards vertex ``t`` for the quadratic ``w^T M w`` on the simplex."""
    w = np.asarray(w, dtype=np.float64)
    d = w.copy()
    d[t] -= 1.0
    Md = M @ d
    den = float(d @ Md)
    if den <= 1e-18:
        return 0.0
    gamma = float(Md @ w) / den
    return min(max(gamma, 0.0), 1.0)


@dataclass
class SolverTrace:
    objective: list[float] = field(default_factory=list)
    gamma: list[float] = field(default_factory=list)
    hit_cap: bool = False

    def write_csv(self, path, append: bool = True):
        with open(path, "a" if append else "w", newline="") as fh:
            writer = csv.writer(fh)
            if fh.tell() == 0:
                writer.writerow(["iteration", "objective", "gamma"])
            # row 0 is the starting point, row k the state after step k
            gammas = [""] + [repr(g) for g in self.gamma]
            for k, (obj, gam) in enumerate(zip(self.objective, gammas)):
                writer.writerow([k, repr(obj), gam])


def frank_wolfe_simplex(M, max_iter: int = 100, tol: float = 1e-7, trace: SolverTrace | None = None):
    """Min-norm point on the unit simplex starting from the uniform point."""
    M = np.asarray(M, dtype=np.float64)
    K = M.shape[0]
    w = np.full(K, 1.0 / K)
    if trace is not None:
        trace.objective.append(float(w @ M @ w))
    if K == 1:
        return w
    for it in range(max_iter):
        t = int(np.argmin(M @ w))
        gamma = line_search_gamma(w, t, M)
        w = (1.0 - gamma) * w
        w[t] += gamma
        if trace is not None:
            trace.objective.append(float(w @ M @ w))
            trace.gamma.append(gamma)
        if gamma < tol:
            break
    else:
        logger.debug("Frank-Wolfe solver hit the %d-iteration cap", max_iter)
        if trace is not None:
            trace.hit_cap = True
    return w


def _affine_min(M, S):
    """Minimiser of ``mu^T M_S mu`` subject to ``sum mu = 1`` (least squares if singular)."""
    k = len(S)
    block = M[np.ix_(S, S)]
    # the minimiser ignores the scale of M; normalising keeps the bordered system well conditioned
    scale = float(np.abs(block).max())
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = block / scale if scale > 0 else block
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    b = np.zeros(k + 1)
    b[k] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0][:k]


def wolfe_simplex(M, max_iter: int = 100, tol: float = 1e-7, trace: SolverTrace | None = None):
    """Min-norm point on the unit simplex with fully corrective steps.

    Vertex selection is the Frank-Wolfe one (``argmin_i (M w)_i``); instead of a
    one-dimensional line search the weights are re-optimised exactly over the
    affine hull of the active vertices, dropping vertices that leave the simplex.
    Starts from the uniform point with every vertex active.
    """
    M = np.asarray(M, dtype=np.float64)
    K = M.shape[0]
    w = np.full(K, 1.0 / K)
    if trace is not None:
        trace.objective.append(float(w @ M @ w))
    if K == 1:
        return w
    floor = 1e-15 * max(float(np.diag(M).max()), 1e-300)
    active = list(range(K))
    n_iter = 0
    first = True
    while n_iter < max_iter:
        if not first:
            g = M @ w
            obj = float(w @ g)
            t = int(np.argmin(g))
            if obj <= floor or obj - g[t] <= max(tol * obj, floor) or t in active:
                break
            active.append(t)
        first = False
        while n_iter < max_iter:
            n_iter += 1
            y = _affine_min(M, active)
            cur = w[active]
            if np.all(y > 1e-14):
                step, new = 1.0, y
            else:
                out = y <= 1e-14
                step = float(np.min(cur[out] / (cur[out] - y[out])))
                new = cur + step * (y - cur)
            keep = new > 1e-14
            w = np.zeros(K)
            w[np.asarray(active)[keep]] = new[keep]
            w /= w.sum()
            active = [a for a, k in zip(active, keep) if k]
            if trace is not None:
                trace.objective.append(float(w @ M @ w))
                trace.gamma.append(step)
            if step == 1.0 or len(active) == 1:
                break
    if n_iter >= max_iter:
        logger.debug("min-norm solver hit the %d-iteration cap", max_iter)
        if trace is not None:
            trace.hit_cap = True
    return w


SOLVERS = {"wolfe": wolfe_simplex, "frank-wolfe": frank_wolfe_simplex}


def _all_equal(M) -> bool:
    scale = max(float(np.abs(M).max()), 1e-300)
    return bool(np.all(np.abs(M - M.flat[0]) <= 1e-12 * scale))


def pe_solve(M, max_iter: int = 100, tol: float = 1e-7, method: str = "wolfe",
             trace: SolverTrace | None = None, trace_path=None) -> np.ndarray:
    """Pareto-efficient cluster weights, non-negative and summing to ``K``.

    ``method="frank-wolfe"`` runs the plain conditional-gradient loop with exact
    line search; the default ``"wolfe"`` adds fully corrective steps and reaches
    the exact min-norm point in a handful of iterations. Identical gradients
    (every Gram entry equal) give uniform weights.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValueError("Gram matrix must be a non-empty square matrix")
    K = M.shape[0]
    if trace_path is not None and trace is None:
        trace = SolverTrace()
    if _all_equal(M):
        w = np.full(K, 1.0 / K)
    else:
        w = SOLVERS[method](M, max_iter, tol, trace)
    if trace_path is not None:
        trace.write_csv(trace_path)
    w = np.maximum(w, 0.0)
    return w * (K / w.sum())


@dataclass
class KKTReport:
    passed: bool
    nonnegative: bool
    sums_to_k: bool
    stationary: bool
    worst_violation: float

    def __bool__(self):
        return self.passed


def kkt_check(weights, M, eps: float = 1e-5) -> KKTReport:
    """Check feasibility and that the combined direction descends every objective.

    With ``lam = w / K`` and ``d = sum lam_k g_k`` the min-norm optimality condition is
    ``g_k . d >= d . d`` for all ``k``; both sides come from ``M``.
    """
    w = np.asarray(weights, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    K = len(w)
    nonneg = bool(np.all(w >= -eps))
    sums = bool(abs(w.sum() - K) <= eps)
    lam = w / K
    Mlam = M @ lam
    dd = float(lam @ Mlam)
    slack = Mlam - dd + eps * (1.0 + abs(dd))
    stationary = bool(np.all(slack >= 0))
    worst = float(max(0.0, -(Mlam - dd).min()))
    return KKTReport(nonneg and sums and stationary, nonneg, sums, stationary, worst)
