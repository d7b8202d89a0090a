"""Off-diagonal L1-penalized Gaussian maximum likelihood (graphical lasso).

Minimizes  -log det Q + tr(psi Q) + lam * sum_{i != j} |Q_ij|  over SPD Q
by a proximal Newton scheme: coordinate descent on the second-order model
of the smooth part builds a direction, then a backtracking line search with
a Cholesky safeguard accepts a step.  Coordinate updates produce exact
zeros, so the returned support is clean.

Many problems of the same size are solved as an (L, p, p) stack: the
per-coordinate arithmetic vectorizes across problems, and each problem
keeps its own convergence decision and line-search step, so the trajectory
of any single problem is bitwise identical whether it is solved alone or
inside a stack.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    MaxIterationsExceeded,
    NotPositiveDefinite,
    UnboundedProblem,
    ValidationError,
)

ARMIJO_SIGMA = 1e-4
MAX_HALVINGS = 40


def _armijo_slack(f):
    # Objective decrements near the optimum fall below float64 resolution;
    # without this slack the line search rejects full Newton steps whose
    # true decrease is smaller than roundoff in f.
    import numpy as _np
    return 4.0 * _np.finfo(float).eps * (1.0 + abs(f))


@dataclass(frozen=True)
class GlassoProblem:
    """One penalized precision estimation problem.

    psi must be symmetric; for lam = 0 it must additionally be positive
    definite, otherwise the objective is unbounded below.
    """

    psi: np.ndarray
    lam: float
    penalize_diagonal: bool = False

    def __post_init__(self):
        psi = np.ascontiguousarray(self.psi, dtype=np.float64)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise DimensionMismatch("psi must be square")
        if np.abs(psi - psi.T).max() > 1e-10:
            raise ValidationError("psi must be symmetric")
        if self.lam < 0:
            raise ValidationError("lam must be nonnegative")
        object.__setattr__(self, "psi", psi)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def off_diagonal_abs_sum(q_stack):
    """Per-problem sum of |off-diagonal| entries of an (L, p, p) stack."""
    total = np.abs(q_stack).sum(axis=(1, 2))
    diag = np.abs(np.diagonal(q_stack, axis1=1, axis2=2)).sum(axis=1)
    return total - diag


def _chol_or_none(mat):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None


def _logdet_from_chol(chol):
    return 2.0 * np.log(np.diagonal(chol)).sum()


def _inverse_from_chol(chol, mat=None):
    """Inverse from a Cholesky factor.

    When the original matrix is supplied, one step of Newton refinement
    (w <- w + w(I - mat w)) squares the inversion error, which keeps the
    stationarity residual well below solver tolerances even for
    ill-conditioned iterates.
    """
    inv_c = np.linalg.solve(chol, np.eye(chol.shape[0]))
    w = inv_c.T @ inv_c
    if mat is not None:
        w = w + w @ (np.eye(chol.shape[0]) - mat @ w)
    return (w + w.T) / 2.0


def kkt_residual_stack(q, w, psi, lam, penalize_diagonal=False):
    """Max-norm violation of the stationarity conditions, per problem.

    w must be the inverse of q.  Off-diagonal entries: the gradient must
    lie inside [-lam, lam] where Q is zero and cancel lam*sign(Q)
    elsewhere; diagonal entries must have zero gradient.
    """
    grad = psi - w
    p = q.shape[1]
    off = ~np.eye(p, dtype=bool)
    pen_mask = off | penalize_diagonal
    nz = (q != 0.0) & pen_mask
    res = np.abs(grad) * ~pen_mask
    res = np.where(nz, np.abs(grad + lam * np.sign(q)), res)
    res = np.where(pen_mask & ~nz, np.maximum(np.abs(grad) - lam, 0.0), res)
    return res.reshape(q.shape[0], -1).max(axis=1)


def _objective_stack(q, psi, lam, logdets, penalize_diagonal):
    trace = np.einsum("lij,lij->l", psi, q)
    pen = off_diagonal_abs_sum(q)
    if penalize_diagonal:
        pen = pen + np.abs(np.diagonal(q, axis1=1, axis2=2)).sum(axis=1)
    return -logdets + trace + lam * pen


def _newton_direction(q, w, psi, lam, n_sweeps, penalize_diagonal):
    """Coordinate descent on the quadratic model; returns the step."""
    L, p, _ = q.shape
    delta = np.zeros_like(q)
    u = np.zeros_like(q)  # u = delta @ w, kept incrementally
    for _ in range(n_sweeps):
        for i in range(p):
            for j in range(i, p):
                wii = w[:, i, i]
                if i == j:
                    a = wii * wii
                    b = psi[:, i, i] - wii + np.einsum(
                        "lk,lk->l", w[:, i, :], u[:, :, i])
                    if penalize_diagonal:
                        c = q[:, i, i] + delta[:, i, i]
                        mu = soft_threshold(c - b / a, lam / a) - c
                    else:
                        mu = -b / a
                    delta[:, i, i] += mu
                    u[:, i, :] += mu[:, None] * w[:, i, :]
                else:
                    wij = w[:, i, j]
                    a = wij * wij + wii * w[:, j, j]
                    b = psi[:, i, j] - wij + np.einsum(
                        "lk,lk->l", w[:, i, :], u[:, :, j])
                    c = q[:, i, j] + delta[:, i, j]
                    mu = soft_threshold(c - b / a, lam / a) - c
                    delta[:, i, j] += mu
                    delta[:, j, i] += mu
                    u[:, i, :] += mu[:, None] * w[:, j, :]
                    u[:, j, :] += mu[:, None] * w[:, i, :]
    return delta


def solve_stack(psi, lam, init=None, tol=1e-6, max_newton=100,
                penalize_diagonal=False):
    """Solve L independent problems sharing one penalty level.

    psi     (L, p, p) stack of symmetric matrices
    init    optional (L, p, p) SPD warm start; defaults to diag(1/psi_ii)
    tol     stationarity residual in max-norm, per problem; may be a
            length-L array for per-problem tolerances

    Returns (q, info) where info has per-problem iteration counts and
    residuals.  Exhausting ``max_newton`` warns and returns the best
    iterate rather than raising.
    """
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    L, p, _ = psi.shape
    tol = np.broadcast_to(np.asarray(tol, dtype=np.float64), (L,)).copy()

    if lam == 0.0:
        q = np.empty_like(psi)
        for lev in range(L):
            chol = _chol_or_none(psi[lev])
            if chol is None:
                raise UnboundedProblem(
                    f"lam = 0 with a non-PD matrix at position {lev}: "
                    "the unpenalized problem has no finite minimizer")
            q[lev] = _inverse_from_chol(chol, psi[lev])
        info = {"iterations": np.zeros(L, dtype=int),
                "residual": np.zeros(L)}
        return q, info

    diag = np.diagonal(psi, axis1=1, axis2=2)
    if np.any(diag <= 0):
        raise UnboundedProblem(
            "psi has a nonpositive diagonal entry; the penalized problem "
            "is unbounded below")

    if init is None:
        q = np.zeros_like(psi)
        idx = np.arange(p)
        q[:, idx, idx] = 1.0 / diag
    else:
        q = np.array(init, dtype=np.float64)
        if q.shape != psi.shape:
            raise DimensionMismatch("init shape does not match psi")

    w = np.empty_like(q)
    logdets = np.empty(L)
    for lev in range(L):
        chol = _chol_or_none(q[lev])
        if chol is None:
            raise NotPositiveDefinite(f"init at position {lev} is not PD")
        w[lev] = _inverse_from_chol(chol, q[lev])
        logdets[lev] = _logdet_from_chol(chol)
    f = _objective_stack(q, psi, lam, logdets, penalize_diagonal)

    iterations = np.zeros(L, dtype=int)
    residual = np.full(L, np.inf)
    active = np.ones(L, dtype=bool)
    for newton_iter in range(max_newton):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        res = kkt_residual_stack(q[idx], w[idx], psi[idx], lam,
                                 penalize_diagonal)
        residual[idx] = res
        done = res <= tol[idx]
        active[idx[done]] = False
        idx = idx[~done]
        if idx.size == 0:
            break

        qa, wa, pa = q[idx], w[idx], psi[idx]
        n_sweeps = min(1 + newton_iter, 16)
        delta = _newton_direction(qa, wa, pa, lam, n_sweeps,
                                  penalize_diagonal)

        pen_old = off_diagonal_abs_sum(qa)
        pen_new = off_diagonal_abs_sum(qa + delta)
        if penalize_diagonal:
            pen_old = pen_old + np.abs(
                np.diagonal(qa, axis1=1, axis2=2)).sum(axis=1)
            pen_new = pen_new + np.abs(
                np.diagonal(qa + delta, axis1=1, axis2=2)).sum(axis=1)
        descent = (np.einsum("lij,lij->l", pa - wa, delta)
                   + lam * (pen_new - pen_old))

        # Nothing to gain along this direction: numerically stationary.
        stuck = descent >= 0
        active[idx[stuck]] = False
        idx = idx[~stuck]
        if idx.size == 0:
            continue
        delta = delta[~stuck]
        descent = descent[~stuck]

        alpha = np.ones(idx.size)
        pending = np.arange(idx.size)
        for _ in range(MAX_HALVINGS):
            still = []
            for k in pending:
                lev = idx[k]
                cand = q[lev] + alpha[k] * delta[k]
                chol = _chol_or_none(cand)
                if chol is None:
                    still.append(k)
                    continue
                ld = _logdet_from_chol(chol)
                fc = _objective_stack(cand[None], psi[lev][None], lam,
                                      np.array([ld]), penalize_diagonal)[0]
                if fc <= (f[lev] + ARMIJO_SIGMA * alpha[k] * descent[k]
                          + _armijo_slack(f[lev])):
                    q[lev] = cand
                    w[lev] = _inverse_from_chol(chol, cand)
                    f[lev] = fc
                    iterations[lev] = newton_iter + 1
                else:
                    still.append(k)
            if not still:
                break
            pending = np.array(still, dtype=int)
            alpha[pending] /= 2.0
        else:
            # Step size underflow: no progress is possible in float64.
            active[idx[pending]] = False
    else:
        left = np.flatnonzero(active)
        if left.size:
            warnings.warn(
                f"{left.size} problem(s) not converged after {max_newton} "
                "proximal Newton iterations; returning best iterates",
                MaxIterationsExceeded, stacklevel=2)

    info = {"iterations": iterations, "residual": residual}
    return q, info


def glasso_solve(problem, init=None, tol=1e-6, max_newton=100):
    """Solve a single :class:`GlassoProblem`; returns the SPD minimizer."""
    init_stack = None if init is None else np.asarray(init)[None]
    q, _ = solve_stack(problem.psi[None], problem.lam, init=init_stack,
                       tol=tol, max_newton=max_newton,
                       penalize_diagonal=problem.penalize_diagonal)
    return q[0]
