"""Fused multiple graphical lasso over a chain of levels.

Solves L coupled precision problems

    min sum_l [ -log det Q_l + tr(psi_l Q_l) ]
        + lam * sum_l sum_{i != j} |(Q_l)_ij|
        + rho * sum_{l<L} sum_{i != j} |(Q_l)_ij - (Q_{l+1})_ij|

with proximal Newton steps.  The fusion penalty couples a given
off-diagonal coordinate only across adjacent levels, so on the quadratic
model each off-diagonal coordinate chain is an exactly solvable weighted
1-d fused lasso; diagonals decouple entirely.  The chain subproblems are
solved by dynamic programming on the derivative of the forward messages,
which stays piecewise linear throughout, so solutions carry exact zeros
and exact (bitwise-equal) fusions.
"""

from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    MaxIterationsExceeded,
    NotPositiveDefinite,
    UnboundedProblem,
    ValidationError,
)
from .glasso import (
    ARMIJO_SIGMA,
    MAX_HALVINGS,
    _armijo_slack,
    _chol_or_none,
    _inverse_from_chol,
    _logdet_from_chol,
    off_diagonal_abs_sum,
    solve_stack,
    soft_threshold,
)
from .model import PrecisionBlockSet

import warnings


@dataclass(frozen=True)
class FmglProblem:
    """Stack of linearization blocks with a sparsity/fusion penalty pair."""

    psi_blocks: np.ndarray
    lam: float
    rho: float

    def __post_init__(self):
        psi = np.ascontiguousarray(self.psi_blocks, dtype=np.float64)
        if psi.ndim != 3 or psi.shape[1] != psi.shape[2]:
            raise DimensionMismatch("psi_blocks must be an (L, p, p) stack")
        if np.abs(psi - psi.transpose(0, 2, 1)).max() > 1e-10:
            raise ValidationError("psi blocks must be symmetric")
        if self.lam < 0 or self.rho < 0:
            raise ValidationError("penalties must be nonnegative")
        object.__setattr__(self, "psi_blocks", psi)


def _blocks_of(q):
    return q.blocks if isinstance(q, PrecisionBlockSet) else np.asarray(q)


def penalty_value(q, lam, rho):
    """Sparsity plus sequential-fusion penalty of a block stack.

    Both sums run over ordered pairs i != j, so each symmetric coordinate
    contributes twice.
    """
    blocks = _blocks_of(q)
    val = lam * off_diagonal_abs_sum(blocks).sum()
    if blocks.shape[0] > 1 and rho > 0:
        diffs = blocks[:-1] - blocks[1:]
        val += rho * off_diagonal_abs_sum(diffs).sum()
    return float(val)


# -- exact weighted 1-d fused lasso -----------------------------------------
#
# The forward message derivative is a nondecreasing piecewise-linear
# function stored as breakpoints bx[0..K-1] and per-piece (slope, icpt):
# piece k covers (bx[k-1], bx[k]) and evaluates slope[k]*x + icpt[k].
# Upward jumps (from the |x| kinks) appear as intercept mismatches at a
# breakpoint.  Clipping the derivative to [-rho, rho] realizes the
# infimal convolution with rho*|.| between consecutive nodes.

def _lowest_at_least(bx, slope, icpt, target):
    """Smallest x with derivative(x) >= target (derivative nondecreasing)."""
    for k in range(len(bx)):
        if slope[k] * bx[k] + icpt[k] >= target:
            x = (target - icpt[k]) / slope[k]
            if k > 0 and x < bx[k - 1]:
                x = bx[k - 1]
            if x > bx[k]:
                x = bx[k]
            return x
    k = len(bx)
    x = (target - icpt[k]) / slope[k]
    if k > 0 and x < bx[k - 1]:
        x = bx[k - 1]
    return x


def _highest_at_most(bx, slope, icpt, target):
    """Largest x with derivative(x) <= target (derivative nondecreasing)."""
    for k in range(len(bx) - 1, -1, -1):
        if slope[k + 1] * bx[k] + icpt[k + 1] <= target:
            x = (target - icpt[k + 1]) / slope[k + 1]
            if x < bx[k]:
                x = bx[k]
            if k + 1 < len(bx) and x > bx[k + 1]:
                x = bx[k + 1]
            return x
    x = (target - icpt[0]) / slope[0]
    if len(bx) > 0 and x > bx[0]:
        x = bx[0]
    return x


def _add_node(bx, slope, icpt, w, z, lam):
    """Add w*(x-z)^2/2 + lam*|x| to the message (derivative update)."""
    for k in range(len(slope)):
        slope[k] += w
        icpt[k] -= w * z
    if lam > 0.0:
        pos = bisect_left(bx, 0.0)
        if pos == len(bx) or bx[pos] != 0.0:
            bx.insert(pos, 0.0)
            slope.insert(pos, slope[pos])
            icpt.insert(pos, icpt[pos])
        for k in range(pos + 1):
            icpt[k] -= lam
        for k in range(pos + 1, len(icpt)):
            icpt[k] += lam


def fused_chain_solve(weights, targets, lam, rho):
    """Exact minimizer of a weighted 1-d fused lasso with sparsity.

    minimize  sum_t w_t (x_t - z_t)^2 / 2 + lam sum_t |x_t|
              + rho sum_{t<T} |x_t - x_{t+1}|

    All w_t must be positive.  Returns the unique minimizer; entries that
    are zero or fused at the optimum come out exactly zero / bitwise equal.
    """
    w = np.asarray(weights, dtype=np.float64)
    z = np.asarray(targets, dtype=np.float64)
    if w.shape != z.shape or w.ndim != 1 or w.size == 0:
        raise DimensionMismatch("weights and targets must be equal-length 1-d")
    if np.any(w <= 0):
        raise ValidationError("chain weights must be positive")
    T = w.size
    if rho == 0.0:
        return soft_threshold(z, lam / w)

    bx, slope, icpt = [], [0.0], [0.0]
    _add_node(bx, slope, icpt, w[0], z[0], lam)
    bounds = []
    for t in range(1, T):
        lo = _lowest_at_least(bx, slope, icpt, -rho)
        hi = _highest_at_most(bx, slope, icpt, rho)
        bounds.append((lo, hi))
        if lo == hi:
            bx = [lo]
            slope = [0.0, 0.0]
            icpt = [-rho, rho]
        else:
            klo = bisect_right(bx, lo)
            khi = bisect_left(bx, hi)
            bx = [lo] + bx[klo:khi] + [hi]
            slope = [0.0] + slope[klo:khi + 1] + [0.0]
            icpt = [-rho] + icpt[klo:khi + 1] + [rho]
        _add_node(bx, slope, icpt, w[t], z[t], lam)

    x = np.empty(T)
    x[T - 1] = _lowest_at_least(bx, slope, icpt, 0.0)
    for t in range(T - 2, -1, -1):
        lo, hi = bounds[t]
        nxt = x[t + 1]
        x[t] = lo if nxt < lo else (hi if nxt > hi else nxt)
    return x


# -- coupled proximal Newton -------------------------------------------------

def _sign_bounds(v):
    lo = np.where(v > 0, 1.0, -1.0)
    hi = np.where(v < 0, -1.0, 1.0)
    return lo, hi


def fused_residual_stack(q, w, psi, lam, rho):
    """Distance from 0 to the objective's subdifferential, in max-norm."""
    grad = psi - w
    L, p, _ = q.shape
    lo, hi = _sign_bounds(q)
    lo, hi = lam * lo, lam * hi
    if L > 1 and rho > 0:
        d = q[:-1] - q[1:]
        dlo, dhi = _sign_bounds(d)
        # d/dQ_l of rho|Q_l - Q_{l+1}| for l < L-1 ...
        lo[:-1] += rho * dlo
        hi[:-1] += rho * dhi
        # ... and of rho|Q_{l-1} - Q_l| for l > 0 (enters negated)
        lo[1:] -= rho * dhi
        hi[1:] -= rho * dlo
    lo = grad + lo
    hi = grad + hi
    dist = np.maximum(np.maximum(lo, -hi), 0.0)
    off = ~np.eye(p, dtype=bool)
    res = np.where(off, dist, np.abs(grad))
    return float(res.max())


def _fused_direction(q, w, psi, lam, rho, n_sweeps):
    """Coordinate descent on the quadratic model with exact chain solves."""
    L, p, _ = q.shape
    delta = np.zeros_like(q)
    u = np.zeros_like(q)  # u_l = delta_l @ w_l
    for _ in range(n_sweeps):
        for i in range(p):
            for j in range(i, p):
                wii = w[:, i, i]
                if i == j:
                    a = wii * wii
                    b = psi[:, i, i] - wii + np.einsum(
                        "lk,lk->l", w[:, i, :], u[:, :, i])
                    mu = -b / a
                    delta[:, i, i] += mu
                    u[:, i, :] += mu[:, None] * w[:, i, :]
                else:
                    wij = w[:, i, j]
                    a = wij * wij + wii * w[:, j, j]
                    b = psi[:, i, j] - wij + np.einsum(
                        "lk,lk->l", w[:, i, :], u[:, :, j])
                    c = q[:, i, j] + delta[:, i, j]
                    x = fused_chain_solve(a, c - b / a, lam, rho)
                    mu = x - c
                    delta[:, i, j] += mu
                    delta[:, j, i] += mu
                    u[:, i, :] += mu[:, None] * w[:, j, :]
                    u[:, j, :] += mu[:, None] * w[:, i, :]
    return delta


def solve_fused_stack(psi, lam, rho, init, tol=1e-6, max_newton=200):
    """Minimize the coupled objective from a feasible (SPD stack) start.

    Returns (q, info); exhausting ``max_newton`` warns and returns the
    best iterate.
    """
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    L, p, _ = psi.shape
    if np.any(np.diagonal(psi, axis1=1, axis2=2) <= 0):
        raise UnboundedProblem(
            "psi has a nonpositive diagonal entry; the penalized problem "
            "is unbounded below")
    q = np.array(init, dtype=np.float64)
    if q.shape != psi.shape:
        raise DimensionMismatch("init shape does not match psi stack")

    w = np.empty_like(q)
    logdet = 0.0
    for lev in range(L):
        chol = _chol_or_none(q[lev])
        if chol is None:
            raise NotPositiveDefinite(f"init block {lev} is not PD")
        w[lev] = _inverse_from_chol(chol, q[lev])
        logdet += _logdet_from_chol(chol)
    f = (-logdet + np.einsum("lij,lij->", psi, q)
         + penalty_value(q, lam, rho))

    iterations = 0
    residual = np.inf
    for newton_iter in range(max_newton):
        residual = fused_residual_stack(q, w, psi, lam, rho)
        if residual <= tol:
            return q, {"iterations": iterations, "residual": residual}

        n_sweeps = min(1 + newton_iter, 16)
        delta = _fused_direction(q, w, psi, lam, rho, n_sweeps)
        descent = (np.einsum("lij,lij->", psi - w, delta)
                   + penalty_value(q + delta, lam, rho)
                   - penalty_value(q, lam, rho))
        if descent >= 0:
            # Model is stationary at q up to roundoff.
            return q, {"iterations": iterations, "residual": residual}

        alpha = 1.0
        for _ in range(MAX_HALVINGS):
            cand = q + alpha * delta
            chols = []
            for lev in range(L):
                chol = _chol_or_none(cand[lev])
                if chol is None:
                    break
                chols.append(chol)
            if len(chols) == L:
                ld = sum(_logdet_from_chol(c) for c in chols)
                fc = (-ld + np.einsum("lij,lij->", psi, cand)
                      + penalty_value(cand, lam, rho))
                if fc <= f + ARMIJO_SIGMA * alpha * descent + _armijo_slack(f):
                    q = cand
                    for lev in range(L):
                        w[lev] = _inverse_from_chol(chols[lev], cand[lev])
                    f = fc
                    break
            alpha /= 2.0
        else:
            return q, {"iterations": iterations, "residual": residual}
        iterations = newton_iter + 1

    warnings.warn(
        f"fused solve not converged after {max_newton} proximal Newton "
        f"iterations (residual {residual:.3e}); returning best iterate",
        MaxIterationsExceeded, stacklevel=2)
    return q, {"iterations": iterations, "residual": residual}


def fmgl_solve(problem, init=None, tol=1e-6, max_newton=200):
    """Solve an :class:`FmglProblem`; returns a :class:`PrecisionBlockSet`.

    When no warm start is given the unfused (rho = 0) solution is computed
    first and used as the starting point.
    """
    psi = problem.psi_blocks
    if init is None:
        start, _ = solve_stack(psi, problem.lam, tol=tol)
    else:
        start = _blocks_of(init)
    q, _ = solve_fused_stack(psi, problem.lam, problem.rho, start,
                             tol=tol, max_newton=max_newton)
    q = (q + q.transpose(0, 2, 1)) / 2.0
    return PrecisionBlockSet(q)
