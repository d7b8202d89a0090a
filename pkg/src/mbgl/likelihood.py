"""Reduced negative log-likelihood and its per-level linearization.

With orthonormal basis columns and independent per-level weight vectors the
np-dimensional Gaussian likelihood collapses to L independent p x p pieces:

    sum_l [ log det(Q_l + T) - log det Q_l - tr(B_l (Q_l + T)^{-1}) ]

where T = diag(1/tau^2) and B_l is the level's second-moment block.  This
value differs from the full covariance-form likelihood by the constant
log det D + tr(S D^{-1}), exposed through :func:`loglik_constant`.

A dense reference path that forms the full np x np covariance explicitly is
provided for small instances; it shares no code with the reduced path.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    TooLargeForOracle,
)
from .model import _freeze
from .suffstats import second_moments

PSD_EIG_TOL = -1e-10


@dataclass(frozen=True)
class LinearizationBlocks:
    """Per-level linearization matrices, (L, p, p), each symmetric PSD."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.float64)
        if psi.ndim != 3 or psi.shape[1] != psi.shape[2]:
            raise DimensionMismatch("psi must be an (L, p, p) stack")
        asym = np.abs(psi - psi.transpose(0, 2, 1)).max()
        if asym > 1e-10:
            raise DimensionMismatch(f"psi asymmetric by {asym:.3e}")
        if np.linalg.eigvalsh(psi).min() < PSD_EIG_TOL:
            raise NotPositiveDefinite("a linearization block is indefinite")
        _freeze(self, psi=psi)

    @property
    def L(self):
        return self.psi.shape[0]

    @property
    def p(self):
        return self.psi.shape[1]


def _check_dims(q, stats, noise):
    if q.L != stats.L or q.p != stats.p or noise.p != stats.p:
        raise DimensionMismatch(
            f"blocks ({q.L},{q.p}), stats ({stats.L},{stats.p}), "
            f"noise ({noise.p}) disagree")


def _chol_logdet_stack(mats, what):
    """Cholesky factors and log-determinants of a stack of SPD matrices."""
    L = mats.shape[0]
    chols = np.empty_like(mats)
    logdets = np.empty(L)
    for lev in range(L):
        try:
            c = np.linalg.cholesky(mats[lev])
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"{what} at level {lev} is not positive definite") from None
        chols[lev] = c
        logdets[lev] = 2.0 * np.log(np.diagonal(c)).sum()
    return chols, logdets


def _inv_from_chol(chols):
    eye = np.eye(chols.shape[1])
    out = np.empty_like(chols)
    for lev in range(chols.shape[0]):
        inv_c = solve_triangular(chols[lev], eye, lower=True)
        out[lev] = inv_c.T @ inv_c
    return (out + out.transpose(0, 2, 1)) / 2.0


def negloglik_reduced(q, stats, noise):
    """Reduced negative log-likelihood of a precision block set.

    Cost O(L p^3 + L p^2 m).  Raises NotPositiveDefinite if any block or
    shifted block fails Cholesky.
    """
    _check_dims(q, stats, noise)
    b = second_moments(stats)
    return _negloglik_reduced_raw(q.blocks, b, stats.gram_diag)


def _negloglik_reduced_raw(blocks, b, gram_diag):
    """Same objective on raw arrays; shared with the outer optimizer."""
    shifted = blocks + np.diag(gram_diag)[None, :, :]
    _, logdet_shifted = _chol_logdet_stack(shifted, "Q + T")
    _, logdet_q = _chol_logdet_stack(blocks, "Q")
    minv_b = np.linalg.solve(shifted, b)
    trace_term = np.trace(minv_b, axis1=1, axis2=2).sum()
    return float(logdet_shifted.sum() - logdet_q.sum() - trace_term)


def loglik_constant(stats, noise):
    """log det D + tr(S D^{-1}): the additive constant between the full
    covariance-form likelihood and the reduced one."""
    n = stats.n_locations
    return float(n * np.log(noise.tau_sq).sum() + stats.trace_sd.sum())


def linearization_blocks(q, stats, noise):
    """Per-level linearization at q: M_l + M_l B_l M_l, M_l = (Q_l+T)^{-1}.

    These blocks play the role of sample covariances in the convex inner
    problem of each outer descent step.
    """
    _check_dims(q, stats, noise)
    b = second_moments(stats)
    psi = _linearization_raw(q.blocks, b, stats.gram_diag)
    return LinearizationBlocks(psi)


def _linearization_raw(blocks, b, gram_diag):
    shifted = blocks + np.diag(gram_diag)[None, :, :]
    chols, _ = _chol_logdet_stack(shifted, "Q + T")
    m = _inv_from_chol(chols)
    psi = m + m @ b @ m
    return (psi + psi.transpose(0, 2, 1)) / 2.0


# -- dense reference path ---------------------------------------------------

ORACLE_MAX_DIM = 2000


def dense_covariance(q, basis, noise):
    """Explicit np x np covariance (Phi (x) I_p) Q^{-1} (Phi (x) I_p)' + D."""
    p = q.p
    n = basis.n_locations
    phi_big = np.kron(basis.phi, np.eye(p))
    q_inv_blocks = np.linalg.inv(q.blocks)
    q_inv = np.zeros((p * q.L, p * q.L))
    for lev in range(q.L):
        q_inv[lev * p:(lev + 1) * p, lev * p:(lev + 1) * p] = q_inv_blocks[lev]
    d = np.kron(np.eye(n), np.diag(noise.tau_sq))
    sigma = phi_big @ q_inv @ phi_big.T + d
    return (sigma + sigma.T) / 2.0


def negloglik_dense_oracle(q, data, basis, noise):
    """log det Sigma + tr(S Sigma^{-1}) with Sigma formed explicitly.

    Small-instance reference for the reduced path; guarded to np <= 2000.
    """
    p, n, m = data.values.shape
    if n * p > ORACLE_MAX_DIM:
        raise TooLargeForOracle(f"np = {n * p} exceeds {ORACLE_MAX_DIM}")
    if basis.n_locations != n or q.p != p or noise.p != p or q.L != basis.n_levels:
        raise DimensionMismatch("oracle inputs disagree")
    sigma = dense_covariance(q, basis, noise)
    y = data.values.reshape(p * n, m, order="F")
    s = (y @ y.T) / m
    try:
        c = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("dense covariance not positive definite") from None
    logdet = 2.0 * np.log(np.diagonal(c)).sum()
    trace = np.trace(np.linalg.solve(sigma, s))
    return float(logdet + trace)
