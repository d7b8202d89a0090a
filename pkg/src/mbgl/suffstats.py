"""Sufficient statistics for the reduced likelihood.

For each realization the weight-space statistic is the (p, L) matrix
diag(1/tau^2) @ Y_i @ Phi, computed directly from the data slab so that
nothing of size n x n is ever formed.  Cost is O(m n p L) flops and the
stored array is O(m p L).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange
from .model import _freeze


@dataclass(frozen=True)
class SuffStats:
    """Precomputed weight-space statistics.

    a               (p, L, m); a[:, :, i] = diag(1/tau^2) @ Y_i @ Phi
    gram_diag       (p,) vector 1/tau^2 (the per-level noise-precision
                    diagonal; identical at every level for an orthonormal
                    basis)
    realization_sq  (p, m); entry [v, i] = sum_s Y_i[v, s]^2 / tau_v^2,
                    kept per realization so statistics restrict exactly
                    to subsets of realizations
    """

    a: np.ndarray
    gram_diag: np.ndarray
    realization_sq: np.ndarray
    n_locations: int

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        gram_diag = np.asarray(self.gram_diag, dtype=np.float64)
        rsq = np.asarray(self.realization_sq, dtype=np.float64)
        if a.ndim != 3:
            raise DimensionMismatch("a must be (p, L, m)")
        p, L, m = a.shape
        if gram_diag.shape != (p,) or rsq.shape != (p, m):
            raise DimensionMismatch("inconsistent sufficient statistics")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(rsq))):
            raise DimensionMismatch("non-finite sufficient statistics")
        _freeze(self, a=a, gram_diag=gram_diag, realization_sq=rsq)

    @property
    def p(self):
        return self.a.shape[0]

    @property
    def L(self):
        return self.a.shape[1]

    @property
    def m(self):
        return self.a.shape[2]

    @property
    def trace_sd(self):
        """Per-variable (1/m) sum_{s,i} Y^2 / tau^2, the trace part of the
        constant that separates the full and reduced likelihoods."""
        return self.realization_sq.sum(axis=1) / self.m


def compute_suffstats(data, basis, noise):
    """Build :class:`SuffStats` from data, basis, and noise model.

    Realizations are processed one at a time; peak extra allocation beyond
    the (p, L, m) output is O(n p + p L).
    """
    p, n, m = data.values.shape
    if basis.n_locations != n:
        raise DimensionMismatch(
            f"basis has {basis.n_locations} locations, data has {n}")
    if noise.p != p:
        raise DimensionMismatch(
            f"noise model has {noise.p} variances, data has {p} variables")
    tau_inv2 = 1.0 / noise.tau_sq
    L = basis.n_levels
    a = np.empty((p, L, m))
    rsq = np.empty((p, m))
    for i in range(m):
        slab = data.values[:, :, i]
        a[:, :, i] = (slab * tau_inv2[:, None]) @ basis.phi
        rsq[:, i] = np.einsum("vs,vs->v", slab, slab) * tau_inv2
    return SuffStats(a, tau_inv2, rsq, n)


def second_moment_block(stats, level):
    """(1/m) sum_i a_i a_i' at one level: the level's diagonal block of the
    weight-space second-moment matrix.  Symmetric positive semidefinite."""
    if not 0 <= level < stats.L:
        raise IndexOutOfRange(f"level {level} not in 0..{stats.L - 1}")
    cols = stats.a[:, level, :]
    block = (cols @ cols.T) / stats.m
    return (block + block.T) / 2.0


def second_moments(stats):
    """All L second-moment blocks as an (L, p, p) stack."""
    b = np.einsum("vli,wli->lvw", stats.a, stats.a) / stats.m
    return (b + b.transpose(0, 2, 1)) / 2.0


def restrict_to_realizations(stats, indices):
    """Statistics of the sub-sample given by realization ``indices``."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size == 0:
        raise DimensionMismatch("cannot restrict to zero realizations")
    return SuffStats(stats.a[:, :, indices], stats.gram_diag,
                     stats.realization_sq[:, indices], stats.n_locations)
