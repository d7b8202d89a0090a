"""Domain types, pixelwise standardization, and orthogonal basis construction.

Data layout convention: a multi-realization field is stored as a (p, n, m)
array of float64 (variables x locations x realizations).  Flattening the
(p, n) slice of a single realization column-major gives the stacked
observation vector whose blocks are the p-variate observations per location,
which is the ordering every linear-algebra identity in this package assumes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    NotOrthonormal,
    NotPositiveDefinite,
    RankDeficient,
    TooFewRealizations,
    ValidationError,
    ZeroVarianceSeries,
)

# Basis columns must satisfy max |Phi'Phi - I| <= this to count as orthonormal.
ORTHONORMALITY_TOL = 1e-8

# Blocks may deviate from exact symmetry by at most this much.
SYMMETRY_TOL = 1e-10


def _freeze(obj, **arrays):
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class Dataset:
    """Multi-realization multivariate field sampled at fixed locations.

    values          (p, n, m) float64
    locations       (n, d) coordinates, units arbitrary
    variable_names  p unique names
    """

    values: np.ndarray
    locations: np.ndarray
    variable_names: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        locations = np.asarray(self.locations, dtype=np.float64)
        if values.ndim != 3:
            raise DimensionMismatch("values must be a (p, n, m) array")
        if locations.ndim != 2:
            raise DimensionMismatch("locations must be a (n, d) array")
        p, n, m = values.shape
        if min(p, n, m) < 1 or locations.shape[1] < 1:
            raise ValidationError("all dimensions must be at least 1")
        if locations.shape[0] != n:
            raise DimensionMismatch(
                f"{locations.shape[0]} locations for {n} data columns")
        if not np.all(np.isfinite(values)):
            raise ValidationError("values contain non-finite entries")
        names = tuple(str(v) for v in self.variable_names)
        if len(names) != p:
            raise DimensionMismatch(f"{len(names)} names for {p} variables")
        if len(set(names)) != p:
            raise ValidationError("variable names must be unique")
        object.__setattr__(self, "variable_names", names)
        _freeze(self, values=values, locations=locations)

    @property
    def n_vars(self):
        return self.values.shape[0]

    @property
    def n_locations(self):
        return self.values.shape[1]

    @property
    def n_realizations(self):
        return self.values.shape[2]


def index_locations(n):
    """Default (n, 1) coordinate array: location index as the coordinate."""
    return np.arange(n, dtype=np.float64)[:, None]


@dataclass(frozen=True)
class StandardizationFields:
    """Pixelwise mean and standard deviation, both (p, n)."""

    pixel_mean: np.ndarray
    pixel_sd: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.pixel_mean, dtype=np.float64)
        sd = np.asarray(self.pixel_sd, dtype=np.float64)
        if mean.shape != sd.shape or mean.ndim != 2:
            raise DimensionMismatch("mean and sd must both be (p, n)")
        if not np.all(sd > 0):
            raise ValidationError("pixel_sd must be strictly positive")
        _freeze(self, pixel_mean=mean, pixel_sd=sd)


@dataclass(frozen=True)
class BasisMatrix:
    """n x L spatial basis with orthonormal columns.

    Instances produced by :func:`validate_basis` or
    :func:`build_pooled_eof_basis` satisfy max |Phi'Phi - I| <= 1e-8.
    Direct construction skips that check (the dense likelihood oracle
    accepts deliberately non-orthogonal bases this way).

    variance_fraction is the cumulative explained-variance curve when the
    basis came from a truncated SVD, and empty for user-supplied bases.
    """

    phi: np.ndarray
    variance_fraction: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.float64))

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim != 2:
            raise DimensionMismatch("phi must be a 2-d array")
        n, L = phi.shape
        if L > n:
            raise ValidationError(f"L={L} basis columns exceed n={n} rows")
        vf = np.asarray(self.variance_fraction, dtype=np.float64)
        if vf.size and vf.size != L:
            raise DimensionMismatch("variance_fraction must have length L")
        _freeze(self, phi=phi, variance_fraction=vf)

    @property
    def n_locations(self):
        return self.phi.shape[0]

    @property
    def n_levels(self):
        return self.phi.shape[1]

    def gram_deviation(self):
        """max |Phi'Phi - I|, the orthonormality defect."""
        g = self.phi.T @ self.phi
        return float(np.abs(g - np.eye(self.n_levels)).max())


@dataclass(frozen=True)
class PrecisionBlockSet:
    """Ordered per-level precision matrices, stored as an (L, p, p) stack.

    Every block is symmetric and positive definite.
    """

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=np.float64)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise DimensionMismatch("blocks must be an (L, p, p) stack")
        asym = np.abs(blocks - blocks.transpose(0, 2, 1)).max()
        if asym > SYMMETRY_TOL:
            raise ValidationError(f"blocks asymmetric by {asym:.3e}")
        for lev in range(blocks.shape[0]):
            try:
                np.linalg.cholesky(blocks[lev])
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite(
                    f"precision block {lev} is not positive definite") from None
        _freeze(self, blocks=blocks)

    @property
    def L(self):
        return self.blocks.shape[0]

    @property
    def p(self):
        return self.blocks.shape[1]


@dataclass(frozen=True)
class NoiseModel:
    """Per-variable error (fine-scale) variances tau^2, all positive."""

    tau_sq: np.ndarray

    def __post_init__(self):
        tau_sq = np.asarray(self.tau_sq, dtype=np.float64).ravel()
        if tau_sq.size < 1:
            raise ValidationError("need at least one variance")
        if not np.all(np.isfinite(tau_sq)) or not np.all(tau_sq > 0):
            raise ValidationError("tau_sq entries must be positive and finite")
        _freeze(self, tau_sq=tau_sq)

    @property
    def p(self):
        return self.tau_sq.size


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty pair and outer-loop controls.

    lam   sparsity weight on off-diagonal entries
    rho   fusion weight on adjacent-level off-diagonal differences
    """

    lam: float
    rho: float = 0.0
    dc_tolerance: float = 0.05
    inner_tolerance: float = 1e-6
    max_dc_iterations: int = 100

    def __post_init__(self):
        if self.lam < 0 or self.rho < 0:
            raise ValidationError("penalties must be nonnegative")
        if self.dc_tolerance <= 0 or self.inner_tolerance <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_dc_iterations < 1:
            raise ValidationError("max_dc_iterations must be at least 1")


# -- operations -------------------------------------------------------------

def standardize(data):
    """Remove the pixelwise empirical mean and scale to unit sd.

    The sd uses divisor m-1.  Returns the standardized dataset together
    with the fields needed to invert the transform.
    """
    if data.n_realizations < 2:
        raise TooFewRealizations(
            "standardization needs at least 2 realizations, got "
            f"{data.n_realizations}")
    mean = data.values.mean(axis=2)
    sd = data.values.std(axis=2, ddof=1)
    if np.any(sd == 0):
        v, s = np.argwhere(sd == 0)[0]
        raise ZeroVarianceSeries(
            f"variable {data.variable_names[v]!r} is constant at location {s}")
    out = (data.values - mean[:, :, None]) / sd[:, :, None]
    std_data = Dataset(out, data.locations, data.variable_names)
    return std_data, StandardizationFields(mean, sd)


def destandardize(data, fields):
    """Invert :func:`standardize` using its returned fields."""
    if fields.pixel_mean.shape != data.values.shape[:2]:
        raise DimensionMismatch("standardization fields do not match data")
    out = data.values * fields.pixel_sd[:, :, None] + fields.pixel_mean[:, :, None]
    return Dataset(out, data.locations, data.variable_names)


def build_pooled_eof_basis(data, n_levels, gram_threshold=4096):
    """First n_levels left singular vectors of the pooled data matrix.

    The pooled matrix has one row per location and one column per
    (variable, realization) pair, realizations varying fastest within each
    variable.  When n exceeds ``gram_threshold`` and the pooled matrix is
    tall, the eigendecomposition of its (pm x pm) Gram matrix is used
    instead of a direct SVD; the two paths agree up to roundoff.

    Column signs are fixed so each column's largest-magnitude entry is
    positive, making the output deterministic.
    """
    p, n, m = data.values.shape
    if n_levels < 1 or n_levels > min(n, p * m):
        raise RankDeficient(
            f"n_levels={n_levels} not in 1..min(n={n}, p*m={p * m})")
    pooled = data.values.transpose(1, 0, 2).reshape(n, p * m)
    if n > gram_threshold and p * m < n:
        gram = pooled.T @ pooled
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals = np.maximum(evals[order], 0.0)
        sing = np.sqrt(evals)
        nonzero = _numerical_rank(sing, n, p * m)
        if n_levels > nonzero:
            raise RankDeficient(
                f"pooled matrix has rank {nonzero} < requested {n_levels}")
        u = pooled @ (evecs[:, order[:n_levels]] / sing[:n_levels])
    else:
        u, sing, _ = np.linalg.svd(pooled, full_matrices=False)
        nonzero = _numerical_rank(sing, n, p * m)
        if n_levels > nonzero:
            raise RankDeficient(
                f"pooled matrix has rank {nonzero} < requested {n_levels}")
        u = u[:, :n_levels]
    u = _fix_column_signs(u)
    power = sing ** 2
    fraction = np.cumsum(power)[:n_levels] / power.sum()
    return BasisMatrix(u, fraction)


def _numerical_rank(singular_values, n, cols):
    if singular_values.size == 0 or singular_values[0] == 0:
        return 0
    cutoff = singular_values[0] * max(n, cols) * np.finfo(np.float64).eps
    return int(np.sum(singular_values > cutoff))


def _fix_column_signs(u):
    idx = np.abs(u).argmax(axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def validate_basis(phi):
    """Wrap a user-supplied basis, enforcing orthonormal columns."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2:
        raise DimensionMismatch("phi must be a 2-d array")
    gram = phi.T @ phi
    dev = np.abs(gram - np.eye(phi.shape[1]))
    worst = np.unravel_index(dev.argmax(), dev.shape)
    if dev[worst] > ORTHONORMALITY_TOL:
        raise NotOrthonormal(
            f"Gram entry {worst} = {gram[worst]:.6g} deviates by "
            f"{dev[worst]:.3e} (tolerance {ORTHONORMALITY_TOL:g})")
    return BasisMatrix(phi)
