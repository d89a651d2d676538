"""Multivariate normal rectangle probabilities with deterministic seeding.

The engine is a randomized-shift rank-1 lattice rule applied after the
standard separation-of-variables transform, with exact closed-form paths for
d <= 2.  Determinism contract: identical (config, inputs, stream id) produce
bit-identical results.  Every call derives its shift set from
(seed, stream id) through a counter-based generator, so concurrent callers
never share mutable state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtr, ndtri

from .errors import DomainError, MatrixError, NearSingularError, ShapeError
from .special import bvn_cdf

__all__ = [
    "CorrelationMatrix",
    "QmcConfig",
    "ConditionalGaussian",
    "mvn_cdf",
    "mvn_rect",
    "mvn_rect_batch",
    "conditional_partition",
    "vechs_indices",
    "vechs",
    "corr_from_vechs",
]

_MIN_EIGENVALUE = 1e-10
_EXACT_ERROR = 1e-15


@dataclass(frozen=True)
class QmcConfig:
    """Budget and seeding for the randomized lattice rule.

    ``sample_budget`` is the number of lattice points per shift (rounded down
    internally to a prime for the CBC construction); ``shifts`` independent
    random shifts provide the error estimate.
    """

    sample_budget: int = 4096
    shifts: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_budget < 128:
            raise DomainError("sample_budget must be at least 128")
        if self.shifts < 8:
            raise DomainError("shifts must be at least 8")


@dataclass(frozen=True)
class ConditionalGaussian:
    """Mean and covariance of a Gaussian conditional distribution."""

    mean: np.ndarray
    covariance: np.ndarray


class CorrelationMatrix:
    """A validated correlation matrix: unit diagonal, symmetric, PD.

    The lower triangle is the authoritative storage; the upper triangle is
    mirrored from it on construction so the stored array is symmetric to
    0 ulps.  Construction fails (rather than regularizing) when the smallest
    eigenvalue drops below 1e-10.
    """

    __slots__ = ("_values", "_chol")

    def __init__(self, entries) -> None:
        arr = np.array(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"correlation matrix must be square, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise MatrixError("correlation matrix has non-finite entries")
        if np.max(np.abs(np.diag(arr) - 1.0)) > 1e-8:
            raise MatrixError("correlation matrix must have unit diagonal")
        if np.max(np.abs(arr - arr.T)) > 1e-8:
            raise MatrixError("correlation matrix must be symmetric")
        sym = np.tril(arr, -1)
        sym = sym + sym.T
        np.fill_diagonal(sym, 1.0)
        off = sym[~np.eye(sym.shape[0], dtype=bool)]
        if off.size and np.max(np.abs(off)) >= 1.0:
            raise MatrixError("off-diagonal entries must lie strictly inside (-1, 1)")
        if sym.shape[0] > 1 and np.linalg.eigvalsh(sym)[0] < _MIN_EIGENVALUE:
            raise NearSingularError(
                "correlation matrix is numerically singular "
                f"(min eigenvalue < {_MIN_EIGENVALUE:g})"
            )
        try:
            chol = np.linalg.cholesky(sym)
        except np.linalg.LinAlgError as exc:
            raise MatrixError("correlation matrix is not positive definite") from exc
        sym.setflags(write=False)
        self._values = sym
        self._chol = chol

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self._values

    def cholesky(self) -> np.ndarray:
        return self._chol

    @classmethod
    def identity(cls, dim: int) -> "CorrelationMatrix":
        return cls(np.eye(dim))

    def __repr__(self) -> str:  # pragma: no cover
        return f"CorrelationMatrix(dim={self.dim})"


def vechs_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the strict lower triangle in columnwise order."""
    rows = np.concatenate([np.arange(j + 1, d) for j in range(d - 1)]) if d > 1 else np.empty(0, int)
    cols = np.concatenate([np.full(d - 1 - j, j) for j in range(d - 1)]) if d > 1 else np.empty(0, int)
    return rows.astype(int), cols.astype(int)


def vechs(mat: np.ndarray) -> np.ndarray:
    """Columnwise strict half-vectorization of a square matrix."""
    mat = np.asarray(mat)
    rows, cols = vechs_indices(mat.shape[0])
    return mat[rows, cols]


def corr_from_vechs(values) -> CorrelationMatrix:
    """Assemble a correlation matrix from its columnwise strict lower triangle."""
    values = np.asarray(values, dtype=float).ravel()
    p = values.size
    d = int(round((1.0 + np.sqrt(1.0 + 8.0 * p)) / 2.0))
    if d * (d - 1) // 2 != p:
        raise ShapeError(f"{p} entries do not form a strict lower triangle")
    mat = np.eye(d)
    rows, cols = vechs_indices(d)
    mat[rows, cols] = values
    mat[cols, rows] = values
    return CorrelationMatrix(mat)


# ---------------------------------------------------------------------------
# Rank-1 lattice construction (fast CBC, product kernel), cached per (dim, n).
# ---------------------------------------------------------------------------


def _primes_up_to(n: int) -> np.ndarray:
    sieve = np.ones(n + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(n**0.5) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return np.nonzero(sieve)[0]


def _primitive_root(p: int) -> int:
    pm = p - 1
    factors = set()
    m = pm
    for q in _primes_up_to(int(m**0.5) + 1):
        while m % q == 0:
            factors.add(int(q))
            m //= q
        if m == 1:
            break
    if m != 1:
        factors.add(int(m))
    for r in range(2, p):
        if all(pow(r, pm // f, p) != 1 for f in factors):
            return r
    raise RuntimeError(f"no primitive root found for {p}")  # pragma: no cover


@lru_cache(maxsize=64)
def _cbc_lattice(n_dim: int, n_target: int) -> tuple[np.ndarray, int]:
    """Generating vector (as fractions) for an n-point rank-1 lattice.

    The point count is the largest prime <= n_target.  Component-by-component
    minimization of the standard shift-invariant product kernel.
    """
    primes = _primes_up_to(max(n_target, 3))
    n = int(primes[-1])
    m = (n - 1) // 2
    g = _primitive_root(n)
    perm = np.ones(m, dtype=np.int64)
    for j in range(m - 1):
        perm[j + 1] = (g * perm[j]) % n
    perm = np.minimum(n - perm, perm)
    pn = perm / n
    c = pn * pn - pn + 1.0 / 6.0
    fc = np.fft.rfft(c)
    z = np.arange(1, n_dim + 1, dtype=np.int64)
    q = np.ones(m)
    w = 0
    gamma = np.hstack([1.0, 0.8 ** np.arange(max(n_dim - 1, 0))])
    for s in range(1, n_dim):
        reordered = np.hstack([c[: w + 1][::-1], c[w + 1 : m][::-1]])
        q = q * (1.0 + gamma[s - 1] * reordered)
        conv = np.fft.irfft(fc * np.fft.rfft(q), m)
        w = int(np.argmin(conv))
        z[s] = perm[w]
    frac = z / n
    frac.setflags(write=False)
    return frac, n


@lru_cache(maxsize=65536)
def _shift_set(seed: int, stream_id: int, shifts: int, dim: int) -> np.ndarray:
    gen = Generator(Philox(key=[seed & (2**64 - 1), stream_id & (2**64 - 1)]))
    u = gen.random((shifts, dim))
    u.setflags(write=False)
    return u


def stream_id_for(payload: bytes) -> int:
    """Stable 64-bit stream id from arbitrary content bytes."""
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


# ---------------------------------------------------------------------------
# Separation-of-variables integrand, vectorized over rows and lattice points.
# ---------------------------------------------------------------------------

_Z_LO = 1e-300
_Z_HI = 1.0 - 1e-16


def _sov_batch(chols, lo, hi, cfg: QmcConfig, stream_ids) -> tuple[np.ndarray, np.ndarray]:
    """QMC rectangle probabilities for a batch of m-dimensional problems.

    chols: (B, m, m) lower Cholesky factors; lo/hi: (B, m) limits
    (entries may be +-inf); stream_ids: (B,) shift-stream identifiers.
    Returns (prob, 3 * standard error), each of shape (B,).
    """
    B, m = lo.shape
    q, n_pts = _cbc_lattice(m - 1, cfg.sample_budget)
    base = (np.arange(n_pts)[:, None] * q[None, :]) % 1.0  # (n, m-1)

    shift_arrays = np.empty((B, cfg.shifts, m - 1))
    for b, sid in enumerate(stream_ids):
        shift_arrays[b] = _shift_set(cfg.seed, int(sid), cfg.shifts, m - 1)

    with np.errstate(invalid="ignore"):
        c0 = ndtr(lo[:, 0] / chols[:, 0, 0])
        d0 = ndtr(hi[:, 0] / chols[:, 0, 0])

    estimates = np.empty((cfg.shifts, B))
    y = np.empty((B, m - 1, n_pts))
    for s in range(cfg.shifts):
        u = (base[None, :, :] + shift_arrays[:, s, None, :]) % 1.0  # (B, n, m-1)
        x = np.abs(2.0 * u - 1.0)  # tent periodization
        c = np.broadcast_to(c0[:, None], (B, n_pts)).copy()
        d = np.broadcast_to(d0[:, None], (B, n_pts)).copy()
        prob = d - c
        for i in range(1, m):
            z = np.clip(c + x[:, :, i - 1] * (d - c), _Z_LO, _Z_HI)
            y[:, i - 1, :] = ndtri(z)
            drift = np.einsum("bj,bjn->bn", chols[:, i, :i], y[:, :i, :])
            ct = chols[:, i, i][:, None]
            with np.errstate(invalid="ignore"):
                c = ndtr((lo[:, i][:, None] - drift) / ct)
                d = ndtr((hi[:, i][:, None] - drift) / ct)
            prob *= np.maximum(d - c, 0.0)
        estimates[s] = prob.mean(axis=1)

    mean = estimates.mean(axis=0)
    err = 3.0 * estimates.std(axis=0, ddof=1) / np.sqrt(cfg.shifts)
    return np.clip(mean, 0.0, 1.0), err


def _exact_rect_1d(lo, hi):
    return np.clip(ndtr(hi) - ndtr(lo), 0.0, 1.0)


def _exact_rect_2d(lo, hi, rho):
    p = (
        bvn_cdf(hi[:, 0], hi[:, 1], rho)
        - bvn_cdf(lo[:, 0], hi[:, 1], rho)
        - bvn_cdf(hi[:, 0], lo[:, 1], rho)
        + bvn_cdf(lo[:, 0], lo[:, 1], rho)
    )
    return np.clip(p, 0.0, 1.0)


def mvn_rect_batch(
    lower,
    upper,
    corr: CorrelationMatrix,
    cfg: QmcConfig | None = None,
    stream_ids=None,
    reorder: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Rectangle probabilities P(lower < Z <= upper) for many rectangles.

    All rows share one correlation matrix; each row may carry its own QMC
    shift stream so that callers can implement common-random-numbers schemes.
    Rows whose effective dimension falls to 2 or below are computed exactly.
    ``reorder=False`` disables the width-based variable reordering, keeping
    the estimate a smooth function of the limits (needed by optimization
    paths that difference nearby evaluations).
    """
    cfg = cfg or QmcConfig()
    lo = np.atleast_2d(np.asarray(lower, dtype=float))
    hi = np.atleast_2d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape:
        raise ShapeError("lower and upper must have the same shape")
    B, d = lo.shape
    if d != corr.dim:
        raise ShapeError(f"limits have dimension {d}, correlation has {corr.dim}")
    with np.errstate(invalid="ignore"):
        if np.any(lo > hi):
            raise DomainError("lower limit exceeds upper limit")
    if stream_ids is None:
        stream_ids = np.zeros(B, dtype=np.int64)
    else:
        stream_ids = np.asarray(stream_ids, dtype=np.int64)
        if stream_ids.shape != (B,):
            raise ShapeError("stream_ids must have one entry per row")

    probs = np.empty(B)
    errs = np.zeros(B)

    # Coordinates spanning the whole line carry no constraint; degenerate
    # rectangles have zero mass.
    keep_mask = ~((lo == -np.inf) & (hi == np.inf))
    zero_rows = np.any(hi == -np.inf, axis=1) | np.any(lo == np.inf, axis=1)
    zero_rows |= np.any((lo == hi) & keep_mask, axis=1)

    groups: dict[tuple, list[int]] = {}
    for b in range(B):
        if zero_rows[b]:
            probs[b] = 0.0
            continue
        kept = tuple(np.nonzero(keep_mask[b])[0])
        groups.setdefault(kept, []).append(b)

    P = corr.values
    for kept, rows in groups.items():
        rows = np.asarray(rows)
        if len(kept) == 0:
            probs[rows] = 1.0
            continue
        idx = np.asarray(kept)
        sub_lo = lo[np.ix_(rows, idx)]
        sub_hi = hi[np.ix_(rows, idx)]
        if len(kept) == 1:
            probs[rows] = _exact_rect_1d(sub_lo[:, 0], sub_hi[:, 0])
            errs[rows] = _EXACT_ERROR
            continue
        sub_corr = P[np.ix_(idx, idx)]
        if len(kept) == 2:
            probs[rows] = _exact_rect_2d(sub_lo, sub_hi, sub_corr[0, 1])
            errs[rows] = _EXACT_ERROR
            continue

        m = len(kept)
        if reorder:
            width = ndtr(sub_hi) - ndtr(sub_lo)
            order = np.argsort(width, axis=1, kind="stable")
            sub_lo = np.take_along_axis(sub_lo, order, axis=1)
            sub_hi = np.take_along_axis(sub_hi, order, axis=1)
            corrs = np.empty((len(rows), m, m))
            for j, perm in enumerate(order):
                corrs[j] = sub_corr[np.ix_(perm, perm)]
            chols = np.linalg.cholesky(corrs)
        else:
            chol = np.linalg.cholesky(sub_corr)
            chols = np.broadcast_to(chol, (len(rows), m, m))
        p, e = _sov_batch(chols, sub_lo, sub_hi, cfg, stream_ids[rows])
        probs[rows] = p
        errs[rows] = e

    return probs, errs


def mvn_rect(
    lower,
    upper,
    corr: CorrelationMatrix,
    cfg: QmcConfig | None = None,
    stream_id: int = 0,
    reorder: bool = True,
) -> tuple[float, float]:
    """P(lower < Z <= upper) for Z ~ N(0, corr), with an error estimate.

    Exact for effective dimension <= 2; otherwise a randomized-lattice
    estimate computed natively on the rectangle.  The error estimate is three
    standard errors across the random shifts.
    """
    lo = np.asarray(lower, dtype=float).ravel()
    hi = np.asarray(upper, dtype=float).ravel()
    p, e = mvn_rect_batch(
        lo[None, :], hi[None, :], corr, cfg, np.asarray([stream_id]), reorder=reorder
    )
    return float(p[0]), float(e[0])


def mvn_cdf(
    upper,
    corr: CorrelationMatrix,
    cfg: QmcConfig | None = None,
    stream_id: int = 0,
) -> tuple[float, float]:
    """P(Z <= upper) for Z ~ N(0, corr): exact for d <= 2, QMC for d >= 3."""
    hi = np.asarray(upper, dtype=float).ravel()
    lo = np.full_like(hi, -np.inf)
    return mvn_rect(lo, hi, corr, cfg, stream_id=stream_id)


def conditional_partition(
    corr: CorrelationMatrix, cond_indices, cond_values
) -> ConditionalGaussian:
    """Distribution of the remaining coordinates given Z[cond] = values.

    Works for any proper nonempty conditioning subset.  Raises
    NearSingularError when the conditioning block is numerically singular
    (for a pair, that means a correlation at +-1).
    """
    idx = np.asarray(cond_indices, dtype=int).ravel()
    vals = np.asarray(cond_values, dtype=float).ravel()
    d = corr.dim
    if idx.size == 0 or idx.size >= d:
        raise DomainError("conditioning set must be a proper nonempty subset")
    if np.any(idx < 0) or np.any(idx >= d) or len(set(idx.tolist())) != idx.size:
        raise DomainError("conditioning indices must be distinct and in range")
    if vals.size != idx.size:
        raise ShapeError("one conditioning value per conditioning index required")

    P = corr.values
    rest = np.setdiff1d(np.arange(d), idx)
    block = P[np.ix_(idx, idx)]
    min_eig = np.linalg.eigvalsh(block)[0] if idx.size > 1 else float(block[0, 0])
    if min_eig < 1e-12:
        if idx.size == 2:
            raise NearSingularError(
                f"conditioning pair ({idx[0]}, {idx[1]}) has correlation numerically at +-1"
            )
        raise NearSingularError(f"conditioning block {idx.tolist()} is numerically singular")
    cross = P[np.ix_(rest, idx)]
    mean = cross @ np.linalg.solve(block, vals)
    cov = P[np.ix_(rest, rest)] - cross @ np.linalg.solve(block, cross.T)
    cov = 0.5 * (cov + cov.T)
    return ConditionalGaussian(mean=mean, covariance=cov)
