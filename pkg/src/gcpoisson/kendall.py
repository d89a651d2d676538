"""Kendall's tau for Poisson-margined Gaussian copulas, and tau-based starts.

Count data tie with positive probability, so the population tau splits into a
copula-and-margin term A plus the two marginal tie probabilities:

    tau = A + B_x + B_y - 1,
    A   = sum_{x,y} h(x,y) * (4 C(F_x(x-1), F_y(y-1)) - h(x,y)),
    B_j = exp(-2 lambda_j) I0(2 lambda_j).

The A sum is truncated at a configurable Poisson quantile per margin (default
0.999).  The empirical side uses a tie-aware estimator that handles the zero
inflation of low-count data by splitting concordance into zero/positive
blocks; pair counting is exact O(n^2), chunked to bound memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DegenerateMarginError,
    DegenerateSampleError,
    DomainError,
    InsufficientDataError,
    ShapeError,
)
from .mvn import CorrelationMatrix, vechs_indices
from .special import (
    SkellamParams,
    bvn_cdf,
    poisson_cdf,
    poisson_pmf,
    poisson_quantile,
    poisson_tie_prob,
    skellam_cdf,
    std_normal_quantile,
)

__all__ = [
    "PairSample",
    "TauDecomposition",
    "RhoStart",
    "StartMatrix",
    "tau_hat_b",
    "tau_hat_a",
    "population_tau",
    "invert_tau_option1",
    "invert_tau_option3a",
    "invert_tau_option3b",
    "skellam_rho_star",
    "pairwise_start_matrix",
]

RHO_SEARCH_BOUND = 0.9999
_PAIR_CHUNK = 512


@dataclass(frozen=True)
class PairSample:
    """Paired nonnegative integer observations of equal length."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x)
        y = np.asarray(self.y)
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
            raise ShapeError("paired sample requires two equal-length vectors")
        if np.any(x < 0) or np.any(y < 0):
            raise DomainError("counts must be nonnegative")
        object.__setattr__(self, "x", np.asarray(x, dtype=np.int64))
        object.__setattr__(self, "y", np.asarray(y, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class TauDecomposition:
    """Population tau split into copula-and-margin and tie terms."""

    A: float
    B_x: float
    B_y: float

    @property
    def tau(self) -> float:
        return self.A + self.B_x + self.B_y - 1.0


@dataclass(frozen=True)
class RhoStart:
    """A starting correlation, flagged when the search saturated its bound."""

    rho: float
    saturated: bool = False


@dataclass(frozen=True)
class StartMatrix:
    """Pairwise-assembled starting correlation matrix with per-pair flags."""

    corr: CorrelationMatrix
    saturated: np.ndarray  # vechs order
    projected: bool


def _pair_counts(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """Ordered-pair concordance counts (double-counted): P, Q, T_x, T_y."""
    n = x.size
    P = Q = Tx = Ty = 0
    for start in range(0, n, _PAIR_CHUNK):
        xb = x[start : start + _PAIR_CHUNK, None]
        yb = y[start : start + _PAIR_CHUNK, None]
        dx = xb - x[None, :]
        dy = yb - y[None, :]
        prod = dx * dy
        P += int(np.count_nonzero(prod > 0))
        Q += int(np.count_nonzero(prod < 0))
        Tx += int(np.count_nonzero((dx == 0) & (dy != 0)))
        Ty += int(np.count_nonzero((dy == 0) & (dx != 0)))
    return P // 2, Q // 2, Tx // 2, Ty // 2


def tau_hat_b(x, y) -> float:
    """Tie-corrected tau-b, (P - Q) / sqrt((P+Q+T_x)(P+Q+T_y)).

    Exact pair enumeration; raises DegenerateSampleError when every pair is
    tied on one of the margins (zero denominator).
    """
    sample = PairSample(np.asarray(x), np.asarray(y))
    if sample.n < 2:
        raise InsufficientDataError("tau-b needs at least two observations")
    P, Q, Tx, Ty = _pair_counts(sample.x, sample.y)
    denom = np.sqrt(float(P + Q + Tx) * float(P + Q + Ty))
    if denom == 0.0:
        raise DegenerateSampleError("all pairs tied; tau-b undefined")
    return float((P - Q) / denom)


def _cross_fractions(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """P[A > B] and P[A = B] over all cross pairs of two samples."""
    if a.size == 0 or b.size == 0:
        return 0.0, 0.0
    greater = equal = 0
    for start in range(0, a.size, _PAIR_CHUNK):
        ab = a[start : start + _PAIR_CHUNK, None]
        greater += int(np.count_nonzero(ab > b[None, :]))
        equal += int(np.count_nonzero(ab == b[None, :]))
    total = float(a.size) * float(b.size)
    return greater / total, equal / total


def tau_hat_a(x, y) -> float:
    """Tie-aware tau for zero-inflated counts.

    Splits the sample by the zero pattern: plain concordance-minus-discordance
    tau among the strictly positive block, weighted by its frequency squared,
    plus closed-form concordance contributions from the zero blocks.
    Conditional comparison frequencies are taken over all cross pairs of the
    relevant sub-samples; empty sub-samples contribute zero, which keeps the
    estimator continuous (their frequency weights vanish as well).
    """
    sample = PairSample(np.asarray(x), np.asarray(y))
    if sample.n < 2:
        raise InsufficientDataError("tau estimation needs at least two observations")
    xv, yv = sample.x, sample.y
    n = sample.n
    m11 = (xv > 0) & (yv > 0)
    m10 = (xv > 0) & (yv == 0)
    m01 = (xv == 0) & (yv > 0)
    m00 = (xv == 0) & (yv == 0)
    p00 = m00.sum() / n
    p01 = m01.sum() / n
    p10 = m10.sum() / n
    p11 = m11.sum() / n

    # tau+ estimates the plain concordance-minus-discordance probability of
    # the positive block: (P - Q) / (all pairs).  A tie-corrected version
    # (tau-b) would overstate |tau+| under heavy residual ties and bias the
    # whole estimator at low counts.
    n11 = int(m11.sum())
    if n11 >= 2:
        P, Q, _, _ = _pair_counts(xv[m11], yv[m11])
        tau_plus = (P - Q) / (n11 * (n11 - 1) / 2.0)
    else:
        tau_plus = 0.0

    p1_gt, p1_eq = _cross_fractions(xv[m10], xv[m11])
    p2_gt, p2_eq = _cross_fractions(yv[m01], yv[m11])

    return float(
        p11**2 * tau_plus
        + 2.0 * (p00 * p11 - p01 * p10)
        + 2.0 * p11 * (p10 * (1.0 - 2.0 * p1_gt - p1_eq) + p01 * (1.0 - 2.0 * p2_gt - p2_eq))
    )


class _ATerm:
    """Reusable evaluator of A(rho) for fixed margins and truncation."""

    def __init__(self, lx: float, ly: float, trunc_quantile: float = 0.999) -> None:
        if not (lx > 0.0 and ly > 0.0):
            raise DomainError("Poisson means must be positive")
        if not 0.0 < trunc_quantile <= 1.0:
            raise DomainError("truncation quantile must lie in (0, 1]")
        kx = int(poisson_quantile(trunc_quantile, lx))
        ky = int(poisson_quantile(trunc_quantile, ly))
        # z-scale grid of Phi^{-1}(F(-1)), ..., Phi^{-1}(F(K)); F(-1) = 0
        self.ax = std_normal_quantile(poisson_cdf(np.arange(-1, kx + 1), lx))
        self.ay = std_normal_quantile(poisson_cdf(np.arange(-1, ky + 1), ly))

    def __call__(self, rho: float) -> float:
        C = bvn_cdf(self.ax[:, None], self.ay[None, :], rho)
        h = C[1:, 1:] - C[:-1, 1:] - C[1:, :-1] + C[:-1, :-1]
        h = np.maximum(h, 0.0)  # roundoff can leave stray -1e-15 cells
        return float(np.sum(h * (4.0 * C[:-1, :-1] - h)))


def population_tau(rho: float, lx: float, ly: float, trunc_quantile: float = 0.999) -> TauDecomposition:
    """Population tau of a Gaussian-copula Poisson pair.

    The A double sum is truncated at the given Poisson quantile per margin;
    the tie terms use the closed-form Bessel expression.
    """
    if not abs(rho) < 1.0:
        raise DomainError("|rho| must be < 1")
    a_val = _ATerm(lx, ly, trunc_quantile)(rho)
    return TauDecomposition(A=a_val, B_x=float(poisson_tie_prob(lx)), B_y=float(poisson_tie_prob(ly)))


def _invert_monotone(target: float, fn, bound: float = RHO_SEARCH_BOUND) -> RhoStart:
    lo_val = fn(-bound)
    hi_val = fn(bound)
    if target <= lo_val:
        return RhoStart(rho=-bound, saturated=True)
    if target >= hi_val:
        return RhoStart(rho=bound, saturated=True)
    root = brentq(lambda r: fn(r) - target, -bound, bound, xtol=1e-10, rtol=1e-12)
    return RhoStart(rho=float(root), saturated=False)


def invert_tau_option1(
    tau_a_hat: float, lx_hat: float, ly_hat: float, trunc_quantile: float = 0.999
) -> RhoStart:
    """Exact tau inversion: solve A(rho) = tau_hat - B_x - B_y + 1.

    A is strictly increasing in rho, so the squared-distance minimizer is the
    root when the target is attainable; otherwise the clamped endpoint is
    returned with the saturation flag set.
    """
    a_target = tau_a_hat - poisson_tie_prob(lx_hat) - poisson_tie_prob(ly_hat) + 1.0
    return _invert_monotone(a_target, _ATerm(lx_hat, ly_hat, trunc_quantile))


def invert_tau_option3a(tau_a_hat: float, lx_hat: float, ly_hat: float) -> RhoStart:
    """Logistic-shrinkage arcsine inversion: (1 + e^{-(lx+ly)}) sin(pi tau / 2)."""
    rho = (1.0 + np.exp(-(lx_hat + ly_hat))) * np.sin(0.5 * np.pi * tau_a_hat)
    clamped = min(max(float(rho), -RHO_SEARCH_BOUND), RHO_SEARCH_BOUND)
    return RhoStart(rho=clamped, saturated=clamped != rho)


def invert_tau_option3b(tau_a_hat: float, lx_hat: float, ly_hat: float) -> RhoStart:
    """Tie-scaled arcsine inversion: sin(pi/2 * tau / sqrt((1-B_x)(1-B_y)))."""
    scale = np.sqrt((1.0 - poisson_tie_prob(lx_hat)) * (1.0 - poisson_tie_prob(ly_hat)))
    if scale <= 0.0:
        return RhoStart(rho=0.0, saturated=True)
    arg = tau_a_hat / scale
    saturated = abs(arg) > 1.0
    arg = min(max(arg, -1.0), 1.0)
    return RhoStart(rho=float(np.sin(0.5 * np.pi * arg)), saturated=saturated)


def skellam_rho_star(
    rho: float, lx: float, ly: float, trunc_quantile: float = 1.0 - 1e-9
) -> float:
    """Latent correlation of the difference pair matching the original tau.

    Matches A*(rho*) = A(rho), where A* is built from the Skellam margins of
    the differences and the bivariate normal cdf.  A* is strictly increasing,
    so the minimizer of the squared loss is unique.  Diagnostic only; the
    default truncation is tight because the identity A*(0) = A(0) should hold
    to solver precision.
    """
    if not abs(rho) < 1.0:
        raise DomainError("|rho| must be < 1")
    target = _ATerm(lx, ly, trunc_quantile)(rho)

    zx = std_normal_quantile(skellam_cdf(np.array([-1, 0]), SkellamParams(lx, lx)))
    zy = std_normal_quantile(skellam_cdf(np.array([-1, 0]), SkellamParams(ly, ly)))

    def a_star(r: float) -> float:
        h00 = (
            bvn_cdf(zx[1], zy[1], r)
            - bvn_cdf(zx[0], zy[1], r)
            - bvn_cdf(zx[1], zy[0], r)
            + bvn_cdf(zx[0], zy[0], r)
        )
        return float(4.0 * bvn_cdf(zx[0], zy[0], r) - h00)

    return _invert_monotone(target, a_star).rho


_START_METHODS = ("corr", "option1", "option3a", "option3b")


def pairwise_start_matrix(sample, method: str = "option1", trunc_quantile: float = 0.999) -> StartMatrix:
    """Assemble a starting correlation matrix from per-pair estimates.

    ``corr`` uses the sample Pearson correlation (clamped); the tau methods
    estimate tau for every pair and invert it with the column means as
    margin estimates.  The assembled matrix is projected back to positive
    definiteness (eigenvalue clipping at 1e-6, then diagonal renormalization)
    when the pairwise fills land outside the PD cone.
    """
    if method not in _START_METHODS:
        raise DomainError(f"unknown start method {method!r}; expected one of {_START_METHODS}")
    data = np.asarray(sample)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ShapeError("sample must be an n x d table with d >= 2")
    if data.shape[0] < 2:
        raise InsufficientDataError("need at least two observations")
    n, d = data.shape
    for j in range(d):
        if np.all(data[:, j] == 0):
            raise DegenerateMarginError(f"column {j} is identically zero")
        if method == "corr" and np.all(data[:, j] == data[0, j]):
            raise DegenerateMarginError(f"column {j} is constant; correlation undefined")

    rows, cols = vechs_indices(d)
    fills = np.zeros(len(rows))
    saturated = np.zeros(len(rows), dtype=bool)

    if method == "corr":
        C = np.corrcoef(data.T)
        fills = np.clip(C[rows, cols], -RHO_SEARCH_BOUND, RHO_SEARCH_BOUND)
    else:
        lam_hat = data.mean(axis=0)
        for k in range(len(rows)):
            i, j = int(rows[k]), int(cols[k])
            tau = tau_hat_a(data[:, j], data[:, i])
            if method == "option1":
                start = invert_tau_option1(tau, lam_hat[j], lam_hat[i], trunc_quantile)
            elif method == "option3a":
                start = invert_tau_option3a(tau, lam_hat[j], lam_hat[i])
            else:
                start = invert_tau_option3b(tau, lam_hat[j], lam_hat[i])
            fills[k] = start.rho
            saturated[k] = start.saturated

    mat = np.eye(d)
    mat[rows, cols] = fills
    mat[cols, rows] = fills

    projected = False
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals[0] < 1e-6:
        projected = True
        vals, vecs = np.linalg.eigh(mat)
        mat = (vecs * np.maximum(vals, 1e-6)) @ vecs.T
        scale = np.sqrt(np.diag(mat))
        mat = mat / np.outer(scale, scale)
        off = np.clip(mat[rows, cols], -RHO_SEARCH_BOUND, RHO_SEARCH_BOUND)
        mat = np.eye(d)
        mat[rows, cols] = off
        mat[cols, rows] = off

    return StartMatrix(corr=CorrelationMatrix(mat), saturated=saturated, projected=projected)
