"""Bijection between natural parameters and the unconstrained real vector.

Poisson means go through a log link; the correlation matrix goes through the
spherical-Cholesky parameterization (SCP): each Cholesky row is written in
spherical coordinates with angles in (0, pi), and each angle through a scaled
logit.  Any real vector therefore maps to a valid (positive means, unit
diagonal PD correlation) pair, which is what lets the optimizer run without
box constraints.

Stacking convention: angle and correlation entries are ordered columnwise
over the strict lower triangle, (2,1), ..., (d,1), (3,2), ..., (d,d-1).  The
Jacobian of vechs(P) with respect to zeta follows the same convention in both
axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError, ShapeError
from .mvn import CorrelationMatrix, vechs, vechs_indices

__all__ = [
    "SphericalAngles",
    "UnconstrainedParams",
    "ModelParams",
    "scp_forward",
    "scp_inverse",
    "zeta_from_omega",
    "omega_from_zeta",
    "to_unconstrained",
    "from_unconstrained",
    "jacobian_vechs_wrt_zeta",
]

_COS_CLAMP = 1.0 - 1e-12


@dataclass(frozen=True)
class SphericalAngles:
    """Strictly-lower-triangular table of Cholesky-row angles in (0, pi)."""

    omega: np.ndarray

    def __post_init__(self) -> None:
        om = np.asarray(self.omega, dtype=float)
        if om.ndim != 2 or om.shape[0] != om.shape[1]:
            raise ShapeError("angle table must be square")
        rows, cols = vechs_indices(om.shape[0])
        entries = om[rows, cols]
        if np.any(~np.isfinite(entries)) or np.any(entries <= 0.0) or np.any(entries >= np.pi):
            raise DomainError("angles must lie strictly inside (0, pi)")
        object.__setattr__(self, "omega", om)

    @property
    def dim(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class UnconstrainedParams:
    """psi = (eta, zeta): log-means and logit-scaled spherical angles."""

    eta: np.ndarray
    zeta: np.ndarray

    def __post_init__(self) -> None:
        eta = np.asarray(self.eta, dtype=float).ravel()
        zeta = np.asarray(self.zeta, dtype=float).ravel()
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(zeta))):
            raise DomainError("unconstrained parameters must be finite")
        d = eta.size
        if zeta.size != d * (d - 1) // 2:
            raise ShapeError(
                f"zeta has {zeta.size} entries, expected {d * (d - 1) // 2} for d={d}"
            )
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "zeta", zeta)

    @property
    def dim(self) -> int:
        return self.eta.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.zeta])

    @classmethod
    def from_vector(cls, vec, d: int) -> "UnconstrainedParams":
        vec = np.asarray(vec, dtype=float).ravel()
        return cls(eta=vec[:d], zeta=vec[d:])


@dataclass(frozen=True)
class ModelParams:
    """Natural-scale parameters: positive Poisson means and a correlation matrix."""

    lambdas: np.ndarray
    corr: CorrelationMatrix

    def __post_init__(self) -> None:
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0.0):
            raise DomainError("Poisson means must be positive and finite")
        if lam.size != self.corr.dim:
            raise ShapeError("number of means must match correlation dimension")
        object.__setattr__(self, "lambdas", lam)

    @property
    def dim(self) -> int:
        return self.lambdas.size


def _cholesky_from_angles(omega: np.ndarray) -> np.ndarray:
    d = omega.shape[0]
    L = np.zeros((d, d))
    L[0, 0] = 1.0
    for i in range(1, d):
        q = 1.0
        for j in range(i):
            L[i, j] = q * np.cos(omega[i, j])
            q *= np.sin(omega[i, j])
        L[i, i] = q
    return L


def scp_forward(omega: SphericalAngles) -> tuple[np.ndarray, CorrelationMatrix]:
    """Angles -> (Cholesky factor, correlation matrix).

    Each row of the factor has unit Euclidean norm by construction, so the
    product has an exactly-unit diagonal.
    """
    L = _cholesky_from_angles(omega.omega)
    P = L @ L.T
    np.fill_diagonal(P, 1.0)
    return L, CorrelationMatrix(P)


def scp_inverse(P: CorrelationMatrix) -> SphericalAngles:
    """Correlation matrix -> angles, via the positive-diagonal Cholesky factor.

    Cosine arguments are clamped to +-(1 - 1e-12): correlations numerically at
    +-1 would otherwise push angles onto the boundary and the logit to
    infinity.
    """
    L = P.cholesky()
    d = P.dim
    omega = np.zeros((d, d))
    for i in range(1, d):
        q = 1.0
        for j in range(i):
            c = L[i, j] / q
            c = min(max(c, -_COS_CLAMP), _COS_CLAMP)
            omega[i, j] = np.arccos(c)
            q *= np.sin(omega[i, j])
    return SphericalAngles(omega)


def zeta_from_omega(omega: SphericalAngles) -> np.ndarray:
    """Scaled logit of each angle, stacked columnwise."""
    rows, cols = vechs_indices(omega.dim)
    w = omega.omega[rows, cols]
    return np.log(w / (np.pi - w))


def omega_from_zeta(zeta) -> SphericalAngles:
    """Inverse logit map: omega = pi * logistic(zeta)."""
    zeta = np.asarray(zeta, dtype=float).ravel()
    p = zeta.size
    d = int(round((1.0 + np.sqrt(1.0 + 8.0 * p)) / 2.0))
    if d * (d - 1) // 2 != p:
        raise ShapeError(f"{p} entries do not form a strict lower triangle")
    rows, cols = vechs_indices(d)
    omega = np.full((d, d), 0.0)
    omega[rows, cols] = np.pi * expit(zeta)
    return SphericalAngles(omega)


def to_unconstrained(params: ModelParams) -> UnconstrainedParams:
    """(lambda, P) -> psi = (log lambda, logit angles)."""
    return UnconstrainedParams(
        eta=np.log(params.lambdas),
        zeta=zeta_from_omega(scp_inverse(params.corr)),
    )


def from_unconstrained(psi: UnconstrainedParams) -> ModelParams:
    """psi -> (lambda, P); always lands on a feasible parameter pair."""
    _, corr = scp_forward(omega_from_zeta(psi.zeta))
    return ModelParams(lambdas=np.exp(psi.eta), corr=corr)


def cholesky_from_zeta(zeta) -> tuple[np.ndarray, np.ndarray]:
    """(L, P-values) for a zeta vector, bypassing matrix validation.

    Internal fast path for likelihood evaluations where zeta is already known
    to be finite.
    """
    omega = omega_from_zeta(zeta)
    L = _cholesky_from_angles(omega.omega)
    P = L @ L.T
    np.fill_diagonal(P, 1.0)
    P = np.tril(P, -1) + np.tril(P, -1).T + np.eye(P.shape[0])
    return L, P


def jacobian_vechs_wrt_zeta(zeta) -> np.ndarray:
    """d vechs(P) / d zeta as a p x p matrix (rows: pairs, columns: angles).

    Assembled by the direct row recursion for the angle derivatives of the
    Cholesky rows: perturbing the angle at (i, m) changes only row i of the
    factor, with

        d alpha_{i,m} = -q_{i,m+1},
        d alpha_{i,j} =  alpha_{i,j} * cot(omega_{i,m})   for m < j <= i,

    then dP = dL L' + L dL'.  The logistic factor pi * s (1 - s) chains the
    angle derivative back to zeta.
    """
    zeta = np.asarray(zeta, dtype=float).ravel()
    p = zeta.size
    angles = omega_from_zeta(zeta)
    omega = angles.omega
    d = angles.dim
    L = _cholesky_from_angles(omega)
    rows, cols = vechs_indices(d)

    # q[i, j] = prod_{k<j} sin(omega[i, k]); q[i, 0] = 1
    q = np.ones((d, d + 1))
    for i in range(1, d):
        for j in range(i):
            q[i, j + 1] = q[i, j] * np.sin(omega[i, j])

    sig = expit(zeta)
    dw_dzeta = np.pi * sig * (1.0 - sig)

    jac = np.empty((p, p))
    for c in range(p):
        i, m = int(rows[c]), int(cols[c])
        g = np.zeros(d)
        cot = np.cos(omega[i, m]) / np.sin(omega[i, m])
        g[m] = -q[i, m + 1]
        for j in range(m + 1, i + 1):
            g[j] = L[i, j] * cot
        dL = np.zeros((d, d))
        dL[i, : i + 1] = g[: i + 1]
        dP = dL @ L.T + L @ dL.T
        jac[:, c] = dP[rows, cols] * dw_dzeta[c]
    return jac
