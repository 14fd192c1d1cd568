"""Least-squares and conjugate-Bayes kernel.

All linear solves go through :func:`solve_spd`, a Cholesky solve that retries
once with a small diagonal jitter before giving up. No explicit inverses are
formed except where a covariance is genuinely required.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import RngSpec, as_generator
from .errors import DimensionMismatch, NonFiniteInput, NonPositiveWeight, SingularDesign, ValidationError

DEFAULT_RIDGE_LAMBDA = 1.0
_JITTER = 1e-10


def cholesky_spd(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    On failure the diagonal is bumped by ``1e-10 * trace(A) / d`` and the
    factorization retried once.
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        d = A.shape[0]
        bump = _JITTER * max(np.trace(A), 1e-300) / d
        try:
            return np.linalg.cholesky(A + bump * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise SingularDesign("matrix is not positive definite even after jitter") from exc


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    L = cholesky_spd(A)
    return linalg.cho_solve((L, True), b, check_finite=False)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("inputs contain NaN or inf")


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float = DEFAULT_RIDGE_LAMBDA) -> np.ndarray:
    """Solve ``(X'X + lam I) beta = X'y``.

    With ``lam == 0`` the design must have full column rank.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 1:
        raise ValidationError("ridge_fit needs at least one observation")
    if lam < 0:
        raise ValidationError("ridge penalty must be >= 0")
    _check_finite(X, y)
    d = X.shape[1]
    if lam == 0.0 and np.linalg.matrix_rank(X) < d:
        raise SingularDesign(f"design of rank {np.linalg.matrix_rank(X)} < {d} columns with no ridge penalty")
    G = X.T @ X
    if lam:
        G[np.diag_indices(d)] += lam
    return solve_spd(G, X.T @ y)


def wls_fit(X: np.ndarray, y: np.ndarray, weights: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """Minimize ``sum w_i (y_i - x_i'beta)^2 + lam ||beta||^2``."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(~np.isfinite(w)):
        raise NonFiniteInput("weights contain NaN or inf")
    if np.any(w <= 0):
        raise NonPositiveWeight("weights must be strictly positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if w.shape[0] != X.shape[0]:
        raise DimensionMismatch("weights and X row counts differ")
    sw = np.sqrt(w)
    return ridge_fit(X * sw[:, None], np.asarray(y, dtype=float) * sw, lam)


# --------------------------------------------------------------------------
# online sufficient statistics


@dataclass(frozen=True)
class SuffStats:
    """Ridge sufficient statistics ``B = lam I + sum f f'`` and ``b = sum f y``."""

    B: np.ndarray
    b: np.ndarray
    n: int = 0
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA

    @classmethod
    def fresh(cls, d: int, ridge_lambda: float = DEFAULT_RIDGE_LAMBDA) -> "SuffStats":
        if ridge_lambda <= 0:
            raise ValidationError("online statistics need a positive ridge penalty")
        return cls(ridge_lambda * np.eye(d), np.zeros(d), 0, float(ridge_lambda))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def update(self, f: np.ndarray, y: float, weight: float = 1.0) -> "SuffStats":
        f = np.asarray(f, dtype=float).reshape(-1)
        if f.shape[0] != self.dim:
            raise DimensionMismatch(f"feature of length {f.shape[0]} for statistics of dimension {self.dim}")
        B = self.B + weight * np.outer(f, f)
        return SuffStats(B, self.b + (weight * y) * f, self.n + 1, self.ridge_lambda)

    def mean(self) -> np.ndarray:
        return solve_spd(self.B, self.b)

    def cholesky(self) -> np.ndarray:
        return cholesky_spd(self.B)


def suffstats_update(s: SuffStats, f: np.ndarray, y: float) -> SuffStats:
    return s.update(f, y)


# --------------------------------------------------------------------------
# Normal-Inverse-Gamma conjugate regression


@dataclass(frozen=True)
class NigPosterior:
    """``sigma2 ~ IG(a, b_ig)``, ``beta | sigma2 ~ N(mu, sigma2 * precision^{-1})``.

    The precision (inverse scale matrix) is stored because conjugate updates
    are additive in it.
    """

    mu: np.ndarray
    precision: np.ndarray
    a: float
    b_ig: float

    def __post_init__(self):
        if self.a <= 0 or self.b_ig <= 0:
            raise ValidationError("inverse-gamma shape and scale must be positive")

    @classmethod
    def prior(cls, mu: np.ndarray, Sigma_scale: np.ndarray, a: float, b_ig: float) -> "NigPosterior":
        Sigma_scale = np.asarray(Sigma_scale, dtype=float)
        L = cholesky_spd(Sigma_scale)
        precision = linalg.cho_solve((L, True), np.eye(Sigma_scale.shape[0]))
        return cls(np.asarray(mu, dtype=float), 0.5 * (precision + precision.T), float(a), float(b_ig))

    @property
    def Sigma_scale(self) -> np.ndarray:
        return linalg.cho_solve((cholesky_spd(self.precision), True), np.eye(self.mu.shape[0]))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def nig_update(prior: NigPosterior, X: np.ndarray, y: np.ndarray) -> NigPosterior:
    X = np.asarray(X, dtype=float).reshape(-1, prior.dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y row counts differ")
    if y.size == 0:
        return prior
    _check_finite(X, y)
    P0, m0 = prior.precision, prior.mu
    Pn = P0 + X.T @ X
    rhs = P0 @ m0 + X.T @ y
    mn = solve_spd(Pn, rhs)
    an = prior.a + 0.5 * y.size
    bn = prior.b_ig + 0.5 * (y @ y + m0 @ P0 @ m0 - mn @ Pn @ mn)
    return NigPosterior(mn, Pn, an, max(bn, np.finfo(float).tiny))


def nig_sample(post: NigPosterior, rng: RngSpec | np.random.Generator) -> tuple[np.ndarray, float]:
    """One joint draw ``(beta, sigma2)``; the inverse gamma is a reciprocal gamma."""
    g = as_generator(rng)
    sigma2 = 1.0 / g.gamma(post.a, 1.0 / post.b_ig)
    z = g.standard_normal(post.dim)
    L = cholesky_spd(post.precision)
    # precision = L L'  =>  L^{-T} z has covariance precision^{-1}
    beta = post.mu + np.sqrt(sigma2) * linalg.solve_triangular(L, z, lower=True, trans="T")
    return beta, float(sigma2)


def lints_lambda(nu: float, sigma_mu: float) -> float:
    """Ridge penalty implied by a ``N(0, sigma_mu^2 I)`` prior and noise scale ``nu``."""
    return nu**2 / sigma_mu**2
