"""Data model, simulation design, and exact OLS / 2SLS estimation.

The structural model is ``y = Y beta + u`` with first stage ``Y = Z Pi + V``.
Projections onto the instrument space always go through a thin orthogonal
factorization of ``Z``; the n x n projector is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, RankDeficientError, SingularGramError

#: Gram matrices with reciprocal condition below this are refused.
RCOND_MIN = 1e-12

# Cholesky fast path falls back to Householder QR below this (squared) ratio.
_CHOL_FALLBACK = 1e-8


class ErrorFamily(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student-t"


@dataclass(frozen=True)
class Dataset:
    """Observed triple ``(y, Y, Z)``.

    Construction only checks shapes and finiteness. :meth:`validate` adds the
    full model invariants (``1 <= p < K < n`` and full column rank of ``Z``),
    which estimators themselves do not require.
    """

    y: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        Z = np.asarray(self.Z, dtype=np.float64)
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if Y.ndim == 1:
            Y = Y[:, None]
        if Z.ndim == 1:
            Z = Z[:, None]
        if y.ndim != 1 or Y.ndim != 2 or Z.ndim != 2:
            raise ConfigurationError("y must be a vector, Y and Z matrices")
        if not (y.shape[0] == Y.shape[0] == Z.shape[0]):
            raise ConfigurationError(
                f"row counts differ: y has {y.shape[0]}, Y has {Y.shape[0]}, Z has {Z.shape[0]}"
            )
        for name, arr in (("y", y), ("Y", Y), ("Z", Z)):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} contains NaN or infinite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def K(self) -> int:
        return self.Z.shape[1]

    @cached_property
    def stacked(self) -> np.ndarray:
        """``[Z, Y, y]`` as one contiguous n x (K + p + 1) array."""
        return np.ascontiguousarray(np.column_stack([self.Z, self.Y, self.y]))

    def take(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.Y[rows], self.Z[rows])

    def validate(self) -> None:
        """Raise unless ``1 <= p < K < n`` and ``Z`` has full column rank."""
        if not 1 <= self.p < self.K < self.n:
            raise ConfigurationError(
                f"need 1 <= p < K < n, got n={self.n}, p={self.p}, K={self.K}"
            )
        instrument_rank(self.Z, raise_if_deficient=True)


def instrument_rank(Z: np.ndarray, *, raise_if_deficient: bool = False) -> int:
    """Numerical rank of ``Z`` from a column-pivoted QR.

    Drop tolerance is ``max(n, K) * eps * |R[0, 0]|``; with pivoting ``|R[0, 0]|``
    is the largest column norm.
    """
    n, K = Z.shape
    R = sla.qr(Z, mode="r", pivoting=True, check_finite=False)[0]
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        tol = max(n, K) * np.finfo(np.float64).eps * diag[0]
        rank = int(np.sum(diag > tol))
    if raise_if_deficient and rank < K:
        raise RankDeficientError(rank, K)
    return rank


@dataclass(frozen=True)
class GramForms:
    """``Y'P_Z Y``, ``Y'P_Z y``, ``Y'Y`` and ``Y'y``."""

    YPY: np.ndarray
    YPy: np.ndarray
    YY: np.ndarray
    Yy: np.ndarray


def _projected_cross(Z: np.ndarray, W: np.ndarray) -> np.ndarray:
    # Q'W from a pivoted thin QR of Z; W'P_Z W = (Q'W)'(Q'W).
    n, K = Z.shape
    Q, R, _ = sla.qr(Z, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    tol = max(n, K) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < K:
        raise RankDeficientError(rank, K)
    return Q.T @ W


def gram_forms(data: Dataset) -> GramForms:
    p = data.p
    W = data.stacked[:, data.K:]
    QW = _projected_cross(data.Z, W)
    P = QW.T @ QW
    G = W.T @ W
    YPY = 0.5 * (P[:p, :p] + P[:p, :p].T)
    YY = 0.5 * (G[:p, :p] + G[:p, :p].T)
    return GramForms(YPY=YPY, YPy=P[:p, p].copy(), YY=YY, Yy=G[:p, p].copy())


def _solve_gram(G: np.ndarray, b: np.ndarray, which: str) -> np.ndarray:
    eig = np.linalg.eigvalsh(G)
    top = eig[-1]
    rcond = eig[0] / top if top > 0 else 0.0
    if not rcond >= RCOND_MIN:
        raise SingularGramError(which, float(rcond))
    return np.linalg.solve(G, b)


def ols_fit(data: Dataset) -> np.ndarray:
    """``(Y'Y)^{-1} Y'y``."""
    YY = data.Y.T @ data.Y
    return _solve_gram(YY, data.Y.T @ data.y, "Y'Y")


def tsls_fit(data: Dataset) -> np.ndarray:
    """``(Y'P_Z Y)^{-1} Y'P_Z y``."""
    g = gram_forms(data)
    return _solve_gram(g.YPY, g.YPy, "Y'P_Z Y")


def fits_from_gram(g: GramForms) -> tuple[np.ndarray, np.ndarray]:
    """(2SLS, OLS) coefficients from precomputed Gram forms."""
    return _solve_gram(g.YPY, g.YPy, "Y'P_Z Y"), _solve_gram(g.YY, g.Yy, "Y'Y")


def fit_both(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(2SLS, OLS) coefficients sharing one factorization of ``Z``."""
    return fits_from_gram(gram_forms(data))


def estimator_difference(data: Dataset) -> np.ndarray:
    """``theta_hat = beta_2SLS - beta_OLS``."""
    tsls, ols = fit_both(data)
    return tsls - ols


def difference_identity(data: Dataset) -> np.ndarray:
    """``(Y'P_Z Y)^{-1} Y'P_Z M_Y y``, the annihilator form of the difference."""
    g = gram_forms(data)
    ols = _solve_gram(g.YY, g.Yy, "Y'Y")
    # P_Z M_Y y = P_Z (y - Y b_ols)
    return _solve_gram(g.YPY, g.YPy - g.YPY @ ols, "Y'P_Z Y")


def difference_on_rows(data: Dataset, rows: np.ndarray) -> np.ndarray:
    """``estimator_difference(data.take(rows))`` without building a Dataset.

    Uses the Cholesky factor of the subsample Gram of ``Z`` (the R factor of
    its thin QR) and falls back to Householder QR when that factor is poorly
    conditioned.
    """
    K, p = data.K, data.p
    A = data.stacked[rows]
    G = A.T @ A
    G11 = G[:K, :K]
    try:
        L = np.linalg.cholesky(G11)
    except np.linalg.LinAlgError:
        L = None
    if L is not None:
        d = np.diag(L)
        if (d.min() / d.max()) ** 2 < _CHOL_FALLBACK:
            L = None
    if L is None:
        return estimator_difference(data.take(rows))
    W = sla.solve_triangular(L, G[:K, K:], lower=True, check_finite=False)
    P = W.T @ W
    tsls = _solve_gram(P[:p, :p], P[:p, p], "Y'P_Z Y")
    ols = _solve_gram(G[K:K + p, K:K + p], G[K:K + p, K + p], "Y'Y")
    return tsls - ols


estimator_difference.on_rows = difference_on_rows


def paper_sigma(p: int, rho: float) -> np.ndarray:
    """Error covariance of the simulation design, ordered ``(u, V_1..V_p)``."""
    base = {
        1: [[1.0]],
        2: [[2.0, 3.0], [3.0, 6.0]],
        3: [[2.0, 3.0, 4.0], [3.0, 6.0, 10.0], [4.0, 10.0, 20.0]],
    }
    if p not in base:
        raise ConfigurationError(f"simulation design defines p in {{1, 2, 3}}, got {p}")
    S = np.empty((p + 1, p + 1))
    S[0, 0] = 1.0
    S[0, 1:] = rho
    S[1:, 0] = rho
    S[1:, 1:] = base[p]
    return S


@dataclass(frozen=True)
class DGPParams:
    """Design of one simulated model, before any draws are made.

    ``Sigma`` is the covariance of ``(u_i, V_i1, ..., V_ip)`` in that order.
    """

    Sigma: np.ndarray
    c_n: float
    beta: np.ndarray | None = None
    error_family: ErrorFamily = ErrorFamily.GAUSSIAN
    t_df: float = 5.0

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=np.float64))
        if S.shape[0] != S.shape[1] or S.shape[0] < 2:
            raise ConfigurationError("Sigma must be a square matrix of size p + 1 >= 2")
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ConfigurationError("Sigma must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ConfigurationError("Sigma must be positive definite") from None
        if not self.c_n >= 0:
            raise ConfigurationError(f"c_n must be nonnegative, got {self.c_n}")
        p = S.shape[0] - 1
        beta = np.ones(p) if self.beta is None else np.asarray(self.beta, dtype=np.float64).reshape(p)
        family = ErrorFamily(self.error_family)
        if family is ErrorFamily.STUDENT_T and not self.t_df > 2:
            raise ConfigurationError("Student-t errors need more than 2 degrees of freedom")
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "error_family", family)

    @classmethod
    def paper(cls, p: int, rho: float, c_n: float, error_family=ErrorFamily.GAUSSIAN) -> DGPParams:
        return cls(Sigma=paper_sigma(p, rho), c_n=c_n, error_family=ErrorFamily(error_family))

    @property
    def p(self) -> int:
        return self.Sigma.shape[0] - 1

    @property
    def sigma_u2(self) -> float:
        return float(self.Sigma[0, 0])

    @property
    def Sigma_Vu(self) -> np.ndarray:
        return self.Sigma[1:, 0]

    @property
    def Sigma_VV(self) -> np.ndarray:
        return self.Sigma[1:, 1:]


@dataclass(frozen=True)
class Latent:
    """Unobserved pieces of a simulated dataset, kept for oracle checks."""

    params: DGPParams
    C: np.ndarray
    Pi: np.ndarray
    V: np.ndarray
    u: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.params.beta

    @property
    def Sigma(self) -> np.ndarray:
        return self.params.Sigma

    @property
    def c_n(self) -> float:
        return self.params.c_n

    @property
    def error_family(self) -> ErrorFamily:
        return self.params.error_family


def draw_errors(params: DGPParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """n x (p + 1) error rows ``(u_i, V_i)`` with covariance ``Sigma``.

    Student-t rows are multivariate t with ``t_df`` degrees of freedom whose
    scale matrix is ``Sigma * (df - 2) / df``, so the covariance is ``Sigma``.
    """
    L = np.linalg.cholesky(params.Sigma)
    E = rng.standard_normal((n, params.p + 1)) @ L.T
    if params.error_family is ErrorFamily.STUDENT_T:
        nu = params.t_df
        w = rng.chisquare(nu, size=n) / nu
        E *= np.sqrt((nu - 2.0) / nu) / np.sqrt(w)[:, None]
    return E


def dgp_generate(params: DGPParams, n: int, K: int, seed: int) -> tuple[Dataset, Latent]:
    """Draw one dataset from the local-to-zero design ``Pi = c_n C / sqrt(n)``."""
    p = params.p
    if not n > K > p >= 1:
        raise ConfigurationError(f"need n > K > p >= 1, got n={n}, K={K}, p={p}")
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((K, p))
    Pi = params.c_n * C / np.sqrt(n)
    Z = rng.standard_normal((n, K))
    E = draw_errors(params, n, rng)
    u = E[:, 0].copy()
    V = E[:, 1:].copy()
    Y = Z @ Pi + V
    y = Y @ params.beta + u
    return Dataset(y, Y, Z), Latent(params=params, C=C, Pi=Pi, V=V, u=u)
