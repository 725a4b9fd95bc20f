"""Analytic limits and brute-force oracles for the 2SLS - OLS difference.

Asymptotic notation: ``alpha = lim K/n``, ``kappa0 = lim s_n / n`` where
``s_n`` is the order of the concentration ``Pi'Z'Z Pi``, and
``Theta = lim Pi'Z'Z Pi / s_n``. Under many weak instruments ``kappa0 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._seeding import derive_seed
from .errors import ConfigurationError, IVStrengthError
from .model import DGPParams, Dataset, ErrorFamily, Latent, _solve_gram, dgp_generate, estimator_difference


@dataclass(frozen=True)
class AsymParams:
    alpha: float
    kappa0: float
    Theta: np.ndarray
    Sigma_VV: np.ndarray
    Sigma_Vu: np.ndarray
    sigma_u2: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.kappa0 >= 0:
            raise ConfigurationError(f"kappa0 must be nonnegative, got {self.kappa0}")
        object.__setattr__(self, "Theta", np.atleast_2d(np.asarray(self.Theta, dtype=np.float64)))
        object.__setattr__(self, "Sigma_VV", np.atleast_2d(np.asarray(self.Sigma_VV, dtype=np.float64)))
        object.__setattr__(self, "Sigma_Vu", np.atleast_1d(np.asarray(self.Sigma_Vu, dtype=np.float64)))


def theorem1_limits(params: AsymParams) -> tuple[np.ndarray, np.ndarray]:
    """Probability-limit biases ``(plim 2SLS - beta, plim OLS - beta)``.

    ``(kappa0/alpha Theta + S_VV)^{-1} S_Vu`` and ``(kappa0 Theta + S_VV)^{-1} S_Vu``.
    """
    a, k = params.alpha, params.kappa0
    tsls = np.linalg.solve(k / a * params.Theta + params.Sigma_VV, params.Sigma_Vu)
    ols = np.linalg.solve(k * params.Theta + params.Sigma_VV, params.Sigma_Vu)
    return tsls, ols


def design_asym_params(params: DGPParams, alpha: float) -> AsymParams:
    """Asymptotic parameters of the local-to-zero design at ``K/n -> alpha``.

    With ``s_n = n``: ``Pi'Z'Z Pi / n -> c_n^2 alpha I_p`` (``C`` has i.i.d.
    standard normal entries), so ``kappa0 = c_n^2 alpha`` and ``Theta = I``.
    """
    p = params.p
    return AsymParams(
        alpha=alpha,
        kappa0=params.c_n**2 * alpha,
        Theta=np.eye(p),
        Sigma_VV=params.Sigma_VV,
        Sigma_Vu=params.Sigma_Vu,
        sigma_u2=params.sigma_u2,
    )


def corollary1_variance(sigma_u2: float, sigma_vu: float, sigma_vv2: float, alpha: float) -> float:
    """Null asymptotic variance of ``sqrt(n) (b_2SLS - b_OLS)`` for one regressor.

    ``(1 - alpha)/alpha * (sigma_u2/sigma_vv2 - sigma_vu^2/sigma_vv2^2)``.
    """
    if not sigma_vv2 > 0:
        raise ConfigurationError("sigma_vv2 must be positive")
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if sigma_vu**2 > sigma_u2 * sigma_vv2 * (1 + 1e-12):
        raise ConfigurationError("Cauchy-Schwarz violated: sigma_vu^2 > sigma_u2 * sigma_vv2")
    value = (1 - alpha) / alpha * (sigma_u2 / sigma_vv2 - sigma_vu**2 / sigma_vv2**2)
    return max(value, 0.0)


def sigma3_gaussian_p1(sigma_vv2: float, sigma_u2: float, sigma_vu: float) -> np.ndarray:
    """Covariance of ``(v^2, v u)`` for Gaussian ``(v, u)``."""
    return np.array(
        [
            [2 * sigma_vv2**2, 2 * sigma_vv2 * sigma_vu],
            [2 * sigma_vv2 * sigma_vu, sigma_vv2 * sigma_u2 + sigma_vu**2],
        ]
    )


def _vu_pairs(p: int) -> list[tuple[int, int]]:
    # Coordinates (x, y) of the (V, u) block, indexing 0 = u and j = V_j:
    # first (V_a, V_b) for a, b = 1..p with b varying fastest, then (V_j, u).
    pairs = [(a, b) for a in range(1, p + 1) for b in range(1, p + 1)]
    pairs += [(j, 0) for j in range(1, p + 1)]
    return pairs


def sigma_blocks_gaussian(Sigma: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """``(Sigma_3, Sigma_4)`` for Gaussian errors under the null.

    ``Sigma_3[i, j] = Cov(x_i y_i, x_j y_j)`` over the ``p^2 + p`` products
    ``V_a V_b`` and ``V_j u``, evaluated with Isserlis' theorem;
    ``Sigma_4 = alpha^2 Sigma_3 + (alpha - alpha^2)(E x_i x_j E y_i y_j + E x_i y_j E x_j y_i)``,
    which equals ``alpha * Sigma_3`` for Gaussian errors.
    ``Sigma`` is ordered ``(u, V_1..V_p)``.
    """
    S = np.asarray(Sigma, dtype=np.float64)
    pairs = _vu_pairs(S.shape[0] - 1)
    q = len(pairs)
    pair_term = np.empty((q, q))
    for i, (xi, yi) in enumerate(pairs):
        for j, (xj, yj) in enumerate(pairs):
            pair_term[i, j] = S[xi, xj] * S[yi, yj] + S[xi, yj] * S[xj, yi]
    # Isserlis: Cov(AB, CD) = E[AC]E[BD] + E[AD]E[BC], the same pairing sum.
    S3 = pair_term.copy()
    S4 = alpha**2 * S3 + (alpha - alpha**2) * pair_term
    return S3, S4


def g3_matrix(Sigma_VV: np.ndarray, Sigma_Vu: np.ndarray) -> np.ndarray:
    """Gradient of the difference functional with respect to ``(V'V/n, V'u/n)``.

    Columns are ``S_VV^{-1} J^{ab} S_VV^{-1} S_Vu`` for ``(a, b)`` in row-major
    order, then ``-S_VV^{-1} e_j`` for ``j = 1..p``.
    """
    SVV = np.atleast_2d(np.asarray(Sigma_VV, dtype=np.float64))
    SVu = np.atleast_1d(np.asarray(Sigma_Vu, dtype=np.float64))
    p = SVV.shape[0]
    try:
        inv = sla.inv(SVV)
    except (np.linalg.LinAlgError, ValueError):
        raise IVStrengthError("Sigma_VV is singular") from None
    if not np.all(np.isfinite(inv)) or np.linalg.cond(SVV) > 1e12:
        raise IVStrengthError("Sigma_VV is singular")
    w = inv @ SVu
    cols = []
    for a in range(p):
        for b in range(p):
            # S^{-1} J^{ab} w = S^{-1}[:, a] * w[b]
            cols.append(inv[:, a] * w[b])
    for j in range(p):
        cols.append(-inv[:, j])
    return np.column_stack(cols)


def g4_matrix(Sigma_VV: np.ndarray, Sigma_Vu: np.ndarray, alpha: float) -> np.ndarray:
    """Gradient with respect to ``(V'P_Z V/n, V'P_Z u/n)``: ``-g3 / alpha``."""
    return -g3_matrix(Sigma_VV, Sigma_Vu) / alpha


def null_covariance(Sigma: np.ndarray, alpha: float) -> np.ndarray:
    """``-g3 S3 g3' + g3 S4 g3' / alpha^2`` for Gaussian errors under the null."""
    S = np.asarray(Sigma, dtype=np.float64)
    g3 = g3_matrix(S[1:, 1:], S[1:, 0])
    S3, S4 = sigma_blocks_gaussian(S, alpha)
    out = -g3 @ S3 @ g3.T + (g3 @ S4 @ g3.T) / alpha**2
    return 0.5 * (out + out.T)


def difference_functional(
    ZPi: np.ndarray, PiZV: np.ndarray, PiZu: np.ndarray,
    VV: np.ndarray, Vu: np.ndarray, VPV: np.ndarray, VPu: np.ndarray,
) -> np.ndarray:
    """2SLS - OLS written in the seven scaled components (inputs need not be symmetric)."""
    head = ZPi + PiZV + PiZV.T
    return np.linalg.solve(head + VPV, PiZu + VPu) - np.linalg.solve(head + VV, PiZu + Vu)


@dataclass(frozen=True)
class SevenComponents:
    """The seven scaled forms, each divided by ``n``."""

    ZPi: np.ndarray   # Pi'Z'Z Pi
    PiZV: np.ndarray  # Pi'Z'V
    PiZu: np.ndarray  # Pi'Z'u
    VV: np.ndarray    # V'V
    Vu: np.ndarray    # V'u
    VPV: np.ndarray   # V'P_Z V
    VPu: np.ndarray   # V'P_Z u

    def vector(self) -> np.ndarray:
        """Stacked vector of length ``4 p^2 + 3 p`` (column-major vec)."""
        parts = [self.ZPi, self.PiZV, self.PiZu, self.VV, self.Vu, self.VPV, self.VPu]
        return np.concatenate([np.ravel(x, order="F") for x in parts])

    def difference(self) -> np.ndarray:
        return difference_functional(self.ZPi, self.PiZV, self.PiZu, self.VV, self.Vu, self.VPV, self.VPu)


def seven_components(data: Dataset, latent: Latent) -> SevenComponents:
    n, K = data.n, data.K
    if latent.V.shape != data.Y.shape or latent.u.shape != data.y.shape or latent.Pi.shape != (K, data.p):
        raise ConfigurationError("latent draws do not match the dataset shapes")
    Q, _ = np.linalg.qr(data.Z)
    ZPi = data.Z @ latent.Pi
    QV = Q.T @ latent.V
    Qu = Q.T @ latent.u
    return SevenComponents(
        ZPi=ZPi.T @ ZPi / n,
        PiZV=ZPi.T @ latent.V / n,
        PiZu=ZPi.T @ latent.u / n,
        VV=latent.V.T @ latent.V / n,
        Vu=latent.V.T @ latent.u / n,
        VPV=QV.T @ QV / n,
        VPu=QV.T @ Qu / n,
    )


@dataclass(frozen=True)
class MCCovariance:
    """Monte Carlo covariance of ``sqrt(n) * theta_hat`` with elementwise standard errors."""

    matrix: np.ndarray
    standard_error: np.ndarray
    reps: int
    n_redrawn: int
    method: str
    samples: np.ndarray


def _rotated_difference(params: DGPParams, n: int, K: int, rng: np.random.Generator) -> np.ndarray:
    # For Gaussian Z and errors: rotate so that span(Z) is the first K
    # coordinates. Then Z'Z = R'R with R from the Bartlett decomposition,
    # P_Z = diag(I_K, 0), and the rotated error rows are again i.i.d. N(0, Sigma).
    p = params.p
    C = rng.standard_normal((K, p))
    Pi = params.c_n * C / np.sqrt(n)
    R = np.triu(rng.standard_normal((K, K)), 1)
    R[np.diag_indices(K)] = np.sqrt(rng.chisquare(n - np.arange(K)))
    L = np.linalg.cholesky(params.Sigma)
    E = rng.standard_normal((n, p + 1)) @ L.T
    u, V = E[:, 0], E[:, 1:]
    Y = V.copy()
    Y[:K] += R @ Pi
    y = Y @ params.beta + u
    Y1, y1 = Y[:K], y[:K]
    tsls = _solve_gram(Y1.T @ Y1, Y1.T @ y1, "Y'P_Z Y")
    ols = _solve_gram(Y.T @ Y, Y.T @ y, "Y'Y")
    return tsls - ols


def mc_covariance_oracle(
    params: DGPParams, n: int, K: int, reps: int, seed: int, *, method: str = "auto", max_redraws: int | None = None
) -> MCCovariance:
    """Sample covariance of ``sqrt(n) * (b_2SLS - b_OLS)`` over ``reps`` independent datasets.

    ``method="direct"`` simulates full datasets and fits them;
    ``method="rotated"`` draws the same estimator distribution in O(K^2 + n)
    per replication and is exact for Gaussian errors only. ``"auto"`` picks
    rotated for Gaussian errors and direct otherwise. Replications with a
    singular Gram matrix are redrawn and counted.
    """
    if reps < 100:
        raise ConfigurationError(f"reps must be >= 100, got {reps}")
    if method == "auto":
        method = "rotated" if params.error_family is ErrorFamily.GAUSSIAN else "direct"
    if method == "rotated" and params.error_family is not ErrorFamily.GAUSSIAN:
        raise ConfigurationError("the rotated sampler is exact only for Gaussian errors")
    if method not in ("direct", "rotated"):
        raise ConfigurationError(f"unknown method {method!r}")
    max_redraws = reps if max_redraws is None else max_redraws
    samples = np.empty((reps, params.p))
    redrawn = 0
    for rep in range(reps):
        attempt = 0
        while True:
            child = derive_seed(seed, rep, attempt)
            try:
                if method == "direct":
                    data, _ = dgp_generate(params, n, K, child)
                    theta = estimator_difference(data)
                else:
                    theta = _rotated_difference(params, n, K, np.random.default_rng(child))
                break
            except (np.linalg.LinAlgError, IVStrengthError):
                attempt += 1
                redrawn += 1
                if redrawn > max_redraws:
                    raise
        samples[rep] = np.sqrt(n) * theta
    mean = samples.mean(axis=0)
    dev = samples - mean
    cov = dev.T @ dev / (reps - 1)
    # Var of the sample covariance entries: (E[d_i^2 d_j^2] - cov_ij^2) / reps
    fourth = np.einsum("ri,rj->ij", dev**2, dev**2) / reps
    se = np.sqrt(np.maximum(fourth - cov**2, 0.0) / reps)
    return MCCovariance(matrix=0.5 * (cov + cov.T), standard_error=se, reps=reps,
                        n_redrawn=redrawn, method=method, samples=samples)
