"""The strength test: jackknife covariance, held-out statistic, chi-square decision.

H0 is "many weak instruments" (the 2SLS and OLS limits coincide); rejecting
is evidence that the instrument set is strong as a group.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla
from scipy import special

from .errors import ConfigurationError, SingularCovarianceError
from .model import Dataset, estimator_difference
from .resampling import DEFAULT_M_CAP, CovEstimate, choose_d, default_m, evaluate_subsample, jsve

RECOMMENDED_LAMBDA = (0.25, 0.75)

# Sub-streams of the user seed.
JSVE_STREAM = 0
HELD_OUT_STREAM = 1


class Scaling(str, Enum):
    """Factor applied to ``theta' Sigma^{-1} theta``.

    SAMPLE_SIZE multiplies by the full sample size ``n``; SUBSAMPLE_SIZE by the
    number of rows ``theta`` was computed on (``r`` for a held-out subsample);
    PAPER_LITERAL uses no factor.
    """

    SAMPLE_SIZE = "sample-size"
    SUBSAMPLE_SIZE = "subsample-size"
    PAPER_LITERAL = "paper-literal"

    @classmethod
    def _missing_(cls, value):
        aliases = {"sample": cls.SAMPLE_SIZE, "n": cls.SAMPLE_SIZE, "subsample": cls.SUBSAMPLE_SIZE,
                   "r": cls.SUBSAMPLE_SIZE, "literal": cls.PAPER_LITERAL}
        return aliases.get(value)


class ThetaSource(str, Enum):
    SUBSAMPLE = "subsample"
    FULL_SAMPLE = "full"

    @classmethod
    def _missing_(cls, value):
        return {"full-sample": cls.FULL_SAMPLE, "fullsample": cls.FULL_SAMPLE}.get(value)


def chi_square_quantile(df: int, prob: float) -> float:
    """``x`` with ``P(chi2(df) <= x) = prob``, from the inverse regularized incomplete gamma."""
    if not df >= 1:
        raise ConfigurationError(f"df must be >= 1, got {df}")
    if not 0 < prob < 1:
        raise ConfigurationError(f"prob must lie in (0, 1), got {prob}")
    return float(2.0 * special.gammaincinv(df / 2.0, prob))


def p_value(statistic: float, df: int) -> float:
    """Upper tail probability ``P(chi2(df) > statistic)``."""
    if statistic <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, statistic / 2.0))


def critical_value(df: int, level: float) -> float:
    if level >= 1:
        return 0.0
    return chi_square_quantile(df, 1.0 - level)


def wald_statistic(theta: np.ndarray, cov: np.ndarray, scale: float = 1.0) -> float:
    """``scale * theta' cov^{-1} theta`` via a Cholesky solve.

    Raises :class:`SingularCovarianceError` when the reciprocal condition of
    ``cov`` is below ``1e-12``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    eig = np.linalg.eigvalsh(cov)
    if not (eig[-1] > 0 and eig[0] / eig[-1] >= 1e-12):
        raise SingularCovarianceError(eig)
    c = sla.cho_factor(cov, lower=True, check_finite=False)
    return float(scale * theta @ sla.cho_solve(c, theta, check_finite=False))


@dataclass(frozen=True)
class TestConfig:
    __test__ = False

    lam: float = 0.45
    m: int | str = "auto"
    level: float = 0.05
    seed: int = 0
    theta_source: ThetaSource = ThetaSource.SUBSAMPLE
    scaling: Scaling = Scaling.SAMPLE_SIZE
    m_cap: int | None = DEFAULT_M_CAP
    workers: int | None = None

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ConfigurationError(f"lambda must lie in (0, 1), got {self.lam}")
        if not 0 < self.level <= 1:
            raise ConfigurationError(f"level must lie in (0, 1], got {self.level}")
        if self.m != "auto" and not (isinstance(self.m, (int, np.integer)) and self.m >= 2):
            raise ConfigurationError(f"m must be 'auto' or an integer >= 2, got {self.m!r}")
        object.__setattr__(self, "theta_source", ThetaSource(self.theta_source))
        object.__setattr__(self, "scaling", Scaling(self.scaling))


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    df: int
    p_value: float
    reject: bool
    critical_value: float
    theta: np.ndarray
    theta_full: np.ndarray
    cov: CovEstimate
    config: TestConfig
    n: int
    K: int
    scale: float
    warnings: tuple[str, ...] = ()
    runtime_s: float = field(default=0.0, compare=False)

    @property
    def d(self) -> int:
        return self.cov.plan.d

    @property
    def r(self) -> int:
        return self.cov.plan.r

    @property
    def m(self) -> int:
        return self.cov.plan.m


def _scale_factor(scaling: Scaling, n: int, rows_used: int) -> float:
    if scaling is Scaling.SAMPLE_SIZE:
        return float(n)
    if scaling is Scaling.SUBSAMPLE_SIZE:
        return float(rows_used)
    return 1.0


def run_spec_test(data: Dataset, config: TestConfig = TestConfig()) -> TestResult:
    """Run the four-step procedure on ``data``.

    1-2. Jackknife-sampling covariance ``Sigma`` of the 2SLS - OLS difference
         over ``m`` random subsets of size ``r = n - round(lam * n)``.
    3.   ``theta_s`` on one fresh random subset of size ``r`` (independent
         seed stream), or on the full sample with ``theta_source="full"``.
    4.   ``T = scale * theta_s' Sigma^{-1} theta_s``; reject when ``T`` exceeds
         the ``1 - level`` quantile of chi-square with ``p`` degrees of freedom.
    """
    started = time.perf_counter()
    data.validate()
    notes: list[str] = []
    n, K, p = data.n, data.K, data.p
    d = choose_d(n, config.lam)
    r = n - d
    if r <= K:
        raise ConfigurationError(
            f"subsample size r = n - round(lambda*n) = {r} must exceed the number of instruments K = {K}; "
            "lower lambda or use fewer instruments"
        )
    lo, hi = RECOMMENDED_LAMBDA
    if not lo <= config.lam <= hi:
        msg = f"lambda = {config.lam} is outside the recommended interval [{lo}, {hi}]"
        warnings.warn(msg, UserWarning, stacklevel=2)
        notes.append(msg)
    if config.m == "auto":
        m, capped = default_m(n, config.m_cap)
        if capped:
            msg = f"m capped at {m} (ceil(n^1.5) = {int(np.ceil(n ** 1.5))})"
            warnings.warn(msg, UserWarning, stacklevel=2)
            notes.append(msg)
    else:
        m, capped = int(config.m), False

    cov = jsve(data, d, m, config.seed, estimator_difference, stream=JSVE_STREAM,
               workers=config.workers, m_capped=capped)
    theta_full = estimator_difference(data)
    if config.theta_source is ThetaSource.SUBSAMPLE:
        _, theta, failed = evaluate_subsample(data, r, config.seed, estimator_difference,
                                              stream=HELD_OUT_STREAM)
        if failed:
            notes.append(f"held-out subsample redrawn {failed} times")
        rows_used = r
    else:
        theta, rows_used = theta_full, n

    scale = _scale_factor(config.scaling, n, rows_used)
    T = wald_statistic(theta, cov.matrix, scale)
    crit = critical_value(p, config.level)
    pval = p_value(T, p)
    return TestResult(
        statistic=T,
        df=p,
        p_value=pval,
        reject=bool(T > crit),
        critical_value=crit,
        theta=np.asarray(theta),
        theta_full=np.asarray(theta_full),
        cov=cov,
        config=config,
        n=n,
        K=K,
        scale=scale,
        warnings=tuple(notes),
        runtime_s=time.perf_counter() - started,
    )
