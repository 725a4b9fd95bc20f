"""Monte Carlo experiments: JSVE accuracy, empirical size, empirical power.

Grid points follow the local-to-zero design. The instrument ratio ``K/n`` is
given as a fraction of ``1 - lambda`` (1/3, 1/2, 2/3), so the held-out
subsample sees roughly ``K/r`` equal to that fraction.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from ._seeding import derive_seed, stable_hash
from .errors import IVStrengthError
from .model import DGPParams, ErrorFamily, dgp_generate, estimator_difference
from .procedure import Scaling, TestConfig, critical_value, run_spec_test
from .resampling import DEFAULT_M_CAP, _workers, choose_d, default_m, jsve
from .theory import corollary1_variance

PAPER_SETTINGS = {"reps": 1000, "m": "ceil(n^1.5)", "m_cap": None, "lam": 0.45}
RATIO_FRACTIONS = (Fraction(1, 3), Fraction(1, 2), Fraction(2, 3))
MAX_REP_REDRAWS = 20


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x)).limit_denominator(100)


@dataclass(frozen=True)
class GridPoint:
    p: int
    K: int
    ratio: Fraction  # K/n as a multiple of (1 - lambda)
    rho: float
    error_family: ErrorFamily
    c_n: float
    lam: float

    @property
    def n(self) -> int:
        return round(self.K / (float(self.ratio) * (1 - self.lam)))

    @property
    def d(self) -> int:
        return choose_d(self.n, self.lam)

    @property
    def r(self) -> int:
        return self.n - self.d

    def key(self) -> str:
        return f"p={self.p};K={self.K};ratio={self.ratio};rho={self.rho!r};err={self.error_family.value};c={self.c_n!r};lam={self.lam!r}"

    def label(self) -> dict:
        return {"p": self.p, "K": self.K, "ratio": f"{self.ratio}(1-lambda)", "rho": self.rho,
                "errors": self.error_family.value, "c_n": self.c_n, "n": self.n, "r": self.r}

    def params(self) -> DGPParams:
        return DGPParams.paper(self.p, self.rho, self.c_n, self.error_family)


@dataclass(frozen=True)
class SimConfig:
    p_values: tuple[int, ...] = (1,)
    K_values: tuple[int, ...] = (50,)
    ratios: tuple = RATIO_FRACTIONS
    rhos: tuple[float, ...] = (0.9,)
    error_families: tuple[ErrorFamily, ...] = (ErrorFamily.GAUSSIAN,)
    c_n: float | None = None
    reps: int = 500
    lam: float = 0.45
    m: int | str = "auto"
    m_cap: int | None = DEFAULT_M_CAP
    levels: tuple[float, ...] = (0.05, 0.10)
    seed: int = 0
    scaling: Scaling = Scaling.SAMPLE_SIZE
    workers: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(_as_fraction(x) for x in self.ratios))
        object.__setattr__(self, "error_families", tuple(ErrorFamily(e) for e in self.error_families))
        object.__setattr__(self, "scaling", Scaling(self.scaling))
        if self.reps < 1:
            raise IVStrengthError("reps must be positive")

    def grid(self, c_n: float) -> list[GridPoint]:
        return [
            GridPoint(p, K, ratio, rho, fam, c_n, self.lam)
            for rho, p, fam, ratio, K in itertools.product(
                self.rhos, self.p_values, self.error_families, self.ratios, self.K_values
            )
        ]

    def m_for(self, n: int) -> tuple[int, bool]:
        if self.m == "auto":
            return default_m(n, self.m_cap)
        return int(self.m), False

    def to_dict(self) -> dict:
        return {
            "p_values": list(self.p_values), "K_values": list(self.K_values),
            "ratios": [str(r) for r in self.ratios], "rhos": list(self.rhos),
            "error_families": [e.value for e in self.error_families], "c_n": self.c_n,
            "reps": self.reps, "lambda": self.lam, "m": self.m, "m_cap": self.m_cap,
            "levels": list(self.levels), "seed": self.seed, "scaling": self.scaling.value,
        }


@dataclass
class PointResult:
    point: GridPoint
    m: int
    reps_completed: int = 0
    rejection_rates: dict[float, float] = field(default_factory=dict)
    standard_errors: dict[float, float] = field(default_factory=dict)
    jsve: dict[str, float] = field(default_factory=dict)
    n_redrawn: int = 0
    m_capped: bool = False
    skipped: str | None = None
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        out = {"point": self.point.label(), "m": self.m, "m_capped": self.m_capped,
               "reps_completed": self.reps_completed, "n_redrawn": self.n_redrawn, "skipped": self.skipped}
        if self.rejection_rates:
            out["rejection_rates"] = {f"{lv:g}": v for lv, v in self.rejection_rates.items()}
            out["standard_errors"] = {f"{lv:g}": v for lv, v in self.standard_errors.items()}
        if self.jsve:
            out["jsve"] = dict(self.jsve)
        return out


@dataclass
class SimResult:
    kind: str  # "jsve", "size" or "power"
    config: SimConfig
    c_n: float
    points: list[PointResult]
    metadata: dict = field(default_factory=dict)

    def point(self, **match) -> PointResult:
        for pr in self.points:
            if all(getattr(pr.point, k) == v for k, v in match.items()):
                return pr
        raise KeyError(match)


def rate_standard_error(rate: float, reps: int) -> float:
    return math.sqrt(rate * (1 - rate) / reps)


def _deviations(config: SimConfig) -> dict:
    dev = {}
    if config.reps != PAPER_SETTINGS["reps"]:
        dev["reps"] = {"paper": PAPER_SETTINGS["reps"], "used": config.reps}
    if config.m != "auto" or config.m_cap is not None:
        dev["m"] = {"paper": PAPER_SETTINGS["m"], "used": config.m, "cap": config.m_cap}
    if config.lam != PAPER_SETTINGS["lam"]:
        dev["lambda"] = {"paper": PAPER_SETTINGS["lam"], "used": config.lam}
    return dev


def _rep_statistic(point: GridPoint, m: int, scaling: Scaling, master_seed: int, rep: int):
    """Test statistic of one replication, redrawing the dataset if the run fails."""
    params = point.params()
    base = derive_seed(master_seed, stable_hash(point.key()), rep)
    for attempt in range(MAX_REP_REDRAWS + 1):
        seed = derive_seed(base, attempt)
        data, _ = dgp_generate(params, point.n, point.K, seed)
        cfg = TestConfig(lam=point.lam, m=m, seed=derive_seed(seed, 1), scaling=scaling, m_cap=None, workers=1)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return run_spec_test(data, cfg).statistic, attempt
        except IVStrengthError:
            continue
    raise IVStrengthError(f"replication {rep} at {point.key()} failed {MAX_REP_REDRAWS + 1} times")


def _rep_jsve(point: GridPoint, m: int, master_seed: int, rep: int, statistic):
    params = point.params()
    base = derive_seed(master_seed, stable_hash(point.key()), rep)
    for attempt in range(MAX_REP_REDRAWS + 1):
        seed = derive_seed(base, attempt)
        data, _ = dgp_generate(params, point.n, point.K, seed)
        try:
            est = jsve(data, point.d, m, derive_seed(seed, 1), statistic, workers=1)
            return float(est.matrix[0, 0]), attempt
        except IVStrengthError:
            continue
    raise IVStrengthError(f"replication {rep} at {point.key()} failed {MAX_REP_REDRAWS + 1} times")


def _run_reps(fn, args_list, workers: int) -> list:
    if workers == 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args_list)))


def _validate_point(point: GridPoint) -> str | None:
    if point.r <= point.K:
        return f"r = {point.r} does not exceed K = {point.K}"
    if not point.n > point.K > point.p:
        return f"need n > K > p (n={point.n}, K={point.K}, p={point.p})"
    return None


def _run_rejection(kind: str, config: SimConfig, c_n: float) -> SimResult:
    workers = _workers(config.workers)
    results = []
    for point in config.grid(c_n):
        m, capped = config.m_for(point.n)
        pr = PointResult(point=point, m=m, m_capped=capped)
        pr.skipped = _validate_point(point)
        if pr.skipped:
            results.append(pr)
            continue
        started = time.perf_counter()
        out = _run_reps(_rep_statistic, [(point, m, config.scaling, config.seed, rep)
                                         for rep in range(config.reps)], workers)
        stats = np.array([t for t, _ in out])
        pr.n_redrawn = int(sum(a for _, a in out))
        pr.reps_completed = len(stats)
        for level in config.levels:
            rate = float(np.count_nonzero(stats > critical_value(point.p, level))) / len(stats)
            pr.rejection_rates[level] = rate
            pr.standard_errors[level] = rate_standard_error(rate, len(stats))
        pr.wall_time_s = time.perf_counter() - started
        results.append(pr)
    return SimResult(kind=kind, config=config, c_n=c_n, points=results,
                     metadata={"deviations_from_paper": _deviations(config)})


def run_size_experiment(config: SimConfig) -> SimResult:
    """Rejection rates under the null design (``c_n = 0.1`` unless set)."""
    return _run_rejection("size", config, 0.1 if config.c_n is None else config.c_n)


def run_power_experiment(config: SimConfig) -> SimResult:
    """Rejection rates under the strong-instrument design (``c_n = 1`` unless set)."""
    return _run_rejection("power", config, 1.0 if config.c_n is None else config.c_n)


def run_jsve_bias_experiment(config: SimConfig, truth: float | None = None,
                             statistic=estimator_difference) -> SimResult:
    """Accuracy of the jackknife-sampling variance estimate for one endogenous regressor.

    For every grid point two frames are reported:

    * full-sample frame: ``est`` against ``truth`` (default: closed-form
      null variance at ``alpha = K/n``);
    * subsample frame: ``(r/n) * est`` against the closed form at
      ``alpha = K/r``, i.e. the variance of the statistic on the held-out
      subsample the test actually uses.

    Each frame records signed bias, mean absolute error and RMSE.
    """
    if any(p != 1 for p in config.p_values):
        raise IVStrengthError("the closed-form truth exists only for p = 1; use mc_covariance_oracle for p > 1")
    c_n = 0.1 if config.c_n is None else config.c_n
    workers = _workers(config.workers)
    results = []
    for point in config.grid(c_n):
        m, capped = config.m_for(point.n)
        pr = PointResult(point=point, m=m, m_capped=capped)
        pr.skipped = _validate_point(point)
        if pr.skipped:
            results.append(pr)
            continue
        started = time.perf_counter()
        out = _run_reps(_rep_jsve, [(point, m, config.seed, rep, statistic) for rep in range(config.reps)], workers)
        est = np.array([v for v, _ in out])
        pr.n_redrawn = int(sum(a for _, a in out))
        pr.reps_completed = len(est)
        S = point.params().Sigma
        n, r, K = point.n, point.r, point.K
        full_truth = corollary1_variance(S[0, 0], S[1, 0], S[1, 1], K / n) if truth is None else float(truth)
        sub_truth = corollary1_variance(S[0, 0], S[1, 0], S[1, 1], K / r)
        err_full = est - full_truth
        err_sub = est * (r / n) - sub_truth
        pr.jsve = {
            "mean_estimate": float(est.mean()),
            "truth": full_truth,
            "bias": float(err_full.mean()),
            "mae": float(np.abs(err_full).mean()),
            "rmse": float(np.sqrt(np.mean(err_full**2))),
            "subsample_truth": sub_truth,
            "subsample_bias": float(err_sub.mean()),
            "subsample_mae": float(np.abs(err_sub).mean()),
            "subsample_rmse": float(np.sqrt(np.mean(err_sub**2))),
        }
        pr.wall_time_s = time.perf_counter() - started
        results.append(pr)
    return SimResult(kind="jsve", config=config, c_n=c_n, points=results,
                     metadata={"deviations_from_paper": _deviations(config)})


def with_levels(config: SimConfig, *levels: float) -> SimConfig:
    return replace(config, levels=tuple(levels))
