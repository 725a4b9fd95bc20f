"""Delete-d jackknife covariance estimation.

Both estimators work on any ``data`` that supports row subsetting (a
:class:`~ivstrength.model.Dataset` or a NumPy array) and any statistic mapping
such data to a vector. For a subset ``s`` of size ``r = n - d`` the
statistic is ``theta_s``; the estimators are

    (n r / (d N)) * sum_s (theta_s - mean)(theta_s - mean)'

over all ``N = C(n, d)`` subsets (exhaustive) or over ``m`` sampled ones.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from ._seeding import counter_rng
from .errors import ConfigurationError, DegenerateSubsampleError, RankDeficientError, SingularGramError
from .model import Dataset

#: Exhaustive enumeration is refused above this many subsets.
MAX_EXHAUSTIVE = 10**6
#: Redraws allowed for one slot before giving up.
MAX_RETRIES = 50
#: Largest tolerated fraction of degenerate draws.
MAX_FAILED_FRACTION = 0.05
#: Default upper bound on the number of sampled subsets.
DEFAULT_M_CAP = 20000

WORKERS_ENV = "IVSTRENGTH_WORKERS"

# Raised by a statistic when a subsample cannot be evaluated.
DEGENERATE = (SingularGramError, RankDeficientError)

Statistic = Callable[[object], np.ndarray]


class SubsampleMode(str, Enum):
    EXHAUSTIVE = "exhaustive"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class SubsamplePlan:
    n: int
    d: int
    m: int
    seed: int | None
    mode: SubsampleMode

    def __post_init__(self):
        if not 1 <= self.d <= self.n - 1:
            raise ConfigurationError(f"need 1 <= d <= n - 1, got n={self.n}, d={self.d}")
        mode = SubsampleMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode is SubsampleMode.SAMPLED and self.m < 2:
            raise ConfigurationError(f"sampled mode needs m >= 2, got {self.m}")
        if mode is SubsampleMode.EXHAUSTIVE and self.m != math.comb(self.n, self.d):
            raise ConfigurationError(
                f"exhaustive mode needs m = C({self.n}, {self.d}) = {math.comb(self.n, self.d)}"
            )

    @property
    def r(self) -> int:
        return self.n - self.d


@dataclass(frozen=True)
class CovEstimate:
    matrix: np.ndarray
    plan: SubsamplePlan
    n_failed: int = 0
    m_capped: bool = False


def choose_d(n: int, lam: float) -> int:
    """Number of deleted rows, ``round(lam * n)`` kept inside ``[1, n - 1]``."""
    if not 0 < lam < 1:
        raise ConfigurationError(f"lambda must lie in (0, 1), got {lam}")
    return min(max(int(round(lam * n)), 1), n - 1)


def default_m(n: int, cap: int | None = DEFAULT_M_CAP) -> tuple[int, bool]:
    """``ceil(n ** 1.5)`` subsets, capped; returns ``(m, was_capped)``."""
    m = math.ceil(n**1.5)
    if cap is not None and m > cap:
        return int(cap), True
    return m, False


def _n_rows(data) -> int:
    if isinstance(data, Dataset):
        return data.n
    return np.shape(data)[0]


def _evaluate(statistic: Statistic, data, rows: np.ndarray) -> np.ndarray:
    fast = getattr(statistic, "on_rows", None)
    if fast is not None and isinstance(data, Dataset):
        value = fast(data, rows)
    elif isinstance(data, Dataset):
        value = statistic(data.take(rows))
    else:
        value = statistic(np.asarray(data)[rows])
    return np.atleast_1d(np.asarray(value, dtype=np.float64))


def _slot_rows(n: int, r: int, seed: int, stream: int, slot: int, attempt: int = 0) -> np.ndarray:
    rng = counter_rng(seed, stream, slot, attempt)
    return np.sort(rng.choice(n, size=r, replace=False))


def draw_subsample_indices(n: int, r: int, count: int, seed: int, *, stream: int = 0) -> np.ndarray:
    """``count`` independent uniform r-subsets of ``range(n)``, one per row, sorted.

    Row ``j`` depends only on ``(seed, stream, j)``.
    """
    if not 0 < r < n:
        raise ConfigurationError(f"need 0 < r < n, got n={n}, r={r}")
    if count < 1:
        raise ConfigurationError(f"count must be positive, got {count}")
    return np.stack([_slot_rows(n, r, seed, stream, j) for j in range(count)])


def evaluate_subsample(data, r: int, seed: int, statistic: Statistic, *, stream: int, slot: int = 0):
    """Evaluate ``statistic`` on the subset at ``(seed, stream, slot)``, redrawing on failure.

    Returns ``(rows, value, n_failed)``.
    """
    n = _n_rows(data)
    for attempt in range(MAX_RETRIES + 1):
        rows = _slot_rows(n, r, seed, stream, slot, attempt)
        try:
            return rows, _evaluate(statistic, data, rows), attempt
        except DEGENERATE:
            continue
    raise DegenerateSubsampleError(
        f"subsample slot {slot} stayed degenerate after {MAX_RETRIES} redraws (n={n}, r={r})"
    )


def jackknife_covariance(thetas: np.ndarray, n: int, d: int) -> np.ndarray:
    """``(n r / (d m)) * sum (theta_s - mean)(theta_s - mean)'`` for stacked ``thetas``."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    m = thetas.shape[0]
    r = n - d
    dev = thetas - thetas.mean(axis=0)
    cov = (n * r / (d * m)) * (dev.T @ dev)
    return 0.5 * (cov + cov.T)


def _workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _map_ordered(fn, items, workers: int) -> list:
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def delete_d_jackknife_full(data, d: int, statistic: Statistic, *, workers: int | None = None) -> CovEstimate:
    """Exhaustive delete-d jackknife over every subset of size ``n - d``.

    Subsets are visited in lexicographic order of their sorted indices.
    """
    n = _n_rows(data)
    N = math.comb(n, d) if 1 <= d <= n - 1 else 0
    plan = SubsamplePlan(n=n, d=d, m=N, seed=None, mode=SubsampleMode.EXHAUSTIVE)
    if N > MAX_EXHAUSTIVE:
        raise ConfigurationError(
            f"C({n}, {d}) = {N} subsets exceeds the exhaustive limit {MAX_EXHAUSTIVE}; use jsve"
        )
    subsets = [np.array(c) for c in itertools.combinations(range(n), n - d)]

    def one(rows):
        try:
            return _evaluate(statistic, data, rows)
        except DEGENERATE as exc:
            raise DegenerateSubsampleError(
                f"statistic failed on subset {rows.tolist()}; exhaustive mode cannot redraw"
            ) from exc

    thetas = np.stack(_map_ordered(one, subsets, _workers(workers)))
    return CovEstimate(matrix=jackknife_covariance(thetas, n, d), plan=plan)


def jsve(
    data,
    d: int,
    m: int,
    seed: int,
    statistic: Statistic,
    *,
    mode: SubsampleMode | str = SubsampleMode.SAMPLED,
    indices: np.ndarray | None = None,
    stream: int = 0,
    workers: int | None = None,
    m_capped: bool = False,
) -> CovEstimate:
    """Jackknife-sampling covariance estimate over ``m`` subsets of size ``n - d``.

    Subsets are i.i.d. uniform draws (collisions are allowed). Slot ``j`` is
    drawn from a counter-based generator keyed by ``(seed, stream, j)``, so
    the estimate is identical for any worker count. A slot whose statistic
    fails is redrawn and counted in ``n_failed``; more than 5% failures raise
    :class:`DegenerateSubsampleError`.

    ``indices`` (an ``m x r`` array) replaces the sampler; failures then
    raise immediately. ``mode="exhaustive"`` with ``m = C(n, d)`` reproduces
    :func:`delete_d_jackknife_full`.
    """
    n = _n_rows(data)
    mode = SubsampleMode(mode)
    if mode is SubsampleMode.EXHAUSTIVE:
        est = delete_d_jackknife_full(data, d, statistic, workers=workers)
        if m != est.plan.m:
            raise ConfigurationError(f"exhaustive mode needs m = C({n}, {d}) = {est.plan.m}, got {m}")
        return est
    plan = SubsamplePlan(n=n, d=d, m=m, seed=seed, mode=mode)
    r = plan.r
    workers = _workers(workers)

    if indices is not None:
        indices = np.asarray(indices)
        if indices.shape != (m, r):
            raise ConfigurationError(f"indices must have shape ({m}, {r}), got {indices.shape}")
        thetas = np.stack(_map_ordered(lambda rows: _evaluate(statistic, data, rows), list(indices), workers))
        return CovEstimate(matrix=jackknife_covariance(thetas, n, d), plan=plan, m_capped=m_capped)

    def one(slot):
        _, value, failed = evaluate_subsample(data, r, seed, statistic, stream=stream, slot=slot)
        return value, failed

    out = _map_ordered(one, range(m), workers)
    n_failed = sum(f for _, f in out)
    if n_failed > MAX_FAILED_FRACTION * m:
        raise DegenerateSubsampleError(
            f"{n_failed} of {m} subsample draws were degenerate (limit {MAX_FAILED_FRACTION:.0%}); "
            f"r={r} is probably too close to the number of instruments"
        )
    thetas = np.stack([v for v, _ in out])
    return CovEstimate(
        matrix=jackknife_covariance(thetas, n, d), plan=plan, n_failed=n_failed, m_capped=m_capped
    )
