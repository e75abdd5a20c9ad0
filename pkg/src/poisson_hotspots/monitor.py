"""One-sided CUSUM monitoring of the fitted hot-spot direction.

At each period the count residual (observed minus fitted background) is
projected onto the positive part of the estimated hot-spot slice. The
projection is standardized with in-control moments for every penalty on the
grid, the largest standardized value feeds a CUSUM recursion, and an alarm is
raised once the CUSUM exceeds the control limit.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .model import ModelFit, ProblemData
from .solver import FitPath
from .tensor import frontal_slice

__all__ = [
    "H0Moments",
    "ChartRecord",
    "CusumChart",
    "CalibrationError",
    "residual",
    "p_plus",
    "p_plus_path",
    "estimate_h0_moments",
    "standardized_max",
    "p_tilde",
    "cusum_update",
    "normal_generator",
    "bootstrap_generator",
    "run_lengths",
    "average_run_length",
    "calibrate_limit",
    "run_chart",
    "write_history_csv",
]

log = logging.getLogger(__name__)

MIN_PHASE1 = 5


def residual(fit: ModelFit, data: ProblemData, k: int, pearson: bool = False) -> np.ndarray:
    """Observed minus fitted background counts in period ``k``, flattened row-major.

    The background is ``pop * exp(u_hat)`` (hot-spot term off). With
    ``pearson`` the residual is divided by the square root of that mean.
    """
    obs = frontal_slice(data.y, k).reshape(-1)
    mean = frontal_slice(fit.background_counts, k).reshape(-1)
    r = obs - mean
    if pearson:
        r = r / np.sqrt(mean)
    return r


def p_plus(fit: ModelFit, data: ProblemData, k: int, pearson: bool = False) -> float:
    """Projection of the period-``k`` residual onto the unit positive hot-spot direction.

    Returns 0 when the estimated hot-spot slice has no positive entry.
    """
    h = np.maximum(frontal_slice(fit.h_hat, k).reshape(-1), 0.0)
    norm = math.sqrt(float(h @ h))
    if norm == 0.0:
        return 0.0
    return float(h @ residual(fit, data, k, pearson)) / norm


def p_plus_path(path: FitPath, data: ProblemData, k: int, pearson: bool = False) -> dict:
    """``{lambda: P+}`` for every successful fit on the path."""
    return {lam: p_plus(f, data, k, pearson) for lam, f in path.items()}


@dataclass(frozen=True)
class H0Moments:
    """In-control mean and variance of P+ per penalty.

    Penalties whose phase-I variance was zero are listed in ``dropped`` and
    carry no moments.
    """

    mean: dict
    var: dict
    n_points: int
    dropped: tuple = ()

    @property
    def lambdas(self) -> tuple:
        return tuple(sorted(self.mean, reverse=True))


def estimate_h0_moments(p_values: Mapping[float, Sequence[float]]) -> H0Moments:
    """Sample mean and unbiased variance of phase-I P+ values for each penalty.

    ``p_values`` maps each penalty to its P+ series over the phase-I periods.
    """
    mean, var, dropped = {}, {}, []
    counts = {len(v) for v in p_values.values()}
    if not counts:
        raise ValueError("no phase-I values supplied")
    n_points = min(counts)
    if n_points < MIN_PHASE1:
        raise ValueError(f"need at least {MIN_PHASE1} phase-I periods, got {n_points}")
    for lam, vals in p_values.items():
        vals = np.asarray(vals, dtype=float)
        v = float(np.var(vals, ddof=1))
        if not v > 0:
            log.info("dropping lambda=%g: zero phase-I variance", lam)
            dropped.append(float(lam))
            continue
        mean[float(lam)] = float(np.mean(vals))
        var[float(lam)] = v
    return H0Moments(mean, var, n_points, tuple(dropped))


def standardized_max(p_values: Mapping[float, float], moments: H0Moments) -> tuple:
    """Largest standardized P+ over penalties with moments, and its penalty.

    Ties go to the larger penalty.
    """
    best_val, best_lam = -math.inf, None
    for lam in moments.lambdas:
        if lam not in p_values:
            continue
        z = (p_values[lam] - moments.mean[lam]) / math.sqrt(moments.var[lam])
        if z > best_val:
            best_val, best_lam = z, lam
    if best_lam is None:
        raise ValueError("no penalty on the grid has in-control moments")
    return best_val, best_lam


def p_tilde(path: FitPath, data: ProblemData, k: int, moments: H0Moments, pearson: bool = False) -> tuple:
    return standardized_max(p_plus_path(path, data, k, pearson), moments)


def cusum_update(w_prev: float, p_tilde_value: float, d_star: float) -> float:
    if w_prev < 0:
        raise ValueError("CUSUM statistic cannot be negative")
    return max(0.0, w_prev + p_tilde_value - d_star)


@dataclass(frozen=True)
class ChartRecord:
    t: int
    lam_star: Optional[float]
    p_plus: float
    p_tilde: float
    w: float
    alarm: bool
    flagged: bool = False


@dataclass
class CusumChart:
    """CUSUM state: allowance, control limit, current statistic and its history.

    Periods ``t`` are 1-based counts of observed periods.
    """

    moments: Optional[H0Moments] = None
    d_star: float = 0.5
    limit: float = math.inf
    w: float = 0.0
    history: list = field(default_factory=list)

    def update(self, t: int, p_tilde_value: float, lam_star=None, p_plus_value: float = float("nan"), flagged=False) -> bool:
        if self.history and t <= self.history[-1].t:
            raise ValueError(f"period {t} does not follow {self.history[-1].t}")
        self.w = cusum_update(self.w, p_tilde_value, self.d_star)
        alarm = self.w > self.limit
        self.history.append(ChartRecord(t, lam_star, p_plus_value, p_tilde_value, self.w, alarm, flagged))
        return alarm

    @property
    def alarm_time(self) -> Optional[int]:
        for rec in self.history:
            if rec.alarm:
                return rec.t
        return None

    def reset(self) -> None:
        self.w = 0.0
        self.history.clear()


# in-control generators: (rng, n_runs, length) -> array of shape (n_runs, length)
Generator = Callable[[np.random.Generator, int, int], np.ndarray]


def normal_generator(mean: float = 0.0, sd: float = 1.0) -> Generator:
    def gen(rng, n_runs, length):
        return rng.normal(mean, sd, size=(n_runs, length))

    return gen


def bootstrap_generator(values: Sequence[float]) -> Generator:
    """Resample in-control statistics with replacement."""
    pool = np.asarray(values, dtype=float)
    if pool.size == 0:
        raise ValueError("empty bootstrap pool")

    def gen(rng, n_runs, length):
        return rng.choice(pool, size=(n_runs, length), replace=True)

    return gen


def run_lengths(stats: np.ndarray, d_star: float, limit: float) -> np.ndarray:
    """First 1-based index at which each row's CUSUM exceeds ``limit``.

    Rows that never alarm get the row length (censored).
    """
    stats = np.atleast_2d(np.asarray(stats, dtype=float))
    n_runs, length = stats.shape
    w = np.zeros(n_runs)
    out = np.full(n_runs, length, dtype=float)
    alive = np.ones(n_runs, dtype=bool)
    for t in range(length):
        w = np.maximum(0.0, w + stats[:, t] - d_star)
        hit = alive & (w > limit)
        out[hit] = t + 1
        alive &= ~hit
        if not alive.any():
            break
    return out


def average_run_length(generator: Generator, d_star: float, limit: float, reps: int, seed: int, max_len: int = 2000) -> float:
    rng = np.random.default_rng(seed)
    return float(np.mean(run_lengths(generator(rng, reps, max_len), d_star, limit)))


class CalibrationError(RuntimeError):
    pass


def calibrate_limit(
    generator: Generator,
    d_star: float = 0.5,
    target_arl0: float = 50.0,
    reps: int = 1000,
    seed: int = 0,
    bounds: tuple = (0.0, 50.0),
    rel_tol: float = 0.05,
    max_len: Optional[int] = None,
    strict: bool = False,
) -> float:
    """Control limit whose Monte-Carlo in-control ARL matches ``target_arl0``.

    Bisection over ``bounds`` with common random numbers, so the estimated ARL
    is monotone in the limit. Iterates until the bracket collapses and then
    returns the limit whose ARL is closest to target. Resampling a small pool
    makes the ARL a coarse step function of the limit; if the closest ARL
    misses by more than ``rel_tol`` a warning is logged, or with ``strict``
    the call raises.
    """
    if target_arl0 <= 1:
        raise ValueError("target ARL must exceed 1")
    if reps < 1000:
        raise ValueError("need at least 1000 replications")
    if max_len is None:
        max_len = int(max(1000, 40 * target_arl0))
    stats = generator(np.random.default_rng(seed), reps, max_len)

    def arl(limit):
        return float(np.mean(run_lengths(stats, d_star, limit)))

    lo, hi = bounds
    arl_lo, arl_hi = arl(lo), arl(hi)
    if not arl_lo <= target_arl0 <= arl_hi:
        raise CalibrationError(
            f"target ARL {target_arl0} not bracketed: ARL({lo})={arl_lo:.3f}, ARL({hi})={arl_hi:.3f}"
        )
    best = min(((abs(arl_lo - target_arl0), lo), (abs(arl_hi - target_arl0), hi)))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        a = arl(mid)
        best = min(best, (abs(a - target_arl0), mid))
        if a < target_arl0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    err, limit = best
    if err > rel_tol * target_arl0:
        msg = f"closest ARL is {err:.3f} away from target {target_arl0}"
        if strict:
            raise CalibrationError(msg)
        log.warning("%s; using limit %.6g", msg, limit)
    return float(limit)


def run_chart(
    data: ProblemData,
    path_at: Callable[[int], FitPath],
    chart: CusumChart,
    periods: Iterable[int],
    pearson: bool = False,
) -> Optional[int]:
    """Feed 0-based ``periods`` through the chart until the first alarm.

    ``path_at(k)`` returns the penalty path whose slice ``k`` is scored; it may
    return a fixed retrospective path or refit on the data seen so far. A
    period whose fit fails contributes a zero statistic and is flagged.
    Returns the alarm as a 1-based period, or ``None``.
    """
    if chart.moments is None:
        raise ValueError("chart has no in-control moments")
    for k in periods:
        try:
            path = path_at(k)
            pvals = p_plus_path(path, data, k, pearson)
            val, lam = standardized_max(pvals, chart.moments)
            pp, flagged = pvals[lam], False
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
            log.warning("period %d: fit failed (%s); contributing zero", k + 1, err)
            val, lam, pp, flagged = 0.0, None, float("nan"), True
        if chart.update(k + 1, val, lam, pp, flagged):
            return k + 1
    return None


def write_history_csv(chart: CusumChart, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "lambda_star", "p_plus", "p_tilde", "w", "alarm"])
        for rec in chart.history:
            w.writerow([
                rec.t,
                "" if rec.lam_star is None else repr(rec.lam_star),
                repr(rec.p_plus),
                repr(rec.p_tilde),
                repr(rec.w),
                int(rec.alarm),
            ])
