"""End-to-end detection on one count tensor: fit, calibrate, monitor, localize."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import default_basis_set
from .localize import HotspotReport, localize
from .model import ModelFit, ProblemData
from .monitor import (
    CusumChart,
    H0Moments,
    bootstrap_generator,
    calibrate_limit,
    estimate_h0_moments,
    p_plus,
    run_chart,
    standardized_max,
)
from .solver import FitPath, SolverConfig, default_lambda_grid, fit_path, lambda_max

__all__ = ["MethodConfig", "Detection", "detect", "phase1_statistics"]

log = logging.getLogger(__name__)

FIT_MODES = ("retrospective", "expanding")


@dataclass(frozen=True)
class MethodConfig:
    """Detection settings.

    ``fit_mode='retrospective'`` fits the whole tensor once and scores each
    period's slice; ``'expanding'`` refits on periods ``1..t`` at every
    monitored period ``t`` and scores the newest slice. ``limit`` skips
    calibration when given.
    """

    n_lambda: int = 10
    lambda_ratio: float = 1e-3
    d_star: float = 0.5
    target_arl0: float = 50.0
    calib_reps: int = 1000
    limit: Optional[float] = None
    rule: str = "order"
    rule_param: Optional[float] = None
    pearson: bool = False
    fit_mode: str = "retrospective"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.fit_mode not in FIT_MODES:
            raise ValueError(f"fit_mode must be one of {FIT_MODES}")
        if self.n_lambda < 1 or not 0 < self.lambda_ratio <= 1:
            raise ValueError("n_lambda must be >= 1 and lambda_ratio in (0, 1]")


@dataclass
class Detection:
    grid: np.ndarray
    path: FitPath
    moments: H0Moments
    phase1_p_tilde: list
    limit: float
    chart: CusumChart
    alarm: Optional[int]
    alarm_fit: Optional[ModelFit] = None
    report: Optional[HotspotReport] = None
    paths: dict = field(default_factory=dict)

    @property
    def lam_star(self) -> Optional[float]:
        return None if self.alarm is None else self.chart.history[-1].lam_star


def _window(data: ProblemData, n_periods: int) -> ProblemData:
    y = data.y[:, :, :n_periods]
    pop = data.pop[:, :, :n_periods]
    return ProblemData(y, pop, default_basis_set(y.shape))


def phase1_statistics(path: FitPath, data: ProblemData, phase1: int, pearson: bool = False):
    """In-control moments and standardized statistics over periods ``1..phase1``."""
    pv = {lam: [p_plus(f, data, k, pearson) for k in range(phase1)] for lam, f in path.items()}
    moments = estimate_h0_moments(pv)
    tilde = [standardized_max({lam: v[k] for lam, v in pv.items()}, moments)[0] for k in range(phase1)]
    return moments, tilde


def detect(
    data: ProblemData,
    phase1: int,
    method: MethodConfig = MethodConfig(),
    seed: int = 0,
    location_labels: Optional[Sequence[str]] = None,
    category_labels: Optional[Sequence[str]] = None,
) -> Detection:
    """Run the chart over periods ``phase1 + 1 .. n3`` treating the first ``phase1`` as in control."""
    n3 = data.dims[2]
    if not 1 <= phase1 < n3:
        raise ValueError(f"phase-I length must lie in [1, {n3}), got {phase1}")
    cfg = method.solver
    grid = default_lambda_grid(lambda_max(data, cfg), method.n_lambda, method.lambda_ratio)

    if method.fit_mode == "retrospective":
        path = fit_path(data, grid, cfg)
        moments, tilde = phase1_statistics(path, data, phase1, method.pearson)
        paths = {}

        def path_at(k):
            return path

    else:
        path = fit_path(_window(data, phase1), grid, cfg)
        moments, tilde = phase1_statistics(path, data, phase1, method.pearson)
        paths = {}

        def path_at(k):
            if k not in paths:
                paths[k] = fit_path(_window(data, k + 1), grid, cfg)
            return paths[k]

    if method.limit is not None:
        limit = float(method.limit)
    else:
        limit = calibrate_limit(
            bootstrap_generator(tilde), method.d_star, method.target_arl0, method.calib_reps, seed
        )
    chart = CusumChart(moments, method.d_star, limit)
    alarm = run_chart(data, path_at, chart, range(phase1, n3), method.pearson)
    det = Detection(grid, path, moments, tilde, limit, chart, alarm, paths=paths)
    if alarm is not None and det.lam_star is not None:
        scored = path_at(alarm - 1)
        det.alarm_fit = dict(scored.items())[det.lam_star]
        det.report = localize(
            det.alarm_fit, alarm, method.rule, method.rule_param, location_labels, category_labels
        )
    return det
