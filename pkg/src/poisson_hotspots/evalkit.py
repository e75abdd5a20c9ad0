"""Replicated simulation runs and the detection, localization and fit metrics."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import default_basis_set
from .model import ProblemData
from .pipeline import MethodConfig, detect
from .simgen import PhiTable, ScenarioConfig, derive_rng, generate_counts

__all__ = [
    "RunResult",
    "AggregateRow",
    "AggregateTable",
    "precision_recall_f",
    "arl1",
    "smse",
    "run_replication",
    "run_experiment",
    "write_records",
]

log = logging.getLogger(__name__)

METRICS = ("precision", "recall", "f_measure", "arl1", "smse")


def precision_recall_f(detected, truth) -> tuple:
    detected, truth = set(detected), set(truth)
    hit = len(detected & truth)
    p = hit / len(detected) if detected else 0.0
    r = hit / len(truth) if truth else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _mean_sd(values) -> tuple:
    vals = [float(v) for v in values]
    if not vals:
        return math.nan, math.nan
    m = math.fsum(vals) / len(vals)
    if len(vals) == 1:
        return m, 0.0
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def detection_delay(alarm: Optional[int], tau: int, n3: int) -> int:
    """Periods from the change to the alarm; a run without alarm counts ``n3 - tau``."""
    if alarm is None:
        return n3 - tau
    if not tau < alarm <= n3:
        raise ValueError(f"alarm {alarm} outside ({tau}, {n3}]")
    return alarm - tau


def arl1(alarm_times: Sequence[Optional[int]], tau: int, n3: int) -> tuple:
    """Mean and sample sd of detection delays (sd is 0 for a single run)."""
    return _mean_sd(detection_delay(a, tau, n3) for a in alarm_times)


def smse(fitted, truth) -> float:
    """Root mean squared difference between two count-scale tensors."""
    a = np.asarray(fitted, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return math.sqrt(math.fsum(((a - b) ** 2).ravel()) / a.size)


@dataclass(frozen=True)
class RunResult:
    """Outcome of one replication. ``alarm`` is a 1-based period."""

    index: int
    alarm: Optional[int]
    detected: frozenset
    truth: frozenset
    smse: float
    limit: float
    history: tuple = ()
    lam_star: Optional[float] = None

    def metrics(self, tau: int, n3: int) -> dict:
        p, r, f = precision_recall_f(self.detected, self.truth)
        return {
            "precision": p,
            "recall": r,
            "f_measure": f,
            "arl1": float(detection_delay(self.alarm, tau, n3)),
            "smse": self.smse,
        }

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "alarm": self.alarm,
            "lambda_star": self.lam_star,
            "limit": self.limit,
            "smse": self.smse,
            "detected": sorted([i, j] for i, j in self.detected),
            "truth": sorted([i, j] for i, j in self.truth),
            "history": [[t, w] for t, w in self.history],
        }


def run_replication(
    config: ScenarioConfig,
    index: int,
    seed: int,
    method: MethodConfig = MethodConfig(),
    phi_table: Optional[PhiTable] = None,
) -> RunResult:
    """Simulate, detect with phase-I ``1..tau`` and score one replication."""
    sc = generate_counts(config, phi_table, derive_rng(seed, "scenario", index))
    data = ProblemData(sc.counts, sc.pop, default_basis_set(sc.counts.shape))
    calib_seed = int(derive_rng(seed, "calibrate", index).integers(2**63))
    det = detect(data, config.tau, method, calib_seed)
    if det.alarm is not None and det.alarm_fit is not None:
        background = det.alarm_fit
        detected = det.report.cell_set
    else:
        # no alarm: score the least-penalized fit
        background = det.path.items()[-1][1]
        detected = frozenset()
    return RunResult(
        index=index,
        alarm=det.alarm,
        detected=detected,
        truth=sc.truth,
        smse=smse(background.background_counts, sc.background_mean),
        limit=det.limit,
        history=tuple((rec.t, rec.w) for rec in det.chart.history),
        lam_star=det.lam_star,
    )


@dataclass(frozen=True)
class AggregateRow:
    scenario: str
    delta: float
    trend: str
    replications: int
    failures: int
    mean: dict
    sd: dict
    alarm_rate: float


@dataclass
class AggregateTable:
    rows: list = field(default_factory=list)
    results: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def header(self) -> list:
        cols = ["scenario", "delta", "trend", "replications", "failures", "alarm_rate"]
        for m in METRICS:
            cols += [f"{m}_mean", f"{m}_sd"]
        return cols

    def as_rows(self) -> list:
        out = []
        for r in self.rows:
            vals = [r.scenario, r.delta, r.trend, r.replications, r.failures, r.alarm_rate]
            for m in METRICS:
                vals += [r.mean[m], r.sd[m]]
            out.append(vals)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for vals in self.as_rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in vals])

    def format(self) -> str:
        lines = []
        for r in self.rows:
            lines.append(
                f"{r.scenario}: delta={r.delta:g} trend={r.trend} "
                f"replications={r.replications} failures={r.failures} alarm_rate={r.alarm_rate:.4f}"
            )
            for m in METRICS:
                lines.append(f"  {m:<10} {r.mean[m]:12.4f} ({r.sd[m]:.4f})")
        return "\n".join(lines) + "\n"


def _aggregate(config: ScenarioConfig, results: list, failures: int) -> AggregateRow:
    n3 = config.dims[2]
    per = [r.metrics(config.tau, n3) for r in results]
    mean, sd = {}, {}
    for m in METRICS:
        mean[m], sd[m] = _mean_sd(p[m] for p in per)
    rate = sum(r.alarm is not None for r in results) / len(results) if results else math.nan
    name = f"{config.population_trend}-delta{config.delta:g}"
    return AggregateRow(name, config.delta, config.population_trend, len(results), failures, mean, sd, rate)


def _replicate(args):
    config, index, seed, method, phi_table = args
    try:
        return run_replication(config, index, seed, method, phi_table), None
    except Exception as err:  # a failed replication is excluded and counted
        log.warning("replication %d failed: %s", index, err)
        return None, f"{index}: {type(err).__name__}: {err}"


def run_experiment(
    config: ScenarioConfig,
    replications: int,
    seed: int,
    method: MethodConfig = MethodConfig(),
    workers: int = 1,
    phi_table: Optional[PhiTable] = None,
) -> AggregateTable:
    """Run ``replications`` independent simulations and aggregate their metrics.

    Replication ``i`` draws from streams derived from ``(seed, label, i)``, so
    results do not depend on ``workers`` or scheduling.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    jobs = [(config, i, seed, method, phi_table) for i in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate, jobs))
    else:
        outcomes = [_replicate(j) for j in jobs]
    results = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    table = AggregateTable([_aggregate(config, results, len(errors))], results, errors)
    return table


def write_records(results: Sequence[RunResult], path) -> None:
    """One JSON object per replication per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")
