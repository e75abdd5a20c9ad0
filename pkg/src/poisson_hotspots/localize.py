"""Turn the hot-spot slice at an alarm period into a ranked list of cells."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ModelFit
from .tensor import frontal_slice

__all__ = [
    "HotspotReport",
    "hotspot_slice",
    "threshold_hard",
    "threshold_soft",
    "threshold_order",
    "localize",
    "write_report_csv",
    "format_report",
    "write_category_grid",
]


def hotspot_slice(fit: ModelFit, k: int) -> np.ndarray:
    return frontal_slice(fit.h_hat, k).copy()


def _cells(values: np.ndarray, keep: np.ndarray) -> list:
    ii, jj = np.nonzero(keep)
    cells = [(int(i), int(j), float(values[i, j])) for i, j in zip(ii, jj)]
    cells.sort(key=lambda c: (-c[2], c[0], c[1]))
    return cells


def threshold_hard(h, cut: float) -> list:
    """Cells with estimate strictly above ``cut``, magnitudes unchanged."""
    if cut < 0:
        raise ValueError("cut must be nonnegative")
    h = np.asarray(h, dtype=float)
    return _cells(h, h > cut)


def threshold_soft(h, cut: float) -> list:
    """Cells surviving ``max(h - cut, 0) > 0``, reported with the shrunken value."""
    if cut < 0:
        raise ValueError("cut must be nonnegative")
    h = np.asarray(h, dtype=float)
    shrunk = np.maximum(h - cut, 0.0)
    return _cells(shrunk, shrunk > 0)


def threshold_order(h, r: Optional[int] = None) -> list:
    """Positive cells at or above the ``r``-th largest positive estimate.

    ``r=None`` or ``r`` beyond the number of positives keeps every positive
    cell. Ties at the cutoff are all kept.
    """
    h = np.asarray(h, dtype=float)
    pos = np.sort(h[h > 0])[::-1]
    if pos.size == 0:
        return []
    if r is None or r >= pos.size:
        return _cells(h, h > 0)
    if r < 1:
        raise ValueError("r must be a positive integer")
    cutoff = pos[r - 1]
    return _cells(h, (h > 0) & (h >= cutoff))


RULES = {"hard": threshold_hard, "soft": threshold_soft, "order": threshold_order}


@dataclass(frozen=True)
class HotspotReport:
    """Cells flagged at alarm period ``t_star`` (1-based), largest first.

    Each cell is ``(location index, category index, magnitude)`` with 0-based
    indices.
    """

    t_star: int
    cells: tuple
    rule: str
    param: Optional[float]
    location_labels: Optional[tuple] = None
    category_labels: Optional[tuple] = None

    @property
    def cell_set(self) -> frozenset:
        return frozenset((i, j) for i, j, _ in self.cells)

    def location_label(self, i: int) -> str:
        return str(i + 1) if self.location_labels is None else str(self.location_labels[i])

    def category_label(self, j: int) -> str:
        return str(j + 1) if self.category_labels is None else str(self.category_labels[j])

    @property
    def rule_name(self) -> str:
        return self.rule if self.param is None else f"{self.rule}:{self.param:g}"


def localize(
    fit: ModelFit,
    t_star: int,
    rule: str = "order",
    param: Optional[float] = None,
    location_labels: Optional[Sequence[str]] = None,
    category_labels: Optional[Sequence[str]] = None,
) -> HotspotReport:
    """Threshold the hot-spot slice at 1-based period ``t_star``.

    ``param`` is the cut for ``hard``/``soft`` and ``r`` for ``order``.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; choose from {sorted(RULES)}")
    h = hotspot_slice(fit, t_star - 1)
    if rule == "order":
        cells = threshold_order(h, None if param is None else int(param))
    else:
        cells = RULES[rule](h, 0.0 if param is None else float(param))
    return HotspotReport(
        t_star,
        tuple(cells),
        rule,
        None if param is None else float(param),
        None if location_labels is None else tuple(location_labels),
        None if category_labels is None else tuple(category_labels),
    )


def write_report_csv(report: HotspotReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "label", "category", "magnitude", "rule"])
        for i, j, mag in report.cells:
            w.writerow([i + 1, report.location_label(i), report.category_label(j), repr(mag), report.rule_name])


def format_report(report: HotspotReport) -> str:
    lines = [f"alarm period: {report.t_star}", f"rule: {report.rule_name}", f"cells: {len(report.cells)}"]
    for i, j, mag in report.cells:
        lines.append(f"  {report.location_label(i):<24} {report.category_label(j):<20} {mag:.6g}")
    return "\n".join(lines) + "\n"


def write_category_grid(h, path, location_labels=None, category_labels=None) -> None:
    """Location-by-category value table, one row per location, for choropleth plotting."""
    h = np.asarray(h, dtype=float)
    n1, n2 = h.shape
    locs = location_labels or [str(i + 1) for i in range(n1)]
    cats = category_labels or [str(j + 1) for j in range(n2)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location", *cats])
        for i in range(n1):
            w.writerow([locs[i], *(repr(float(v)) for v in h[i])])
