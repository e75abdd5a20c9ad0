"""CSV ingestion and emission, flat key=value configuration, run manifests."""
from __future__ import annotations

import contextlib
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import __version__

__all__ = [
    "CountData",
    "ConfigError",
    "CONFIG_SCHEMA",
    "ingest_counts",
    "ingest_population",
    "write_counts_csv",
    "write_population_csv",
    "write_truth_csv",
    "read_truth_csv",
    "parse_config_text",
    "load_config",
    "atomic_output",
    "atomic_write_text",
    "file_digest",
    "RunManifest",
]

log = logging.getLogger(__name__)

MISSING = ("", "NA")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CountData:
    """Dense count tensor (location x category x period) with its axis labels."""

    counts: np.ndarray
    locations: tuple
    categories: tuple
    years: tuple
    imputed: tuple = ()

    @property
    def dims(self) -> tuple:
        return self.counts.shape


def _parse_count(text: str, where: str) -> Optional[int]:
    text = text.strip()
    if text in MISSING:
        return None
    try:
        val = float(text)
    except ValueError:
        raise ValueError(f"{where}: {text!r} is not a count") from None
    if not math.isfinite(val) or val != int(val) or val < 0:
        raise ValueError(f"{where}: {text!r} is not a nonnegative integer")
    return int(val)


def _parse_year(text: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError(f"{where}: year {text!r} is not an integer") from None


def ingest_counts(path) -> CountData:
    """Read a ``location,year,<category>...`` CSV into a dense tensor.

    Locations and categories keep their order of first appearance; years are
    sorted ascending. Missing cells (empty, ``NA`` or an absent
    location-year row) are filled with the rounded mean of the same
    location-category series.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0].lower() != "location" or header[1].lower() != "year":
        raise ValueError(f"{path}: header must be location,year,<category>...")
    categories = tuple(header[2:])
    if len(set(categories)) != len(categories):
        raise ValueError(f"{path}: duplicate category columns")
    locations, seen, cells = [], set(), {}
    years = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        loc = row[0].strip()
        year = _parse_year(row[1], f"{path}:{lineno}")
        if (loc, year) in seen:
            raise ValueError(f"{path}:{lineno}: duplicate row for ({loc}, {year})")
        seen.add((loc, year))
        if loc not in locations:
            locations.append(loc)
        years.add(year)
        cells[(loc, year)] = [_parse_count(c, f"{path}:{lineno}") for c in row[2:]]
    if not cells:
        raise ValueError(f"{path}: no data rows")
    years = sorted(years)
    n1, n2, n3 = len(locations), len(categories), len(years)
    out = np.full((n1, n2, n3), np.nan)
    for (loc, year), vals in cells.items():
        i, k = locations.index(loc), years.index(year)
        out[i, :, k] = [np.nan if v is None else v for v in vals]
    imputed = []
    for i in range(n1):
        for j in range(n2):
            series = out[i, j]
            gaps = np.isnan(series)
            if not gaps.any():
                continue
            if gaps.all():
                raise ValueError(f"{path}: series ({locations[i]}, {categories[j]}) has no observed value")
            fill = float(np.floor(np.mean(series[~gaps]) + 0.5))
            for k in np.nonzero(gaps)[0]:
                imputed.append((locations[i], categories[j], years[k], fill))
                log.info("imputed %s / %s / %d with %g", locations[i], categories[j], years[k], fill)
            series[gaps] = fill
    return CountData(out, tuple(locations), categories, tuple(years), tuple(imputed))


def ingest_population(path, locations: Sequence[str], years: Sequence[int], n_categories: int, units: float = 1.0) -> np.ndarray:
    """Read ``location,year,population`` and broadcast it over categories.

    Values are multiplied by ``units``. Every (location, year) pair of the
    count tensor must be present.
    """
    if units <= 0:
        raise ValueError("units must be positive")
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header[:3] != ["location", "year", "population"] or len(header) != 3:
            raise ValueError(f"{path}: header must be location,year,population")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            key = (row[0].strip(), _parse_year(row[1], f"{path}:{lineno}"))
            if key in table:
                raise ValueError(f"{path}:{lineno}: duplicate row for {key}")
            try:
                val = float(row[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: population {row[2]!r} is not a number") from None
            if not math.isfinite(val) or val <= 0:
                raise ValueError(f"{path}:{lineno}: population must be positive, got {row[2]!r}")
            table[key] = val
    pop = np.empty((len(locations), len(years)))
    for i, loc in enumerate(locations):
        for k, year in enumerate(years):
            if (loc, year) not in table:
                raise ValueError(f"{path}: no population for ({loc}, {year})")
            pop[i, k] = table[(loc, year)] * units
    return np.repeat(pop[:, None, :], n_categories, axis=1)


def _fmt_count(v: float) -> str:
    return str(int(v))


def write_counts_csv(counts, path, locations: Sequence[str], categories: Sequence[str], years: Sequence[int]) -> None:
    counts = np.asarray(counts)
    n1, n2, n3 = counts.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "year", *categories])
        for i in range(n1):
            for k in range(n3):
                w.writerow([locations[i], years[k], *(_fmt_count(v) for v in counts[i, :, k])])


def write_population_csv(pop, path, locations: Sequence[str], years: Sequence[int]) -> None:
    """Population per location-year, taken from the first category."""
    pop = np.asarray(pop, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "year", "population"])
        for i, loc in enumerate(locations):
            for k, year in enumerate(years):
                w.writerow([loc, year, repr(float(pop[i, 0, k]))])


def write_truth_csv(truth, path, locations: Sequence[str], categories: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location_index", "location", "category"])
        for i, j in sorted(truth):
            w.writerow([i + 1, locations[i], categories[j]])


def read_truth_csv(path, categories: Sequence[str]) -> frozenset:
    with open(path, newline="", encoding="utf-8") as fh:
        return frozenset(
            (int(r["location_index"]) - 1, list(categories).index(r["category"])) for r in csv.DictReader(fh)
        )


# key -> (type, default); "ints"/"floats" are comma-separated lists
CONFIG_SCHEMA = {
    "dims": ("ints", "49,10,26"),
    "delta": ("float", "0.2"),
    "tau": ("int", "15"),
    "hotspot_fraction": ("float", "0.1"),
    "population_trend": ("str", "increasing"),
    "noise_sd": ("float", "0.5"),
    "base_rate": ("float", "0.2"),
    "units": ("float", "10000"),
    "start_year": ("int", "1"),
    "seed": ("int", "0"),
    "replications": ("int", "100"),
    "workers": ("int", "1"),
    "counts": ("str", ""),
    "population": ("str", ""),
    "population_units": ("float", "1"),
    "phase1": ("int", "15"),
    "lambda": ("float", ""),
    "auto_path": ("bool", "false"),
    "n_lambda": ("int", "10"),
    "lambda_ratio": ("float", "0.001"),
    "d_star": ("float", "0.5"),
    "target_arl0": ("float", "50"),
    "calib_reps": ("int", "1000"),
    "generator": ("str", "bootstrap"),
    "limit": ("float", ""),
    "calibration": ("str", ""),
    "detect_dir": ("str", ""),
    "rule": ("str", "order"),
    "rule_param": ("float", ""),
    "pearson": ("bool", "false"),
    "fit_mode": ("str", "retrospective"),
    "knot_counts": ("ints", ""),
    "order": ("int", "4"),
    "max_outer": ("int", "50"),
    "max_inner": ("int", "200"),
    "outer_tol": ("float", "1e-6"),
    "inner_tol": ("float", "1e-8"),
}

_BOOLS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(key: str, text: str):
    kind, _ = CONFIG_SCHEMA[key]
    text = text.strip()
    if text == "":
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            return _BOOLS[text.lower()]
        if kind == "ints":
            return tuple(int(p) for p in text.split(","))
        if kind == "floats":
            return tuple(float(p) for p in text.split(","))
    except (ValueError, KeyError):
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: {key!r} set twice")
        raw[key] = value
    return raw


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> dict:
    """Defaults, then the file, then ``key=value`` overrides; returns typed values."""
    raw = {k: v for k, (_, v) in CONFIG_SCHEMA.items()}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw.update(parse_config_text(fh.read(), str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (p.strip() for p in item.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    return {k: _convert(k, v) for k, v in raw.items()}


@contextlib.contextmanager
def atomic_output(path):
    """Yield a temporary path next to ``path``; rename it into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict
    outputs: dict
    started: str
    finished: str = ""
    version: str = __version__
    status: str = ""

    @classmethod
    def start(cls, command: str, config: dict, input_paths: Sequence[str]) -> "RunManifest":
        inputs = {os.fspath(p): file_digest(p) for p in input_paths if p}
        return cls(command, dict(config), int(config.get("seed") or 0), inputs, {}, _now())

    def add_inputs(self, paths) -> None:
        self.inputs.update({os.fspath(p): file_digest(p) for p in paths if p})

    def record_output(self, path) -> None:
        self.outputs[os.path.basename(os.fspath(path))] = file_digest(path)

    def write(self, path, status: str) -> None:
        self.status = status
        self.finished = _now()
        body = {
            "command": self.command,
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.config.items())},
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "status": status,
        }
        atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")
