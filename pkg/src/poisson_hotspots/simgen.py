"""Synthetic count tensors with logistic population curves and planted hot-spots."""
from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np
from scipy.special import expit

__all__ = [
    "PhiTable",
    "ScenarioConfig",
    "Scenario",
    "load_phi_table",
    "logistic_population",
    "decreasing_population",
    "solve_a",
    "population_tensor",
    "generate_hotspot_set",
    "generate_counts",
    "kl_poisson",
    "derive_rng",
]

log = logging.getLogger(__name__)

POPULATION_FLOOR = 0.01


def derive_rng(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Independent stream for ``(seed, label, index)``; labels hash with CRC-32."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode()), int(index)])
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class PhiTable:
    """Per-location logistic growth parameters (asymptote, midpoint, time scale)."""

    locations: tuple
    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] != 3 or phi.shape[0] != len(self.locations):
            raise ValueError("phi must have one (asymptote, midpoint, scale) row per location")
        if not np.all(np.isfinite(phi)) or np.any(phi[:, 0] <= 0):
            raise ValueError("phi entries must be finite with positive asymptotes")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "locations", tuple(self.locations))

    def __len__(self) -> int:
        return len(self.locations)

    def head(self, n: int) -> "PhiTable":
        if n > len(self):
            raise ValueError(f"table has {len(self)} locations, {n} requested")
        return PhiTable(self.locations[:n], self.phi[:n])


def load_phi_table(path=None) -> PhiTable:
    """Read a ``location,asymptote,midpoint,scale`` CSV; defaults to the bundled table."""
    if path is None:
        handle = resources.files("poisson_hotspots").joinpath("data/phi_table.csv").open("r", encoding="utf-8")
    else:
        handle = open(path, newline="", encoding="utf-8")
    with handle:
        rows = list(csv.DictReader(handle))
    names = [r["location"] for r in rows]
    phi = [[float(r["asymptote"]), float(r["midpoint"]), float(r["scale"])] for r in rows]
    return PhiTable(tuple(names), np.array(phi))


def logistic_population(phi, t, eps=0.0):
    """Increasing logistic curve ``phi1 / (1 + exp(-(t - phi2) / phi3)) + eps``, floored at 0.01."""
    phi1, phi2, phi3 = phi
    val = phi1 * expit((np.asarray(t, dtype=float) - phi2) / phi3) + eps
    return np.maximum(val, POPULATION_FLOOR)


def decreasing_population(phi, a, t, eps=0.0):
    """Mirror curve ``(phi1 / a) / (1 + exp((t - phi2) / phi3)) + 1 + eps``, floored at 0.01."""
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")
    phi1, phi2, phi3 = phi
    val = (phi1 / a) * expit(-(np.asarray(t, dtype=float) - phi2) / phi3) + 1.0 + eps
    return np.maximum(val, POPULATION_FLOOR)


def solve_a(phi) -> float:
    """Scale ``a`` making the noise-free decreasing curve start where the increasing one does (t=1)."""
    phi1, phi2, phi3 = phi
    start = phi1 / (1.0 + math.exp(-(1.0 - phi2) / phi3))
    if start <= 1.0:
        raise ValueError(f"initial population {start:.4g} leaves no room above the floor of 1")
    return phi1 / ((start - 1.0) * (1.0 + math.exp((1.0 - phi2) / phi3)))


@dataclass(frozen=True)
class ScenarioConfig:
    dims: tuple = (49, 10, 26)
    delta: float = 0.2
    tau: int = 15
    hotspot_fraction: float = 0.10
    population_trend: str = "increasing"
    noise_sd: float = 0.5
    base_rate: float = 0.2
    units: float = 10_000.0
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {dims}")
        if not 0 < self.hotspot_fraction < 1:
            raise ValueError("hotspot_fraction must lie in (0, 1)")
        if not 1 <= self.tau < dims[2]:
            raise ValueError(f"tau must lie in [1, {dims[2]}), got {self.tau}")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.population_trend not in ("increasing", "decreasing"):
            raise ValueError(f"unknown population trend {self.population_trend!r}")
        if self.noise_sd < 0 or self.base_rate <= 0 or self.units <= 0:
            raise ValueError("noise_sd must be >= 0; base_rate and units must be positive")


@dataclass(frozen=True)
class Scenario:
    """One synthetic data set.

    ``pop`` is in persons (the 10,000s curve times ``config.units``) so that
    ``counts ~ Poisson(pop * rate)``.
    """

    counts: np.ndarray
    pop: np.ndarray
    rate: np.ndarray
    truth: frozenset
    config: ScenarioConfig
    locations: tuple

    @property
    def background_mean(self) -> np.ndarray:
        return self.pop * self.config.base_rate


def population_tensor(config: ScenarioConfig, phi_table: PhiTable, rng: np.random.Generator) -> np.ndarray:
    """Population in 10,000s, shared across categories."""
    n1, n2, n3 = config.dims
    table = phi_table.head(n1)
    t = np.arange(1, n3 + 1, dtype=float)
    eps = rng.normal(0.0, config.noise_sd, size=(n1, n3)) if config.noise_sd > 0 else np.zeros((n1, n3))
    rows = []
    for i, phi in enumerate(table.phi):
        if config.population_trend == "increasing":
            rows.append(logistic_population(phi, t, eps[i]))
        else:
            rows.append(decreasing_population(phi, solve_a(phi), t, eps[i]))
    curves = np.vstack(rows)
    return np.repeat(curves[:, None, :], n2, axis=1)


def generate_hotspot_set(dims, fraction: float, rng: np.random.Generator) -> frozenset:
    """``floor(fraction * n1 * n2)`` distinct (location, category) cells, uniformly at random."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n1, n2 = int(dims[0]), int(dims[1])
    size = int(math.floor(fraction * n1 * n2 + 1e-9))
    if size == 0:
        log.warning("hot-spot fraction %g of %d cells rounds down to zero", fraction, n1 * n2)
        return frozenset()
    flat = rng.choice(n1 * n2, size=size, replace=False)
    return frozenset((int(c // n2), int(c % n2)) for c in flat)


def generate_counts(
    config: ScenarioConfig,
    phi_table: Optional[PhiTable] = None,
    rng: Optional[np.random.Generator] = None,
) -> Scenario:
    """Draw counts with rate ``base_rate + delta`` on the hot cells after period ``tau``."""
    if phi_table is None:
        phi_table = load_phi_table()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n1, n2, n3 = config.dims
    truth = generate_hotspot_set(config.dims, config.hotspot_fraction, rng)
    pop = population_tensor(config, phi_table, rng) * config.units
    rate = np.full(config.dims, config.base_rate)
    if truth and config.delta > 0:
        ii, jj = zip(*sorted(truth))
        rate[np.array(ii), np.array(jj), config.tau:] += config.delta
    counts = rng.poisson(pop * rate).astype(float)
    return Scenario(counts, pop, rate, truth, config, phi_table.head(n1).locations)


def kl_poisson(lambda1: float, lambda0: float) -> float:
    """KL divergence of Poisson(lambda1) from Poisson(lambda0)."""
    if lambda1 <= 0 or lambda0 <= 0:
        raise ValueError("Poisson rates must be positive")
    return lambda0 - lambda1 + lambda1 * math.log(lambda1 / lambda0)
