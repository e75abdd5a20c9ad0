"""Fixed basis matrices for the smooth background and the hot-spot component."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BasisSet",
    "bspline_basis",
    "identity_basis",
    "default_basis_set",
    "PAPER_DIMS",
]

PAPER_DIMS = (49, 10, 26)
GRID_RANGE = (1.0, 50.0)
CUBIC = 4  # order = degree + 1


def _clamped_knots(knots: np.ndarray, order: int) -> np.ndarray:
    return np.concatenate(
        [np.repeat(knots[0], order - 1), knots, np.repeat(knots[-1], order - 1)]
    )


def _cox_de_boor(x: np.ndarray, t: np.ndarray, order: int) -> np.ndarray:
    nb = len(t) - order
    # order-1 indicators on half-open spans; the right end belongs to the last nonempty span
    b = np.zeros((len(x), len(t) - 1))
    for i in range(len(t) - 1):
        if t[i] < t[i + 1]:
            b[:, i] = (x >= t[i]) & (x < t[i + 1])
    last = np.max(np.nonzero(t[:-1] < t[1:])[0])
    b[x == t[-1], last] = 1.0

    for k in range(2, order + 1):
        nxt = np.zeros((len(x), len(t) - k))
        for i in range(len(t) - k):
            left = t[i + k - 1] - t[i]
            right = t[i + k] - t[i + 1]
            if left > 0:
                nxt[:, i] += (x - t[i]) / left * b[:, i]
            if right > 0:
                nxt[:, i] += (t[i + k] - x) / right * b[:, i + 1]
        b = nxt
    assert b.shape[1] == nb
    return b


def bspline_basis(n_points: int, knots: Sequence[float], order: int) -> np.ndarray:
    """B-spline design matrix on an evenly spaced grid spanning the knots.

    The grid points ``1..n_points`` are mapped linearly onto
    ``[knots[0], knots[-1]]``. End knots are repeated ``order - 1`` times
    (clamped), which gives ``len(knots) + order - 2`` columns.

    Parameters
    ----------
    n_points : int
        Number of grid points; at least 2 unless a single column is requested.
    knots : sequence of float
        Strictly increasing breakpoints, at least two.
    order : int
        Spline order (degree + 1); 4 is cubic.
    """
    knots = np.asarray(knots, dtype=float)
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if knots.ndim != 1 or len(knots) < 2:
        raise ValueError("need at least two knots")
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing")
    if n_points < 1 or (n_points == 1 and len(knots) + order - 2 > 1):
        raise ValueError(f"n_points={n_points} is too small for this basis")
    if n_points == 1:
        return np.ones((1, 1))
    x = knots[0] + (np.arange(n_points) / (n_points - 1)) * (knots[-1] - knots[0])
    x[-1] = knots[-1]
    return _cox_de_boor(x, _clamped_knots(knots, order), order)


def identity_basis(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return np.eye(n)


def _kron3(b1, b2, b3) -> sp.csr_matrix:
    out = sp.kron(sp.kron(sp.csr_matrix(b1), sp.csr_matrix(b2)), sp.csr_matrix(b3))
    return sp.csr_matrix(out)


@dataclass(frozen=True)
class BasisSet:
    """Smooth-mean bases ``b_m*`` and hot-spot bases ``b_h*``, one per mode.

    ``X`` and ``Z`` are the Kronecker products of each triple, stored sparse;
    row ``i`` of ``X`` (``Z``) multiplies the mean (hot-spot) coefficients for
    cell ``i`` of the row-major vectorized tensor.
    """

    b_m1: np.ndarray
    b_m2: np.ndarray
    b_m3: np.ndarray
    b_h1: np.ndarray
    b_h2: np.ndarray
    b_h3: np.ndarray

    def __post_init__(self):
        for name in ("b_m1", "b_m2", "b_m3", "b_h1", "b_h2", "b_h3"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite matrix")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for k, (bm, bh) in enumerate(zip(self.mean_bases, self.hotspot_bases)):
            if bm.shape[0] != bh.shape[0]:
                raise ValueError(f"mode {k} bases disagree on length: {bm.shape[0]} vs {bh.shape[0]}")
        if self.p > self.n or self.q > self.n:
            raise ValueError(f"basis has more columns (p={self.p}, q={self.q}) than cells ({self.n})")

    @property
    def mean_bases(self) -> tuple:
        return (self.b_m1, self.b_m2, self.b_m3)

    @property
    def hotspot_bases(self) -> tuple:
        return (self.b_h1, self.b_h2, self.b_h3)

    @property
    def dims(self) -> tuple:
        return tuple(b.shape[0] for b in self.mean_bases)

    @property
    def core_dims_m(self) -> tuple:
        return tuple(b.shape[1] for b in self.mean_bases)

    @property
    def core_dims_h(self) -> tuple:
        return tuple(b.shape[1] for b in self.hotspot_bases)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def p(self) -> int:
        return int(np.prod(self.core_dims_m))

    @property
    def q(self) -> int:
        return int(np.prod(self.core_dims_h))

    @cached_property
    def X(self) -> sp.csr_matrix:
        return _kron3(*self.mean_bases)

    @cached_property
    def Z(self) -> sp.csr_matrix:
        return _kron3(*self.hotspot_bases)

    @cached_property
    def hotspot_is_identity(self) -> bool:
        return all(
            b.shape[0] == b.shape[1] and np.array_equal(b, np.eye(b.shape[0]))
            for b in self.hotspot_bases
        )


def _mode_spline(n: int, n_knots: int, order: int = CUBIC) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    # fewer columns than grid points, so the smooth mean cannot absorb every cell
    order = min(order, n - 1)
    n_knots = max(2, min(n_knots, n - order + 1))
    knots = np.linspace(*GRID_RANGE, n_knots)
    return bspline_basis(n, knots, order)


def default_basis_set(
    dims: Sequence[int],
    knots: Optional[Sequence[Sequence[float]]] = None,
    order: int = CUBIC,
    knot_counts: Optional[Sequence[int]] = None,
) -> BasisSet:
    """Cubic B-spline mean bases and identity hot-spot bases for ``dims``.

    For the 49 x 10 x 26 layout the knot sets are 8 equally spaced points on
    [1, 50] along locations and 7 along categories and time; any other shape
    gets 8 knots per mode. Each mode's index grid is stretched onto [1, 50].
    ``knot_counts`` replaces those counts; ``knots`` overrides the per-mode
    knot vectors outright.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    if knots is not None:
        mean = [bspline_basis(n, k, order) for n, k in zip(dims, knots)]
    else:
        if knot_counts is not None:
            counts = tuple(int(c) for c in knot_counts)
            if len(counts) != 3 or min(counts) < 2:
                raise ValueError(f"need three knot counts >= 2, got {knot_counts}")
        else:
            counts = (8, 7, 7) if dims == PAPER_DIMS else (8, 8, 8)
        mean = [_mode_spline(n, c, order) for n, c in zip(dims, counts)]
    hot = [identity_basis(n) for n in dims]
    return BasisSet(*mean, *hot)
