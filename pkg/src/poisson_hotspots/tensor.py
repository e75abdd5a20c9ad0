"""Dense order-3 tensor helpers.

Vectorization is row-major (last index fastest), so entry ``(i, j, k)`` of an
``n1 x n2 x n3`` tensor lands at ``i*n2*n3 + j*n3 + k``. With that ordering
``vec(C x1 B1 x2 B2 x3 B3) == kron(kron(B1, B2), B3) @ vec(C)``.

All indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Tensor3",
    "as_tensor3",
    "mode_n_product",
    "vectorize",
    "refold",
    "kron",
    "tucker_reconstruct",
    "frontal_slice",
]

AXIS_NAMES = ("location", "category", "time")


def as_tensor3(values, name: str = "tensor") -> np.ndarray:
    """Validate and return ``values`` as a finite float64 array of order 3."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have 3 axes, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Tensor3:
    """An order-3 array with optional labels along (location, category, time)."""

    values: np.ndarray
    labels: tuple = field(default=(None, None, None))

    def __post_init__(self):
        arr = as_tensor3(self.values)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        labels = tuple(self.labels) + (None,) * (3 - len(self.labels))
        for axis, (lab, n) in enumerate(zip(labels, arr.shape)):
            if lab is not None and len(lab) != n:
                raise ValueError(
                    f"{AXIS_NAMES[axis]} labels have length {len(lab)}, expected {n}"
                )
        object.__setattr__(
            self, "labels", tuple(None if lab is None else tuple(lab) for lab in labels)
        )

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def label(self, axis: int, index: int) -> str:
        lab = self.labels[axis]
        return str(index + 1) if lab is None else str(lab[index])


def mode_n_product(t, m, mode: int) -> np.ndarray:
    """Multiply tensor ``t`` along axis ``mode`` (0, 1 or 2) by matrix ``m``.

    The result has ``m.shape[0]`` entries along ``mode``.
    """
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if mode not in (0, 1, 2):
        raise ValueError(f"mode must be 0, 1 or 2, got {mode}")
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot act on {AXIS_NAMES[mode]} axis "
            f"of length {t.shape[mode]}"
        )
    out = np.tensordot(m, t, axes=([1], [mode]))
    return np.moveaxis(out, 0, mode)


def vectorize(t) -> np.ndarray:
    return np.asarray(t, dtype=float).reshape(-1)


def refold(v, dims: Sequence[int]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    dims = tuple(int(d) for d in dims)
    if v.ndim != 1 or v.size != int(np.prod(dims)):
        raise ValueError(f"vector of length {v.size} cannot be refolded into {dims}")
    return v.reshape(dims)


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def tucker_reconstruct(core, b1, b2, b3) -> np.ndarray:
    """Return ``core x1 b1 x2 b2 x3 b3``."""
    out = np.asarray(core, dtype=float)
    if out.ndim != 3:
        raise ValueError(f"core must have 3 axes, got shape {out.shape}")
    for mode, b in enumerate((b1, b2, b3)):
        out = mode_n_product(out, b, mode)
    return out


def frontal_slice(t, k: int) -> np.ndarray:
    """The ``n1 x n2`` matrix at time index ``k``."""
    t = np.asarray(t)
    n3 = t.shape[2]
    if not 0 <= k < n3:
        raise IndexError(f"time index {k} out of range for {n3} periods")
    return t[:, :, k]


