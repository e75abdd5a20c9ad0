"""Poisson log-rate model with a smooth background and sparse hot-spots.

Counts follow ``y ~ Poisson(n * r)`` with ``log r = X theta_m + Z theta_h``,
where ``X`` and ``Z`` come from a :class:`~poisson_hotspots.basis.BasisSet`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import BasisSet
from .tensor import as_tensor3, refold

__all__ = [
    "DivergenceError",
    "ProblemData",
    "ModelParams",
    "ModelFit",
    "PREDICTOR_CLAMP",
    "linear_predictor",
    "expected_counts",
    "neg_log_likelihood",
    "objective",
    "grad_theta_m",
    "grad_theta_h",
    "fitted_tensors",
]

PREDICTOR_CLAMP = 30.0


class DivergenceError(ArithmeticError):
    """A likelihood, gradient or iterate became non-finite."""


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Observed counts, population offsets and the bases they are modelled with."""

    y: np.ndarray
    pop: np.ndarray
    basis: BasisSet

    def __post_init__(self):
        y = as_tensor3(self.y, "counts")
        pop = as_tensor3(self.pop, "population")
        if y.shape != pop.shape:
            raise ValueError(f"counts {y.shape} and population {pop.shape} differ in shape")
        if y.shape != self.basis.dims:
            raise ValueError(f"data shape {y.shape} does not match basis dims {self.basis.dims}")
        if np.any(pop <= 0):
            raise ValueError("population must be strictly positive")
        if np.any(y < 0) or np.any(np.abs(y - np.round(y)) > 1e-9):
            raise ValueError("counts must be nonnegative integers")
        for arr in (y, pop):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "pop", pop)

    @property
    def dims(self) -> tuple:
        return self.y.shape

    @cached_property
    def y_vec(self) -> np.ndarray:
        return self.y.reshape(-1)

    @cached_property
    def n_vec(self) -> np.ndarray:
        return self.pop.reshape(-1)


@dataclass(frozen=True)
class ModelParams:
    theta_m: np.ndarray
    theta_h: np.ndarray

    def __post_init__(self):
        for name in ("theta_m", "theta_h"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise DivergenceError(f"{name} has non-finite entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def zeros(cls, basis: BasisSet) -> "ModelParams":
        return cls(np.zeros(basis.p), np.zeros(basis.q))

    def check(self, basis: BasisSet) -> None:
        if self.theta_m.size != basis.p or self.theta_h.size != basis.q:
            raise ValueError(
                f"parameter lengths ({self.theta_m.size}, {self.theta_h.size}) do not "
                f"match basis columns ({basis.p}, {basis.q})"
            )


def hotspot_effect(basis: BasisSet, theta_h: np.ndarray) -> np.ndarray:
    if basis.hotspot_is_identity:
        return np.asarray(theta_h, dtype=float)
    return basis.Z @ theta_h


def hotspot_transpose(basis: BasisSet, v: np.ndarray) -> np.ndarray:
    if basis.hotspot_is_identity:
        return np.asarray(v, dtype=float)
    return basis.Z.T @ v


def linear_predictor(data: ProblemData, params: ModelParams, clamp: float = PREDICTOR_CLAMP) -> np.ndarray:
    params.check(data.basis)
    eta = data.basis.X @ params.theta_m + hotspot_effect(data.basis, params.theta_h)
    return np.clip(eta, -clamp, clamp)


def expected_counts(data: ProblemData, params: ModelParams, clamp: float = PREDICTOR_CLAMP) -> np.ndarray:
    """``gamma_i = n_i * exp(eta_i)``, the fitted Poisson means."""
    gamma = data.n_vec * np.exp(linear_predictor(data, params, clamp))
    if not np.all(np.isfinite(gamma)):
        raise DivergenceError("fitted means overflowed")
    return gamma


def _nll_from_eta(data: ProblemData, eta: np.ndarray) -> float:
    val = float(np.sum(data.n_vec * np.exp(eta) - data.y_vec * eta))
    if not np.isfinite(val):
        raise DivergenceError("negative log-likelihood is not finite")
    return val


def neg_log_likelihood(data: ProblemData, params: ModelParams, clamp: float = PREDICTOR_CLAMP) -> float:
    """``sum_i n_i exp(eta_i) - y_i eta_i``, dropping terms free of the parameters."""
    return _nll_from_eta(data, linear_predictor(data, params, clamp))


def objective(data: ProblemData, params: ModelParams, lam: float, clamp: float = PREDICTOR_CLAMP) -> float:
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    return neg_log_likelihood(data, params, clamp) + lam * float(np.sum(np.abs(params.theta_h)))


def grad_theta_m(data: ProblemData, params: ModelParams, clamp: float = PREDICTOR_CLAMP) -> np.ndarray:
    gamma = expected_counts(data, params, clamp)
    return data.basis.X.T @ (gamma - data.y_vec)


def grad_theta_h(data: ProblemData, params: ModelParams, clamp: float = PREDICTOR_CLAMP) -> np.ndarray:
    gamma = expected_counts(data, params, clamp)
    return hotspot_transpose(data.basis, gamma - data.y_vec)


@dataclass(frozen=True)
class ModelFit:
    """Estimated coefficients at one penalty, with the fitted tensors."""

    params: ModelParams
    lam: float
    u_hat: np.ndarray
    h_hat: np.ndarray
    r_hat: np.ndarray
    mu_hat_counts: np.ndarray
    background_counts: np.ndarray
    objective_value: float
    converged: bool = False
    outer_iterations: int = 0
    inner_iterations: int = 0
    stagnated: bool = False
    objective_trace: tuple = field(default=())

    @property
    def dims(self) -> tuple:
        return self.u_hat.shape

    @property
    def hotspot_nonzeros(self) -> int:
        return int(np.count_nonzero(self.params.theta_h))


def fitted_tensors(
    data: ProblemData,
    params: ModelParams,
    lam: float,
    *,
    converged: bool = False,
    outer_iterations: int = 0,
    inner_iterations: int = 0,
    stagnated: bool = False,
    objective_trace: tuple = (),
    clamp: float = PREDICTOR_CLAMP,
) -> ModelFit:
    """Assemble a :class:`ModelFit` from coefficients.

    ``background_counts`` is ``pop * exp(u_hat)``, the fitted mean with the
    hot-spot term switched off.
    """
    params.check(data.basis)
    dims = data.dims
    u = refold(data.basis.X @ params.theta_m, dims)
    h = refold(hotspot_effect(data.basis, params.theta_h), dims)
    log_r = np.clip(u + h, -clamp, clamp)
    r = np.exp(log_r)
    background = data.pop * np.exp(np.clip(u, -clamp, clamp))
    for arr in (u, h, r, background):
        arr.setflags(write=False)
    mu = data.pop * r
    mu.setflags(write=False)
    return ModelFit(
        params=params,
        lam=float(lam),
        u_hat=u,
        h_hat=h,
        r_hat=r,
        mu_hat_counts=mu,
        background_counts=background,
        objective_value=objective(data, params, lam, clamp),
        converged=converged,
        outer_iterations=outer_iterations,
        inner_iterations=inner_iterations,
        stagnated=stagnated,
        objective_trace=tuple(objective_trace),
    )
