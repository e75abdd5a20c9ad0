"""Alternating IRLS / FISTA estimation of the penalized Poisson model.

Each outer iteration takes one damped Newton (IRLS) step for the background
coefficients with the hot-spot coefficients held fixed, then runs an
accelerated proximal-gradient (FISTA) solve for the hot-spot coefficients
with the background held fixed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .model import (
    DivergenceError,
    ModelFit,
    ModelParams,
    ProblemData,
    fitted_tensors,
    hotspot_effect,
    hotspot_transpose,
)

__all__ = [
    "SolverConfig",
    "FitPath",
    "IrlsResult",
    "FistaResult",
    "soft_threshold",
    "momentum_next",
    "initial_params",
    "irls_step",
    "lipschitz_constant",
    "fista_solve",
    "glm_fit",
    "fit",
    "fit_path",
    "lambda_max",
    "default_lambda_grid",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 50
    max_inner: int = 200
    outer_tol: float = 1e-6
    inner_tol: float = 1e-8
    ridge: float = 1e-8
    step_halving_max: int = 20
    predictor_clamp: float = 30.0
    warm_start: bool = True

    def __post_init__(self):
        for name in ("max_outer", "max_inner", "step_halving_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("outer_tol", "inner_tol"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.ridge <= 0 or self.predictor_clamp <= 0:
            raise ValueError("ridge and predictor_clamp must be positive")


def soft_threshold(x, a):
    """Shrink ``x`` toward zero by ``a``; entries within ``[-a, a]`` become 0."""
    if np.any(np.asarray(a) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - a, 0.0)


def momentum_next(t: float) -> float:
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


class _Evaluator:
    """Likelihood pieces with the background offset ``X theta_m`` cached."""

    def __init__(self, data: ProblemData, theta_m: np.ndarray, clamp: float):
        self.data = data
        self.clamp = clamp
        self.offset = data.basis.X @ theta_m

    def eta(self, theta_h):
        return np.clip(self.offset + hotspot_effect(self.data.basis, theta_h), -self.clamp, self.clamp)

    def gamma(self, theta_h):
        return self.data.n_vec * np.exp(self.eta(theta_h))

    def smooth(self, theta_h) -> float:
        eta = self.eta(theta_h)
        return float(np.sum(self.data.n_vec * np.exp(eta) - self.data.y_vec * eta))

    def grad(self, theta_h):
        return hotspot_transpose(self.data.basis, self.gamma(theta_h) - self.data.y_vec)


def _nll(data: ProblemData, theta_m, offset_h, clamp) -> float:
    eta = np.clip(data.basis.X @ theta_m + offset_h, -clamp, clamp)
    return float(np.sum(data.n_vec * np.exp(eta) - data.y_vec * eta))


def initial_params(data: ProblemData, config: SolverConfig = SolverConfig()) -> ModelParams:
    """Least-squares projection of ``log((y + 0.5) / n)`` onto the mean basis; zero hot-spots."""
    X = data.basis.X
    target = np.log((data.y_vec + 0.5) / data.n_vec)
    gram = (X.T @ X).toarray() + config.ridge * np.eye(X.shape[1])
    theta_m = scipy.linalg.solve(gram, X.T @ target, assume_a="pos")
    return ModelParams(theta_m, np.zeros(data.basis.q))


class IrlsResult(NamedTuple):
    theta_m: np.ndarray
    stagnated: bool
    step: float


def newton_increment(data: ProblemData, params: ModelParams, config: SolverConfig = SolverConfig()) -> np.ndarray:
    """Undamped IRLS increment ``(X'WX + ridge I)^-1 X'(y - gamma)``.

    Adding it to ``theta_m`` is the reweighted least-squares solution
    ``(X'WX)^-1 X'W eta`` with working response ``eta = X theta_m + W^-1 (y - gamma)``,
    written in increment form so the ridge leaves fixed points untouched.
    """
    X = data.basis.X
    offset_h = hotspot_effect(data.basis, params.theta_h)
    eta = np.clip(X @ params.theta_m + offset_h, -config.predictor_clamp, config.predictor_clamp)
    w = data.n_vec * np.exp(eta)
    if not np.all(np.isfinite(w)):
        raise DivergenceError("IRLS weights overflowed")
    hess = (X.T @ X.multiply(w[:, None])).toarray()
    hess[np.diag_indices_from(hess)] += config.ridge
    score = X.T @ (data.y_vec - w)
    return scipy.linalg.solve(hess, score, assume_a="pos", check_finite=False)


def irls_step(
    data: ProblemData,
    params: ModelParams,
    config: SolverConfig = SolverConfig(),
    damped: bool = True,
) -> IrlsResult:
    """One IRLS update of the background coefficients.

    With ``damped`` the step is halved until the likelihood does not increase;
    if ``config.step_halving_max`` halvings fail the old coefficients come back
    flagged as stagnated.
    """
    delta = newton_increment(data, params, config)
    if not damped:
        return IrlsResult(params.theta_m + delta, False, 1.0)
    offset_h = hotspot_effect(data.basis, params.theta_h)
    clamp = config.predictor_clamp
    base = _nll(data, params.theta_m, offset_h, clamp)
    step = 1.0
    for _ in range(config.step_halving_max + 1):
        cand = params.theta_m + step * delta
        val = _nll(data, cand, offset_h, clamp)
        if np.isfinite(val) and val <= base:
            return IrlsResult(cand, False, step)
        step *= 0.5
    return IrlsResult(params.theta_m.copy(), True, 0.0)


def lipschitz_constant(data: ProblemData, params: ModelParams, config: SolverConfig = SolverConfig()) -> float:
    """Largest eigenvalue of ``Z'WZ`` at ``params``."""
    ev = _Evaluator(data, params.theta_m, config.predictor_clamp)
    w = ev.gamma(params.theta_h)
    if data.basis.hotspot_is_identity:
        return float(np.max(w))
    Z = data.basis.Z
    zwz = Z.T @ Z.multiply(w[:, None])
    if zwz.shape[0] <= 1500:
        return float(scipy.linalg.eigvalsh(zwz.toarray())[-1])
    return float(scipy.sparse.linalg.eigsh(zwz, k=1, which="LA", return_eigenvectors=False)[0])


class FistaResult(NamedTuple):
    theta_h: np.ndarray
    iterations: int
    converged: bool
    lipschitz: float


def fista_solve(
    data: ProblemData,
    theta_m: np.ndarray,
    theta_h0: np.ndarray,
    lam: float,
    config: SolverConfig = SolverConfig(),
) -> FistaResult:
    """Minimize the penalized likelihood over the hot-spot coefficients.

    Step size is ``1/L`` with ``L`` evaluated once at the start point. The
    momentum sequence restarts at ``t = 1``. Returns the iterate with the
    lowest objective seen, so the objective never rises above its start value.
    """
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    ev = _Evaluator(data, np.asarray(theta_m, dtype=float), config.predictor_clamp)
    x_prev = np.array(theta_h0, dtype=float)
    lip = lipschitz_constant(data, ModelParams(theta_m, x_prev), config)
    if not np.isfinite(lip) or lip <= 0:
        raise DivergenceError(f"invalid Lipschitz constant {lip}")

    def penalized(v):
        return ev.smooth(v) + lam * float(np.sum(np.abs(v)))

    best_x, best_f = x_prev, penalized(x_prev)
    alpha = x_prev.copy()
    t = 1.0
    converged = False
    s = 0
    for s in range(1, config.max_inner + 1):
        x = soft_threshold(alpha - ev.grad(alpha) / lip, lam / lip)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"FISTA iterate became non-finite at inner iteration {s}")
        t_next = momentum_next(t)
        alpha = x + ((t - 1.0) / t_next) * (x - x_prev)
        f = penalized(x)
        if f <= best_f:
            best_x, best_f = x, f
        change = np.linalg.norm(x - x_prev)
        x_prev, t = x, t_next
        if change <= config.inner_tol * max(1.0, np.linalg.norm(x)):
            converged = True
            break
    return FistaResult(best_x, s, converged, lip)


def glm_fit(data: ProblemData, config: SolverConfig = SolverConfig(), theta_m0=None) -> np.ndarray:
    """Background-only Poisson regression (hot-spots fixed at zero) by damped IRLS."""
    if theta_m0 is None:
        theta_m0 = initial_params(data, config).theta_m
    params = ModelParams(theta_m0, np.zeros(data.basis.q))
    prev = _nll(data, params.theta_m, 0.0, config.predictor_clamp)
    for _ in range(max(config.max_outer, 100)):
        res = irls_step(data, params, config)
        params = ModelParams(res.theta_m, params.theta_h)
        cur = _nll(data, params.theta_m, 0.0, config.predictor_clamp)
        if res.stagnated or abs(prev - cur) <= 1e-14 * max(1.0, abs(prev)):
            break
        prev = cur
    return params.theta_m


def fit(
    data: ProblemData,
    lam: float,
    config: SolverConfig = SolverConfig(),
    init: Optional[ModelParams] = None,
) -> ModelFit:
    """Estimate both coefficient blocks at penalty ``lam``.

    Stops when the relative objective change drops below ``config.outer_tol``
    or after ``config.max_outer`` outer iterations.
    """
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    params = init if init is not None else initial_params(data, config)
    params.check(data.basis)
    clamp = config.predictor_clamp

    def obj(p: ModelParams) -> float:
        eta = np.clip(data.basis.X @ p.theta_m + hotspot_effect(data.basis, p.theta_h), -clamp, clamp)
        val = float(np.sum(data.n_vec * np.exp(eta) - data.y_vec * eta)) + lam * float(np.sum(np.abs(p.theta_h)))
        if not np.isfinite(val):
            raise DivergenceError("objective is not finite")
        return val

    trace = [obj(params)]
    converged = stagnated = False
    inner_total = 0
    k = 0
    for k in range(1, config.max_outer + 1):
        step = irls_step(data, params, config)
        stagnated = stagnated or step.stagnated
        fres = fista_solve(data, step.theta_m, params.theta_h, lam, config)
        inner_total += fres.iterations
        params = ModelParams(step.theta_m, fres.theta_h)
        trace.append(obj(params))
        if abs(trace[-2] - trace[-1]) <= config.outer_tol * max(1.0, abs(trace[-2])):
            converged = True
            break
    if stagnated:
        log.debug("IRLS step halving was exhausted at lambda=%g", lam)
    return fitted_tensors(
        data,
        params,
        lam,
        converged=converged,
        outer_iterations=k,
        inner_iterations=inner_total,
        stagnated=stagnated,
        objective_trace=tuple(trace),
        clamp=clamp,
    )


def lambda_max(data: ProblemData, config: SolverConfig = SolverConfig(), theta_m=None) -> float:
    """Smallest penalty at which zero hot-spots is optimal for the background-only fit."""
    if theta_m is None:
        theta_m = glm_fit(data, config)
    ev = _Evaluator(data, theta_m, config.predictor_clamp)
    return float(np.max(np.abs(ev.grad(np.zeros(data.basis.q)))))


def default_lambda_grid(lam_max: float, n_lambda: int = 10, ratio: float = 1e-3) -> np.ndarray:
    """Geometric, descending grid from ``lam_max`` down to ``lam_max * ratio``."""
    if lam_max <= 0:
        raise ValueError(f"lam_max must be positive, got {lam_max}")
    if n_lambda == 1:
        return np.array([float(lam_max)])
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


@dataclass(frozen=True)
class FitPath:
    """One fit per penalty on a descending grid; failed penalties map to ``None``."""

    lambdas: tuple
    fits: tuple
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        if any(v <= 0 for v in lams):
            raise ValueError("penalties must be positive")
        if any(a <= b for a, b in zip(lams, lams[1:])):
            raise ValueError("penalties must be strictly descending")
        if len(self.fits) != len(lams):
            raise ValueError("need one fit per penalty")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "fits", tuple(self.fits))

    def __len__(self) -> int:
        return len(self.lambdas)

    def items(self):
        return [(lam, f) for lam, f in zip(self.lambdas, self.fits) if f is not None]


def fit_path(
    data: ProblemData,
    grid: Sequence[float],
    config: SolverConfig = SolverConfig(),
    init: Optional[ModelParams] = None,
) -> FitPath:
    """Fit every penalty in ``grid``; with ``config.warm_start`` each fit starts at the previous one."""
    grid = [float(v) for v in grid]
    if any(v <= 0 for v in grid) or any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be positive and strictly descending")
    start = init if init is not None else initial_params(data, config)
    fits, failures = [], {}
    for lam in grid:
        try:
            f = fit(data, lam, config, init=start)
        except (DivergenceError, np.linalg.LinAlgError) as err:
            log.warning("fit failed at lambda=%g: %s", lam, err)
            failures[lam] = str(err)
            fits.append(None)
            continue
        fits.append(f)
        if config.warm_start:
            start = f.params
    return FitPath(tuple(grid), tuple(fits), failures)
