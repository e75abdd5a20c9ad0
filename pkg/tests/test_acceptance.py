"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line."""
import os

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, small_problem
from poisson_hotspots.basis import bspline_basis
from poisson_hotspots.evalkit import run_experiment
from poisson_hotspots.model import ModelParams, grad_theta_h, grad_theta_m, neg_log_likelihood
from poisson_hotspots.monitor import calibrate_limit, normal_generator, run_lengths
from poisson_hotspots.simgen import ScenarioConfig
from poisson_hotspots.solver import (
    SolverConfig,
    fista_solve,
    fit,
    glm_fit,
    lambda_max,
    soft_threshold,
)
from poisson_hotspots.tensor import kron, mode_n_product, tucker_reconstruct, vectorize
from test_solver import newton_glm_oracle

REPLICATIONS = 100
SEED = 20240
WORKERS = os.cpu_count() or 1
TIGHT = SolverConfig(max_outer=500, max_inner=20000, outer_tol=1e-14, inner_tol=1e-13)


def report(number, checks):
    """``checks`` is a list of (name, value, ok, target text)."""
    ok = all(c[2] for c in checks)
    detail = "; ".join(f"{name}={value:.4g} ({'ok' if good else 'miss'}, target {target})" for name, value, good, target in checks)
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def within(value, centre, tol):
    return abs(value - centre) <= tol


@pytest.fixture(scope="module")
def strong_signal():
    cfg = ScenarioConfig(delta=0.2, population_trend="decreasing")
    return run_experiment(cfg, REPLICATIONS, SEED, workers=WORKERS)


@pytest.fixture(scope="module")
def weak_signal():
    cfg = ScenarioConfig(delta=0.05, population_trend="increasing")
    return run_experiment(cfg, REPLICATIONS, SEED, workers=WORKERS)


def test_criterion_1_strong_signal(strong_signal):
    row = strong_signal.rows[0]
    m = row.mean
    checks = [
        ("ARL1", m["arl1"], 1.0 <= m["arl1"] <= 1.2, "[1.0, 1.2]"),
        ("precision", m["precision"], within(m["precision"], 0.81, 0.10), "0.81 +/- 0.10"),
        ("recall", m["recall"], within(m["recall"], 0.535, 0.10), "0.535 +/- 0.10"),
        ("F", m["f_measure"], within(m["f_measure"], 0.644, 0.10), "0.644 +/- 0.10"),
        ("failed_reps", row.failures, row.failures == 0, "0"),
    ]
    assert report(1, checks)


def test_criterion_2_weak_signal(weak_signal):
    row = weak_signal.rows[0]
    m = row.mean
    checks = [
        ("ARL1", m["arl1"], within(m["arl1"], 2.0, 0.6), "2.0 +/- 0.6"),
        ("precision", m["precision"], within(m["precision"], 0.46, 0.12), "0.46 +/- 0.12"),
        ("failed_reps", row.failures, row.failures == 0, "0"),
    ]
    assert report(2, checks)


def test_criterion_3_background_fit(weak_signal):
    value = weak_signal.rows[0].mean["smse"]
    target = 0.0259e5
    checks = [("SMSE", value, target / 2 <= value <= target * 2, f"[{target / 2:g}, {target * 2:g}]")]
    assert report(3, checks)


def test_criterion_4_calibration():
    gen = normal_generator(0.0, 1.0)
    limit = calibrate_limit(gen, d_star=0.5, target_arl0=50.0, reps=1000, seed=SEED)
    fresh = gen(np.random.default_rng(SEED + 1), 5000, 2000)
    arl0 = float(np.mean(run_lengths(fresh, 0.5, limit)))
    assert report(4, [("ARL0", arl0, within(arl0, 50.0, 5.0), "50 +/- 10%"), ("L", limit, True, "-")])


def _central(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_criterion_5_gradients():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        dims = tuple(int(d) for d in rng.integers(1, 4, size=3))
        data = small_problem(dims, seed=seed, pop_scale=5.0)
        p = ModelParams(rng.normal(0, 0.3, data.basis.p), rng.normal(0, 0.3, data.basis.q))
        fm = _central(lambda v: neg_log_likelihood(data, ModelParams(v, p.theta_h)), p.theta_m)
        fh = _central(lambda v: neg_log_likelihood(data, ModelParams(p.theta_m, v)), p.theta_h)
        for analytic, fd in ((grad_theta_m(data, p), fm), (grad_theta_h(data, p), fh)):
            worst = max(worst, np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12))
    assert report(5, [("max_rel_err", worst, worst < 1e-5, "< 1e-5")])


def test_criterion_6_solver_oracles():
    glm_err = fp_resid = trace_rise = 0.0
    for seed in range(5):
        data = small_problem((4, 3, 5), seed=seed)
        res = fit(data, 1e12, TIGHT)
        glm_err = max(glm_err, float(np.max(np.abs(res.params.theta_m - newton_glm_oracle(data)))))

        theta_m = glm_fit(data)
        lam = 0.1 * lambda_max(data, theta_m=theta_m)
        fr = fista_solve(data, theta_m, np.zeros(data.basis.q), lam, TIGHT)
        g = grad_theta_h(data, ModelParams(theta_m, fr.theta_h))
        r = fr.theta_h - soft_threshold(fr.theta_h - g / fr.lipschitz, lam / fr.lipschitz)
        fp_resid = max(fp_resid, float(np.max(np.abs(r))))

        for frac in (0.0, 0.05, 0.3, 1.0):
            tr = fit(data, frac * lambda_max(data), SolverConfig()).objective_trace
            trace_rise = max(trace_rise, float(np.max(np.diff(tr))) if len(tr) > 1 else 0.0)
    checks = [
        ("glm_abs_err", glm_err, glm_err < 1e-6, "< 1e-6"),
        ("prox_residual", fp_resid, fp_resid < 1e-6, "< 1e-6"),
        ("max_trace_rise", trace_rise, trace_rise <= 1e-8, "<= 1e-8"),
    ]
    assert report(6, checks)


def test_criterion_7_tensor_algebra():
    rng = np.random.default_rng(SEED)
    kron_err = mode_err = 0.0
    for _ in range(50):
        core_shape = tuple(int(v) for v in rng.integers(1, 5, 3))
        out_shape = tuple(int(v) for v in rng.integers(1, 6, 3))
        core = rng.normal(size=core_shape)
        b = [rng.normal(size=(o, c)) for o, c in zip(out_shape, core_shape)]
        lhs = vectorize(tucker_reconstruct(core, *b))
        kron_err = max(kron_err, float(np.max(np.abs(lhs - kron(kron(b[0], b[1]), b[2]) @ vectorize(core)))))
        for mode in range(3):
            got = mode_n_product(core, b[mode], mode)
            unf = np.moveaxis(core, mode, 0).reshape(core_shape[mode], -1)
            shape = [out_shape[mode]] + [s for i, s in enumerate(core_shape) if i != mode]
            oracle = np.moveaxis((b[mode] @ unf).reshape(shape), 0, mode)
            mode_err = max(mode_err, float(np.max(np.abs(got - oracle))))
    pu_err = 0.0
    for n, k in ((49, 8), (10, 7), (26, 7), (100, 12), (7, 3)):
        for order in (1, 2, 3, 4):
            bs = bspline_basis(n, np.linspace(1, 50, k), order)
            pu_err = max(pu_err, float(np.max(np.abs(bs.sum(axis=1) - 1.0))))
    checks = [
        ("kron_vec_err", kron_err, kron_err <= 1e-12, "<= 1e-12"),
        ("mode_product_err", mode_err, mode_err <= 1e-12, "<= 1e-12"),
        ("partition_of_unity_err", pu_err, pu_err <= 1e-12, "<= 1e-12"),
    ]
    assert report(7, checks)


def test_criterion_8_determinism(tmp_path):
    from poisson_hotspots.cli import main

    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        args = ["evaluate", "--seed", "7", "--set", "replications=2", "--set", "delta=0.2",
                "--set", "population_trend=decreasing", "--out", str(out)]
        assert main(args) == 0
        outs.append(((out / "aggregate.csv").read_bytes(), (out / "replications.ndjson").read_bytes()))
    same = outs[0] == outs[1]
    assert report(8, [("identical_outputs", float(same), same, "1")])
