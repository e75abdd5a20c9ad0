import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_hotspots.basis import default_basis_set
from poisson_hotspots.model import ProblemData
from poisson_hotspots.monitor import (
    CalibrationError,
    CusumChart,
    H0Moments,
    average_run_length,
    bootstrap_generator,
    calibrate_limit,
    cusum_update,
    estimate_h0_moments,
    normal_generator,
    p_plus,
    residual,
    run_chart,
    run_lengths,
    standardized_max,
    write_history_csv,
)
from poisson_hotspots.solver import FitPath


def fake_fit(h, background):
    return SimpleNamespace(h_hat=np.asarray(h, float), background_counts=np.asarray(background, float))


def data_from(y):
    y = np.asarray(y, float)
    return ProblemData(y, np.ones_like(y), default_basis_set(y.shape))


def test_residual_single_cell():
    data = data_from([[[3.0]]])
    fit = fake_fit([[[0.0]]], [[[1.0]]])
    assert residual(fit, data, 0)[0] == 2.0
    assert residual(fit, data, 0, pearson=True)[0] == 2.0


def test_residual_matches_slice_oracle():
    rng = np.random.default_rng(0)
    y = rng.poisson(5, (3, 4, 5)).astype(float)
    bg = rng.uniform(1, 9, (3, 4, 5))
    fit = fake_fit(np.zeros_like(bg), bg)
    data = data_from(y)
    for k in range(5):
        np.testing.assert_allclose(residual(fit, data, k), (y[:, :, k] - bg[:, :, k]).ravel(), atol=1e-12)
        np.testing.assert_allclose(
            residual(fit, data, k, True), ((y[:, :, k] - bg[:, :, k]) / np.sqrt(bg[:, :, k])).ravel(), atol=1e-12
        )


def test_p_plus_cases():
    rng = np.random.default_rng(1)
    y = rng.poisson(5, (3, 3, 2)).astype(float)
    bg = np.full(y.shape, 4.0)
    data = data_from(y)
    assert p_plus(fake_fit(-np.ones_like(bg), bg), data, 0) == 0.0
    h = np.zeros_like(bg)
    h[1, 2, 1] = 7.3
    assert p_plus(fake_fit(h, bg), data, 1) == pytest.approx(y[1, 2, 1] - 4.0)
    h = rng.normal(size=bg.shape)
    hp = np.maximum(h[:, :, 0].ravel(), 0)
    oracle = hp @ (y[:, :, 0] - bg[:, :, 0]).ravel() / np.linalg.norm(hp)
    assert p_plus(fake_fit(h, bg), data, 0) == pytest.approx(oracle, abs=1e-12)


@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_p_plus_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    y = rng.poisson(5, (3, 3, 1)).astype(float)
    bg = rng.uniform(1, 9, y.shape)
    h = rng.normal(size=y.shape)
    data = data_from(y)
    assert p_plus(fake_fit(c * h, bg), data, 0) == pytest.approx(p_plus(fake_fit(h, bg), data, 0), rel=1e-9, abs=1e-12)


def test_moments_two_point_and_drop():
    m = estimate_h0_moments({2.0: [0, 2, 0, 2, 0, 2], 1.0: [3.0] * 6})
    assert m.mean[2.0] == 1.0
    assert m.var[2.0] == pytest.approx(1.2)
    assert m.dropped == (1.0,)
    assert m.lambdas == (2.0,)
    with pytest.raises(ValueError):
        estimate_h0_moments({1.0: [1, 2, 3, 4]})


def test_moments_match_large_sample():
    rng = np.random.default_rng(2)
    small = rng.normal(3.0, 2.0, 200)
    m = estimate_h0_moments({1.0: small})
    assert m.mean[1.0] == pytest.approx(np.mean(small))
    assert m.var[1.0] == pytest.approx(np.var(small, ddof=1))
    assert abs(m.mean[1.0] - 3.0) < 4 * 2.0 / math.sqrt(200)


def test_standardized_max_rules():
    mom = H0Moments({3.0: 1.0, 2.0: 0.0, 1.0: 5.0}, {3.0: 4.0, 2.0: 1.0, 1.0: 1.0}, 10)
    val, lam = standardized_max({3.0: 5.0, 2.0: 1.0, 1.0: 5.5}, mom)
    assert (val, lam) == (2.0, 3.0)  # tie between 3.0 and 2.0 goes to the larger penalty
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = {lam: float(rng.normal()) for lam in mom.lambdas}
        z = {lam: (p[lam] - mom.mean[lam]) / math.sqrt(mom.var[lam]) for lam in mom.lambdas}
        best = max(z.values())
        assert standardized_max(p, mom) == (best, max(l for l in z if z[l] == best))
    single = H0Moments({1.0: 2.0}, {1.0: 4.0}, 5)
    assert standardized_max({1.0: 4.0}, single) == (1.0, 1.0)
    with pytest.raises(ValueError):
        standardized_max({}, single)


def test_p_tilde_invariant_to_common_shift():
    mom = H0Moments({2.0: 0.5, 1.0: -1.0}, {2.0: 2.0, 1.0: 3.0}, 10)
    shifted = H0Moments({k: v + 7.0 for k, v in mom.mean.items()}, mom.var, 10)
    p = {2.0: 1.0, 1.0: 2.0}
    p_shift = {k: v + 7.0 for k, v in p.items()}
    assert standardized_max(p, mom)[0] == pytest.approx(standardized_max(p_shift, shifted)[0])


def test_cusum_update_examples():
    assert cusum_update(0.0, 0.3, 0.5) == 0.0
    assert cusum_update(1.0, 1.5, 0.5) == 2.0
    assert cusum_update(0.2, -5.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        cusum_update(-1.0, 0.0, 0.5)


@given(st.floats(0, 100), st.floats(-50, 50), st.floats(-50, 50))
def test_cusum_nonnegative_and_lipschitz(w, a, b):
    wa, wb = cusum_update(w, a, 0.5), cusum_update(w, b, 0.5)
    assert wa >= 0 and wb >= 0
    assert abs(wa - wb) <= abs(a - b) + 1e-9


def test_run_lengths_hand_case():
    stats = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0], [3.0, 0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(run_lengths(stats, 0.5, 1.2), [3, 4, 1])


def test_zero_limit_alarms_immediately():
    stats = np.full((10, 5), 0.6)
    assert np.all(run_lengths(stats, 0.5, 0.0) == 1)


def test_limit_monotonicity():
    gen = normal_generator()
    arls = [average_run_length(gen, 0.5, L, 1000, 4, max_len=500) for L in (0.5, 1.0, 2.0, 4.0)]
    assert all(a <= b for a, b in zip(arls, arls[1:]))


def test_calibration_monotone_in_target():
    gen = normal_generator()
    limits = [calibrate_limit(gen, 0.5, t, 1000, 9) for t in (20.0, 50.0, 100.0)]
    assert limits[0] <= limits[1] <= limits[2]


def test_calibration_deterministic_and_validated():
    gen = normal_generator()
    assert calibrate_limit(gen, 0.5, 30.0, 1000, 1) == calibrate_limit(gen, 0.5, 30.0, 1000, 1)
    with pytest.raises(ValueError):
        calibrate_limit(gen, 0.5, 1.0, 1000, 1)
    with pytest.raises(ValueError):
        calibrate_limit(gen, 0.5, 50.0, 999, 1)
    with pytest.raises(CalibrationError):
        calibrate_limit(bootstrap_generator([0.0]), 0.5, 50.0, 1000, 1)


def test_coarse_pool_returns_closest_limit(caplog):
    pool = [-0.5] * 9 + [3.0]
    gen = bootstrap_generator(pool)
    limit = calibrate_limit(gen, 0.5, 50.0, 1000, 0)
    stats = gen(np.random.default_rng(0), 1000, 2000)
    near = np.mean(run_lengths(stats, 0.5, limit))
    for other in np.linspace(0, 50, 201):
        assert abs(near - 50) <= abs(np.mean(run_lengths(stats, 0.5, other)) - 50) + 1e-9
    if abs(near - 50) > 2.5:
        assert "away from target" in caplog.text
        with pytest.raises(CalibrationError):
            calibrate_limit(gen, 0.5, 50.0, 1000, 0, strict=True)


def test_bootstrap_generator_draws_from_pool():
    draws = bootstrap_generator([1.0, 2.0])(np.random.default_rng(0), 5, 7)
    assert draws.shape == (5, 7)
    assert set(np.unique(draws)) <= {1.0, 2.0}


def test_chart_history_and_alarm():
    chart = CusumChart(H0Moments({1.0: 0.0}, {1.0: 1.0}, 5), 0.5, 1.0)
    assert not chart.update(1, 0.8)
    assert chart.update(2, 1.5)
    assert chart.alarm_time == 2
    assert [r.w for r in chart.history] == pytest.approx([0.3, 1.3])
    with pytest.raises(ValueError):
        chart.update(2, 0.0)
    chart.reset()
    assert chart.w == 0.0 and chart.history == []


def _path_with(h, bg):
    fit = fake_fit(h, bg)
    return FitPath((1.0,), (fit,))


def test_run_chart_huge_limit_and_alarm():
    y = np.zeros((2, 2, 6))
    y[0, 0, 4:] = 10.0
    bg = np.ones_like(y)
    h = np.zeros_like(y)
    h[0, 0, :] = 1.0
    data = data_from(y)
    path = _path_with(h, bg)
    mom = H0Moments({1.0: -1.0}, {1.0: 1.0}, 5)
    assert run_chart(data, lambda k: path, CusumChart(mom, 0.5, math.inf), range(6)) is None
    chart = CusumChart(mom, 0.5, 5.0)
    assert run_chart(data, lambda k: path, chart, range(6)) == 5
    assert chart.history[-1].lam_star == 1.0


def test_run_chart_flags_failed_fit():
    data = data_from(np.zeros((2, 2, 3)))

    def broken(k):
        raise ArithmeticError("diverged")

    chart = CusumChart(H0Moments({1.0: 0.0}, {1.0: 1.0}, 5), 0.5, 10.0)
    assert run_chart(data, broken, chart, range(3)) is None
    assert all(r.flagged and r.p_tilde == 0.0 for r in chart.history)


def test_history_csv(tmp_path):
    chart = CusumChart(H0Moments({1.0: 0.0}, {1.0: 1.0}, 5), 0.5, 1.0)
    chart.update(16, 2.0, 1.0, 3.0)
    out = tmp_path / "h.csv"
    write_history_csv(chart, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,lambda_star,p_plus,p_tilde,w,alarm"
    assert lines[1] == "16,1.0,3.0,2.0,1.5,1"
