import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisediff.mixture import GaussianMixtureModel, template_mixture
from noisediff.ode import OdeConfig, SigmaSchedule
from noisediff.stats import (EMPIRICAL_RULE, empirical_rule_check, mismatch_experiment, norm_concentration,
                             orthogonality_stats, sphere_radius_diag, weighted_norm_ratio)
from noisediff.tensor import make_rng


def test_norm_concentration_at_ten_thousand_dimensions():
    r = norm_concentration(10_000, 1000, seed=0)
    assert r.passed
    assert r.values["mean_abs_dev"] <= 1.0
    assert r.values["frac_within_5"] >= 0.99
    # the chi distribution has std -> 1/sqrt(2)
    assert r.std == pytest.approx(1 / math.sqrt(2), rel=0.1)


def test_norm_concentration_one_dimension_is_half_normal():
    r = norm_concentration(1, 200_000, seed=1)
    # ||X|| - 1 for n=1, so |X| has mean sqrt(2/pi)
    assert r.mean + 1 == pytest.approx(math.sqrt(2 / math.pi), abs=0.005)
    assert r.checks == {}


def test_norm_concentration_scales_with_std():
    base = norm_concentration(400, 300, seed=2)
    scaled = norm_concentration(400, 300, seed=2, std=3.0)
    assert scaled.mean == pytest.approx(3 * base.mean, rel=1e-9, abs=1e-9)


def test_reports_are_bit_reproducible():
    a, b = orthogonality_stats(256, 200, seed=3), orthogonality_stats(256, 200, seed=3)
    assert a.to_dict() == b.to_dict()
    assert orthogonality_stats(256, 200, seed=4).mean != a.mean


def test_quantiles_are_monotone():
    q = list(norm_concentration(100, 500, seed=5).quantiles.values())
    assert q == sorted(q)


def test_orthogonality_window():
    r = orthogonality_stats(10_000, 1000, seed=6)
    assert r.passed
    assert abs(r.mean) <= 0.1
    assert 0.8 <= r.values["variance"] <= 1.2


def test_orthogonality_same_vector_is_flagged():
    r = orthogonality_stats(64, 100, seed=7, same=True)
    np.testing.assert_allclose(r.mean / 8.0, 1.0, rtol=1e-14)
    assert r.checks["independent"] is False
    assert not r.passed


def test_orthogonality_small_n_skips_variance_window():
    r = orthogonality_stats(2, 500, seed=8)
    assert not any(k.startswith("var") for k in r.checks)


def test_weighted_norm_pure_alpha_matches_concentration():
    r = weighted_norm_ratio(1.0, 0.0, 0.0, 400, 300, seed=9)
    z = make_rng(9).standard_normal((300, 1200))[:, :400]
    np.testing.assert_allclose(r.mean, np.mean(np.linalg.norm(z, axis=1) / 20.0), rtol=1e-12)


@pytest.mark.parametrize("coef", [(1 / math.sqrt(3),) * 3, (1 / math.sqrt(2), 1 / math.sqrt(2), 0.0)])
def test_weighted_norm_ratio_window(coef):
    r = weighted_norm_ratio(*coef, 10_000, 100, seed=10)
    assert r.passed
    assert 0.99 <= r.mean <= 1.01


def test_weighted_norm_rejects_bad_input():
    with pytest.raises(ValueError):
        weighted_norm_ratio(0.0, 0.0, 0.0, 100, 10, seed=0)
    with pytest.raises(ValueError):
        weighted_norm_ratio(1.0, 0.0, 0.0, 50, 10, seed=0)


def test_empirical_rule_constants():
    assert EMPIRICAL_RULE[1] == pytest.approx(0.6827, abs=1e-4)
    assert EMPIRICAL_RULE[2] == pytest.approx(0.9545, abs=1e-4)
    assert EMPIRICAL_RULE[3] == pytest.approx(0.9973, abs=1e-4)


def test_empirical_rule_at_one_million_samples():
    r = empirical_rule_check(10**6, seed=11)
    assert r.passed
    assert abs(r.values["within_3sd"] - 0.9973) <= 0.002
    assert abs(r.values["within_1sd"] - 0.6827) <= 0.002


def test_sphere_radius_for_gaussian_latent():
    sigma = 80.0
    z = make_rng(12).standard_normal(4096) * sigma
    assert 0.97 <= sphere_radius_diag(z, sigma) <= 1.03
    assert sphere_radius_diag(2 * z, sigma) == pytest.approx(2 * sphere_radius_diag(z, sigma), rel=1e-14)


@given(st.floats(1e-3, 1e3))
@settings(max_examples=25)
def test_sphere_radius_is_homogeneous(c):
    z = np.arange(1.0, 10.0)
    assert sphere_radius_diag(c * z, c) == pytest.approx(sphere_radius_diag(z, 1.0), rel=1e-12)


def test_sphere_radius_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        sphere_radius_diag(np.ones(3), 0.0)


@pytest.fixture(scope="module")
def mismatch_report():
    rng = make_rng(13)
    model = template_mixture(8, 3, rng)
    ode = OdeConfig(SigmaSchedule(n_steps=32), model)
    levels = [0.0, 0.7, 0.875, 1.0, 1.125, 1.25, 3.0]
    return mismatch_experiment(model, levels, 1.0, ode, seed=14, trials=32), model


def test_mismatch_rows_and_reproducibility(mismatch_report):
    r, model = mismatch_report
    assert r.n_samples == 7
    assert set(r.checks) == {"under_noise_worse", "over_noise_worse"}
    assert all(row["mse_center"] >= 0 for row in r.values.values())
    ode = OdeConfig(SigmaSchedule(n_steps=32), model)
    again = mismatch_experiment(model, [0.0, 0.7, 0.875, 1.0, 1.125, 1.25, 3.0], 1.0, ode, seed=14, trials=32)
    assert again.to_dict() == r.to_dict()


def test_mismatch_no_noise_collapses_onto_centers(mismatch_report):
    r, model = mismatch_report
    rows = r.values
    # decoding a clean image from sigma = 1 contracts it toward a center: spread far below delta^2
    assert rows["0.0"]["mse_center"] < 0.01 * model.delta**2
    assert rows["0.0"]["spread_gap"] > rows["1.0"]["spread_gap"]


def test_mismatch_heavy_over_noise_is_worse(mismatch_report):
    rows = mismatch_report[0].values
    assert rows["3.0"]["mse_center"] > rows["1.0"]["mse_center"]
    assert rows["3.0"]["mse_source"] > rows["1.0"]["mse_source"]


def test_mismatch_spread_gap_is_smallest_near_matched_level(mismatch_report):
    rows = mismatch_report[0].values
    gaps = {k: v["spread_gap"] for k, v in rows.items()}
    assert gaps["1.0"] < gaps["0.0"] and gaps["1.0"] < gaps["3.0"]


def test_mismatch_rejects_levels_outside_schedule():
    model = GaussianMixtureModel.single(np.zeros(4))
    ode = OdeConfig(SigmaSchedule(n_steps=8, sigma_max=5.0), model)
    with pytest.raises(ValueError):
        mismatch_experiment(model, [1.0, 6.0], 1.0, ode, seed=0, trials=2)
    with pytest.raises(ValueError):
        mismatch_experiment(model, [1.0], 10.0, ode, seed=0, trials=2)
