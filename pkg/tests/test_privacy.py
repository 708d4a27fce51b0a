"""Tests for clipping and the Gaussian mechanism."""

from __future__ import annotations

import math
from decimal import Decimal, localcontext

import numpy as np
import pytest

from sfl_sim.exceptions import SpecificationError
from sfl_sim.model import federated_average
from sfl_sim.privacy import PrivacyParams, calibrate_sigma, clip_update, perturb


def _decimal_sigma(epsilon: int, delta_exponent: int, sensitivity: int) -> float:
    with localcontext() as ctx:
        ctx.prec = 40
        log_term = Decimal("1.25").ln() + Decimal(delta_exponent)
        return float(Decimal(sensitivity) * (2 * log_term).sqrt() / Decimal(epsilon))


def test_sigma_for_default_budget():
    sigma = calibrate_sigma(8.0, math.exp(-5), 1.0)
    assert sigma == pytest.approx(_decimal_sigma(8, 5, 1), rel=1e-12)
    assert sigma == pytest.approx(0.404009, abs=1e-6)
    assert PrivacyParams().sigma == sigma


@pytest.mark.parametrize("exponent", [1, 3, 5, 6])
def test_sigma_matches_high_precision_oracle(exponent):
    sigma = calibrate_sigma(2.0, math.exp(-exponent), 3.0)
    assert sigma == pytest.approx(_decimal_sigma(2, exponent, 3), rel=1e-12)


def test_sigma_grows_as_delta_shrinks():
    sigmas = [calibrate_sigma(8.0, math.exp(-k), 1.0) for k in (1, 3, 5, 6)]
    assert sigmas == sorted(sigmas)
    assert len(set(sigmas)) == len(sigmas)


@pytest.mark.parametrize(
    ("epsilon", "delta", "sensitivity"),
    [(0.0, 0.1, 1.0), (-1.0, 0.1, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 1.0), (1.0, 0.1, 0.0)],
)
def test_invalid_budget_is_rejected(epsilon, delta, sensitivity):
    with pytest.raises(SpecificationError):
        calibrate_sigma(epsilon, delta, sensitivity)
    with pytest.raises(SpecificationError):
        PrivacyParams(epsilon=epsilon, delta=delta, sensitivity=sensitivity)


def test_unbounded_sensitivity_needs_override():
    with pytest.raises(SpecificationError):
        PrivacyParams(sensitivity=math.inf)
    assert PrivacyParams(sensitivity=math.inf, sigma_override=0.0).sigma == 0.0
    with pytest.raises(SpecificationError):
        PrivacyParams(sigma_override=-0.1)


def test_clip_scales_long_vectors_only():
    clipped, was_clipped = clip_update(np.array([3.0, 4.0]), 1.0)
    assert was_clipped
    np.testing.assert_allclose(clipped, [0.6, 0.8])

    short, was_clipped = clip_update(np.array([0.3, 0.4]), 1.0)
    assert not was_clipped
    np.testing.assert_array_equal(short, [0.3, 0.4])

    infinite, was_clipped = clip_update(np.array([300.0, 400.0]), math.inf)
    assert not was_clipped
    np.testing.assert_array_equal(infinite, [300.0, 400.0])


def test_zero_sigma_adds_no_noise():
    params = PrivacyParams(sigma_override=0.0)
    update = perturb(np.array([0.1, -0.2]), params, np.random.default_rng(0), "device-000")
    np.testing.assert_array_equal(update.values, [0.1, -0.2])
    assert update.device_id == "device-000"
    assert update.dim == 2


def test_noise_has_the_calibrated_scale():
    params = PrivacyParams()
    sigma = params.sigma
    update = perturb(np.zeros(1_000_000), params, np.random.default_rng(42))
    assert abs(float(np.std(update.values)) - sigma) < 0.02 * sigma
    assert abs(float(np.mean(update.values))) < 3 * sigma / 1000


def test_noise_is_gaussian_shaped():
    params = PrivacyParams()
    values = perturb(np.zeros(1_000_000), params, np.random.default_rng(43)).values
    standardized = (values - values.mean()) / values.std()
    skewness = float(np.mean(standardized**3))
    excess_kurtosis = float(np.mean(standardized**4)) - 3.0
    assert abs(skewness) < 0.01
    assert abs(excess_kurtosis) < 0.02


def test_averaging_shrinks_noise_with_device_count():
    params = PrivacyParams()
    rng = np.random.default_rng(7)
    updates = [perturb(np.zeros(10_000), params, rng).values for _ in range(100)]
    average = federated_average(updates)
    assert abs(float(np.std(average)) - params.sigma / 10) < 0.05 * params.sigma / 10


def test_perturbed_update_is_read_only():
    update = perturb(np.ones(3), PrivacyParams(), np.random.default_rng(1))
    with pytest.raises(ValueError, match="read-only"):
        update.values[0] = 0.0
