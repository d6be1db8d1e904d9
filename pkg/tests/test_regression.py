from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierisk.errors import RegressionError
from hierisk.regression import _knots, make_basis


@pytest.fixture(scope="module")
def sample():
    return np.random.default_rng(0).normal(size=(5000, 1))


@pytest.mark.parametrize("kind", ["poly", "spline"])
def test_affine_targets_reproduced(sample, kind):
    proj = make_basis(kind).projector(sample, 0)
    target = 3.0 - 2.0 * sample[:, 0]
    np.testing.assert_allclose(proj.fit(target), target, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
def test_constant_shift_is_exact(c):
    x = np.random.default_rng(1).normal(size=(2000, 1))
    y = np.sin(3 * x[:, 0])
    for kind in ("poly", "spline"):
        proj = make_basis(kind).projector(x, 0)
        diff = proj.fit(y + c) - proj.fit(y)
        assert np.max(np.abs(diff - c)) <= 1e-10 * max(1.0, abs(c))


def test_degenerate_cross_section_gives_mean():
    x = np.zeros((100, 1))
    y = np.arange(100.0)
    for kind in ("poly", "spline"):
        np.testing.assert_allclose(make_basis(kind).projector(x, 0).fit(y), y.mean())


def test_quadratic_exact_for_poly(sample):
    y = sample[:, 0] ** 2 - sample[:, 0]
    np.testing.assert_allclose(make_basis("poly", 2).projector(sample, 0).fit(y), y, atol=1e-9)


def test_multi_target_fit(sample):
    proj = make_basis("poly", 2).projector(sample, 0)
    Y = np.column_stack([sample[:, 0], sample[:, 0] ** 2])
    np.testing.assert_allclose(proj.fit(Y), Y, atol=1e-9)


def test_weighted_fit_recovers_affine(sample):
    w = np.random.default_rng(3).uniform(0.1, 2.0, size=sample.shape[0])
    y = 1.0 + sample[:, 0]
    for kind in ("poly", "spline"):
        np.testing.assert_allclose(make_basis(kind).projector(sample, 0).fit_weighted(y, w), y, atol=1e-9)


def test_rank_deficiency_reported_with_step():
    a = np.random.default_rng(2).normal(size=200)
    x = np.column_stack([a, 2.0 * a + 1.0])  # perfectly collinear coordinates
    with pytest.raises(RegressionError) as info:
        make_basis("poly", 1).projector(x, 7)
    assert info.value.step == 7


def test_two_point_data_drops_flat_columns():
    x = np.repeat([0.0, 1.0], 50)[:, None]
    y = 5.0 * x[:, 0]
    np.testing.assert_allclose(make_basis("poly", 2).projector(x, 0).fit(y), y, atol=1e-12)


def test_spline_rejects_vector_state():
    with pytest.raises(RegressionError):
        make_basis("spline").projector(np.zeros((10, 2)), 0)


def test_knots_keep_enough_support():
    x = np.random.default_rng(5).standard_cauchy(3000)
    k = _knots(x, 20)
    counts = np.histogram(x, bins=k)[0]
    assert k[0] == x.min() and k[-1] == x.max()
    assert np.all(counts[:-1] + counts[1:] >= 10)


def test_basis_validation():
    with pytest.raises(ValueError):
        make_basis("fourier")
    assert make_basis("spline", knots=8).describe() == "spline(knots=8)"
