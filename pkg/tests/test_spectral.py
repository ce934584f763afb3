import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesofolio.data import ReturnPanel, WindowSpec
from mesofolio.errors import PreconditionError
from mesofolio.spectral import (
    block_average,
    correlation_matrix,
    decompose,
    decompose_panel,
    eigensystem,
    mp_bounds,
    relative_change_norm,
    risk_fraction_series,
    risk_fractions,
    sign_uniformity,
)


def _panel(x):
    x = np.asarray(x, dtype=float)
    dates = np.datetime64("2020-01-01") + np.arange(x.shape[0])
    return ReturnPanel(dates=dates, assets=[f"A{i}" for i in range(x.shape[1])], returns=x)


def equicorrelation(n, rho):
    return (1 - rho) * np.eye(n) + rho * np.ones((n, n))


INFINITE_SAMPLE = mp_bounds(10, 10**12)


# ---------------------------------------------------------------- correlation


def test_identical_and_negated_columns():
    a = np.random.default_rng(0).standard_normal(50)
    C = correlation_matrix(_panel(np.column_stack([a, a, -a])))
    assert C[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert C[0, 2] == pytest.approx(-1.0, abs=1e-12)


def test_independent_columns_near_zero():
    C = correlation_matrix(_panel(np.random.default_rng(1).standard_normal((10000, 3))))
    assert np.all(np.abs(C[~np.eye(3, dtype=bool)]) < 0.05)


def test_zero_variance_column_rejected():
    x = np.random.default_rng(2).standard_normal((20, 3))
    x[:, 1] = 4.0
    with pytest.raises(PreconditionError, match="zero-variance"):
        correlation_matrix(_panel(x))


# ---------------------------------------------------------------- bounds


def test_mp_bounds_quarter():
    b = mp_bounds(100, 400)
    assert (b.lambda_min, b.lambda_max) == pytest.approx((0.25, 2.25), abs=1e-15)
    assert b.kappa == 4.0


def test_mp_bounds_limit():
    b = mp_bounds(1, 10**6)
    assert b.lambda_min == pytest.approx(1.0, abs=3e-3)
    assert b.lambda_max == pytest.approx(1.0, abs=3e-3)


@pytest.mark.parametrize("n,t", [(50, 50), (50, 20)])
def test_mp_bounds_need_kappa_above_one(n, t):
    with pytest.raises(PreconditionError):
        mp_bounds(n, t)


# ---------------------------------------------------------------- decomposition


def test_identity_is_all_noise():
    dec = decompose(np.eye(6), mp_bounds(6, 60))
    assert len(dec.indices_g) == 0 and len(dec.indices_m) == 0
    np.testing.assert_allclose(dec.C_r, np.eye(6), atol=1e-12)
    fr = risk_fractions(dec)
    assert (fr.frac_r, fr.frac_g, fr.frac_m) == pytest.approx((1.0, 0.0, 0.0))


def test_equicorrelation_is_pure_market():
    dec = decompose(equicorrelation(10, 0.5), INFINITE_SAMPLE)
    assert list(dec.indices_m) == [0]
    assert len(dec.indices_g) == 0
    assert dec.eig.values[0] == pytest.approx(5.5, abs=1e-12)
    np.testing.assert_allclose(dec.C_m, np.full((10, 10), 0.55), atol=1e-12)
    assert risk_fractions(dec).frac_m == pytest.approx(0.55, abs=1e-12)


def test_planted_panel_has_market_and_meso(planted_panel):
    dec = decompose_panel(planted_panel)
    assert list(dec.indices_m) == [0]
    assert len(dec.indices_g) == 3
    assert dec.eig.vectors[:, 0].sum() > 0


def test_non_uniform_leading_vector_goes_to_meso():
    # two anti-correlated blocks: the leading vector has mixed signs
    C = np.block([[equicorrelation(5, 0.8), -0.5 * np.ones((5, 5))],
                  [-0.5 * np.ones((5, 5)), equicorrelation(5, 0.8)]])
    with pytest.warns(UserWarning, match="sign-uniform"):
        dec = decompose(C, INFINITE_SAMPLE)
    assert len(dec.indices_m) == 0
    assert 0 in dec.indices_g
    np.testing.assert_allclose(dec.C_m, 0.0)


def test_sign_uniformity():
    assert sign_uniformity(np.array([1.0, 2.0, -0.1, 3.0])) == 0.75
    assert sign_uniformity(-np.ones(5)) == 1.0


def test_eigensystem_orientation():
    eig = eigensystem(equicorrelation(4, 0.3))
    assert np.all(np.diff(eig.values) <= 0)
    for k in range(4):
        v = eig.vectors[:, k]
        assert v[np.argmax(np.abs(v))] > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(1.2, 5.0), st.integers(0, 2**32 - 1))
def test_reconstruction(n, kappa, seed):
    rng = np.random.default_rng(seed)
    T = int(np.ceil(kappa * n)) + 1
    x = rng.standard_normal((T, n)) + rng.uniform(0, 1) * rng.standard_normal((T, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dec = decompose_panel(_panel(x))
    total = dec.C_r + dec.C_g + dec.C_m
    assert np.max(np.abs(total - dec.C)) < 1e-10
    assert abs(np.trace(dec.C) - n) < 1e-10
    for M in (dec.C_r, dec.C_g, dec.C_m):
        np.testing.assert_allclose(M, M.T, atol=1e-14)
        assert np.linalg.eigvalsh(M).min() > -1e-10
    fr = risk_fractions(dec)
    assert fr.frac_r + fr.frac_g + fr.frac_m == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- risk-fraction series


def test_series_single_window_degenerates(planted_panel):
    rp = planted_panel.rows(0, 1000)
    series = risk_fraction_series(rp, WindowSpec(mode="rolling", length=1000), size=100, draws=1, seed=0)
    direct = risk_fractions(decompose_panel(rp)).as_array()
    np.testing.assert_allclose(series.mean[0], direct, atol=1e-12)
    assert series.mean.shape == (1, 3)


def test_series_shapes_and_determinism(planted_panel):
    spec = WindowSpec(mode="rolling", length=500, step=500)
    a = risk_fraction_series(planted_panel, spec, size=40, draws=4, seed=3)
    b = risk_fraction_series(planted_panel, spec, size=40, draws=4, seed=3)
    assert a.mean.shape == (4, 3)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_allclose(a.mean.sum(axis=1), 1.0)


# ---------------------------------------------------------------- relative change


def test_relative_change_zero():
    C = equicorrelation(4, 0.3)
    assert relative_change_norm(C, C).value == 0.0


def test_relative_change_doubling():
    C = equicorrelation(4, 0.3)
    rc = relative_change_norm(C, 2 * C)
    assert rc.value == pytest.approx(1.0)
    assert rc.raw == pytest.approx(16.0)
    assert relative_change_norm(C, 2 * C, p=2).value == pytest.approx(1.0)


def test_relative_change_single_entry():
    rc = relative_change_norm(np.array([[0.5]]), np.array([[0.4]]))
    assert rc.value == pytest.approx(0.2, abs=1e-15)


def test_relative_change_guard_and_diagonal():
    prev = np.array([[1.0, 0.0], [0.0, 2.0]])
    nxt = np.array([[1.5, 0.3], [0.3, 1.0]])
    rc = relative_change_norm(prev, nxt)
    assert (rc.included, rc.excluded) == (2, 2)
    assert rc.value == pytest.approx(0.5)
    with pytest.raises(PreconditionError):
        relative_change_norm(prev, nxt, include_diagonal=False)


# ---------------------------------------------------------------- block average

HAND_CG = np.array([
    [1.0, 0.5, 0.1, 0.2],
    [0.5, 1.0, 0.3, 0.0],
    [0.1, 0.3, 1.0, 0.4],
    [0.2, 0.0, 0.4, 1.0],
])


def test_block_average_hand_example():
    out = block_average(HAND_CG, [0, 0, 1, 1])
    expected = np.array([
        [0.75, 0.75, 0.15, 0.15],
        [0.75, 0.75, 0.15, 0.15],
        [0.15, 0.15, 0.70, 0.70],
        [0.15, 0.15, 0.70, 0.70],
    ])
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_block_average_off_diagonal_means():
    out = block_average(HAND_CG, [0, 0, 1, 1], exclude_diagonal=True)
    assert out[0, 1] == pytest.approx(0.5) and out[2, 3] == pytest.approx(0.4)
    assert out[0, 2] == pytest.approx(0.15)
    np.testing.assert_allclose(np.diag(out), 1.0)


def test_block_average_singletons_identity(rng):
    A = rng.standard_normal((6, 6))
    A = A + A.T
    np.testing.assert_allclose(block_average(A, np.arange(6)), A, atol=1e-15)
    np.testing.assert_allclose(block_average(A, np.arange(6), exclude_diagonal=True), A, atol=1e-15)


def test_block_average_one_community(rng):
    A = rng.standard_normal((5, 5))
    out = block_average(A + A.T, np.zeros(5, dtype=int))
    np.testing.assert_allclose(out, np.full((5, 5), (A + A.T).mean()), atol=1e-14)
