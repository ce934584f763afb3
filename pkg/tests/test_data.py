import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesofolio.data import (
    PricePanel,
    ReturnPanel,
    WindowSpec,
    block_labels,
    generate_regime_switching,
    generate_synthetic,
    load_prices,
    slice_window,
    split_window,
    standardize,
    subsample_assets,
    subsample_indices,
    to_log_returns,
)
from mesofolio.errors import DataError, PreconditionError
from mesofolio.spectral import correlation_matrix


def _panel(returns):
    returns = np.asarray(returns, dtype=float)
    T, N = returns.shape
    dates = np.datetime64("2020-01-01") + np.arange(T)
    return ReturnPanel(dates=dates, assets=[f"A{i}" for i in range(N)], returns=returns)


def _prices(prices):
    prices = np.asarray(prices, dtype=float)
    dates = np.datetime64("2020-01-01") + np.arange(prices.shape[0])
    return PricePanel(dates=dates, assets=[f"A{i}" for i in range(prices.shape[1])], prices=prices)


# ---------------------------------------------------------------- loading


def test_load_wide(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text(
        "date,AAA,BBB,CCC\n"
        "2021-01-04,10,20,30\n2021-01-05,11,21,31\n2021-01-06,12,22,32\n"
        "2021-01-07,13,23,33\n2021-01-08,14,24,34\n"
    )
    panel = load_prices(path)
    assert panel.n_assets == 3
    assert panel.prices.shape == (5, 3)
    assert panel.assets == ("AAA", "BBB", "CCC")
    assert panel.report["dropped_assets"] == []


def test_load_long_matches_wide(tmp_path):
    wide = tmp_path / "w.csv"
    wide.write_text("date,X,Y\n2021-01-04,1,2\n2021-01-05,1.5,2.5\n")
    long = tmp_path / "l.csv"
    long.write_text(
        "date,ticker,close\n2021-01-05,Y,2.5\n2021-01-04,X,1\n2021-01-04,Y,2\n2021-01-05,X,1.5\n"
    )
    a, b = load_prices(wide), load_prices(long, layout="long")
    assert a.assets == b.assets
    np.testing.assert_array_equal(a.prices, b.prices)
    np.testing.assert_array_equal(a.dates, b.dates)


def test_missing_asset_dropped(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text(
        "date,A,B\n2021-01-04,1,1\n2021-01-05,1,\n2021-01-06,1,\n2021-01-07,1,1\n"
    )
    panel = load_prices(path, missing_threshold=0.01)
    assert panel.assets == ("A",)
    assert panel.report["dropped_assets"] == ["B"]


def test_gaps_forward_filled(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("date,A\n2021-01-04,1\n2021-01-05,\n2021-01-06,3\n")
    panel = load_prices(path, missing_threshold=0.5)
    np.testing.assert_array_equal(panel.prices[:, 0], [1, 1, 3])
    assert panel.report["forward_filled_cells"] == 1


def test_zero_price_rejected(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("date,A,B\n2021-01-04,1,2\n2021-01-05,0.0,2\n")
    with pytest.raises(DataError, match="non-positive"):
        load_prices(path)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_prices(tmp_path / "absent.csv")


# ---------------------------------------------------------------- returns


def test_log_return_definition():
    rp = to_log_returns(_prices([[100.0], [110.0]]))
    assert rp.returns.shape == (1, 1)
    assert rp.returns[0, 0] == pytest.approx(np.log(1.1), abs=1e-15)


def test_constant_prices_give_zero_returns():
    rp = to_log_returns(_prices([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]))
    np.testing.assert_array_equal(rp.returns[:, 0], 0.0)


def test_single_price_row_rejected():
    with pytest.raises(PreconditionError):
        to_log_returns(_prices([[1.0, 2.0]]))


def test_standardize_hand_value():
    z = standardize(_panel([[1.0], [-1.0]])).returns[:, 0]
    np.testing.assert_allclose(z, [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-15)


def test_standardize_flags_constant_column():
    out = standardize(_panel([[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]]))
    np.testing.assert_array_equal(out.returns[:, 1], 0.0)
    assert out.zero_variance == ("A1",)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_standardize_idempotent(T, N, seed):
    x = np.random.default_rng(seed).normal(3.0, 2.0, (T, N))
    once = standardize(_panel(x))
    twice = standardize(once)
    np.testing.assert_allclose(once.returns.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(once.returns.std(axis=0, ddof=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(twice.returns, once.returns, atol=1e-10)


# ---------------------------------------------------------------- windows


def test_in_sample_window_rows():
    rp = _panel(np.arange(8.0)[:, None])
    ins = slice_window(rp, WindowSpec(t0=4, delta=4))
    np.testing.assert_array_equal(ins.returns[:, 0], [0, 1, 2, 3])
    oos = slice_window(rp, WindowSpec(t0=4, delta=4, mode="out-of-sample"))
    np.testing.assert_array_equal(oos.returns[:, 0], [4, 5, 6, 7])


def test_window_by_date():
    rp = _panel(np.arange(8.0)[:, None])
    ins, oos = split_window(rp, "2020-01-05", 2)
    np.testing.assert_array_equal(ins.returns[:, 0], [2, 3])
    np.testing.assert_array_equal(oos.returns[:, 0], [4, 5])


def test_rolling_windows_disjoint():
    rp = _panel(np.arange(8.0)[:, None])
    parts = slice_window(rp, WindowSpec(mode="rolling", length=4, step=4))
    assert len(parts) == 2
    np.testing.assert_array_equal(parts[0].returns[:, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(parts[1].returns[:, 0], [4, 5, 6, 7])


def test_window_beyond_history():
    rp = _panel(np.arange(8.0)[:, None])
    with pytest.raises(PreconditionError):
        slice_window(rp, WindowSpec(t0=4, delta=5))


# ---------------------------------------------------------------- subsampling


def test_full_size_subsample_is_everything():
    for idx in subsample_indices(7, 7, 3, seed=1):
        np.testing.assert_array_equal(idx, np.arange(7))


def test_subsample_deterministic():
    a = subsample_indices(450, 100, 100, seed=42)
    b = subsample_indices(450, 100, 100, seed=42)
    assert len(a) == 100
    assert all(len(x) == 100 and len(set(x)) == 100 for x in a)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_subsample_panels():
    rp = _panel(np.random.default_rng(0).standard_normal((10, 450)))
    panels = subsample_assets(rp, 100, 5, seed=3)
    assert [p.n_assets for p in panels] == [100] * 5


def test_subsample_too_large():
    with pytest.raises(PreconditionError):
        subsample_indices(5, 6, 1, seed=0)


# ---------------------------------------------------------------- synthetic


def test_synthetic_deterministic():
    a = generate_synthetic(20, 50, [(10, 0.3), (10, 0.5)], market_loading=0.4, seed=9)
    b = generate_synthetic(20, 50, [(10, 0.3), (10, 0.5)], market_loading=0.4, seed=9)
    np.testing.assert_array_equal(a.returns, b.returns)


def test_synthetic_block_correlation():
    rp = generate_synthetic(20, 4000, [(10, 0.6), (10, 0.6)], seed=5)
    C = correlation_matrix(rp)
    labels = block_labels([(10, 0.6), (10, 0.6)])
    same = (labels[:, None] == labels[None, :]) & ~np.eye(20, dtype=bool)
    cross = labels[:, None] != labels[None, :]
    assert abs(C[same].mean() - 0.6) < 0.05
    assert abs(C[cross].mean()) < 0.05


@pytest.mark.parametrize("T", [500, 2000, 8000])
def test_pure_noise_correlations_vanish(T):
    rp = generate_synthetic(30, T, [(30, 0.0)], market_loading=0.0, seed=T)
    C = correlation_matrix(rp)
    off = C[~np.eye(30, dtype=bool)]
    assert abs(off.mean()) < 3 / np.sqrt(T)


def test_regime_switching_keeps_block_correlation():
    blocks = [(10, 0.4), (10, 0.4)]
    rp = generate_regime_switching(blocks, [3000, 3000], [0.3, 0.7], seed=2)
    labels = block_labels(blocks)
    same = (labels[:, None] == labels[None, :]) & ~np.eye(20, dtype=bool)
    for part in (rp.rows(0, 3000), rp.rows(3000, 6000)):
        C = correlation_matrix(part)
        np.testing.assert_allclose(np.diag(np.cov(part.returns, rowvar=False)), 1.0, atol=0.1)
        # within-block minus cross-block correlation is the block part only
        cross = labels[:, None] != labels[None, :]
        assert abs((C[same].mean() - C[cross].mean()) - 0.4) < 0.05


def test_regime_switching_rejects_excess_market():
    with pytest.raises(PreconditionError):
        generate_regime_switching([(5, 0.5)], [10], [0.8])
