import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_modularity

from mesofolio.communities import (
    ModularityContext,
    Partition,
    canonical_labels,
    detect_communities,
    maximize_modularity,
    modularity_of,
    partition_stability,
    sector_composition,
    wcm_null,
)
from mesofolio.data import block_labels, generate_synthetic
from mesofolio.errors import PreconditionError
from mesofolio.spectral import decompose, decompose_panel, mp_bounds


def two_block_B(n1, n2, inside=0.6, across=-0.3):
    labels = np.r_[np.zeros(n1, int), np.ones(n2, int)]
    same = labels[:, None] == labels[None, :]
    return np.where(same, inside, across), labels


# ---------------------------------------------------------------- modularity


def test_singletons_give_trace(rng):
    A = rng.standard_normal((7, 7))
    ctx = ModularityContext(B=A + A.T, norm=3.0)
    assert modularity_of(ctx, np.arange(7)) == pytest.approx(np.trace(A + A.T) / 3.0)


def test_one_community_gives_grand_sum(rng):
    A = rng.standard_normal((7, 7))
    ctx = ModularityContext(B=A + A.T, norm=3.0)
    assert modularity_of(ctx, np.zeros(7)) == pytest.approx((A + A.T).sum() / 3.0)


def test_true_split_beats_merge():
    B, labels = two_block_B(4, 5)
    ctx = ModularityContext(B=B, norm=20.0)
    q_true = modularity_of(ctx, labels)
    assert q_true > modularity_of(ctx, np.zeros(9))
    q_best, best = brute_force_modularity(B, 20.0)
    assert q_true == pytest.approx(q_best)
    assert canonical_labels(best).tolist() == canonical_labels(labels).tolist()


def test_norm_falls_back_when_sum_not_positive():
    dec = decompose(np.eye(3), mp_bounds(3, 10**6))
    assert ModularityContext.from_decomposition(dec).norm == pytest.approx(3.0)
    C = np.full((3, 3), -0.6) + 1.6 * np.eye(3)  # grand sum -0.6
    with pytest.warns(UserWarning, match="not positive"):
        ctx = ModularityContext.from_decomposition(dataclasses.replace(dec, C=C))
    assert ctx.norm == pytest.approx(6.6)


# ---------------------------------------------------------------- null model


def test_wcm_two_nodes():
    expected = wcm_null(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert expected[0, 1] == pytest.approx(0.5)


def test_wcm_regular_graph():
    W = np.ones((5, 5)) - np.eye(5)
    np.testing.assert_allclose(wcm_null(W), np.full((5, 5), 16 / 20))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_wcm_preserves_strengths(n, seed):
    W = np.random.default_rng(seed).uniform(0, 1, (n, n))
    W = W + W.T
    np.testing.assert_allclose(wcm_null(W).sum(axis=1), W.sum(axis=1), rtol=1e-12)


# ---------------------------------------------------------------- Louvain


@pytest.mark.parametrize("restarts", [1, 5, 20])
def test_two_blocks_recovered(restarts):
    B, labels = two_block_B(4, 6)
    p = maximize_modularity(ModularityContext(B=B, norm=50.0), restarts=restarts, seed=restarts)
    assert p.labels.tolist() == canonical_labels(labels).tolist()


@pytest.mark.parametrize("n", range(4, 11))
def test_matches_brute_force_on_planted_meso(n):
    rng = np.random.default_rng(n)
    sizes = [n // 2, n - n // 2] if n < 8 else [n // 3, n // 3, n - 2 * (n // 3)]
    blocks = [(s, 0.6) for s in sizes]
    rp = generate_synthetic(n, 3000, blocks, market_loading=0.5, seed=int(rng.integers(2**31)))
    dec = decompose_panel(rp)
    assert len(dec.indices_g) >= 1
    ctx = ModularityContext.from_decomposition(dec)
    q_best, _ = brute_force_modularity(ctx.B, ctx.norm)
    p = maximize_modularity(ctx, restarts=20, seed=0)
    assert p.modularity >= q_best - 1e-12


def test_planted_recovery(planted_panel):
    from sklearn.metrics import adjusted_rand_score

    p = detect_communities(decompose_panel(planted_panel), seed=1)
    assert p.n_communities == 4
    assert adjusted_rand_score(p.labels, block_labels([(25, 0.4)] * 4)) == 1.0


def test_deterministic(planted_panel):
    dec = decompose_panel(planted_panel)
    a = detect_communities(dec, restarts=5, seed=11)
    b = detect_communities(dec, restarts=5, seed=11)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.modularity == b.modularity


def test_history_monotone_and_consistent(planted_panel):
    dec = decompose_panel(planted_panel.rows(0, 500))
    p = detect_communities(dec, restarts=3, seed=2, record=True)
    h = np.array(p.history)
    assert len(h) > 1
    assert np.all(np.diff(h) > 0)
    assert h[-1] == pytest.approx(p.modularity, abs=1e-10)


def test_labels_canonical(planted_panel):
    p = detect_communities(decompose_panel(planted_panel), restarts=2, seed=0)
    assert np.all(np.diff(p.sizes) <= 0)
    assert set(p.labels.tolist()) == set(range(p.n_communities))


def test_modularity_matrix_is_meso_component(planted_panel):
    dec = decompose_panel(planted_panel)
    ctx = ModularityContext.from_decomposition(dec)
    np.testing.assert_allclose(ctx.B, dec.C - dec.C_r - dec.C_m, atol=1e-10)
    assert ctx.norm == pytest.approx(dec.C.sum())


def test_empty_meso_rejected():
    dec = decompose(np.eye(4), mp_bounds(4, 100))
    with pytest.raises(PreconditionError, match="empty"):
        detect_communities(dec)


# ---------------------------------------------------------------- stability


def test_stability_identical_and_relabeled():
    labels = np.array([0, 0, 1, 1, 2, 2])
    a = Partition(labels=labels, modularity=0.0)
    b = Partition(labels=(labels + 1) % 3, modularity=0.0)
    rep = partition_stability([a, a, b])
    np.testing.assert_allclose(rep["ari"], 1.0)
    np.testing.assert_allclose(rep["nmi"], 1.0)


def test_stability_random_null():
    rng = np.random.default_rng(8)
    a = Partition(labels=rng.integers(0, 4, 1000), modularity=0.0)
    b = Partition(labels=rng.integers(0, 4, 1000), modularity=0.0)
    assert abs(partition_stability([a, b])["ari"][0, 1]) < 0.05


def test_sector_composition():
    p = Partition(labels=np.array([0, 0, 1]), modularity=0.0)
    table = sector_composition(p, ["A", "B", "C"], {"A": "tech", "B": "tech"})
    assert table == {0: {"tech": 2}, 1: {"unknown": 1}}
