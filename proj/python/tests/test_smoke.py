"""End-to-end checks of the fa_core extension against plain numpy."""

import numpy as np
import pytest

import fa_core


def random_params(channels, seed, **kwargs):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(channels)
    draw = lambda: rng.standard_normal((channels, channels)) * scale
    return fa_core.FaParams(draw(), draw(), draw(), **kwargs)


def test_fold_unfold_round_trip_is_exact():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 5))
    for mode in range(4):
        m = fa_core.unfold(x, mode)
        assert m.shape == (x.shape[mode], x.size // x.shape[mode])
        back = fa_core.fold(m, mode, list(x.shape))
        assert np.array_equal(back, x)


def test_row_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    s = fa_core.row_softmax(rng.standard_normal((4, 6)))
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_folded_attention_matches_numpy_einsum_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 2, 3))
    scale = 1.0 / np.sqrt(3)
    wt, wp, wg = (rng.standard_normal((3, 3)) * scale for _ in range(3))
    params = fa_core.FaParams(wt, wp, wg)

    z = fa_core.folded_attention(x, params)

    subs = [fa_core.compute_sub_affinity(x, params, mode) for mode in range(4)]
    g_applied = np.einsum("oc,hwdc->hwdo", wg, x)
    expected = np.einsum("ai,bj,ck,dl,ijkl->abcd", subs[0], subs[1], subs[2], subs[3], g_applied)
    np.testing.assert_allclose(z, expected, atol=1e-10)


def test_affinity_tensor_is_rank_one_and_stochastic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 2, 2, 2))
    params = random_params(2, seed=6)
    a = fa_core.affinity_tensor(x, params, [1, 0, 1, 1])
    assert a.shape == x.shape
    assert a.min() > 0
    assert abs(a.sum() - 1.0) < 1e-12
    for mode in range(4):
        unfolded = fa_core.unfold(a, mode)
        sv = np.linalg.svd(unfolded, compute_uv=False)
        assert sv[1] <= 1e-10 * sv[0]


def test_zero_embeddings_average_everything():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 2, 2, 2))
    zero = np.zeros((2, 2))
    g = rng.standard_normal((2, 2))
    params = fa_core.FaParams(zero, zero, g)
    z = fa_core.folded_attention(x, params)
    gx = fa_core.channel_linear(x, g)
    np.testing.assert_allclose(z, gx.mean(), atol=1e-12)


def test_self_attention_matches_dense_numpy_path():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 2, 3, 4))
    scale = 0.5
    wt, wp, wg = (rng.standard_normal((4, 4)) * scale for _ in range(3))
    z = fa_core.self_attention(x, fa_core.FaParams(wt, wp, wg))

    flat = x.reshape(-1, 4)
    logits = (flat @ wt.T) @ (flat @ wp.T).T
    logits -= logits.max(axis=1, keepdims=True)
    affinity = np.exp(logits)
    affinity /= affinity.sum(axis=1, keepdims=True)
    expected = (affinity @ (flat @ wg.T)).reshape(x.shape)
    np.testing.assert_allclose(z, expected, atol=1e-10)


def test_self_attention_guard_raises():
    x = np.ones((8, 8, 8, 2))
    params = fa_core.FaParams.identity(2)
    with pytest.raises(fa_core.GuardError):
        fa_core.self_attention(x, params, 1024)


def test_cost_reference_numbers():
    fa = fa_core.cost_report("fa", 32, 32, 32, 64)
    sa = fa_core.cost_report("sa", 32, 32, 32, 64)
    naive = fa_core.cost_report("naive", 32, 32, 32, 64)
    assert fa["affinity_elements"] == 7168
    assert sa["affinity_elements"] == 1073741824
    assert naive["affinity_elements"] == 4398046511104
    assert naive["infeasible"]
    assert 1 - fa["affinity_elements"] / sa["affinity_elements"] >= 0.9999

    table = fa_core.scaling_table([4, 8])
    assert len(table) == 8
    assert [row["variant"] for row in table[:4]] == ["sa", "naive", "da", "fa"]


def test_gradcheck_small_shape():
    report = fa_core.gradcheck([2, 2, 2, 2], seed=11, trials=1)
    assert report["pass"]
    assert report["max_rel_err"] <= 1e-4
