import numpy as np
import pytest
import scipy.sparse as sp

from kernode.graph import counting_spmm, renormalized_adjacency, spmm_dense
from kernode.model import (
    FeatureMapConfig,
    build_feature_map,
    build_hop_operators,
    load_checkpoint,
    save_checkpoint,
)

from conftest import all_pairs_distances, complete_graph, dense_abar, path_graph, random_graph


def dense_mlp(x, model):
    h = x
    affines = [layer for layer in model.mlp.layers if hasattr(layer, "w")]
    for i, layer in enumerate(affines):
        h = h @ layer.w.value + (layer.b.value if layer.b is not None else 0.0)
        if i < len(affines) - 1:
            h = np.maximum(h, 0.0)
    return h


def dense_gtheta(a, x, model, mode="cumulative"):
    """Brute-force hop-weighted smoothing from dense powers and Floyd-Warshall masks."""
    abar = dense_abar(a)
    dist = all_pairs_distances(a)
    y = dense_mlp(x, model)
    out = np.zeros((len(a), y.shape[1]))
    for h, w in enumerate(model.omega.value, start=1):
        mask = dist <= h if mode == "cumulative" else dist == h
        out += w * (np.linalg.matrix_power(abar, h) * mask) @ y
    return out


def dense_gcn(a, x, model):
    abar = dense_abar(a)
    h = x
    for i, layer in enumerate(model.layers):
        h = abar @ (h @ layer.w.value + (layer.b.value if layer.b is not None else 0.0))
        if i < len(model.layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def test_single_hop_operator_is_abar():
    abar = renormalized_adjacency(random_graph(15, 0.2, 0))
    ops = build_hop_operators(abar, 1)
    assert np.array_equal(ops.masked_powers[0].toarray(), abar.toarray())


def test_triangle_exact_second_hop_empty():
    ops = build_hop_operators(renormalized_adjacency(complete_graph(3)), 2, "exact")
    assert ops.masked_powers[1].nnz == 0


def test_path_second_hop_full_support():
    ops = build_hop_operators(renormalized_adjacency(path_graph(3)), 2, "cumulative")
    p2 = ops.masked_powers[1]
    assert p2.nnz == 9
    np.testing.assert_allclose(p2.toarray(), np.linalg.matrix_power(dense_abar(path_graph(3).toarray()), 2),
                               atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_exact_mode_supports_disjoint_off_diagonal(seed):
    ops = build_hop_operators(renormalized_adjacency(random_graph(30, 0.08, seed)), 3, "exact")
    seen = np.zeros((30, 30), dtype=bool)
    for p in ops.masked_powers:
        cur = p.toarray() != 0
        np.fill_diagonal(cur, False)
        assert not (seen & cur).any()
        seen |= cur


def test_combined_operator_matches_weighted_sum():
    ops = build_hop_operators(renormalized_adjacency(random_graph(25, 0.1, 2)), 3)
    w = np.array([0.3, -1.2, 2.0])
    expect = sum(wi * p.toarray() for wi, p in zip(w, ops.masked_powers))
    np.testing.assert_allclose(ops.combined(w).toarray(), expect, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        ops.combined(np.ones(2))


def test_reduction_to_single_smoothing_is_exact():
    a = random_graph(20, 0.2, 1)
    x = np.random.default_rng(0).random((20, 20))
    cfg = FeatureMapConfig(H=1, layer_dims=(20,))
    model = build_feature_map(a, 20, cfg, np.random.default_rng(0))
    layer = model.mlp.layers[0]
    layer.w.value[...] = np.eye(20)
    layer.b.value[...] = 0.0
    abar = renormalized_adjacency(a)
    assert np.array_equal(model.forward(x), spmm_dense(abar, x))


def test_zero_input_zero_output():
    cfg = FeatureMapConfig(H=2, layer_dims=(8, 3), bias=False)
    model = build_feature_map(random_graph(10, 0.3, 0), 5, cfg, np.random.default_rng(0))
    assert not model.forward(np.zeros((10, 5))).any()
    gcn = build_feature_map(random_graph(10, 0.3, 0), 5, FeatureMapConfig(kind="gcn", layer_dims=(8, 3), bias=False),
                            np.random.default_rng(0))
    assert not gcn.forward(np.zeros((10, 5))).any()


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("mode", ["cumulative", "exact"])
@pytest.mark.parametrize("combine", [True, False])
def test_gtheta_matches_dense_oracle(seed, mode, combine):
    rng = np.random.default_rng(seed)
    n = 10 if seed < 3 else 50
    a = random_graph(n, 0.25 if n == 10 else 0.06, seed)
    x = rng.standard_normal((n, 6))
    cfg = FeatureMapConfig(H=3, layer_dims=(7, 4), mask_mode=mode, combine_hops=combine)
    model = build_feature_map(a, 6, cfg, rng)
    model.omega.value[...] = rng.standard_normal(3)
    model.mlp.layers[0].b.value[...] = rng.standard_normal(7)
    np.testing.assert_allclose(model.forward(x), dense_gtheta(a.toarray(), x, model, mode),
                               rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_gcn_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    a = random_graph(10, 0.3, seed)
    x = rng.standard_normal((10, 5))
    cfg = FeatureMapConfig(kind="gcn", layer_dims=(6, 3), bias=seed % 2 == 0)
    model = build_feature_map(a, 5, cfg, rng)
    np.testing.assert_allclose(model.forward(x), dense_gcn(a.toarray(), x, model), rtol=0, atol=1e-10)


def test_gcn_identity_weights_give_two_hop_smoothing():
    a = random_graph(12, 0.3, 4)
    x = np.random.default_rng(0).random((12, 4))
    model = build_feature_map(a, 4, FeatureMapConfig(kind="gcn", layer_dims=(4, 4), bias=False),
                              np.random.default_rng(0))
    for layer in model.layers:
        layer.w.value[...] = np.eye(4)
    abar = dense_abar(a.toarray())
    np.testing.assert_allclose(model.forward(x), abar @ abar @ x, rtol=0, atol=1e-12)


def test_fixed_c_weights():
    a = random_graph(12, 0.3, 0)
    m = build_feature_map(a, 3, FeatureMapConfig(H=2, layer_dims=(2,), fixed_c=0.5),
                          np.random.default_rng(0))
    assert m.omega.value.tolist() == [0.5, 0.25]
    assert not m.omega.trainable
    m.forward(np.ones((12, 3)))
    m.backward(np.ones((12, 2)))
    assert not m.omega.grad.any()


def test_fixed_c_one_matches_unit_omega():
    a = random_graph(12, 0.3, 0)
    x = np.random.default_rng(1).random((12, 3))
    fixed = build_feature_map(a, 3, FeatureMapConfig(H=1, layer_dims=(2,), fixed_c=1.0),
                              np.random.default_rng(0))
    free = build_feature_map(a, 3, FeatureMapConfig(H=1, layer_dims=(2,)), np.random.default_rng(0))
    assert np.array_equal(fixed.forward(x), free.forward(x))


@pytest.mark.parametrize("bad", [dict(H=0), dict(layer_dims=()), dict(fixed_c=0.0),
                                 dict(fixed_c=1.5), dict(kind="gat"), dict(mask_mode="near")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        FeatureMapConfig(**bad)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("kind", ["gtheta", "gcn"])
def test_permutation_equivariance(seed, kind):
    rng = np.random.default_rng(seed)
    a = random_graph(12, 0.3, seed)
    x = rng.standard_normal((12, 4))
    perm = rng.permutation(12)
    pa = sp.csr_array(a.toarray()[np.ix_(perm, perm)])
    cfg = FeatureMapConfig(kind=kind, H=2, layer_dims=(5, 3))
    m1 = build_feature_map(a, 4, cfg, np.random.default_rng(9))
    m2 = build_feature_map(pa, 4, cfg, np.random.default_rng(9))
    np.testing.assert_allclose(m2.forward(x[perm]), m1.forward(x)[perm], rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind,combine", [("gtheta", True), ("gtheta", False), ("gcn", True)])
def test_backward_matches_finite_differences(kind, combine):
    rng = np.random.default_rng(0)
    a = random_graph(10, 0.3, 1)
    x = rng.standard_normal((10, 4))
    c = rng.standard_normal((10, 3))
    m = build_feature_map(a, 4, FeatureMapConfig(kind=kind, layer_dims=(5, 3), combine_hops=combine), rng)
    if kind == "gtheta":
        m.omega.value[...] = [0.7, -0.4]

    def loss():
        return float(np.sum(c * m.forward(x)))

    m.zero_grad()
    m.forward(x)
    m.backward(c)
    for p in m.params():
        num = np.zeros_like(p.value)
        flat, nf = p.value.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            o = flat[i]
            flat[i] = o + 1e-6
            up = loss()
            flat[i] = o - 1e-6
            down = loss()
            flat[i] = o
            nf[i] = (up - down) / 2e-6
        err = np.abs(p.grad - num) / np.maximum(np.abs(num), 1e-3)
        assert err.max() < 1e-4, (p.name, err.max())


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_aggregation_happens_once(depth):
    a = random_graph(30, 0.1, 0)
    x = np.random.default_rng(0).random((30, 6))
    dims = (8,) * (depth - 1) + (3,)
    for combine, expected in ((True, 1), (False, 3)):
        m = build_feature_map(a, 6, FeatureMapConfig(H=3, layer_dims=dims, combine_hops=combine),
                              np.random.default_rng(0))
        with counting_spmm() as c:
            m.forward(x)
        assert c.calls == expected
    gcn = build_feature_map(a, 6, FeatureMapConfig(kind="gcn", layer_dims=dims), np.random.default_rng(0))
    with counting_spmm() as c:
        gcn.forward(x)
    assert c.calls == depth


@pytest.mark.parametrize("kind", ["gtheta", "gcn"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, kind):
    a = random_graph(10, 0.3, 0)
    cfg = FeatureMapConfig(kind=kind, layer_dims=(4, 2))
    m = build_feature_map(a, 3, cfg, np.random.default_rng(0))
    for p in m.params():
        p.value[...] = np.random.default_rng(1).standard_normal(p.shape) / 3
    save_checkpoint(tmp_path / "ck.json", m, {"note": "x"})
    meta, state = load_checkpoint(tmp_path / "ck.json")
    other = build_feature_map(a, 3, cfg, np.random.default_rng(5))
    other.load_state_dict(state)
    assert meta == {"note": "x"}
    for p, q in zip(m.params(), other.params()):
        assert p.name == q.name
        assert np.array_equal(p.value, q.value)
    x = np.random.default_rng(2).random((10, 3))
    assert np.array_equal(m.forward(x), other.forward(x))


def test_load_state_dict_rejects_mismatch():
    m = build_feature_map(random_graph(10, 0.3, 0), 3, FeatureMapConfig(layer_dims=(2,)),
                          np.random.default_rng(0))
    state = m.state_dict()
    state["mlp.0.W"] = np.zeros((4, 2))
    with pytest.raises(ValueError):
        m.load_state_dict(state)
    with pytest.raises(ValueError):
        m.load_state_dict({"omega": np.ones(2)})
