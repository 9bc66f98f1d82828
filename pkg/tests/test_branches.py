"""KCN and GCN branches against loop / dense oracles."""
import numpy as np
import pytest
import scipy.sparse as sp
from collections import deque

from meshgrow import autodiff as ad
from meshgrow.errors import ContractError
from meshgrow.gcn import GcnParams, gcn_forward, gcn_layer
from meshgrow.kcn import KcnParams, cnn_features, kcn_forward, knn_indices
from meshgrow.mesh import build_topology


def lrelu(x):
    return np.where(x > 0, x, 0.2 * x)


def features_oracle(v, p):
    out = []
    for row in v:
        h = lrelu(row @ p.fe1_w.data + p.fe1_b.data)
        out.append(h @ p.fe2_w.data + p.fe2_b.data)
    return np.array(out)


def knn_oracle(f, k):
    n = len(f)
    out = []
    for i in range(n):
        d = [(float(np.sum((f[i] - f[j]) ** 2)), j) for j in range(n) if j != i]
        out.append([j for _, j in sorted(d)[:k]])
    return np.array(out)


def kcn_oracle(v, p, idx):
    f = features_oracle(v, p)
    rows = []
    for i in range(len(v)):
        nei = [lrelu(f[j] @ p.nei_w.data + p.nei_b.data) for j in idx[i]]
        ctr = lrelu(f[i] @ p.ctr_w.data + p.ctr_b.data)
        stacked = [np.concatenate([h, ctr]) for h in nei]
        rows.append(np.mean(stacked, axis=0))
    return np.array(rows)


@pytest.fixture
def kcn_params():
    return KcnParams.init(np.random.default_rng(0), d_f=16, d_h=8, k=3)


# ---------------------------------------------------------------------------
# cnn features

def test_zero_weights_give_zero_features(kcn_params):
    for t in kcn_params.tensors().values():
        t.data[...] = 0
    v = ad.Tensor(np.random.default_rng(1).standard_normal((7, 3)))
    assert (cnn_features(v, kcn_params).data == 0).all()


def test_features_are_pointwise_equivariant(kcn_params):
    v = np.random.default_rng(2).standard_normal((9, 3))
    perm = np.random.default_rng(3).permutation(9)
    a = cnn_features(ad.Tensor(v), kcn_params).data
    b = cnn_features(ad.Tensor(v[perm]), kcn_params).data
    np.testing.assert_array_equal(a[perm], b)


def test_features_match_row_oracle(kcn_params):
    v = np.random.default_rng(4).standard_normal((11, 3))
    got = cnn_features(ad.Tensor(v), kcn_params).data
    assert np.abs(got - features_oracle(v, kcn_params)).max() < 1e-10


# ---------------------------------------------------------------------------
# knn

def test_knn_collinear():
    f = np.array([[0.0], [1.0], [2.0], [4.0]])
    assert knn_indices(f, 2)[0].tolist() == [1, 2]
    np.testing.assert_array_equal(knn_indices(f, 2), knn_oracle(f, 2))


def test_knn_all_others_when_k_is_n_minus_1():
    f = np.random.default_rng(0).standard_normal((6, 2))
    idx = knn_indices(f, 5)
    for i, row in enumerate(idx):
        assert sorted(row) == [j for j in range(6) if j != i]


def test_knn_duplicates_break_ties_by_index():
    f = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    idx = knn_indices(f, 2)
    assert idx[0].tolist() == [1, 2]
    assert idx[2].tolist() == [1, 3]
    assert 2 not in idx[2]


def test_knn_requires_k_below_n():
    with pytest.raises(ContractError):
        knn_indices(np.zeros((4, 2)), 4)


@pytest.mark.parametrize("seed", range(5))
def test_knn_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((60, 5))
    f[10] = f[20]  # a duplicate pair exercises the tie rule
    np.testing.assert_array_equal(knn_indices(f, 8), knn_oracle(f, 8))


def test_knn_is_deterministic():
    f = np.random.default_rng(9).integers(0, 3, size=(40, 2)).astype(float)
    first = knn_indices(f, 6)
    np.testing.assert_array_equal(first, knn_indices(f, 6))
    np.testing.assert_array_equal(first, knn_oracle(f, 6))


# ---------------------------------------------------------------------------
# kcn forward

def test_kcn_matches_loop_oracle_small_symmetric():
    params = KcnParams.init(np.random.default_rng(5), d_f=8, d_h=4, k=3)
    # N = K + 1 vertices at the corners of a regular tetrahedron
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    out = kcn_forward(ad.Tensor(v), params)
    idx = knn_indices(cnn_features(ad.Tensor(v), params).data, 3)
    for i, row in enumerate(idx):
        assert sorted(row) == [j for j in range(4) if j != i]
    assert np.abs(out.data - kcn_oracle(v, params, idx)).max() < 1e-10


def test_kcn_matches_loop_oracle_random(kcn_params):
    v = np.random.default_rng(6).standard_normal((25, 3))
    idx = knn_indices(features_oracle(v, kcn_params), kcn_params.k)
    out = kcn_forward(ad.Tensor(v), kcn_params)
    assert out.shape == (25, 16)
    assert np.abs(out.data - kcn_oracle(v, kcn_params, idx)).max() < 1e-10


def test_kcn_zero_neighbor_conv(kcn_params):
    kcn_params.nei_w.data[...] = 0
    kcn_params.nei_b.data[...] = 0
    v = np.random.default_rng(7).standard_normal((12, 3))
    out = kcn_forward(ad.Tensor(v), kcn_params).data
    assert (out[:, :8] == 0).all()
    idx = knn_indices(features_oracle(v, kcn_params), 3)
    np.testing.assert_allclose(out[:, 8:], kcn_oracle(v, kcn_params, idx)[:, 8:], atol=1e-12)


@pytest.mark.parametrize("k", [1, 4, 10])
def test_kcn_shape_independent_of_k(k):
    params = KcnParams.init(np.random.default_rng(k), d_f=8, d_h=5, k=k)
    out = kcn_forward(ad.Tensor(np.random.default_rng(0).standard_normal((15, 3))), params)
    assert out.shape == (15, 10)


def test_kcn_locality_with_frozen_indices(kcn_params):
    rng = np.random.default_rng(8)
    v = rng.standard_normal((20, 3))
    idx = knn_indices(features_oracle(v, kcn_params), 3)
    base = kcn_forward(ad.Tensor(v), kcn_params, neighbors=idx).data
    for j in range(20):
        w = v.copy()
        w[j] += rng.standard_normal(3)
        moved = kcn_forward(ad.Tensor(w), kcn_params, neighbors=idx).data
        changed = np.abs(moved - base).max(axis=1) > 0
        allowed = np.array([i == j or j in idx[i] for i in range(20)])
        assert not (changed & ~allowed).any()


def test_kcn_gradcheck_frozen_indices():
    params = KcnParams.init(np.random.default_rng(10), d_f=6, d_h=4, k=3)
    v = np.random.default_rng(11).standard_normal((10, 3))
    idx = knn_indices(features_oracle(v, params), 3)
    names = list(params.tensors())

    def call(vt, *weights):
        p = KcnParams(*weights, k=3)
        return kcn_forward(vt, p, neighbors=idx)

    arrays = [v] + [params.tensors()[n].data for n in names]
    assert ad.gradcheck(call, arrays) < 1e-4


# ---------------------------------------------------------------------------
# gcn

def dense_p(edges, n):
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    a += np.eye(n)
    d = a.sum(1) ** -0.5
    return d[:, None] * a * d[None, :]


def test_gcn_layer_single_vertex_is_affine():
    topo = build_topology(np.zeros((0, 2), int), 1)
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((1, 3)), rng.standard_normal((3, 4)), rng.standard_normal(4)
    out = gcn_layer(ad.Tensor(x), topo.propagation, ad.Tensor(w), ad.Tensor(b))
    np.testing.assert_allclose(out.data, x @ w + b, atol=1e-14)


def test_gcn_layer_constant_input_regular_graph():
    n = 10
    edges = [(i, (i + 1) % n) for i in range(n)]
    topo = build_topology(edges, n)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(3)
    w, b = rng.standard_normal((3, 5)), rng.standard_normal(5)
    out = gcn_layer(ad.Tensor(np.tile(c, (n, 1))), topo.propagation, ad.Tensor(w), ad.Tensor(b))
    np.testing.assert_allclose(out.data, np.tile(c @ w + b, (n, 1)), atol=1e-12)


def test_gcn_layer_matches_dense_oracle():
    rng = np.random.default_rng(2)
    n = 20
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.25]
    topo = build_topology(edges, n)
    x, w = rng.standard_normal((n, 6)), rng.standard_normal((6, 4))
    out = gcn_layer(ad.Tensor(x), topo.propagation, ad.Tensor(w), ad.Tensor(np.zeros(4)))
    assert np.abs(out.data - dense_p(edges, n) @ x @ w).max() < 1e-10


def test_gcn_layer_rejects_vertex_mismatch():
    topo = build_topology([(0, 1)], 2)
    with pytest.raises(ContractError):
        gcn_layer(ad.Tensor(np.ones((3, 2))), topo.propagation, ad.Tensor(np.ones((2, 2))), ad.Tensor(np.zeros(2)))


def test_gcn_forward_zero_weights_and_shape():
    params = GcnParams.init(np.random.default_rng(0))
    topo = build_topology([(0, 1), (1, 2)], 3)
    out = gcn_forward(ad.Tensor(np.ones((3, 3))), topo.propagation, params)
    assert out.shape == (3, 32)
    for t in params.tensors().values():
        t.data[...] = 0
    assert (gcn_forward(ad.Tensor(np.ones((3, 3))), topo.propagation, params).data == 0).all()


def bfs_distance(edges, n, src):
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    dist = [None] * n
    dist[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if dist[w] is None:
                dist[w] = dist[u] + 1
                q.append(w)
    return dist


def test_gcn_receptive_field_is_four_hops():
    n = 14
    edges = [(i, i + 1) for i in range(n - 1)]
    topo = build_topology(edges, n)
    params = GcnParams.init(np.random.default_rng(3))
    rng = np.random.default_rng(4)
    x = rng.standard_normal((n, 3))
    base = gcn_forward(ad.Tensor(x), topo.propagation, params).data
    for j in (0, 5, 13):
        y = x.copy()
        y[j] += 1.0
        changed = np.abs(gcn_forward(ad.Tensor(y), topo.propagation, params).data - base).max(axis=1) > 0
        dist = np.array(bfs_distance(edges, n, j))
        assert changed[dist <= 4].all()
        assert not changed[dist > 4].any()


def test_gcn_gradcheck():
    rng = np.random.default_rng(5)
    n = 8
    edges = [(i, (i + 1) % n) for i in range(n)] + [(0, 4)]
    p = build_topology(edges, n).propagation
    params = GcnParams.init(rng, widths=(3, 4, 5, 4, 2))
    flat = [t.data for pair in zip(params.weights, params.biases) for t in pair]

    def call(x, *ts):
        return gcn_forward(x, p, GcnParams(list(ts[0::2]), list(ts[1::2])))

    assert ad.gradcheck(call, [rng.standard_normal((n, 3))] + flat) < 1e-4


def test_gcn_permutation_equivariance():
    rng = np.random.default_rng(6)
    n = 12
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
    topo = build_topology(edges, n)
    params = GcnParams.init(rng)
    x = rng.standard_normal((n, 3))
    perm = rng.permutation(n)
    out = gcn_forward(ad.Tensor(x), topo.propagation, params).data
    out_perm = gcn_forward(ad.Tensor(x[perm]), topo.permuted(perm).propagation, params).data
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


def test_sparse_storage_sorted():
    topo = build_topology([(2, 0), (1, 2)], 3)
    coo = sp.coo_matrix(topo.propagation)
    assert list(zip(coo.row, coo.col)) == sorted(zip(coo.row, coo.col))
