import numpy as np
import pytest
import scipy.sparse as sp
from conftest import max_relative_error, numerical_grad

from impactgraph import diffengine as de
from impactgraph import graph as gr
from impactgraph.diffengine import ParamStore, Tensor, value_and_grad
from impactgraph.exceptions import ShapeMismatch, UnboundArtifact, ValidationError
from impactgraph.models import (
    FAMILIES,
    GraphContext,
    ModelConfig,
    ModelInstance,
    cheb_layer,
    dense_layer,
    forward,
    gat_attention,
    gat_layer,
    init_params,
    model_forward,
    sage_layer,
    tdamlp_forward,
    weighted_mean,
)


def random_graph(n, seed, k=3):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    return X, gr.build_graph(X, k)


def context(family, X, g, self_loops=True):
    if family == "graphsage":
        return GraphContext(X, aggregator=gr.mean_aggregator(g))
    if family == "chebspectral":
        return GraphContext(X, cheb_operator=gr.chebyshev_scale(gr.normalized_laplacian(g)))
    if family == "gat":
        edges = g.directed()
        edges = (edges[0], edges[1], edges[3])
        if self_loops:
            edges = gr.with_self_loops(*edges, g.n_nodes)
        return GraphContext(X, edges=edges)
    return GraphContext(X)


def permuted(family, X, g, perm):
    """Context for the relabelled problem: node perm[i] becomes node i."""
    inv = np.argsort(perm)
    edges = inv[g.edges]
    lo, hi = edges.min(axis=1), edges.max(axis=1)
    gp = gr.FeatureGraph(g.n_nodes, g.k, np.column_stack([lo, hi]), g.distances, g.weights, g.sigma)
    return context(family, X[perm], gp)


# sage


def test_weighted_mean_matches_aggregator():
    # 4-node hand-built graph: 0-1, 0-2, 1-2, 2-3
    g = gr.FeatureGraph(4, 1, np.array([[0, 1], [0, 2], [1, 2], [2, 3]]), np.array([1.0, 2.0, 0.5, 1.5]))
    g = gr.gaussian_weights(g, 1.0)
    H = np.random.default_rng(0).normal(size=(4, 5))
    w = {tuple(e): wt for e, wt in zip(g.edges.tolist(), g.weights)}
    w.update({(b, a): wt for (a, b), wt in list(w.items())})
    loop = np.zeros((4, 5))
    for i in range(4):
        nb = [j for j in range(4) if (i, j) in w]
        loop[i] = sum(w[i, j] * H[j] for j in nb) / sum(w[i, j] for j in nb)
    assert np.abs(gr.mean_aggregator(g) @ H - loop).max() < 1e-12
    src, dst, _, ww = g.directed()
    assert np.abs(weighted_mean(H, src, dst, ww, 4) - loop).max() < 1e-12


def test_sage_identities():
    X, g = random_graph(12, 1)
    M = gr.mean_aggregator(g)
    v = np.array([0.3, -1.2, 2.0])
    H = np.tile(v, (12, 1))
    assert np.allclose(np.asarray(M @ H), H, atol=1e-14, rtol=0)
    rng = np.random.default_rng(2)
    Ws, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(1, 4)))
    out = sage_layer(X, M, Ws, Tensor(np.zeros((3, 4))), b, de.relu)
    assert np.array_equal(out.value, dense_layer(X, Ws, b, de.relu).value)
    with pytest.raises(ShapeMismatch):
        sage_layer(X, M, Tensor(np.ones((3, 4))), Tensor(np.ones((3, 5))))


# chebyshev


def test_cheb_order_one_is_graph_independent():
    X, g = random_graph(10, 3)
    theta = Tensor(np.random.default_rng(4).normal(size=(3, 2)))
    a = cheb_layer(X, gr.chebyshev_scale(gr.normalized_laplacian(g)), [theta]).value
    assert np.array_equal(a, X @ theta.value)


def test_cheb_two_node_example():
    g = gr.gaussian_weights(gr.FeatureGraph(2, 1, np.array([[0, 1]]), np.array([0.0])), 1.0)
    S = gr.chebyshev_scale(gr.normalized_laplacian(g))
    H = np.array([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    out = cheb_layer(H, S, [Tensor(np.zeros((2, 2))), eye]).value
    assert np.allclose(out, np.array([[0, -1], [-1, 0]]) @ H, atol=1e-15, rtol=0)


@pytest.mark.parametrize("seed", range(3))
def test_cheb_recurrence_matches_dense_polynomial(seed):
    X, g = random_graph(20, seed)
    L = gr.chebyshev_scale(gr.normalized_laplacian(g)).toarray()
    I = np.eye(20)
    T = [I, L, 2 * L @ L - I, 4 * L @ L @ L - 3 * L]
    rng = np.random.default_rng(seed + 10)
    thetas = [rng.normal(size=(3, 4)) for _ in range(4)]
    dense = sum(Tk @ X @ th for Tk, th in zip(T, thetas))
    out = cheb_layer(X, sp.csr_matrix(L), [Tensor(t) for t in thetas]).value
    assert np.abs(out - dense).max() < 1e-10


class CountingOperator:
    """Sparse operator wrapper that counts products and refuses densification."""

    def __init__(self, S):
        self.S, self.calls, self.shape = S, 0, S.shape

    def __matmul__(self, other):
        self.calls += 1
        return self.S @ other

    @property
    def T(self):
        return CountingOperator(self.S.T)

    def toarray(self):
        raise AssertionError("operator was densified")


def test_cheb_uses_k_minus_one_operator_products():
    X, g = random_graph(15, 5)
    op = CountingOperator(gr.chebyshev_scale(gr.normalized_laplacian(g)))
    thetas = [Tensor(np.ones((3, 2))) for _ in range(5)]
    cheb_layer(X, op, thetas)
    assert op.calls == 4


# gat


def test_gat_uniform_attention():
    X, g = random_graph(10, 6)
    src, dst, _, _ = g.directed()
    w = np.full(src.size, 0.5)
    # a = 0 makes every logit equal
    alpha, _ = gat_attention(X, (src, dst, w), 10, Tensor(np.eye(3)), Tensor(np.zeros((6, 1))))
    counts = np.bincount(src)
    assert np.allclose(alpha.value[:, 0], 1.0 / counts[src], atol=1e-15, rtol=0)


def test_gat_single_neighbour_has_unit_attention():
    src, dst, w = np.array([0, 1, 1, 2]), np.array([1, 0, 2, 1]), np.array([0.3, 0.3, 0.9, 0.9])
    rng = np.random.default_rng(7)
    for _ in range(5):
        alpha, _ = gat_attention(rng.normal(size=(3, 3)), (src, dst, w), 3, Tensor(rng.normal(size=(3, 4))),
                                 Tensor(rng.normal(size=(8, 1)) * 5))
        assert alpha.value[0, 0] == 1.0 and alpha.value[3, 0] == 1.0


def gat_loop_oracle(H, src, dst, w, W, a, slope=0.2):
    Wh = H @ W
    d = W.shape[1]
    n = H.shape[0]
    alpha = np.zeros(src.size)
    for i in range(n):
        idx = [e for e in range(src.size) if src[e] == i]
        z = [a[:d, 0] @ Wh[i] + a[d:, 0] @ Wh[dst[e]] for e in idx]
        z = [x if x > 0 else slope * x for x in z]
        soft = np.exp(z) / np.sum(np.exp(z))
        mod = soft * w[idx]
        alpha[idx] = mod / mod.sum()
    out = np.zeros((n, d))
    for e in range(src.size):
        out[src[e]] += alpha[e] * Wh[dst[e]]
    return alpha, out


@pytest.mark.parametrize("seed", range(4))
def test_gat_matches_loop_oracle(seed):
    X, g = random_graph(5, seed, k=2)
    src, dst, _, w = g.directed()
    rng = np.random.default_rng(seed)
    W, a = rng.normal(size=(3, 4)), rng.normal(size=(8, 1))
    alpha, _ = gat_attention(X, (src, dst, w), 5, Tensor(W), Tensor(a))
    ref_alpha, ref_out = gat_loop_oracle(X, src, dst, w, W, a)
    assert np.abs(np.bincount(src, weights=alpha.value[:, 0]) - 1).max() < 1e-12
    assert np.abs(alpha.value[:, 0] - ref_alpha).max() < 1e-12
    out = gat_layer(X, (src, dst, w), 5, Tensor(W), Tensor(a)).value
    assert np.abs(out - ref_out).max() < 1e-12


def test_gat_shape_errors():
    X, g = random_graph(5, 0, k=2)
    src, dst, _, w = g.directed()
    with pytest.raises(ShapeMismatch):
        gat_attention(X, (src, dst, w), 5, Tensor(np.ones((3, 4))), Tensor(np.ones((4, 1))))


# tdamlp


def test_tdamlp_zero_params_give_zero():
    cfg = ModelConfig("tdamlp", hidden_dims=(5, 4))
    ps = init_params(cfg, 7)
    for p in ps.values():
        p.value[:] = 0
    X = np.random.default_rng(0).normal(size=(9, 7))
    assert np.all(tdamlp_forward(X, ps, cfg).value == 0)


def test_tdamlp_row_independent():
    cfg = ModelConfig("tdamlp", hidden_dims=(6,), seed=3)
    ps = init_params(cfg, 7)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(11, 7))
    perm = rng.permutation(11)
    assert np.array_equal(tdamlp_forward(X[perm], ps, cfg).value, tdamlp_forward(X, ps, cfg).value[perm])


def test_tdamlp_composition_oracle():
    cfg = ModelConfig("tdamlp", hidden_dims=(6,), seed=5)
    ps = init_params(cfg, 7)
    for name in ("layer0.b", "layer1.b"):
        ps[name].value[:] = np.random.default_rng(2).normal(size=ps[name].shape)
    X = np.random.default_rng(3).normal(size=(8, 7))
    h = np.maximum(X @ ps["layer0.W"].value + ps["layer0.b"].value, 0)
    ref = h @ ps["layer1.W"].value + ps["layer1.b"].value
    assert np.abs(tdamlp_forward(X, ps, cfg).value - ref).max() <= 1e-15


# stacks


def test_config_validation():
    for bad in (dict(family="mlp"), dict(hidden_dims=()), dict(cheb_order=0), dict(gat_heads=0), dict(activation="gelu")):
        with pytest.raises(ValidationError):
            ModelConfig(**bad)


def test_param_names_and_shapes():
    ps = init_params(ModelConfig("gat", hidden_dims=(4,), gat_heads=2), 3)
    assert list(ps) == ["layer0.head0.W", "layer0.head0.a", "layer0.head1.W", "layer0.head1.a", "layer0.b",
                        "layer1.head0.W", "layer1.head0.a", "layer1.head1.W", "layer1.head1.a", "layer1.b"]
    assert ps["layer0.head0.a"].shape == (8, 1) and ps["layer1.head0.W"].shape == (4, 1)
    assert np.all(ps["layer0.b"].value == 0)


@pytest.mark.parametrize("family", FAMILIES)
def test_forward_shape_and_determinism(family):
    X, g = random_graph(12, 8)
    feats = np.hstack([X, np.zeros((12, 4))]) if family == "tdamlp" else X
    ctx = context(family, feats, g)
    cfg = ModelConfig(family, seed=4)
    a = forward(cfg, init_params(cfg, feats.shape[1]), ctx).value
    b = model_forward(ModelInstance(cfg, init_params(cfg, feats.shape[1]), ctx))
    assert a.shape == (12, 1) and np.array_equal(a, b)


@pytest.mark.parametrize("family", ["graphsage", "chebspectral", "gat"])
def test_unbound_artifact(family):
    cfg = ModelConfig(family)
    with pytest.raises(UnboundArtifact):
        forward(cfg, init_params(cfg, 3), GraphContext(np.zeros((4, 3))))


@pytest.mark.parametrize("family", ["graphsage", "chebspectral", "gat"])
def test_permutation_equivariance(family):
    X, g = random_graph(25, 9, k=4)
    cfg = ModelConfig(family, hidden_dims=(8, 8), seed=1, gat_heads=2)
    ps = init_params(cfg, 3)
    base = forward(cfg, ps, context(family, X, g)).value
    rng = np.random.default_rng(0)
    for _ in range(10):
        perm = rng.permutation(25)
        out = forward(cfg, ps, permuted(family, X, g, perm)).value
        assert np.abs(out - base[perm]).max() < 1e-10


def test_cheb_order_one_equals_tdamlp():
    X, g = random_graph(14, 10)
    cheb = ModelConfig("chebspectral", hidden_dims=(6, 5), cheb_order=1, seed=2)
    mlp = ModelConfig("tdamlp", hidden_dims=(6, 5), seed=2)
    pc = init_params(cheb, 3)
    pm = init_params(mlp, 7)
    for l in range(3):
        theta = pc[f"layer{l}.theta0"].value
        W = pm[f"layer{l}.W"].value
        W[: theta.shape[0]] = theta
        pc[f"layer{l}.b"].value[:] = 0.1 * (l + 1)
        pm[f"layer{l}.b"].value[:] = 0.1 * (l + 1)
    a = forward(cheb, pc, context("chebspectral", X, g)).value
    b = tdamlp_forward(np.hstack([X, np.zeros((14, 4))]), pm, mlp).value
    assert np.abs(a - b).max() < 1e-12


@pytest.mark.parametrize("family", FAMILIES)
def test_family_gradient_check(family):
    X, g = random_graph(12, 11)
    feats = np.hstack([X, np.random.default_rng(1).normal(size=(12, 4))]) if family == "tdamlp" else X
    ctx = context(family, feats, g)
    cfg = ModelConfig(family, hidden_dims=(5, 4), seed=3, activation="tanh")
    ps = init_params(cfg, feats.shape[1])
    y = np.random.default_rng(2).normal(size=(12, 1))
    mask = np.arange(12) % 3 != 0

    def loss(p):
        return de.masked_mse(forward(cfg, p, ctx), y, mask)

    _, grads = value_and_grad(loss, ps)
    assert max_relative_error(grads, numerical_grad(loss, ps)) < 1e-4
