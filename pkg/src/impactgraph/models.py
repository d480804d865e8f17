"""GraphSAGE, Chebyshev spectral, TDA-MLP and GAT layer stacks.

Every family maps node features to one scalar per node: hidden layers of
the family's own type with a nonlinearity, then a final layer of the same
type with output width 1 and no activation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diffengine as de
from .diffengine import ParamStore, Tensor
from .exceptions import ShapeMismatch, UnboundArtifact, ValidationError

FAMILIES = ("graphsage", "chebspectral", "tdamlp", "gat")
DISPLAY_NAMES = {
    "graphsage": "GraphSAGE",
    "chebspectral": "ChebSpectral",
    "tdamlp": "TDA-MLP",
    "gat": "GAT",
}
ACTIVATIONS = {"relu": de.relu, "tanh": de.tanh}


@dataclass(frozen=True)
class ModelConfig:
    family: str = "graphsage"
    hidden_dims: tuple = (32, 32)
    activation: str = "relu"
    cheb_order: int = 3
    gat_heads: int = 1
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        dims = tuple(int(d) for d in self.hidden_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValidationError(f"hidden_dims must be a non-empty list of positive widths, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if int(self.cheb_order) < 1:
            raise ValidationError("cheb_order must be >= 1")
        if int(self.gat_heads) < 1:
            raise ValidationError("gat_heads must be >= 1")
        object.__setattr__(self, "hidden_dims", dims)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
            "cheb_order": int(self.cheb_order),
            "gat_heads": int(self.gat_heads),
            "leaky_slope": float(self.leaky_slope),
            "seed": int(self.seed),
        }


@dataclass
class GraphContext:
    """Constant inputs bound to a forward pass.

    ``features`` covers every node in the pass (stored nodes followed by any
    attached queries). ``aggregator`` is the row-stochastic weighted-mean
    matrix, ``edges`` the directed ``(receiver, sender, weight)`` arrays and
    ``cheb_operator`` the rescaled Laplacian.
    """

    features: np.ndarray
    aggregator: sp.spmatrix | None = None
    edges: tuple | None = None
    cheb_operator: sp.spmatrix | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def input_aggregate(self) -> Tensor:
        """``AGG(features)``, constant across passes, computed once."""
        if "agg" not in self._cache:
            self._cache["agg"] = de.spmm(self.aggregator, self.features)
        return self._cache["agg"]

    def input_chebyshev_terms(self, order: int) -> list[Tensor]:
        """``T_k(L) features`` for k < order, constant across passes, computed once."""
        key = ("cheb", order)
        if key not in self._cache:
            self._cache[key] = chebyshev_terms(self.features, self.cheb_operator, order)
        return self._cache[key]


def _layer_dims(config: ModelConfig, d_in: int):
    dims = [d_in, *config.hidden_dims, 1]
    return list(zip(dims[:-1], dims[1:]))


def init_params(config: ModelConfig, d_in: int) -> ParamStore:
    params = ParamStore()
    counter = 0

    def draw(shape, fan_in):
        nonlocal counter
        seed = int(np.random.SeedSequence([int(config.seed), counter]).generate_state(1)[0])
        counter += 1
        return de.seeded_init(shape, fan_in, seed)

    for l, (din, dout) in enumerate(_layer_dims(config, d_in)):
        p = f"layer{l}."
        if config.family == "graphsage":
            params[p + "W_s"] = draw((din, dout), din)
            params[p + "W_n"] = draw((din, dout), din)
        elif config.family == "chebspectral":
            for k in range(config.cheb_order):
                params[p + f"theta{k}"] = draw((din, dout), din)
        elif config.family == "tdamlp":
            params[p + "W"] = draw((din, dout), din)
        else:
            for h in range(config.gat_heads):
                params[p + f"head{h}.W"] = draw((din, dout), din)
                params[p + f"head{h}.a"] = draw((2 * dout, 1), 2 * dout)
        params[p + "b"] = de.zeros((1, dout))
    return params


def _finish(out: Tensor, b, activation):
    if b is not None:
        out = de.add(out, b)
    return activation(out) if activation is not None else out


def weighted_mean(H: np.ndarray, src, dst, w, n: int) -> np.ndarray:
    """Gaussian-weighted neighbour mean by direct summation (no autodiff)."""
    num = np.zeros((n, H.shape[1]))
    den = np.zeros(n)
    np.add.at(num, src, w[:, None] * H[dst])
    np.add.at(den, src, w)
    return num / den[:, None]


def sage_layer(H, aggregator, W_s, W_n, b=None, activation=None, agg=None) -> Tensor:
    """``act(H W_s + AGG(H) W_n + b)`` with ``AGG`` the weighted neighbour mean.

    ``agg`` may carry a precomputed ``AGG(H)`` for constant ``H``.
    """
    H = de.as_tensor(H)
    if W_s.shape != W_n.shape or W_s.shape[0] != H.shape[1]:
        raise ShapeMismatch("sage_layer", H.shape, W_s.shape, W_n.shape)
    if agg is None:
        agg = de.spmm(aggregator, H)
    out = de.affine([(H, W_s), (agg, W_n)], b)
    return activation(out) if activation is not None else out


def chebyshev_terms(H, operator, order: int) -> list[Tensor]:
    """``[T_0(L)H, ..., T_{K-1}(L)H]`` by the three-term recurrence."""
    H = de.as_tensor(H)
    terms = [H]
    if order > 1:
        terms.append(de.spmm(operator, H))
    for _ in range(2, order):
        terms.append(de.cheb_step(operator, terms[-1], terms[-2]))
    return terms


def cheb_layer(H, operator, thetas, b=None, activation=None, terms=None) -> Tensor:
    """``act(sum_k T_k(L) H theta_k + b)``.

    ``terms`` may carry precomputed ``T_k(L) H`` for constant ``H``.
    """
    H = de.as_tensor(H)
    if not thetas:
        raise ValidationError("cheb_layer needs at least one coefficient matrix")
    for t in thetas:
        if t.shape[0] != H.shape[1] or t.shape != thetas[0].shape:
            raise ShapeMismatch("cheb_layer", H.shape, t.shape)
    if terms is None:
        terms = chebyshev_terms(H, operator, len(thetas))
    out = de.affine(zip(terms, thetas), b)
    return activation(out) if activation is not None else out


def gat_attention(H, edges, n: int, W, a, slope: float = 0.2) -> tuple[Tensor, Tensor]:
    """Edge-modulated attention and the transformed features ``H W``.

    Logits ``LeakyReLU(a^T [W h_i || W h_j])`` are softmaxed over each
    receiver's neighbourhood, multiplied by the Gaussian edge weights and
    renormalised.
    """
    H = de.as_tensor(H)
    src, dst, w = edges
    if W.shape[0] != H.shape[1] or a.shape != (2 * W.shape[1], 1):
        raise ShapeMismatch("gat_layer", H.shape, W.shape, a.shape)
    Wh = de.matmul(H, W)
    logits = de.leaky_relu(de.edge_logits(Wh, a, src, dst), slope)
    return de.neighborhood_softmax(logits, src, n, weights=w), Wh


def gat_layer(H, edges, n: int, W, a, b=None, activation=None, slope: float = 0.2) -> Tensor:
    alpha, Wh = gat_attention(H, edges, n, W, a, slope)
    src, dst, _ = edges
    return _finish(de.edge_aggregate(alpha, Wh, src, dst, n), b, activation)


def dense_layer(H, W, b=None, activation=None) -> Tensor:
    H = de.as_tensor(H)
    if W.shape[0] != H.shape[1]:
        raise ShapeMismatch("dense_layer", H.shape, W.shape)
    out = de.affine([(H, W)], b)
    return activation(out) if activation is not None else out


def tdamlp_forward(X_aug, params: ParamStore, config: ModelConfig) -> Tensor:
    return forward(config, params, GraphContext(np.asarray(X_aug, dtype=np.float64)))


def _require(ctx: GraphContext, attr: str, family: str):
    value = getattr(ctx, attr)
    if value is None:
        raise UnboundArtifact(f"{family} needs {attr} bound in the graph context")
    return value


def forward(config: ModelConfig, params: ParamStore, ctx: GraphContext) -> Tensor:
    act = ACTIVATIONS[config.activation]
    H = Tensor(ctx.features)
    n_layers = len(config.hidden_dims) + 1
    fam = config.family
    if fam == "graphsage":
        agg = _require(ctx, "aggregator", fam)
    elif fam == "chebspectral":
        op = _require(ctx, "cheb_operator", fam)
    elif fam == "gat":
        edges = _require(ctx, "edges", fam)
    for l in range(n_layers):
        p = f"layer{l}."
        a_fn = act if l < n_layers - 1 else None
        b = params[p + "b"]
        if fam == "graphsage":
            pre = ctx.input_aggregate() if l == 0 else None
            H = sage_layer(H, agg, params[p + "W_s"], params[p + "W_n"], b, a_fn, agg=pre)
        elif fam == "chebspectral":
            thetas = [params[p + f"theta{k}"] for k in range(config.cheb_order)]
            pre = ctx.input_chebyshev_terms(config.cheb_order) if l == 0 else None
            H = cheb_layer(H, op, thetas, b, a_fn, terms=pre)
        elif fam == "tdamlp":
            H = dense_layer(H, params[p + "W"], b, a_fn)
        else:
            heads = [
                gat_layer(H, edges, ctx.n, params[p + f"head{h}.W"], params[p + f"head{h}.a"], slope=config.leaky_slope)
                for h in range(config.gat_heads)
            ]
            out = heads[0]
            for extra in heads[1:]:
                out = de.add(out, extra)
            if len(heads) > 1:
                out = de.scale(out, 1.0 / len(heads))
            H = _finish(out, b, a_fn)
    return H


@dataclass
class ModelInstance:
    config: ModelConfig
    params: ParamStore
    context: GraphContext
    meta: dict = field(default_factory=dict)

    def forward(self) -> Tensor:
        return forward(self.config, self.params, self.context)

    def predict(self) -> np.ndarray:
        return self.forward().value[:, 0].copy()


def model_forward(instance: ModelInstance, X=None) -> np.ndarray:
    """Predictions for every node; ``X`` optionally replaces bound features."""
    ctx = instance.context
    if X is not None:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != ctx.n:
            raise ShapeMismatch("model_forward", X.shape, ctx.features.shape)
        ctx = GraphContext(X, ctx.aggregator, ctx.edges, ctx.cheb_operator)
    return forward(instance.config, instance.params, ctx).value
