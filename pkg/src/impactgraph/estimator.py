"""scikit-learn compatible estimator around the graph models."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import graph as gr
from . import tda
from .dataset import FEATURES, NormStats, fit_columns
from .diffengine import ParamStore
from .exceptions import MissingTarget, TooFewRows, ValidationError
from .models import GraphContext, ModelConfig, ModelInstance, forward, init_params
from .training import TrainConfig, TrainResult, train
from .validation import check_features, check_mask, check_target

CHECKPOINT_FORMAT = "impactgraph-checkpoint/1"


class GraphRegressor(RegressorMixin, BaseEstimator):
    """Transductive graph regressor over process-parameter samples.

    ``fit`` builds a kNN graph over *all* rows of ``X``; rows where ``y`` is
    NaN (or outside ``train_mask``) are unlabelled nodes that still take part
    in message passing. ``predict`` on the fitted rows returns their
    transductive predictions; other rows are attached to the stored graph
    through their ``k`` nearest nodes.

    Parameters
    ----------
    family : {"graphsage", "chebspectral", "tdamlp", "gat"}
    k : int
        Neighbours per node before symmetrisation.
    hidden_dims : tuple of int
    activation : {"relu", "tanh"}
    cheb_order : int
        Number of Chebyshev terms K.
    gat_heads : int
    gat_self_loops : bool
        Let each node attend to itself (weight 1) as well as its neighbours.
    leaky_slope : float
    refine_lambda : bool
        Estimate the Laplacian's largest eigenvalue by power iteration
        instead of using the bound 2.
    max_epochs, learning_rate, patience : training controls (Adam).
    random_state : int
        Seed for parameter initialisation.
    target_name : str or None
        Label used in reports and checkpoints.
    """

    def __init__(
        self,
        family="graphsage",
        k=8,
        hidden_dims=(32, 32),
        activation="relu",
        cheb_order=3,
        gat_heads=1,
        gat_self_loops=True,
        leaky_slope=0.2,
        refine_lambda=False,
        max_epochs=2000,
        learning_rate=1e-2,
        patience=200,
        random_state=0,
        target_name=None,
    ):
        self.family = family
        self.k = k
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.cheb_order = cheb_order
        self.gat_heads = gat_heads
        self.gat_self_loops = gat_self_loops
        self.leaky_slope = leaky_slope
        self.refine_lambda = refine_lambda
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.patience = patience
        self.random_state = random_state
        self.target_name = target_name

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            family=self.family,
            hidden_dims=tuple(self.hidden_dims),
            activation=self.activation,
            cheb_order=self.cheb_order,
            gat_heads=self.gat_heads,
            leaky_slope=self.leaky_slope,
            seed=self.random_state,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.max_epochs,
            learning_rate=self.learning_rate,
            patience=self.patience,
            target=self.target_name,
            seed=self.random_state,
        )

    # fitting

    def _bind(self, X, train_mask):
        """Normalise, build graph artefacts and the node feature matrix."""
        names = FEATURES if X.shape[1] == 3 else tuple(f"x{j}" for j in range(X.shape[1]))
        self.norm_stats_ = fit_columns(X, train_mask, names)
        Z = self.norm_stats_.apply(X)
        self.graph_ = gr.build_graph(Z, self.k)
        self.laplacian_ = None
        self.descriptor_stats_ = None
        self.descriptors_ = None
        if self.family == "tdamlp":
            self.descriptors_ = tda.node_descriptors(Z, self.k)
            self.descriptor_stats_ = fit_columns(self.descriptors_, train_mask, tda.DESCRIPTOR_NAMES)
        elif self.family == "chebspectral":
            self.laplacian_ = gr.normalized_laplacian(self.graph_, refine_lambda=self.refine_lambda)
        self.Z_ = Z
        return self._context(None)

    def _context(self, attachment, query_features=None) -> GraphContext:
        Z = self.Z_
        if self.family == "tdamlp":
            feats = tda.augment_features(Z, self.descriptor_stats_.apply(self.descriptors_))
            if query_features is not None:
                feats = np.vstack([feats, query_features])
            return GraphContext(feats)
        if query_features is not None:
            Z = np.vstack([Z, query_features])
        if self.family == "graphsage":
            return GraphContext(Z, aggregator=gr.extended_mean_aggregator(self.graph_, attachment))
        if self.family == "gat":
            edges = gr.extended_edges(self.graph_, attachment)
            if self.gat_self_loops:
                edges = gr.with_self_loops(*edges, len(Z))
            return GraphContext(Z, edges=edges)
        return GraphContext(Z, cheb_operator=gr.extended_chebyshev_operator(self.graph_, self.laplacian_, attachment))

    def fit(self, X, y, train_mask=None):
        """Fit on the labelled rows of ``train_mask`` (default: rows with finite ``y``)."""
        X = check_features(X, n_features=None)
        y = check_target(y, X.shape[0])
        if train_mask is None:
            train_mask = np.isfinite(y)
        train_mask = check_mask(train_mask, X.shape[0], "train_mask")
        if train_mask.sum() < 2:
            raise TooFewRows("need at least 2 labelled training rows")
        if not np.all(np.isfinite(y[train_mask])):
            raise MissingTarget(f"target {self.target_name!r} is missing on training rows")

        model_config = self._model_config()
        train_config = self._train_config()
        self.X_fit_ = X.copy()
        self.train_mask_ = train_mask.copy()
        ctx = self._bind(X, train_mask)
        self.target_stats_ = fit_columns(y, train_mask, (self.target_name or "y",))
        y_norm = np.where(train_mask, (np.where(train_mask, y, 0.0) - self.target_stats_.mean[0]) / self.target_stats_.std[0], np.nan)

        params = init_params(model_config, ctx.features.shape[1])
        self.model_ = ModelInstance(model_config, params, ctx)
        self.train_result_: TrainResult = train(self.model_, y_norm, train_mask, train_config)
        self.history_ = list(self.train_result_.history)
        self._refresh_node_predictions()
        self.n_features_in_ = X.shape[1]
        return self

    def _refresh_node_predictions(self):
        out = forward(self.model_.config, self.model_.params, self.model_.context).value[:, 0]
        self.node_predictions_ = self.target_stats_.invert(out[:, None])[:, 0]

    # prediction

    def predict_nodes(self) -> np.ndarray:
        """Transductive predictions for every fitted row, in fit order."""
        check_is_fitted(self, "node_predictions_")
        return self.node_predictions_.copy()

    def predict(self, X):
        check_is_fitted(self, "node_predictions_")
        X = check_features(X, n_features=self.n_features_in_)
        Zq = self.norm_stats_.apply(X)
        D = gr.cross_distances(Zq, self.Z_)
        hit = D.min(axis=1) == 0.0
        out = np.empty(X.shape[0])
        out[hit] = self.node_predictions_[np.argmin(D[hit], axis=1)]
        if (~hit).any():
            out[~hit] = self._predict_inductive(Zq[~hit])
        return out

    def _predict_inductive(self, Zq: np.ndarray) -> np.ndarray:
        if self.family == "tdamlp":
            desc = tda.query_descriptors(self.Z_, Zq, self.k, self.descriptors_)
            qfeat = tda.augment_features(Zq, self.descriptor_stats_.apply(desc))
            ctx = self._context(None, qfeat)
        else:
            att = gr.attach_queries(self.graph_, self.Z_, Zq)
            ctx = self._context(att, Zq)
        out = forward(self.model_.config, self.model_.params, ctx).value[-len(Zq):, 0]
        return self.target_stats_.invert(out[:, None])[:, 0]

    def attention(self, layer: int = 0, head: int = 0) -> np.ndarray:
        """Modulated attention coefficients of a GAT layer, aligned with ``graph_.directed()``."""
        from . import diffengine as de
        from .models import ACTIVATIONS, gat_attention, gat_layer

        check_is_fitted(self, "node_predictions_")
        if self.family != "gat":
            raise ValidationError("attention is only defined for the gat family")
        cfg, params, ctx = self.model_.config, self.model_.params, self.model_.context
        H = de.Tensor(ctx.features)
        for l in range(layer):
            p = f"layer{l}."
            heads = [gat_layer(H, ctx.edges, ctx.n, params[p + f"head{h}.W"], params[p + f"head{h}.a"], slope=cfg.leaky_slope)
                     for h in range(cfg.gat_heads)]
            acc = heads[0]
            for extra in heads[1:]:
                acc = de.add(acc, extra)
            H = ACTIVATIONS[cfg.activation](de.add(de.scale(acc, 1.0 / len(heads)), params[p + "b"]))
        p = f"layer{layer}."
        alpha, _ = gat_attention(H, ctx.edges, ctx.n, params[p + f"head{head}.W"], params[p + f"head{head}.a"], cfg.leaky_slope)
        return alpha.value[:, 0].copy()

    # persistence

    def to_checkpoint(self, extra: dict | None = None) -> dict:
        check_is_fitted(self, "node_predictions_")
        ckpt = {
            "format": CHECKPOINT_FORMAT,
            "estimator": self.get_params(),
            "config": self.model_.config.to_dict(),
            "train_config": self._train_config().to_dict(),
            "target": self.target_name,
            "params": self.model_.params.to_dict(),
            "norm_stats": self.norm_stats_.to_dict(),
            "target_stats": self.target_stats_.to_dict(),
            "descriptor_stats": None if self.descriptor_stats_ is None else self.descriptor_stats_.to_dict(),
            "features": self.X_fit_.tolist(),
            "train_mask": self.train_mask_.astype(int).tolist(),
        }
        ckpt["estimator"]["hidden_dims"] = list(self.hidden_dims)
        if extra:
            ckpt.update(extra)
        return ckpt

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_checkpoint(extra), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_checkpoint(cls, ckpt: dict) -> "GraphRegressor":
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"unsupported checkpoint format {ckpt.get('format')!r}")
        kwargs = dict(ckpt["estimator"])
        kwargs["hidden_dims"] = tuple(kwargs["hidden_dims"])
        est = cls(**kwargs)
        X = np.asarray(ckpt["features"], dtype=np.float64)
        mask = np.asarray(ckpt["train_mask"], dtype=bool)
        est.X_fit_ = X
        est.train_mask_ = mask
        # Graph and statistics are a deterministic function of features and mask.
        ctx = est._bind(X, mask)
        if est.norm_stats_.to_dict() != ckpt["norm_stats"]:
            raise ValidationError("checkpoint normalisation does not match its stored features")
        est.target_stats_ = NormStats.from_dict(ckpt["target_stats"])
        config = ModelConfig(**{**ckpt["config"], "hidden_dims": tuple(ckpt["config"]["hidden_dims"])})
        est.model_ = ModelInstance(config, ParamStore.from_dict(ckpt["params"]), ctx)
        est.history_ = []
        est.n_features_in_ = X.shape[1]
        est._refresh_node_predictions()
        return est

    @classmethod
    def load(cls, path) -> "GraphRegressor":
        return cls.from_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))
