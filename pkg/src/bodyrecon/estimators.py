"""Scikit-learn style estimators wrapping the two training loops.

Both estimators follow the usual conventions: hyperparameters are stored
verbatim by ``__init__`` (so ``get_params``/``set_params``/``clone`` work),
``fit`` returns ``self``, and learned state lives in trailing-underscore
attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .extraction import reconstruct_smooth
from .mesh import Aabb, TriMesh
from .nets import CoarseModel, DispModel, coarse_forward, save_model
from .sampling import Observation
from .train import CoarseItem, DispItem, TrainConfig, train_coarse, train_disp


def _as_items(X, cls, label):
    if not X:
        raise ValueError(f"{label}: empty training set")
    for it in X:
        if not isinstance(it, cls):
            raise TypeError(f"{label}: expected {cls.__name__} items, got {type(it).__name__}")
    k = len(X[0].points if cls is CoarseItem else X[0].vertices)
    for it in X:
        arr = it.points if cls is CoarseItem else it.vertices
        if len(arr) != k:
            raise ValueError(f"{label}: all items must share the same sample count")
    return list(X)


class CoarseOccupancyEstimator(BaseEstimator):
    """Conditional occupancy network with the usual fit/predict surface.

    Parameters mirror :class:`bodyrecon.train.TrainConfig` plus the model
    dimensions; ``random_state`` seeds weight init, batch order and latent
    noise, so two fits with equal inputs are bit-identical.
    """

    def __init__(self, epochs=50, batch_size=14, learning_rate=1e-4,
                 lr_schedule=(), pos_weight=25.0, feature_dim=128,
                 latent_dim=16, hidden_dim=128, n_blocks=5, use_joints=True,
                 tau=0.96, resolutions=(32, 128), domain_margin=0.05,
                 random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.pos_weight = pos_weight
        self.feature_dim = feature_dim
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.use_joints = use_joints
        self.tau = tau
        self.resolutions = resolutions
        self.domain_margin = domain_margin
        self.random_state = random_state

    def fit(self, X, y=None):
        """Fit on a list of :class:`bodyrecon.train.CoarseItem`.

        The reconstruction domain is the bounding box of all training query
        points, padded by ``domain_margin`` of its diagonal.
        """
        items = _as_items(X, CoarseItem, "CoarseOccupancyEstimator.fit")
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_schedule=tuple(self.lr_schedule), pos_weight=self.pos_weight,
            k_points=len(items[0].points), seed=self.random_state, tau=self.tau,
        )
        all_points = np.concatenate([it.points for it in items])
        bbox = Aabb.of_points(all_points)
        self.domain_ = Aabb.of_points(all_points, margin=self.domain_margin * bbox.diagonal)
        model = CoarseModel(
            self.domain_, items[0].obs.shape[0], items[0].obs.shape[1],
            items[0].obs.n_joint_channels, use_joints=self.use_joints,
            feature_dim=self.feature_dim, latent_dim=self.latent_dim,
            hidden_dim=self.hidden_dim, n_blocks=self.n_blocks,
            seed=self.random_state,
        )
        self.model_, self.loss_curve_ = train_coarse(
            items, config, self.domain_, model=model,
        )
        return self

    def predict_occupancy(self, obs: Observation, points: np.ndarray) -> np.ndarray:
        """Occupancy probabilities at ``points`` with the latent at its prior mean."""
        check_is_fitted(self, "model_")
        phi = self.model_.encode_observations([obs]).data[0]
        z = np.zeros(self.model_.latent_dim, dtype=self.model_.dtype)
        return coarse_forward(self.model_, phi, z, points)

    def predict(self, obs: Observation) -> TriMesh:
        """Reconstruct the smooth mesh for one observation."""
        check_is_fitted(self, "model_")
        return reconstruct_smooth(self.model_, obs, self.tau, tuple(self.resolutions))

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_model(self.model_, path)


class DisplacementEstimator(BaseEstimator):
    """Per-vertex displacement regressor with fit/predict semantics."""

    def __init__(self, epochs=50, batch_size=14, learning_rate=1e-4,
                 lr_schedule=(), feature_dim=128, hidden_dim=128, n_blocks=10,
                 use_joints=True, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.use_joints = use_joints
        self.random_state = random_state

    def fit(self, X, y=None):
        """Fit on a list of :class:`bodyrecon.train.DispItem`."""
        items = _as_items(X, DispItem, "DisplacementEstimator.fit")
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_schedule=tuple(self.lr_schedule),
            n_disp_points=len(items[0].vertices),
            seed=self.random_state,
        )
        model = DispModel(
            items[0].obs.shape[0], items[0].obs.shape[1],
            items[0].obs.n_joint_channels, use_joints=self.use_joints,
            feature_dim=self.feature_dim, hidden_dim=self.hidden_dim,
            n_blocks=self.n_blocks, seed=self.random_state,
        )
        self.model_, self.loss_curve_ = train_disp(items, config, model=model)
        return self

    def predict(self, obs: Observation, vertices: np.ndarray) -> np.ndarray:
        """Signed displacement along the normal for each query vertex."""
        check_is_fitted(self, "model_")
        return self.model_.displacement_field(obs, vertices)

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_model(self.model_, path)
