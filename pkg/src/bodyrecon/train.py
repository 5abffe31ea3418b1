"""Adam optimizer and the seeded training loops for both networks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .losses import CoarseBatch, DispBatch, check_finite, coarse_loss, disp_loss
from .mesh import Aabb
from .nets import CoarseModel, DispModel
from .sampling import Observation


@dataclass
class TrainConfig:
    """Hyperparameters shared by both training loops.

    Defaults follow the reference setup: Adam at 1e-4 with betas (0.9, 0.999),
    positive class weight 25, K=2048 occupancy queries and N=10000 vertex
    samples per item, extraction threshold 0.96.
    """

    epochs: int = 50
    batch_size: int = 14
    learning_rate: float = 1e-4
    lr_schedule: tuple[tuple[int, float], ...] = ()
    pos_weight: float = 25.0
    k_points: int = 2048
    n_disp_points: int = 10000
    seed: int = 0
    tau: float = 0.96

    def __post_init__(self):
        for name in ("epochs", "batch_size", "k_points", "n_disp_points"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.pos_weight <= 0:
            raise ConfigError("pos_weight must be positive")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        epochs = [e for e, _ in self.lr_schedule]
        if epochs != sorted(epochs) or len(set(epochs)) != len(epochs):
            raise ConfigError("lr_schedule epochs must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for boundary, value in self.lr_schedule:
            if epoch >= boundary:
                lr = value
        return lr


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(state: AdamState, params, grads, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.t += 1
    correct1 = 1.0 - beta1**state.t
    correct2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / correct1
        v_hat = v / correct2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_seconds: float


@dataclass
class CoarseItem:
    """One training example for the coarse network."""

    obs: Observation
    points: np.ndarray   # (K, 3)
    labels: np.ndarray   # (K,)


@dataclass
class DispItem:
    """One training example for the displacement network."""

    obs: Observation
    vertices: np.ndarray  # (N, 3)
    targets: np.ndarray   # (N,)


def _run_epochs(model, items, config: TrainConfig, make_batch, loss_fn):
    params = model.parameters()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    curve: list[EpochStats] = []
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(items))
        lr = config.lr_at(epoch)
        total = 0.0
        n_batches = 0
        for lo in range(0, len(items), config.batch_size):
            chunk = [items[i] for i in order[lo : lo + config.batch_size]]
            loss = loss_fn(model, make_batch(chunk), rng)
            total += check_finite(loss, f"epoch {epoch}")
            n_batches += 1
            if lr > 0.0:
                for p in params:
                    p.grad = None
                loss.backward()
                adam_step(state, params, [p.grad for p in params], lr)
        curve.append(EpochStats(epoch, total / n_batches,
                                time.perf_counter() - start))
    return curve


def train_coarse(items: list[CoarseItem], config: TrainConfig, domain: Aabb,
                 use_joints: bool = True, dtype=np.float32,
                 model: CoarseModel | None = None):
    """Fit the occupancy network; returns (model, per-epoch loss curve).

    Fully seeded: weight init, batch order and the latent noise all derive
    from ``config.seed``, so identical calls produce bit-identical models.
    """
    if not items:
        raise ValueError("empty training set")
    obs = items[0].obs
    if model is None:
        model = CoarseModel(
            domain, obs.shape[0], obs.shape[1], obs.n_joint_channels,
            use_joints=use_joints, seed=config.seed, dtype=dtype,
        )

    def make_batch(chunk):
        return CoarseBatch(
            observations=[it.obs for it in chunk],
            points=np.stack([it.points for it in chunk]),
            labels=np.stack([it.labels for it in chunk]),
        )

    def loss_fn(m, batch, rng):
        return coarse_loss(m, batch, config.pos_weight, rng)

    curve = _run_epochs(model, items, config, make_batch, loss_fn)
    return model, curve


def train_disp(items: list[DispItem], config: TrainConfig,
               use_joints: bool = True, dtype=np.float32,
               model: DispModel | None = None):
    """Fit the displacement network; returns (model, per-epoch loss curve)."""
    if not items:
        raise ValueError("empty training set")
    obs = items[0].obs
    if model is None:
        model = DispModel(
            obs.shape[0], obs.shape[1], obs.n_joint_channels,
            use_joints=use_joints, seed=config.seed, dtype=dtype,
        )

    def make_batch(chunk):
        return DispBatch(
            observations=[it.obs for it in chunk],
            vertices=np.stack([it.vertices for it in chunk]),
            targets=np.stack([it.targets for it in chunk]),
        )

    def loss_fn(m, batch, rng):
        return disp_loss(m, batch)

    curve = _run_epochs(model, items, config, make_batch, loss_fn)
    return model, curve
