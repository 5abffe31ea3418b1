"""Training objectives: weighted BCE, Gaussian KL, and the batch losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat
from .errors import TrainingDiverged
from .nets import CoarseModel, DispModel
from .sampling import Observation

_EPS = 1e-7


def wbce(pred, label, pos_weight: float = 1.0):
    """Weighted binary cross-entropy on probabilities.

    ``-(w * y * log(p) + (1 - y) * log(1 - p))`` with ``p`` clamped to
    ``[1e-7, 1 - 1e-7]``.  Accepts tensors (for training) or plain
    floats/arrays, elementwise.
    """
    pred = pred if isinstance(pred, Tensor) else as_tensor(np.asarray(pred, dtype=np.float64))
    label = as_tensor(label, pred.dtype)
    p = pred.clip(_EPS, 1.0 - _EPS)
    loss = -(pos_weight * label * p.log() + (1.0 - label) * (1.0 - p).log())
    return loss


def kl_gaussian(mu, sigma):
    """KL divergence of N(mu, diag(sigma^2)) from the standard normal prior.

    ``0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)`` over the last axis.
    """
    mu = mu if isinstance(mu, Tensor) else as_tensor(np.asarray(mu, dtype=np.float64))
    sigma = as_tensor(sigma, mu.dtype)
    term = sigma.square() + mu.square() - 1.0 - sigma.square().log()
    return term.sum(axis=-1) * 0.5


@dataclass
class CoarseBatch:
    """One minibatch of coarse-training items with equal K per item."""

    observations: list[Observation]
    points: np.ndarray   # (B, K, 3)
    labels: np.ndarray   # (B, K)


@dataclass
class DispBatch:
    """One minibatch of displacement-training items with equal N per item."""

    observations: list[Observation]
    vertices: np.ndarray   # (B, N, 3)
    targets: np.ndarray    # (B, N)


def coarse_loss(model: CoarseModel, batch: CoarseBatch, pos_weight: float,
                rng: np.random.Generator) -> Tensor:
    """Reconstruction + KL objective, averaged over the minibatch.

    Per item: the weighted BCE summed over its K query points plus the KL of
    the point-set posterior from the prior.  The latent is reparameterized,
    ``z = mu + sigma * eps`` with ``eps`` drawn from the given stream.
    """
    dtype = model.dtype
    b, k, _ = batch.points.shape
    phi = model.encode_observations(batch.observations)
    mu, sigma = model.encode_posterior(batch.points.astype(dtype),
                                       batch.labels.astype(dtype))
    eps = rng.standard_normal((b, model.latent_dim)).astype(dtype)
    z = mu + sigma * as_tensor(eps)
    cond = concat([phi, z], axis=1)
    probs = model.decode(cond, as_tensor(batch.points.astype(dtype)))
    bce = wbce(probs, batch.labels.astype(dtype), pos_weight).sum(axis=1)
    per_item = bce + kl_gaussian(mu, sigma)
    return per_item.mean()


def disp_loss(model: DispModel, batch: DispBatch) -> Tensor:
    """Displacement regression loss: per-vertex |prediction - target| summed
    over each item's N sampled vertices, averaged over the minibatch."""
    dtype = model.dtype
    phi = model.encode_observations(batch.observations)
    verts = batch.vertices.astype(dtype)
    cond = model.encode_context(phi, verts)
    pred = model.decode(cond, as_tensor(verts))
    residual = (pred - as_tensor(batch.targets.astype(dtype))).abs()
    return residual.sum(axis=1).mean()


def check_finite(loss: Tensor, context: str) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(f"{context}: loss is {value}")
    return value
