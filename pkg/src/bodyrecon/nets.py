"""Network definitions: observation encoder, conditionally modulated residual
decoders, point-set encoders, and checkpoint serialization.

The coarse network maps (observation, latent code, query point) to an
occupancy probability; the displacement network maps (observation, smooth
vertex cloud, query vertex) to a signed scalar offset.  Hidden activations
are modulated per feature by an affine (scale, shift) predicted from the
conditioning vector -- there are no batch statistics anywhere, so evaluation
is independent of batch composition.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor, as_tensor, concat, no_grad, parameter, take_cols
from .errors import CheckpointError
from .mesh import Aabb
from .sampling import Observation, SampleSet

# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype, weight_scale: float | None = None, bias_init: float = 0.0):
        scale = np.sqrt(2.0 / n_in) if weight_scale is None else weight_scale
        self.weight = parameter(rng.normal(0.0, scale, (n_in, n_out)).astype(dtype))
        self.bias = parameter(np.full(n_out, bias_init, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


def _linear_3d(lin: Linear, h: Tensor) -> Tensor:
    """Apply a Linear to the last axis of a (B, K, C) tensor."""
    b, k, c = h.shape
    return lin(h.reshape(b * k, c)).reshape(b, k, lin.weight.shape[1])


class CondAffine:
    """Per-feature (scale, shift) modulation predicted from a conditioning vector."""

    def __init__(self, cond_dim: int, channels: int, rng: np.random.Generator, dtype):
        scale = 0.1 / np.sqrt(cond_dim)
        self.to_scale = Linear(cond_dim, channels, rng, dtype,
                               weight_scale=scale, bias_init=1.0)
        self.to_shift = Linear(cond_dim, channels, rng, dtype,
                               weight_scale=scale, bias_init=0.0)

    def __call__(self, h: Tensor, cond: Tensor) -> Tensor:
        b = cond.shape[0]
        c = self.to_scale.weight.shape[1]
        scale = self.to_scale(cond).reshape(b, 1, c)
        shift = self.to_shift(cond).reshape(b, 1, c)
        return h * scale + shift

    def params(self) -> list[Tensor]:
        return self.to_scale.params() + self.to_shift.params()


class ResBlock:
    """Residual block: two modulate-activate-linear stages plus skip."""

    def __init__(self, channels: int, cond_dim: int, rng: np.random.Generator, dtype):
        self.aff1 = CondAffine(cond_dim, channels, rng, dtype)
        self.lin1 = Linear(channels, channels, rng, dtype)
        self.aff2 = CondAffine(cond_dim, channels, rng, dtype)
        self.lin2 = Linear(channels, channels, rng, dtype)

    def __call__(self, h: Tensor, cond: Tensor) -> Tensor:
        y = _linear_3d(self.lin1, self.aff1(h, cond).relu())
        y = _linear_3d(self.lin2, self.aff2(y, cond).relu())
        return h + y

    def params(self) -> list[Tensor]:
        return (self.aff1.params() + self.lin1.params()
                + self.aff2.params() + self.lin2.params())


class Conv2d:
    """Strided 3x3 convolution on (H, W, C)-flattened rasters via column gather."""

    def __init__(self, height: int, width: int, c_in: int, c_out: int,
                 rng: np.random.Generator, dtype, stride: int = 2,
                 kernel: int = 3, pad: int = 1):
        self.c_in, self.c_out = c_in, c_out
        self.out_h = (height + 2 * pad - kernel) // stride + 1
        self.out_w = (width + 2 * pad - kernel) // stride + 1
        self.weight_rows = kernel * kernel * c_in
        scale = np.sqrt(2.0 / self.weight_rows)
        self.weight = parameter(
            rng.normal(0.0, scale, (self.weight_rows, c_out)).astype(dtype)
        )
        # small positive bias keeps all-zero input patches (common in binary
        # silhouettes) off the exact relu kink
        self.bias = parameter(np.full(c_out, 0.01, dtype=dtype))

        oy, ox, ky, kx, ci = np.mgrid[0:self.out_h, 0:self.out_w,
                                      0:kernel, 0:kernel, 0:c_in]
        iy = oy * stride + ky - pad
        ix = ox * stride + kx - pad
        flat = (iy * width + ix) * c_in + ci
        flat[(iy < 0) | (iy >= height) | (ix < 0) | (ix >= width)] = -1
        self._idx = np.ascontiguousarray(flat.reshape(-1))

    def __call__(self, x: Tensor) -> Tensor:
        """(B, H*W*c_in) -> (B, out_h*out_w*c_out)."""
        b = x.shape[0]
        cols = take_cols(x, self._idx).reshape(b * self.out_h * self.out_w,
                                               self.weight_rows)
        out = cols @ self.weight + self.bias
        return out.reshape(b, self.out_h * self.out_w * self.c_out)

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class ObservationEncoder:
    """Strided conv stack over the conditioning raster, pooled to one vector."""

    CHANNELS = (32, 64, 128, 128)

    def __init__(self, height: int, width: int, c_in: int, feature_dim: int,
                 rng: np.random.Generator, dtype):
        self.convs: list[Conv2d] = []
        h, w, c = height, width, c_in
        for c_out in self.CHANNELS:
            conv = Conv2d(h, w, c, c_out, rng, dtype)
            self.convs.append(conv)
            h, w, c = conv.out_h, conv.out_w, c_out
        self._pool_shape = (h * w, c)
        self.fc = Linear(c, feature_dim, rng, dtype)

    def __call__(self, rasters: Tensor) -> Tensor:
        """(B, H*W*c_in) -> (B, feature_dim)."""
        h = rasters
        for conv in self.convs:
            h = conv(h).relu()
        b = h.shape[0]
        pooled = h.reshape(b, *self._pool_shape).mean(axis=1)
        return self.fc(pooled)

    def params(self) -> list[Tensor]:
        out = []
        for conv in self.convs:
            out += conv.params()
        return out + self.fc.params()


class PointSetEncoder:
    """Permutation-invariant set encoder: shared MLP, max pool, output heads."""

    def __init__(self, in_dim: int, hidden: int, head_dims: tuple[int, ...],
                 rng: np.random.Generator, dtype):
        self.lin1 = Linear(in_dim, hidden, rng, dtype)
        self.lin2 = Linear(hidden, hidden, rng, dtype)
        self.lin3 = Linear(hidden, hidden, rng, dtype)
        self.heads = [Linear(hidden, d, rng, dtype) for d in head_dims]

    def __call__(self, sets: Tensor) -> list[Tensor]:
        """(B, K, in_dim) -> one (B, d) tensor per head."""
        b, k, d = sets.shape
        h = self.lin1(sets.reshape(b * k, d)).relu()
        h = self.lin2(h).reshape(b, k, -1)
        pooled = h.max(axis=1)
        g = self.lin3(pooled).relu()
        return [head(g) for head in self.heads]

    def params(self) -> list[Tensor]:
        out = self.lin1.params() + self.lin2.params() + self.lin3.params()
        for head in self.heads:
            out += head.params()
        return out


class CondDecoder:
    """Point-wise decoder: embed, conditioned residual blocks, scalar head."""

    def __init__(self, cond_dim: int, hidden: int, n_blocks: int,
                 rng: np.random.Generator, dtype):
        self.embed = Linear(3, hidden, rng, dtype)
        self.blocks = [ResBlock(hidden, cond_dim, rng, dtype) for _ in range(n_blocks)]
        self.final_aff = CondAffine(cond_dim, hidden, rng, dtype)
        self.head = Linear(hidden, 1, rng, dtype)

    def __call__(self, cond: Tensor, points: Tensor) -> Tensor:
        """cond (B, D), points (B, K, 3) -> raw scalar field (B, K)."""
        b, k, _ = points.shape
        h = self.embed(points.reshape(b * k, 3)).reshape(b, k, -1)
        for block in self.blocks:
            h = block(h, cond)
        h = self.final_aff(h, cond).relu()
        out = _linear_3d(self.head, h)
        return out.reshape(b, k)

    def params(self) -> list[Tensor]:
        out = self.embed.params()
        for block in self.blocks:
            out += block.params()
        return out + self.final_aff.params() + self.head.params()


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def raster_batch(observations: list[Observation], use_joints: bool, dtype) -> np.ndarray:
    """Stack conditioning rasters into one (B, H*W*C) array."""
    rows = [o.raster(use_joints).reshape(-1) for o in observations]
    return np.ascontiguousarray(np.stack(rows), dtype=dtype)


class CoarseModel:
    """Conditional occupancy network with a point-set posterior encoder."""

    kind = 1

    def __init__(self, domain: Aabb, height: int = 64, width: int = 64,
                 n_joints: int = 17, use_joints: bool = True,
                 feature_dim: int = 128, latent_dim: int = 16,
                 hidden_dim: int = 128, n_blocks: int = 5,
                 seed: int = 0, dtype=np.float32):
        self.domain = domain
        self.height, self.width = height, width
        self.n_joints = n_joints
        self.use_joints = use_joints
        self.feature_dim = feature_dim
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(seed)
        c_in = 1 + (n_joints if use_joints else 0)
        cond_dim = feature_dim + latent_dim
        self.encoder = ObservationEncoder(height, width, c_in, feature_dim, rng, self.dtype)
        self.posterior = PointSetEncoder(4, hidden_dim, (latent_dim, latent_dim),
                                         rng, self.dtype)
        self.decoder = CondDecoder(cond_dim, hidden_dim, n_blocks, rng, self.dtype)

    def parameters(self) -> list[Tensor]:
        return self.encoder.params() + self.posterior.params() + self.decoder.params()

    # -- forward pieces ------------------------------------------------------

    def encode_observations(self, observations: list[Observation]) -> Tensor:
        return self.encoder(as_tensor(raster_batch(observations, self.use_joints,
                                                   self.dtype)))

    def encode_posterior(self, points: np.ndarray, labels: np.ndarray) -> tuple[Tensor, Tensor]:
        """(B, K, 3) points and (B, K) labels -> (mu, sigma), each (B, L)."""
        sets = np.concatenate([points, labels[..., None]], axis=2).astype(self.dtype)
        mu, log_sigma = self.posterior(as_tensor(sets))
        return mu, log_sigma.exp()

    def decode(self, cond: Tensor, points: Tensor) -> Tensor:
        """Occupancy probabilities (B, K) for cond (B, F+L), points (B, K, 3)."""
        return self.decoder(cond, points).sigmoid()

    # -- inference -------------------------------------------------------------

    def occupancy_field(self, obs: Observation):
        """Batch-callable field at the prior mean (z = 0) for isosurface extraction."""
        with no_grad():
            phi = self.encode_observations([obs]).data
        cond = np.concatenate(
            [phi, np.zeros((1, self.latent_dim), dtype=self.dtype)], axis=1
        )

        def field(points: np.ndarray) -> np.ndarray:
            with no_grad():
                pts = np.ascontiguousarray(points, dtype=self.dtype)[None]
                probs = self.decode(as_tensor(cond), as_tensor(pts))
            return probs.data[0].astype(np.float64)

        return field


class DispModel:
    """Displacement regressor conditioned on the observation and vertex cloud."""

    kind = 2

    def __init__(self, height: int = 64, width: int = 64, n_joints: int = 17,
                 use_joints: bool = True, feature_dim: int = 128,
                 hidden_dim: int = 128, n_blocks: int = 10,
                 seed: int = 0, dtype=np.float32):
        self.height, self.width = height, width
        self.n_joints = n_joints
        self.use_joints = use_joints
        self.feature_dim = feature_dim
        self.latent_dim = 0
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(seed)
        c_in = 1 + (n_joints if use_joints else 0)
        self.encoder = ObservationEncoder(height, width, c_in, feature_dim, rng, self.dtype)
        self.pointcloud = PointSetEncoder(3, hidden_dim, (feature_dim,), rng, self.dtype)
        self.decoder = CondDecoder(2 * feature_dim, hidden_dim, n_blocks, rng, self.dtype)

    def parameters(self) -> list[Tensor]:
        return (self.encoder.params() + self.pointcloud.params()
                + self.decoder.params())

    def encode_observations(self, observations: list[Observation]) -> Tensor:
        return self.encoder(as_tensor(raster_batch(observations, self.use_joints,
                                                   self.dtype)))

    def encode_context(self, phi: Tensor, vertex_sets: np.ndarray) -> Tensor:
        """Concat image feature with the permutation-invariant cloud encoding."""
        (phi_p,) = self.pointcloud(as_tensor(np.ascontiguousarray(
            vertex_sets, dtype=self.dtype)))
        return concat([phi, phi_p], axis=1)

    def decode(self, cond: Tensor, vertices: Tensor) -> Tensor:
        """Signed displacement (B, N) for cond (B, 2F), vertices (B, N, 3)."""
        return self.decoder(cond, vertices)

    def displacement_field(self, obs: Observation, vertices: np.ndarray) -> np.ndarray:
        """Displacements for every vertex of a smooth mesh (inference path)."""
        with no_grad():
            phi = self.encode_observations([obs])
            verts = np.ascontiguousarray(vertices, dtype=self.dtype)[None]
            cond = self.encode_context(phi, verts)
            d = self.decode(cond, as_tensor(verts))
        return d.data[0].astype(np.float64)


# ---------------------------------------------------------------------------
# spec-level ops
# ---------------------------------------------------------------------------


def encode_observation(model, obs: Observation) -> np.ndarray:
    """Global conditioning feature for one observation."""
    if obs.shape != (model.height, model.width):
        raise ValueError(
            f"observation raster {obs.shape} does not match model "
            f"({model.height}, {model.width})"
        )
    with no_grad():
        phi = model.encode_observations([obs])
    return phi.data[0].copy()


def coarse_forward(model: CoarseModel, phi: np.ndarray, z: np.ndarray,
                   points: np.ndarray) -> np.ndarray:
    """Occupancy probabilities for a batch of points under one conditioning.

    Evaluation is pointwise: the result for each point is bit-identical
    whether it is evaluated alone or inside any batch.
    """
    phi = np.asarray(phi, dtype=model.dtype).reshape(1, -1)
    z = np.asarray(z, dtype=model.dtype).reshape(1, -1)
    cond = np.concatenate([phi, z], axis=1)
    with no_grad():
        pts = np.ascontiguousarray(points, dtype=model.dtype)[None]
        probs = model.decode(as_tensor(cond), as_tensor(pts))
    return probs.data[0].copy()


def encode_points_posterior(model: CoarseModel, samples: SampleSet) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mu, sigma) from labelled occupancy samples; order-invariant."""
    points = samples.points[None].astype(model.dtype)
    labels = samples.labels[None].astype(model.dtype)
    with no_grad():
        mu, sigma = model.encode_posterior(points, labels)
    return mu.data[0].copy(), sigma.data[0].copy()


def disp_forward(model: DispModel, cond: Tensor | np.ndarray,
                 vertices: np.ndarray) -> np.ndarray:
    """Signed displacement for each query vertex under a fixed context."""
    raw = cond.data if isinstance(cond, Tensor) else cond
    cond_row = as_tensor(np.asarray(raw, dtype=model.dtype).reshape(1, -1))
    with no_grad():
        verts = np.ascontiguousarray(vertices, dtype=model.dtype)[None]
        d = model.decode(cond_row, as_tensor(verts))
    return d.data[0].copy()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"BRMODEL\x00"
_VERSION = 1
_HEADER = "<8sIBBH8I6d"  # magic, version, kind, use_joints, pad, dims, domain


def save_model(model, path: str | Path) -> None:
    """Single binary checkpoint: header, dims, f32 parameter blob."""
    params = model.parameters()
    blob = np.concatenate([p.data.astype("<f4").reshape(-1) for p in params])
    domain = getattr(model, "domain", None)
    bounds = (list(domain.lo) + list(domain.hi)) if domain is not None else [0.0] * 6
    header = struct.pack(
        _HEADER, _MAGIC, _VERSION, model.kind, int(model.use_joints), 0,
        model.feature_dim, model.latent_dim, model.hidden_dim, model.n_blocks,
        model.height, model.width, model.n_joints, blob.size, *bounds,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(blob.tobytes())


def load_model(path: str | Path):
    """Rebuild a model from a checkpoint written by :func:`save_model`."""
    size = struct.calcsize(_HEADER)
    with open(path, "rb") as fh:
        raw = fh.read(size)
        if len(raw) < size:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        (magic, version, kind, use_joints, _pad, feature_dim, latent_dim,
         hidden_dim, n_blocks, height, width, n_joints, n_params,
         *bounds) = struct.unpack(_HEADER, raw)
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint")
        if version != _VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version} not supported "
                f"(expected {_VERSION})"
            )
        blob = np.frombuffer(fh.read(), dtype="<f4")
    if blob.size != n_params:
        raise CheckpointError(f"{path}: expected {n_params} parameters, "
                              f"found {blob.size}")

    if kind == CoarseModel.kind:
        model = CoarseModel(
            Aabb(bounds[:3], bounds[3:]), height, width, n_joints,
            bool(use_joints), feature_dim, latent_dim, hidden_dim, n_blocks,
        )
    elif kind == DispModel.kind:
        model = DispModel(height, width, n_joints, bool(use_joints),
                          feature_dim, hidden_dim, n_blocks)
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind}")

    offset = 0
    for p in model.parameters():
        n = p.data.size
        p.data = blob[offset : offset + n].reshape(p.data.shape).copy()
        offset += n
    if offset != blob.size:
        raise CheckpointError(f"{path}: parameter blob size mismatch")
    return model
