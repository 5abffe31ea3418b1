"""Run configuration: flat key=value files, environment and flag overrides.

Precedence, lowest to highest: built-in defaults (the reference paper's
hyperparameters where it states them), config file, ``BODYRECON_<KEY>``
environment variables, command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .dataset import GenParams
from .errors import ConfigError
from .train import TrainConfig

ENV_PREFIX = "BODYRECON_"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_schedule(text: str) -> tuple[tuple[int, float], ...]:
    """Parse "epoch:lr,epoch:lr" into a learning-rate schedule."""
    text = text.strip()
    if not text:
        return ()
    entries = []
    for chunk in text.split(","):
        epoch, _, lr = chunk.partition(":")
        entries.append((int(epoch), float(lr)))
    return tuple(entries)


@dataclass
class RunConfig:
    """Every tunable of the pipeline; see field comments for meaning."""

    # dataset generation
    data_dir: str = "data"
    n_train: int = 64
    n_val: int = 0
    n_test: int = 16
    body_resolution: int = 64        # marching-cubes grid for body generation
    image_size: int = 64             # raster height and width
    heatmap_sigma_px: float = 2.0
    camera_half_extent: float = 3.6  # world units mapped to the image half-size
    camera_center_y: float = 0.1
    camera_views: int = 1            # evenly spaced yaw angles, cycled per item
    clothing_amplitude: float = 0.05
    smooth_iterations: int = 30
    smooth_lambda: float = 0.5

    # point sampling
    k_points: int = 2048             # occupancy queries per item
    uniform_frac: float = 0.25
    surface_frac: float = 0.5
    near_surface_sigma_frac: float = 0.025  # fraction of the bbox diagonal
    joint_radius: float = 0.35       # sphere radius around face/hand joints
    disp_clamp_frac: float = 0.10    # displacement clamp, fraction of bbox diagonal
    n_disp_points: int = 10000       # vertex samples per item for displacement

    # model dimensions
    feature_dim: int = 128
    latent_dim: int = 16
    hidden_dim: int = 128
    coarse_blocks: int = 5
    disp_blocks: int = 10
    use_joints: bool = True

    # optimization
    coarse_epochs: int = 645
    disp_epochs: int = 1700
    batch_size: int = 14
    learning_rate: float = 1e-4
    coarse_lr_schedule: str = ""
    disp_lr_schedule: str = "170:1e-5,1200:1e-6"
    pos_weight: float = 25.0

    # isosurface extraction
    tau: float = 0.96
    extraction_initial_res: int = 32
    extraction_final_res: int = 128

    # evaluation
    metrics_samples: int = 100000

    seed: int = 0

    def validate(self) -> "RunConfig":
        def positive(name):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")

        for name in ("body_resolution", "image_size", "heatmap_sigma_px",
                     "camera_half_extent", "camera_views", "k_points",
                     "joint_radius", "disp_clamp_frac", "n_disp_points",
                     "feature_dim", "latent_dim", "hidden_dim",
                     "coarse_blocks", "disp_blocks", "coarse_epochs",
                     "disp_epochs", "batch_size", "pos_weight",
                     "extraction_initial_res", "extraction_final_res",
                     "metrics_samples", "smooth_lambda"):
            positive(name)
        for name in ("n_train", "n_val", "n_test", "smooth_iterations",
                     "clothing_amplitude", "near_surface_sigma_frac"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate: must be >= 0, got {self.learning_rate}")
        for name in ("body_resolution", "extraction_initial_res", "extraction_final_res"):
            value = getattr(self, name)
            if value & (value - 1):
                raise ConfigError(f"{name}: must be a power of two, got {value}")
        if self.extraction_initial_res > self.extraction_final_res:
            raise ConfigError("extraction_initial_res: exceeds extraction_final_res")
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau: must lie in (0, 1), got {self.tau}")
        if not 0 < self.smooth_lambda <= 1:
            raise ConfigError(f"smooth_lambda: must lie in (0, 1], got {self.smooth_lambda}")
        if self.uniform_frac < 0 or self.surface_frac < 0 \
                or self.uniform_frac + self.surface_frac > 1:
            raise ConfigError("uniform_frac/surface_frac: must be >= 0 and sum to <= 1")
        for name in ("coarse_lr_schedule", "disp_lr_schedule"):
            try:
                schedule = parse_schedule(getattr(self, name))
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            epochs = [e for e, _ in schedule]
            if epochs != sorted(set(epochs)):
                raise ConfigError(f"{name}: epochs must be strictly increasing")
        return self

    # -- derived views ---------------------------------------------------------

    def gen_params(self) -> GenParams:
        return GenParams(
            n_train=self.n_train, n_val=self.n_val, n_test=self.n_test,
            body_resolution=self.body_resolution, image_size=self.image_size,
            heatmap_sigma_px=self.heatmap_sigma_px,
            camera_half_extent=self.camera_half_extent,
            camera_center_y=self.camera_center_y,
            camera_views=self.camera_views,
            clothing_amplitude=self.clothing_amplitude,
            smooth_iterations=self.smooth_iterations,
            smooth_lambda=self.smooth_lambda, k_points=self.k_points,
            uniform_frac=self.uniform_frac, surface_frac=self.surface_frac,
            near_surface_sigma_frac=self.near_surface_sigma_frac,
            joint_radius=self.joint_radius,
        )

    def coarse_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.coarse_epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_schedule=parse_schedule(self.coarse_lr_schedule),
            pos_weight=self.pos_weight, k_points=self.k_points,
            n_disp_points=self.n_disp_points, seed=self.seed, tau=self.tau,
        )

    def disp_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.disp_epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_schedule=parse_schedule(self.disp_lr_schedule),
            pos_weight=self.pos_weight, k_points=self.k_points,
            n_disp_points=self.n_disp_points, seed=self.seed, tau=self.tau,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            return _parse_bool(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            key, sep, value = stripped.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value.strip())
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for name in _FIELD_TYPES:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = _coerce(name, raw)
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                environ=None) -> RunConfig:
    """Assemble a validated RunConfig from file, environment and overrides."""
    values: dict = {}
    if path is not None:
        values.update(read_config_file(path))
    values.update(env_overrides(environ))
    if overrides:
        values.update(overrides)
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return config.validate()
