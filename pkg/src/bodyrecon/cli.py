"""Command-line front end: gen-data, train-coarse, train-disp, reconstruct,
evaluate.

Every config key is exposed as a flag (and as a ``BODYRECON_<KEY>`` env
variable); flags win over the environment, which wins over ``--config``.
Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure,
5 checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .dataset import DatasetItem, build_dataset, read_manifest, split_items
from .errors import (
    BodyReconError,
    CheckpointError,
    ConfigError,
    TrainingDiverged,
)
from .estimators import CoarseOccupancyEstimator, DisplacementEstimator
from .extraction import apply_displacements, reconstruct_smooth
from .mesh import load_obj, save_obj
from .metrics import evaluate_pair
from .nets import CoarseModel, DispModel, load_model, save_model
from .sampling import displacement_ground_truth
from .train import CoarseItem, DispItem, EpochStats


def _write_loss_log(path: Path, curve: list[EpochStats]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,mean_loss,wall_seconds\n")
        for row in curve:
            fh.write(f"{row.epoch},{row.mean_loss!r},{row.wall_seconds:.3f}\n")


def _coarse_items(items: list[DatasetItem]) -> list[CoarseItem]:
    out = []
    for it in items:
        samples = it.samples
        out.append(CoarseItem(it.observation, samples.points,
                              samples.labels.astype(np.float64)))
    return out


def _config_from_args(args) -> RunConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if hasattr(args, f.name)
    }
    return load_config(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = _config_from_args(args)
    start = time.perf_counter()
    manifest = build_dataset(config.data_dir, config.seed, config.gen_params())
    n = config.n_train + config.n_val + config.n_test
    print(f"wrote {n} items to {manifest} in {time.perf_counter() - start:.1f}s")
    return 0


def cmd_train_coarse(args) -> int:
    config = _config_from_args(args)
    items = split_items(read_manifest(Path(config.data_dir) / "manifest.txt"), "train")
    if not items:
        raise ConfigError("data_dir: dataset has no train split")
    estimator = CoarseOccupancyEstimator(
        epochs=config.coarse_epochs, batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        lr_schedule=config.coarse_train_config().lr_schedule,
        pos_weight=config.pos_weight, feature_dim=config.feature_dim,
        latent_dim=config.latent_dim, hidden_dim=config.hidden_dim,
        n_blocks=config.coarse_blocks, use_joints=config.use_joints,
        tau=config.tau,
        resolutions=(config.extraction_initial_res, config.extraction_final_res),
        random_state=config.seed,
    )
    estimator.fit(_coarse_items(items))
    out = Path(args.out)
    estimator.save(out)
    _write_loss_log(out.with_suffix(out.suffix + ".loss.csv"), estimator.loss_curve_)
    final = estimator.loss_curve_[-1].mean_loss
    print(f"trained coarse model on {len(items)} items, "
          f"final loss {final:.4f}, checkpoint {out}")
    return 0


def _load_coarse(path: str) -> CoarseModel:
    model = load_model(path)
    if not isinstance(model, CoarseModel):
        raise CheckpointError(f"{path}: expected a coarse-network checkpoint")
    return model


def _load_disp(path: str) -> DispModel:
    model = load_model(path)
    if not isinstance(model, DispModel):
        raise CheckpointError(f"{path}: expected a displacement-network checkpoint")
    return model


def _disp_items(config: RunConfig, coarse: CoarseModel,
                items: list[DatasetItem]) -> list[DispItem]:
    """Displacement targets from the coarse net's own reconstructions."""
    resolutions = (config.extraction_initial_res, config.extraction_final_res)
    out = []
    for index, it in enumerate(items):
        obs = it.observation
        smooth = reconstruct_smooth(coarse, obs, config.tau, resolutions).with_normals()
        gt = it.gt_mesh
        clamp = config.disp_clamp_frac * gt.bounds().diagonal
        d = displacement_ground_truth(smooth, gt, clamp)
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 7, index]).generate_state(1)[0]
        )
        n = config.n_disp_points
        idx = rng.choice(len(d), size=n, replace=len(d) < n)
        out.append(DispItem(obs, smooth.vertices[idx], d[idx]))
    return out


def cmd_train_disp(args) -> int:
    config = _config_from_args(args)
    coarse = _load_coarse(args.coarse)
    items = split_items(read_manifest(Path(config.data_dir) / "manifest.txt"), "train")
    if not items:
        raise ConfigError("data_dir: dataset has no train split")
    disp_items = _disp_items(config, coarse, items)
    estimator = DisplacementEstimator(
        epochs=config.disp_epochs, batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        lr_schedule=config.disp_train_config().lr_schedule,
        feature_dim=config.feature_dim, hidden_dim=config.hidden_dim,
        n_blocks=config.disp_blocks, use_joints=config.use_joints,
        random_state=config.seed,
    )
    estimator.fit(disp_items)
    out = Path(args.out)
    estimator.save(out)
    _write_loss_log(out.with_suffix(out.suffix + ".loss.csv"), estimator.loss_curve_)
    final = estimator.loss_curve_[-1].mean_loss
    print(f"trained displacement model on {len(items)} items, "
          f"final loss {final:.4f}, checkpoint {out}")
    return 0


def cmd_reconstruct(args) -> int:
    config = _config_from_args(args)
    coarse = _load_coarse(args.coarse)
    item = DatasetItem(Path(args.item), seed=0, split="query")
    obs = item.observation
    resolutions = (config.extraction_initial_res, config.extraction_final_res)
    out = Path(args.out)
    stem = out.with_suffix("")

    smooth = reconstruct_smooth(coarse, obs, config.tau, resolutions)
    smooth_path = stem.parent / (stem.name + "_smooth.obj")
    save_obj(smooth, smooth_path)
    written = [smooth_path]

    if args.disp is not None:
        disp = _load_disp(args.disp)
        smooth_n = smooth.with_normals()
        d = disp.displacement_field(obs, smooth_n.vertices)
        detailed = apply_displacements(smooth_n, d)
        detailed_path = stem.parent / (stem.name + "_detailed.obj")
        save_obj(detailed, detailed_path)
        written.append(detailed_path)

    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    pred = load_obj(args.pred)
    gt = load_obj(args.gt)
    report = evaluate_pair(pred, gt, n=config.metrics_samples, seed=config.seed)
    sys.stdout.write(report.to_text())
    out = Path(args.out) if args.out else Path(args.pred).with_suffix(".metrics.json")
    report.save(out)
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="flat key=value config file")
    group = parser.add_argument_group(
        "config keys", "every key also reads env var BODYRECON_<KEY>"
    )
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, dest=f.name,
                               action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS,
                               help=f"(default: {f.default})")
        else:
            kind = {"int": int, "float": float}.get(f.type, str)
            group.add_argument(flag, dest=f.name, type=kind,
                               default=argparse.SUPPRESS, metavar=f.type.upper(),
                               help=f"(default: {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyrecon",
        description="Coarse-to-fine single-view body reconstruction pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-coarse", help="train the occupancy network")
    p.add_argument("--out", default="coarse.ckpt", help="checkpoint path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_coarse)

    p = sub.add_parser("train-disp", help="train the displacement network")
    p.add_argument("--coarse", required=True, help="trained coarse checkpoint")
    p.add_argument("--out", default="disp.ckpt", help="checkpoint path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_disp)

    p = sub.add_parser("reconstruct", help="extract meshes for one dataset item")
    p.add_argument("--coarse", required=True, help="trained coarse checkpoint")
    p.add_argument("--disp", help="trained displacement checkpoint (optional)")
    p.add_argument("--item", required=True, help="dataset item directory")
    p.add_argument("--out", required=True,
                   help="output stem; writes <stem>_smooth.obj and, with "
                        "--disp, <stem>_detailed.obj")
    _add_config_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="metric report for a mesh pair")
    p.add_argument("pred", help="predicted mesh (OBJ)")
    p.add_argument("gt", help="ground-truth mesh (OBJ)")
    p.add_argument("--out", help="report path (default: <pred>.metrics.json)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    warnings.filterwarnings("ignore", message=".*TBB.*")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 5
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except BodyReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
