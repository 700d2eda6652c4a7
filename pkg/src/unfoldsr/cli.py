"""Command-line interface: solve / train / superresolve / eval.

Exit codes are a stable scripting contract:
    0  success
    2  usage or configuration error
    3  missing dataset or input file
    4  numeric failure (non-finite loss)
    5  artifact mismatch (bad checkpoint, wrong scale, wrong dims)
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .dataset import SyntheticSpec, gen_synthetic, load_dataset, sample_crops
from .errors import (
    ConfigError,
    FormatError,
    DimensionMismatchError,
    InvalidParameterError,
    MissingDataError,
    NumericFailureError,
    UnfoldsrError,
)
from .imageops import bicubic_resize, load_pgm, load_ppm, rgb_to_luma, save_pgm
from .models import DmscModel, DmscPlusModel, ModelConfig, load_model, save_checkpoint, train
from .solvers import ista_solve, l1l1_solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_DATA = 3
EXIT_NUMERIC = 4
EXIT_ARTIFACT = 5

SUPPORT_EPS = 1e-6

# RunConfig schema: key -> (parser, default); None default means required.
_CONFIG_SCHEMA = {
    "model": (str, "dmscplus"),
    "feat_filters": (int, 100),
    "feat_kernel": (int, 7),
    "code_dim": (int, 128),
    "patch_dim": (int, 7),
    "agg_kernel": (int, 5),
    "stages": (int, 3),
    "scale": (int, 2),
    "precision": (str, "single"),
    "epochs": (int, 200),
    "batch": (int, 8),
    "lr": (float, 1e-4),
    "seed": (int, 0),
    "dataset_root": (str, None),
    "crop": (int, 60),
    "crops_per_scene": (int, 16),
    "val_crops": (int, 2),
    "out_dir": (str, None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unfoldsr",
                                     description="Sparse coding with side information via deep unfolding.")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the l1 / l1-l1 solvers on a seeded synthetic problem")
    solve.add_argument("--mode", choices=("l1", "l1l1"), required=True)
    solve.add_argument("--n-y", type=int, default=16)
    solve.add_argument("--n-alpha", type=int, default=32)
    solve.add_argument("--sparsity", type=int, default=4)
    solve.add_argument("--perturb", type=int, default=0)
    solve.add_argument("--lambda", dest="lam", type=float, default=0.1)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--trace-out", default=None, help="write one objective value per line")

    trainp = sub.add_parser("train", help="train a model from a key = value config file")
    trainp.add_argument("config", help="path to the run configuration file")

    sr = sub.add_parser("superresolve", help="super-resolve one LR image with a trained checkpoint")
    sr.add_argument("--ckpt", required=True)
    sr.add_argument("--input", required=True, help="low-resolution target image (PGM)")
    sr.add_argument("--guide", required=True, help="high-resolution RGB guidance image (PPM)")
    sr.add_argument("--out", required=True, help="output PGM path")
    sr.add_argument("--scale", type=int, choices=(2, 4, 6), required=True)

    ev = sub.add_parser("eval", help="PSNR table over a dataset directory")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--dataset-root", required=True)
    ev.add_argument("--scale", type=int, choices=(2, 4, 6), required=True)
    ev.add_argument("--csv", default=None, help="also write the table as CSV")
    return parser


def _fail(code: int, message: str) -> int:
    print(f"unfoldsr: error: {message}", file=sys.stderr)
    return code


def cmd_solve(args) -> int:
    if args.lam <= 0:
        return _fail(EXIT_USAGE, "--lambda must be positive")
    if args.n_y < 1 or args.n_alpha < 1:
        return _fail(EXIT_USAGE, "--n-y and --n-alpha must be at least 1")
    if not 0 <= args.sparsity <= args.n_alpha:
        return _fail(EXIT_USAGE, "--sparsity must lie in [0, n-alpha]")
    if not 0 <= args.perturb <= args.n_alpha:
        return _fail(EXIT_USAGE, "--perturb must lie in [0, n-alpha]")
    spec = SyntheticSpec(n_y=args.n_y, n_alpha=args.n_alpha, sparsity=args.sparsity,
                         side_perturb=args.perturb, noise_std=0.0, seed=args.seed, lam=args.lam)
    problem, true_code = gen_synthetic(spec)
    if args.mode == "l1l1":
        report = l1l1_solve(problem)
    else:
        report = ista_solve(problem.drop_side())
    solution = report.solution
    support_match = (np.abs(solution) > SUPPORT_EPS) == (np.abs(true_code) > SUPPORT_EPS)
    accuracy = float(np.mean(support_match))
    recovery = float(np.linalg.norm(solution - true_code))
    print(f"mode={args.mode} n_y={args.n_y} n_alpha={args.n_alpha} seed={args.seed}")
    print(f"iterations={report.iterations} converged={report.converged}")
    print(f"final_objective={report.objective_trace[-1]:.12e}")
    print(f"support_accuracy={accuracy:.4f}")
    print(f"recovery_error={recovery:.6e}")
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            fh.writelines(f"{value:.17g}\n" for value in report.objective_trace)
    return EXIT_OK


def parse_run_config(path: str) -> dict:
    """Read a flat ``key = value`` file; unknown keys and bad values fail."""
    if not os.path.isfile(path):
        raise MissingDataError(f"config file {path!r} not found")
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, raw_value = line.partition("=")
            key, raw_value = key.strip(), raw_value.strip()
            if key not in _CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            parse, _default = _CONFIG_SCHEMA[key]
            try:
                values[key] = parse(raw_value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {raw_value!r}") from None
    for key, (_parse, default) in _CONFIG_SCHEMA.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            values[key] = default
    if values["model"] not in ("dmsc", "dmscplus"):
        raise ConfigError(f"model must be 'dmsc' or 'dmscplus', got {values['model']!r}")
    for key in ("epochs", "batch", "crop", "crops_per_scene"):
        if values[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if values["val_crops"] < 0:
        raise ConfigError("val_crops must be >= 0")
    if values["lr"] < 0:
        raise ConfigError("lr must be >= 0")
    return values


def _build_crops(scenes, crop, per_scene, val_crops, seed):
    train_crops, val = [], []
    for index, (_name, pair) in enumerate(scenes):
        crops = sample_crops(pair, crop, per_scene + val_crops, seed + index)
        train_crops.extend(crops[:per_scene])
        val.extend(crops[per_scene:])
    return train_crops, val


def cmd_train(args) -> int:
    cfg = parse_run_config(args.config)
    model_config = ModelConfig(
        feat_filters=cfg["feat_filters"], feat_kernel=cfg["feat_kernel"],
        code_dim=cfg["code_dim"], patch_dim=cfg["patch_dim"], agg_kernel=cfg["agg_kernel"],
        stages=cfg["stages"], scale=cfg["scale"], precision=cfg["precision"])
    scenes = load_dataset(cfg["dataset_root"], cfg["scale"])
    train_crops, val_crops = _build_crops(
        scenes, cfg["crop"], cfg["crops_per_scene"], cfg["val_crops"], cfg["seed"])
    cls = DmscPlusModel if cfg["model"] == "dmscplus" else DmscModel
    model = cls.random_init(model_config, seed=cfg["seed"])
    os.makedirs(cfg["out_dir"], exist_ok=True)
    report = train(model, train_crops, val_crops, epochs=cfg["epochs"], batch=cfg["batch"],
                   seed=cfg["seed"], lr=cfg["lr"], ckpt_dir=cfg["out_dir"])
    save_checkpoint(os.path.join(cfg["out_dir"], "final.ckpt"), model.params, model.config)
    report_path = os.path.join(cfg["out_dir"], "report.txt")
    lines = report.lines()
    with open(report_path, "w") as fh:
        fh.writelines(line + "\n" for line in lines)
    for line in lines:
        print(line)
    print(f"checkpoints and report written to {cfg['out_dir']}")
    return EXIT_OK


def cmd_superresolve(args) -> int:
    model = load_model(args.ckpt)
    if model.config.scale != args.scale:
        return _fail(EXIT_ARTIFACT,
                     f"checkpoint was trained for scale x{model.config.scale}, requested x{args.scale}")
    lr_img = load_pgm(args.input)
    up = bicubic_resize(lr_img, lr_img.width * args.scale, lr_img.height * args.scale)
    guide = rgb_to_luma(load_ppm(args.guide))
    if (guide.height, guide.width) != (up.height, up.width):
        return _fail(EXIT_ARTIFACT,
                     f"guide is {guide.height}x{guide.width}, upscaled input is {up.height}x{up.width}")
    sr = model.forward_image(up, guide)
    save_pgm(args.out, sr)
    print(f"wrote {args.out} ({sr.width}x{sr.height})")
    return EXIT_OK


def _format_row(name, bicubic_value, model_value, name_width):
    return f"{name:<{name_width}}  {bicubic_value:>12.4f}  {model_value:>12.4f}"


def cmd_eval(args) -> int:
    from .imageops import psnr  # local import keeps module top uncluttered

    model = load_model(args.ckpt)
    if model.config.scale != args.scale:
        return _fail(EXIT_ARTIFACT,
                     f"checkpoint was trained for scale x{model.config.scale}, requested x{args.scale}")
    scenes = load_dataset(args.dataset_root, args.scale)
    rows = []
    for name, pair in scenes:
        bicubic_value = psnr(pair.y_up, pair.x)
        model_value = psnr(model.forward_image(pair.y_up, pair.z), pair.x)
        rows.append((name, bicubic_value, model_value))
    avg = ("Average",
           sum(r[1] for r in rows) / len(rows),
           sum(r[2] for r in rows) / len(rows))
    name_width = max(len(r[0]) for r in rows + [avg] + [("name", 0, 0)])
    print(f"{'name':<{name_width}}  {'bicubic_psnr':>12}  {'model_psnr':>12}")
    for row in rows + [avg]:
        print(_format_row(*row, name_width))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("name,bicubic_psnr,model_psnr\n")
            for name, b, m in rows + [avg]:
                fh.write(f"{name},{b:.4f},{m:.4f}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {"solve": cmd_solve, "train": cmd_train,
               "superresolve": cmd_superresolve, "eval": cmd_eval}[args.command]
    try:
        return handler(args)
    except (ConfigError, InvalidParameterError) as err:
        return _fail(EXIT_USAGE, str(err))
    except (MissingDataError, FileNotFoundError) as err:
        return _fail(EXIT_MISSING_DATA, str(err))
    except NumericFailureError as err:
        code = _fail(EXIT_NUMERIC, str(err))
        if err.batch_index is not None:
            print(f"unfoldsr: offending batch index: {err.batch_index}", file=sys.stderr)
        return code
    except (FormatError, DimensionMismatchError) as err:
        return _fail(EXIT_ARTIFACT, str(err))
    except UnfoldsrError as err:
        return _fail(EXIT_USAGE, str(err))


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
