"""Command-line interface.

Subcommands: ``generate`` (write a dataset), ``train`` (produce a model
checkpoint), ``evaluate`` (score one estimator on one dataset), ``sweep``
(run an experiment grid, emitting CSV + manifest + figure), ``inspect``
(print dataset/checkpoint metadata). Failures print a machine-readable JSON
object on stderr and exit nonzero (2 for config problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    ESTIMATORS,
    ExperimentSpec,
    run_experiment,
    table2_spec,
    table3_spec,
    table4_spec,
    write_csv,
    write_manifest,
)
from .checkpoints import checkpoint_metadata, load_model, save_model
from .datasets import (
    DATASET_FORMAT,
    NoiseSampling,
    ScenarioConfig,
    dataset_metadata,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, SlamFiltersError
from .metrics import PERFECT, mse_db
from .rollout import TrajectoryArrays
from .training import TrainConfig, train_single_gain, train_split_gain

_PRESETS = {"table2": table2_spec, "table3": table3_spec, "table4": table4_spec}


def _load_json_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level value must be an object")
    return data


def _field(cfg: dict, name: str, kind, default=..., path: str = "config"):
    if name not in cfg:
        if default is ...:
            raise ConfigError(f"{path}: missing required field {name!r}", field=name)
        return default
    value = cfg[name]
    try:
        if kind is float:
            return float(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: field {name!r} must be a {kind.__name__}", field=name)
    return value


def _sigma_field(cfg: dict, name: str, path: str):
    value = cfg.get(name)
    if value is None:
        raise ConfigError(f"{path}: missing required field {name!r}", field=name)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (float(value[0]), float(value[1]))
    raise ConfigError(f"{path}: field {name!r} must be a number or [low, high]",
                      field=name)


def _scenario_from_config(cfg: dict, seed_override: int | None, path: str):
    noise_cfg = cfg.get("noise")
    if not isinstance(noise_cfg, dict):
        raise ConfigError(f"{path}: missing 'noise' object", field="noise")
    sampling = NoiseSampling(
        sigma_w2=_sigma_field(noise_cfg, "sigma_w2", path),
        sigma_v2=_sigma_field(noise_cfg, "sigma_v2", path),
        q2=_field(noise_cfg, "q2", float, path=path),
        r2=_field(noise_cfg, "r2", float, path=path),
    )
    seed = seed_override if seed_override is not None else _field(cfg, "seed", int, 0, path)
    try:
        scenario = ScenarioConfig(
            num_landmarks=_field(cfg, "num_landmarks", int, path=path),
            num_steps=_field(cfg, "num_steps", int, path=path),
            num_trajectories=_field(cfg, "num_trajectories", int, path=path),
            speed=_field(cfg, "speed", float, path=path),
            seed=seed,
            box_low=_field(cfg, "box_low", int, -30, path),
            box_high=_field(cfg, "box_high", int, 30, path),
            p_switch=_field(cfg, "p_switch", float, 0.0, path),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")
    return scenario, sampling


def _cmd_generate(args) -> int:
    if not args.config:
        raise ConfigError("generate requires --config")
    if not args.out:
        raise ConfigError("generate requires --out")
    cfg = _load_json_config(args.config)
    scenario, sampling = _scenario_from_config(cfg, args.seed, args.config)
    dataset = generate_dataset(scenario, sampling)
    save_dataset(dataset, args.out)
    print(json.dumps({"written": str(args.out),
                      "num_trajectories": len(dataset),
                      "num_landmarks": dataset.num_landmarks,
                      "seed": scenario.seed}))
    return 0


def _train_config_from(cfg: dict, seed_override: int | None, path: str) -> TrainConfig:
    ignored = {"estimator", "dataset"}
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = [k for k in cfg if k not in known and k not in ignored]
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {unknown}", field=unknown[0])
    kwargs = {k: cfg[k] for k in cfg if k in known}
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


def _cmd_train(args) -> int:
    if not args.config:
        raise ConfigError("train requires --config")
    if not args.out:
        raise ConfigError("train requires --out")
    cfg = _load_json_config(args.config)
    estimator = cfg.get("estimator")
    if estimator not in ("A3", "A4"):
        raise ConfigError(f"{args.config}: 'estimator' must be 'A3' or 'A4'",
                          field="estimator")
    dataset_path = cfg.get("dataset")
    if not dataset_path:
        raise ConfigError(f"{args.config}: missing 'dataset' path", field="dataset")
    dataset = load_dataset(dataset_path)
    train_cfg = _train_config_from(cfg, args.seed, args.config)
    if estimator == "A3":
        model, log = train_single_gain(dataset, train_cfg)
    else:
        model, log = train_split_gain(dataset, train_cfg)
    save_model(model, args.out, extra={"dataset": str(dataset_path),
                                       "seed": train_cfg.seed})
    print(json.dumps({"written": str(args.out), "estimator": estimator,
                      "best_val_loss": log.best_val,
                      "entries": len(log.entries)}))
    return 0


def _cmd_evaluate(args) -> int:
    from .bench import estimate_dataset
    import numpy as np

    if args.estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {args.estimator!r}")
    dataset = load_dataset(args.dataset)
    model = None
    if args.estimator in ("A3", "A4"):
        if not args.model:
            raise ConfigError(f"estimator {args.estimator} requires --model")
        model, _ = load_model(args.model)
    arrays = TrajectoryArrays.from_dataset(dataset)
    estimates, diverged = estimate_dataset(args.estimator, dataset, arrays, model)
    keep = np.ones(len(dataset), dtype=bool)
    keep[diverged] = False
    mu, sigma = mse_db(arrays.states[keep], estimates[keep])
    result = {
        "estimator": args.estimator,
        "dataset": str(args.dataset),
        "mu_db": "perfect" if mu is PERFECT else mu,
        "sigma_db": sigma,
        "num_trajectories": int(keep.sum()),
        "num_diverged": len(diverged),
    }
    print(json.dumps(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2), encoding="utf-8")
    return 0


def _spec_from_config(cfg: dict, seed_override: int | None, path: str) -> ExperimentSpec:
    cfg = dict(cfg)
    preset = cfg.pop("preset", None)
    if seed_override is not None:
        cfg["seed"] = seed_override
    if preset is not None:
        maker = _PRESETS.get(preset)
        if maker is None:
            raise ConfigError(f"{path}: unknown preset {preset!r}", field="preset")
        try:
            return maker(**cfg)
        except TypeError as exc:
            raise ConfigError(f"{path}: bad preset override: {exc}")
    try:
        return ExperimentSpec(**cfg)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}")


def _cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep requires --config")
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _spec_from_config(_load_json_config(args.config), args.seed, args.config)
    rows = run_experiment(spec)
    csv_path = out_dir / f"{spec.name}.csv"
    manifest_path = out_dir / f"{spec.name}.manifest.json"
    write_csv(rows, csv_path)
    write_manifest(spec, rows, manifest_path)
    outputs = {"csv": str(csv_path), "manifest": str(manifest_path)}
    if not args.no_plot:
        from .plotting import render_sweep_figure

        fig_path = out_dir / f"{spec.name}.png"
        render_sweep_figure(rows, fig_path, title=spec.name)
        outputs["figure"] = str(fig_path)
    print(json.dumps(outputs))
    return 0


def _cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise ConfigError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.readline()
    meta = None
    if head.lstrip().startswith(b"{"):
        try:
            parsed = json.loads(head.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            parsed = None
        if isinstance(parsed, dict):
            if parsed.get("format") == DATASET_FORMAT:
                meta = dataset_metadata(path)
            else:
                meta = checkpoint_metadata(path)
    if meta is None:
        raise ConfigError(f"{path} is neither a dataset nor a checkpoint")
    print(json.dumps(meta, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slamfilters",
        description="Range-bearing SLAM estimator benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--out", type=str, default=None, help="output path")

    common(sub.add_parser("generate", help="write a synthetic dataset"))
    common(sub.add_parser("train", help="train a learned-gain estimator"))

    p_eval = sub.add_parser("evaluate", help="score one estimator on one dataset")
    common(p_eval)
    p_eval.add_argument("--estimator", required=True, choices=list(ESTIMATORS))
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--model", default=None, help="checkpoint for A3/A4")

    p_sweep = sub.add_parser("sweep", help="run an experiment grid")
    common(p_sweep)
    p_sweep.add_argument("--no-plot", action="store_true",
                         help="skip rendering the sweep figure")

    p_inspect = sub.add_parser("inspect", help="print dataset/checkpoint metadata")
    common(p_inspect)
    p_inspect.add_argument("path")
    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "field": exc.field}), file=sys.stderr)
        return 2
    except SlamFiltersError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
