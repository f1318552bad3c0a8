"""Pipeline driver: synth, split, train, impute, evaluate, variogram, baseline.

Each subcommand reads an optional JSON config file (--config), applies any
command-line flags on top of it, echoes the effective configuration into the
run directory, then writes its artifacts there. Reruns with the same inputs,
seed, and thread count reproduce every metric and checkpoint byte for byte.

Exit codes: 0 on success, 2 for unusable arguments or configuration, 1 for
runtime failures (missing inputs, training aborts, checkpoint mismatches).
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    NormalizationStats,
    augment_missing_indicators,
    load_dataset,
    normalize,
    replace_preserving,
    save_dataset,
)
from .errors import CheckpointError, ConfigError, ContractError, StimputeError
from .evaluation import (
    baseline_linear_interpolation,
    baseline_matrix_factorization,
    baseline_monthly_mean,
    evaluate_model,
    impute_dataset,
    spatial_error_map,
)
from .masking import load_split, mcar_split, mnar_split, save_split
from .model import ModelConfig, ModelParams
from .rng import Rng
from .synthgen import FieldSpec, synth_field
from .training import TrainConfig, train
from .variogram import (
    detect_range,
    empirical_semivariogram,
    location_residuals,
    truncate_lags,
    variogram_csv,
)

# Keeps the BLAS thread limiter alive for the rest of the process.
_LIMITER = None


def _limit_threads(n: int):
    global _LIMITER
    if n < 1:
        raise ConfigError(f"--threads must be at least 1, got {n}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # the env vars still cover late-loading BLAS builds
        return
    _LIMITER = threadpool_limits(limits=n)


# ---------------------------------------------------------------------------
# config file handling


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {p} is not valid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return payload


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be a JSON object")
    return dict(section)


def _apply_overrides(section: dict, **flags) -> dict:
    """Explicit command-line values win over the config file."""
    for key, value in flags.items():
        if value is not None:
            section[key] = value
    return section


def _build(cls, section: dict, what: str):
    try:
        return cls(**section)
    except TypeError as err:
        raise ConfigError(f"bad {what} settings: {err}") from err


def _plain(value):
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _start_run(args, command: str, effective: dict) -> Path:
    """Create the run directory and echo the merged configuration into it."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"command": command}
    payload.update(effective)
    (out / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_plain) + "\n"
    )
    return out


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _training_view(dataset, m_cond):
    # Held-out targets are zeroed, so training can never read them.
    return replace_preserving(
        dataset, Y=dataset.Y * m_cond, M=m_cond.astype(np.float64).copy()
    )


def _resolve_model(path):
    p = Path(path)
    if p.is_dir():
        ckpt = p / "model.ckpt"
    else:
        ckpt = p
        p = ckpt.parent
    if not ckpt.exists():
        raise CheckpointError(f"no checkpoint at {ckpt}")
    cfg = p / "model_config.json"
    if not cfg.exists():
        raise CheckpointError(f"no model_config.json beside {ckpt}")
    return ckpt, cfg, p / "train_config.json"


def _load_model(args):
    """Checkpoint + configs from a training run directory (or .ckpt path).

    Returns (params, model_config, normalization stats or None, segmentation
    keywords). A "model" section in --config overrides the stored model
    config; mismatched overrides surface as a checkpoint error on load.
    """
    ckpt, cfg_path, tcfg_path = _resolve_model(args.model)
    stored = json.loads(cfg_path.read_text())
    stored.update(_section(_read_config(args.config), "model"))
    model_config = ModelConfig.from_json(json.dumps(stored))
    params, extras = ModelParams.load(ckpt, model_config)
    stats = None
    if "norm.y_mean" in extras:
        stats = NormalizationStats.from_arrays(extras)
    seg = {}
    if tcfg_path.exists():
        tc = TrainConfig.from_json(tcfg_path.read_text())
        seg = {"length": tc.window_length, "stride": tc.window_stride, "tile": tc.tile}
    return params, model_config, stats, seg


def _check_features(model_config: ModelConfig, dataset):
    if model_config.d_in != dataset.n_features:
        raise ConfigError(
            f"model expects {model_config.d_in} covariates but the dataset "
            f"has {dataset.n_features} (after missingness indicators)"
        )


def _write_f32(path: Path, arr: np.ndarray):
    np.asarray(arr, dtype=np.float64).astype("<f4").tofile(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    section = _section(_read_config(args.config), "field")
    _apply_overrides(section, seed=args.seed)
    spec = _build(FieldSpec, section, "field spec")
    dataset = synth_field(spec)
    out = _start_run(args, "synth", {"field": dataclasses.asdict(spec)})
    manifest = out / "dataset.json"
    save_dataset(dataset, manifest)
    lo, hi = float(dataset.Y.min()), float(dataset.Y.max())
    print(
        f"wrote {manifest}: {dataset.n_locations} locations x {dataset.n_times} "
        f"steps, {dataset.n_features} covariates, values in [{lo:.3f}, {hi:.3f}]"
    )
    return 0


def cmd_split(args) -> int:
    section = _section(_read_config(args.config), "split")
    _apply_overrides(section, scenario=args.scenario, rate=args.rate, seed=args.seed)
    scenario = str(section.get("scenario", "mcar")).lower()
    if scenario not in ("mcar", "mnar"):
        raise ConfigError(f"scenario must be mcar or mnar, got {scenario!r}")
    rate = float(section.get("rate", 0.2))
    seed = int(section.get("seed", 0))
    dataset = load_dataset(args.data)
    maker = mnar_split if scenario == "mnar" else mcar_split
    split = maker(dataset.M, rate, Rng(seed))
    out = _start_run(
        args,
        "split",
        {
            "data": str(args.data),
            "split": {"scenario": scenario, "rate": rate, "seed": seed},
        },
    )
    path = out / "split.json"
    save_split(split, path)
    print(
        f"wrote {path}: {len(split.eval_points)} held-out points "
        f"({scenario}, rate {rate})"
    )
    return 0


def cmd_train(args) -> int:
    config = _read_config(args.config)
    dataset = augment_missing_indicators(load_dataset(args.data))
    split = load_split(args.split, dataset.M)
    view, stats = normalize(_training_view(dataset, split.m_cond))

    model_section = _section(config, "model")
    d_in = view.n_features
    if model_section.setdefault("d_in", d_in) != d_in:
        raise ConfigError(
            f"model d_in {model_section['d_in']} does not match the dataset's "
            f"{d_in} covariates (after missingness indicators)"
        )
    model_config = _build(ModelConfig, model_section, "model")

    train_section = _section(config, "train")
    _apply_overrides(train_section, seed=args.seed, epochs=args.epochs)
    train_config = _build(TrainConfig, train_section, "training")

    out = _start_run(
        args,
        "train",
        {
            "data": str(args.data),
            "split": str(args.split),
            "model": dataclasses.asdict(model_config),
            "train": dataclasses.asdict(train_config),
        },
    )
    _, history = train(
        view,
        model_config,
        train_config,
        out_dir=out,
        extra_arrays=stats.to_arrays(),
        log=lambda r: print(
            f"epoch {r['epoch']:4d}  loss {r['loss']:.6f}  lr {r['lr']:.6g}"
        ),
    )
    print(
        f"final loss {history.losses[-1]:.6f} after {len(history.losses)} "
        f"epochs; checkpoint at {out / 'model.ckpt'}"
    )
    return 0


def cmd_impute(args) -> int:
    dataset = augment_missing_indicators(load_dataset(args.data))
    split = load_split(args.split, dataset.M) if args.split else None
    params, model_config, stats, seg = _load_model(args)
    _check_features(model_config, dataset)
    estimate, counts = impute_dataset(
        dataset,
        params,
        model_config,
        stats,
        split.m_cond if split else None,
        with_counts=True,
        **seg,
    )
    out = _start_run(
        args,
        "impute",
        {
            "data": str(args.data),
            "split": str(args.split) if args.split else None,
            "model": str(args.model),
            "segmentation": seg,
        },
    )
    _write_f32(out / "imputed.f32", estimate)
    _write_f32(out / "counts.f32", counts)
    (out / "imputed.json").write_text(
        json.dumps(
            {
                "height": dataset.height,
                "width": dataset.width,
                "length": dataset.n_times,
                "y_file": "imputed.f32",
                "counts_file": "counts.f32",
            },
            indent=2,
        )
        + "\n"
    )
    print(
        f"wrote {out / 'imputed.f32'}: {dataset.n_locations} x "
        f"{dataset.n_times} estimates, coverage {int(counts.min())}.."
        f"{int(counts.max())} samples per cell"
    )
    return 0


def cmd_evaluate(args) -> int:
    dataset = augment_missing_indicators(load_dataset(args.data))
    split = load_split(args.split, dataset.M)
    params, model_config, stats, seg = _load_model(args)
    _check_features(model_config, dataset)
    report = evaluate_model(dataset, split, params, model_config, stats, **seg)
    out = _start_run(
        args,
        "evaluate",
        {
            "data": str(args.data),
            "split": str(args.split),
            "model": str(args.model),
            "segmentation": seg,
        },
    )
    (out / "metrics.json").write_text(report.to_json() + "\n")
    _, csv_text = spatial_error_map(report)
    (out / "spatial_error.csv").write_text(csv_text)
    print(
        f"mae {report.mae:.6f}  mre {report.mre_percent:.2f}%  "
        f"n_eval {report.n_eval}"
    )
    return 0


def cmd_variogram(args) -> int:
    section = _section(_read_config(args.config), "variogram")
    _apply_overrides(
        section,
        bin_width_km=args.bin_width,
        max_lag_km=args.max_lag,
        rel_tol=args.rel_tol,
    )
    bin_width = float(section.get("bin_width_km", 1.0))
    max_lag = section.get("max_lag_km")
    rel_tol = float(section.get("rel_tol", 0.05))
    dataset = load_dataset(args.data)
    residuals = location_residuals(dataset)
    coords = np.stack(
        np.divmod(np.arange(dataset.n_locations), dataset.width), axis=1
    )
    vg = empirical_semivariogram(residuals, coords, dataset.cell_size_km, bin_width)
    if max_lag is not None:
        vg = truncate_lags(vg, float(max_lag))
    result = detect_range(vg, rel_tol)
    out = _start_run(
        args,
        "variogram",
        {
            "data": str(args.data),
            "variogram": {
                "bin_width_km": bin_width,
                "max_lag_km": max_lag,
                "rel_tol": rel_tol,
            },
        },
    )
    (out / "variogram.csv").write_text(variogram_csv(vg))
    (out / "range.json").write_text(
        json.dumps(dataclasses.asdict(result), indent=2) + "\n"
    )
    note = "" if result.plateau else " (no plateau; this is the maximum lag)"
    print(f"range {result.range_km:g} km -> tile {result.tile_cells} cells{note}")
    return 0


def cmd_baseline(args) -> int:
    section = _section(_read_config(args.config), "baseline")
    _apply_overrides(section, method=args.method, seed=args.seed)
    method = str(section.get("method", "interp")).lower()
    dataset = load_dataset(args.data)
    split = load_split(args.split, dataset.M)
    if method == "mean":
        report = baseline_monthly_mean(dataset, split)
    elif method == "interp":
        report = baseline_linear_interpolation(dataset, split)
    elif method == "mf":
        report = baseline_matrix_factorization(
            dataset,
            split,
            rank=int(section.get("rank", 10)),
            lam=float(section.get("lam", 0.1)),
            iters=int(section.get("iters", 100)),
            seed=int(section.get("seed", 0)),
        )
    else:
        raise ConfigError(
            f"baseline method must be mean, interp, or mf, got {method!r}"
        )
    out = _start_run(
        args,
        "baseline",
        {"data": str(args.data), "split": str(args.split), "baseline": section},
    )
    (out / "metrics.json").write_text(report.to_json() + "\n")
    print(
        f"{method}: mae {report.mae:.6f}  mre {report.mre_percent:.2f}%  "
        f"n_eval {report.n_eval}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stimpute",
        description="Spatiotemporal transformer gap filling for gridded sensor data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="override the command's seed")
        p.add_argument("--out", required=True, help="run directory for all outputs")
        p.add_argument("--threads", type=int, help="cap BLAS/OpenMP thread count")
        return p

    add("synth", cmd_synth, "generate a synthetic dataset")

    p = add("split", cmd_split, "hold out observed cells for validation")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--scenario", choices=["mcar", "mnar"], help="hiding mechanism")
    p.add_argument("--rate", type=float, help="fraction of observations to hide")

    p = add("train", cmd_train, "fit the model on the split's visible cells")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", required=True, help="validation split file")
    p.add_argument("--epochs", type=int, help="override the epoch count")

    p = add("impute", cmd_impute, "estimate every grid cell with a trained model")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--model", required=True, help="training run directory or .ckpt")
    p.add_argument("--split", help="condition on this split's visibility")

    p = add("evaluate", cmd_evaluate, "score a trained model at held-out points")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--model", required=True, help="training run directory or .ckpt")
    p.add_argument("--split", required=True, help="validation split file")

    p = add("variogram", cmd_variogram, "semivariogram and tile-size recommendation")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--bin-width", type=float, help="lag bin width in km")
    p.add_argument("--max-lag", type=float, help="ignore lags beyond this distance")
    p.add_argument("--rel-tol", type=float, help="plateau tolerance relative to sill")

    p = add("baseline", cmd_baseline, "score a reference imputation method")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", required=True, help="validation split file")
    p.add_argument("--method", choices=["mean", "interp", "mf"], help="baseline family")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            _limit_threads(args.threads)
        return args.func(args)
    except (ConfigError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (StimputeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
