"""Command-line entry point: ``replayarray <command> [--config FILE] [--out DIR] ...``.

Every command writes into one output directory and leaves a
``resolved_config.json`` there, so a run can be repeated exactly.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import errors
from .dataset import load_manifest
from .dsp import device_spectra, plot_spectra, stft_params_for, write_spectra_csv
from .evaluation import (
    DEFAULT_BUDGETS,
    MATRIX_PRESETS,
    budget_curve,
    compute_eer,
    confidence_interval,
    mismatch_matrix,
    score_set,
    write_budget_curve,
    write_matrix,
)
from .model import ModelCheckpoint, ModelConfig
from .synth import default_spec, generate_corpus, load_spec
from .training import FinetuneConfig, TrainConfig, run_repeats, train, write_run_dir

log = logging.getLogger("replayarray")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "data": {"manifest": None, "environment": "EnvB", "synth": {}},
    "stft": {"sample_rate": None},
    "beamformer": {"hidden": 16, "kernel": [3, 3]},
    "classifier": {"conv_widths": [32, 64, 128], "pools": [4, 4, 4], "gru_hidden": 128,
                   "gru_layers": 2, "pool_mode": "sum"},
    "training": {"batch_size": 32, "base_lr": 1e-3, "epochs": 50, "lambda_orth": 0.1,
                 "lambda_sparse": 0.1, "n_runs": 1, "freeze": []},
    "experiment": {"train_channels": None, "test_channels": None, "matrix_preset": None,
                   "rows": None, "columns": None, "checkpoint": None, "source_checkpoint": None,
                   "target_channels": None, "budgets": list(DEFAULT_BUDGETS), "device": None},
    "output": {"dir": None, "emit_images": False},
}
# keys of data.synth, forwarded to the corpus generator
SYNTH_KEYS = {"spec", "devices", "profile_seed", "n_genuine", "n_replay", "utterance_duration",
              "source_kind", "test_fraction", "environment", "n_speakers"}

DATA_ERRORS = (errors.ManifestParseError, errors.ConsistencyError, errors.ChannelMismatchError,
               errors.RecordingIOError, errors.InsufficientDataError, errors.DegenerateDataError,
               errors.NoDataError, errors.LeakageError, FileNotFoundError)
CONFIG_ERRORS = (errors.ParameterError, errors.ShapeError, json.JSONDecodeError)


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{where}{key}"
        if key not in base:
            raise errors.ConfigError(f"unknown config key {name!r}")
        if isinstance(base[key], dict) and key != "synth":
            if not isinstance(value, dict):
                raise errors.ConfigError(f"{name!r} must be a section")
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None, out=None, emit_images=False) -> dict:
    """Defaults, overlaid with the JSON file, overlaid with command-line flags."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise errors.ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise errors.ConfigError("config file must hold a JSON object")
    cfg = _merge(DEFAULTS, user)
    unknown = set(cfg["data"]["synth"]) - SYNTH_KEYS
    if unknown:
        raise errors.ConfigError(f"unknown config key(s) data.synth.{sorted(unknown)}")
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["output"]["dir"] = str(out)
    if emit_images:
        cfg["output"]["emit_images"] = True
    if not cfg["output"]["dir"]:
        raise errors.ConfigError("no output directory: pass --out or set output.dir")
    return cfg


def _require(cfg: dict, section: str, key: str):
    value = cfg[section][key]
    if value is None:
        raise errors.ConfigError(f"{section}.{key} is required for this command")
    return value


def _channels(value) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,)
    return tuple(int(c) for c in value)


def model_config(cfg: dict) -> ModelConfig:
    c = cfg["classifier"]
    return ModelConfig(beamformer_hidden=cfg["beamformer"]["hidden"],
                       beamformer_kernel=tuple(cfg["beamformer"]["kernel"]),
                       conv_widths=tuple(c["conv_widths"]), pools=tuple(c["pools"]),
                       gru_hidden=c["gru_hidden"], gru_layers=c["gru_layers"], pool_mode=c["pool_mode"])


def train_config(cfg: dict, channels=()) -> TrainConfig:
    t = cfg["training"]
    rate = cfg["stft"]["sample_rate"]
    if rate is not None:
        stft_params_for(rate)  # fail early on rates without a preset
    return TrainConfig(train_channels=_channels(channels), batch_size=t["batch_size"],
                       base_lr=t["base_lr"], epochs=t["epochs"], lambda_orth=t["lambda_orth"],
                       lambda_sparse=t["lambda_sparse"], seed=cfg["seed"], model=model_config(cfg),
                       sample_rate=rate, environment=cfg["data"]["environment"],
                       freeze=tuple(t["freeze"]))


def _manifest(cfg: dict):
    path = _require(cfg, "data", "manifest")
    if not Path(path).is_file():
        raise FileNotFoundError(f"manifest {path} does not exist")
    return load_manifest(path)


def _out(cfg: dict) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return out


def cmd_synth(cfg: dict) -> Path:
    """Generate a synthetic corpus."""
    s = dict(cfg["data"]["synth"])
    if "spec" in s:
        spec = load_spec(s.pop("spec"))
        if s:
            spec = replace(spec, **{k: v for k, v in s.items() if k not in ("devices", "profile_seed")})
    else:
        devices = s.pop("devices", ["D4"])
        profile_seed = s.pop("profile_seed", cfg["seed"])
        spec = default_spec(tuple(devices), seed=profile_seed, **s)
    out = _out(cfg)
    manifest = generate_corpus(spec, cfg["seed"], out)
    log.info("wrote %d entries to %s", len(manifest), out)
    return out / "manifest.csv"


def cmd_train(cfg: dict) -> Path:
    """Train and score seeded runs."""
    data = _manifest(cfg)
    channels = _channels(_require(cfg, "experiment", "train_channels"))
    tcfg = train_config(cfg, channels)
    n_runs = int(cfg["training"]["n_runs"])
    test_channels = cfg["experiment"]["test_channels"]
    test_channels = _channels(test_channels) if test_channels is not None else channels
    results = run_repeats(tcfg, data, n_runs, test_channels=test_channels, with_interval=False)
    out = _out(cfg)
    summary = {"train_channels": list(channels), "test_channels": list(test_channels), "runs": []}
    for run, res in enumerate(results):
        run_dir = write_run_dir(out / f"run_{run:02d}", replace(tcfg, seed=tcfg.seed + run),
                                res.checkpoint, res.scores, res.labels)
        eer = compute_eer(res.scores, res.labels).eer if res.scores is not None else None
        summary["runs"].append({"dir": run_dir.name, "final_loss": res.checkpoint.history[-1], "eer": eer})
    eers = [r["eer"] for r in summary["runs"] if r["eer"] is not None]
    if len(eers) >= 2:
        iv = confidence_interval(eers)
        summary["eer_mean"], summary["eer_halfwidth"] = iv.mean, iv.half_width
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return out / "run_00" / "checkpoint.npz"


def cmd_eval(cfg: dict) -> Path:
    """Score a checkpoint on a test split."""
    data = _manifest(cfg)
    ckpt = ModelCheckpoint.load(_require(cfg, "experiment", "checkpoint"))
    channels = cfg["experiment"]["test_channels"]
    channels = _channels(channels) if channels is not None else ckpt.train_channels
    test = data.for_channels(channels, split="test")
    if cfg["data"]["environment"] is not None:
        test = test.filter(environment=cfg["data"]["environment"])
    scores = score_set(ckpt, test, channels)
    res = compute_eer(scores)
    out = _out(cfg)
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "score", "label"])
        for entry, s, y in zip(test, scores.scores, scores.labels):
            w.writerow([entry.path, f"{s:.9g}", int(y)])
    result = {"test_channels": list(channels), "eer": res.eer, "threshold": res.threshold,
              "n_genuine": res.n_genuine, "n_replay": res.n_replay,
              "resampled_from": scores.resampled_from}
    path = out / "eer.json"
    path.write_text(json.dumps(result, indent=2), encoding="utf-8")
    return path


def cmd_matrix(cfg: dict, workers: int = 1) -> Path:
    """Train/test mismatch matrix."""
    data = _manifest(cfg)
    exp = cfg["experiment"]
    preset = exp["matrix_preset"]
    if preset is not None and preset not in MATRIX_PRESETS:
        raise errors.ConfigError(f"unknown matrix preset {preset!r}; choose from {sorted(MATRIX_PRESETS)}")
    rows = exp["rows"] if exp["rows"] is not None else MATRIX_PRESETS.get(preset)
    cols = exp["columns"] if exp["columns"] is not None else (MATRIX_PRESETS.get(preset) or rows)
    if rows is None:
        raise errors.ConfigError("set experiment.matrix_preset or experiment.rows")
    rows, cols = [_channels(r) for r in rows], [_channels(c) for c in cols]
    n_runs = max(int(cfg["training"]["n_runs"]), 2)
    matrix = mismatch_matrix(rows, cols, train_config(cfg), data, n_runs=n_runs, workers=workers)
    out = _out(cfg)
    return write_matrix(matrix, out, emit_image=cfg["output"]["emit_images"])[0]


def cmd_finetune(cfg: dict) -> Path:
    """Fine-tuning budget curve."""
    data = _manifest(cfg)
    exp = cfg["experiment"]
    target = _channels(_require(cfg, "experiment", "target_channels"))
    tcfg = train_config(cfg, target)
    if exp["source_checkpoint"] is not None:
        source = ModelCheckpoint.load(exp["source_checkpoint"])
    else:
        source = train(replace(tcfg, train_channels=_channels(_require(cfg, "experiment", "train_channels"))), data)
    template = FinetuneConfig(source, target, exp["budgets"][0], tcfg)
    n_runs = max(int(cfg["training"]["n_runs"]), 2)
    curve = budget_curve(template, exp["budgets"], data, n_runs=n_runs)
    out = _out(cfg)
    return write_budget_curve(curve, out, emit_image=cfg["output"]["emit_images"])[0]


def cmd_spectra(cfg: dict) -> Path:
    """Average magnitude spectra of one device."""
    data = _manifest(cfg)
    device = _require(cfg, "experiment", "device")
    if device not in data.device_map:
        raise errors.ConfigError(f"device {device!r} is not in the corpus")
    if cfg["data"]["environment"] is not None:
        data = data.filter(environment=cfg["data"]["environment"])
    if len(data) == 0:
        raise errors.NoDataError("no recordings selected")
    rate = cfg["stft"]["sample_rate"] or data.device_map[device].sample_rate
    params = stft_params_for(rate)
    spectra = device_spectra(data, device, params)
    out = _out(cfg)
    path = write_spectra_csv(out / f"spectra_{device}.csv", params.frequencies(), spectra)
    if cfg["output"]["emit_images"]:
        plot_spectra(out / f"spectra_{device}.png", params.frequencies(), spectra)
    return path


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "matrix": cmd_matrix,
            "finetune": cmd_finetune, "spectra": cmd_spectra, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the config seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="parallel matrix rows")
    common.add_argument("--emit-images", action="store_true", default=argparse.SUPPRESS,
                        help="also write PNG figures")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="replayarray", parents=[common],
                                     description="Multichannel replay-attack detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.rstrip(".").lower())
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.get("config"), args.get("seed"), args.get("out"), args.get("emit_images", False))
        command = args["command"]
        if command == "matrix":
            result = cmd_matrix(cfg, workers=args.get("workers", 1))
        else:
            result = COMMANDS[command](cfg)
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a failure of the run itself
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
