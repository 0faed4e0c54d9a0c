"""Command-line surface and run-directory persistence.

Five subcommands (train, evaluate, crossval, profile, explain) wire
the data, training and evaluation modules into end-to-end pipelines.
Every command resolves its dataset either from a catalog CSV or from
the built-in synthetic generator, writes a deterministic report.json
into the run directory, and exits with a pinned code per failure
class: 2 for configuration, 3 for data, 4 for numeric blow-ups, 5 for
checkpoint version mismatches.

Configuration precedence, lowest to highest: built-in defaults, the
config embedded in a checkpoint (evaluate/explain only), the --config
JSON file, explicit CLI flags, and the QADV_SEED environment variable
for the seed alone.  Reports embed the merged config and its SHA-256
so a run can be reproduced from its own artifacts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import jsonio
from .data import (
    FEATURE_COLUMNS,
    MinMaxScaler,
    PreprocessConfig,
    SyntheticSpec,
    gen_synthetic,
    load_catalog,
    preprocess,
    split_stratified,
)
from .errors import (
    CheckpointVersionError,
    ConfigError,
    DataError,
    NonFiniteLoss,
    RowOutOfRange,
)
from .evaluation import (
    calibration,
    conformal,
    cross_validate,
    permutation_importance,
    profile_qubits,
    regression_metrics,
    robustness_report,
)
from .models import MODEL_KINDS, load_checkpoint, save_checkpoint
from .qsim import circuit_eval_count, reset_circuit_eval_count
from .train import TrainConfig, fit_model
from .xai import explain_batch

__all__ = ["RunConfig", "SUITES", "main", "parse_int_spec"]

SUITES = ("metrics", "calibration", "conformal", "robustness", "importance")

_TRAIN_FIELDS = tuple(f.name for f in dataclasses.fields(TrainConfig))


@dataclass(frozen=True)
class RunConfig:
    """Merged view of every knob a command can consume.

    Data source and preprocessing come first, then the training
    hyperparameters (mirroring the trainer's own config), then the
    evaluation options.  Output paths are deliberately not part of the
    config: two runs into different directories must hash identically.
    """

    data: str | None = None
    synthetic: bool = False
    synthetic_n: int = 2000
    outlier_multiplier: float = 1.5
    test_fraction: float = 0.2
    model_kind: str = "vanilla"
    seed: int = 0
    epochs: int = 10
    gan_epochs: int = 100
    batch_size: int = 32
    lr_main: float = 1e-3
    lr_gan: float = 2e-4
    alpha: float = 0.5
    ablation: str = "none"
    synthetic_ratio: float = 0.5
    feedback_gradient: str = "through_prediction"
    explain_samples: int = 500
    n_qubits: int = 4
    entangler: str = "none"
    angle_scale: bool = False
    latent_dim: int = 16
    features_only: bool = False
    suites: tuple[str, ...] = SUITES
    calibration_bins: int = 10
    noise_magnitude: float = 0.5
    importance_repeats: int = 10
    cv_k: int = 3
    cv_baseline: str = "vanilla"
    cv_models: tuple[str, ...] = ("vanilla",)
    qubit_range: tuple[int, ...] = (1, 2, 3, 4)
    rows: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.synthetic_n < 1:
            raise ConfigError("synthetic_n must be positive")
        if not self.suites:
            raise ConfigError("at least one evaluation suite is required")
        for s in self.suites:
            if s not in SUITES:
                raise ConfigError(f"unknown suite {s!r}")
        for m in self.cv_models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model kind {m!r}")
        if self.cv_baseline not in MODEL_KINDS:
            raise ConfigError(f"unknown baseline kind {self.cv_baseline!r}")
        self.train_config()  # delegate hyperparameter validation

    @classmethod
    def build(cls, *layers: dict | None) -> "RunConfig":
        """Merge config dicts left to right; later layers win.

        Unknown keys are rejected rather than ignored so that a typo in
        a config file fails loudly instead of silently training with a
        default.
        """
        names = {f.name for f in dataclasses.fields(cls)}
        merged: dict = {}
        for layer in layers:
            if not layer:
                continue
            unknown = sorted(set(layer) - names)
            if unknown:
                raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
            merged.update({k: v for k, v in layer.items() if v is not None})
        for key in ("suites", "cv_models"):
            if key in merged:
                merged[key] = tuple(str(v) for v in merged[key])
        for key in ("qubit_range", "rows"):
            if key in merged:
                merged[key] = tuple(int(v) for v in merged[key])
        try:
            return cls(**merged)
        except TypeError as exc:  # wrong value type for a field
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in _TRAIN_FIELDS})

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# --------------------------------------------------------------- data access


@dataclass
class ResolvedData:
    x: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    scaler: MinMaxScaler
    target_min: float
    target_max: float
    preprocess_report: dict | None


def _resolve_data(rc: RunConfig) -> ResolvedData:
    if rc.synthetic and rc.data:
        raise ConfigError("--data and --synthetic are mutually exclusive")
    if rc.synthetic:
        x, y = gen_synthetic(SyntheticSpec(n=rc.synthetic_n), seed=rc.seed)
        d = x.shape[1]
        # Synthetic rows are generated already scaled, so the embedded
        # scaler is the identity map.
        scaler = MinMaxScaler(np.zeros(d), np.ones(d))
        return ResolvedData(x, y, list(FEATURE_COLUMNS), scaler, 0.0, 1.0, None)
    if not rc.data:
        raise ConfigError("either --data PATH or --synthetic is required")
    try:
        catalog = load_catalog(rc.data)
    except OSError as exc:
        raise DataError(f"cannot read catalog: {exc}") from exc
    pre = preprocess(catalog, PreprocessConfig(rc.outlier_multiplier))
    return ResolvedData(
        pre.x,
        pre.y,
        list(pre.feature_names),
        pre.scaler,
        pre.target_min,
        pre.target_max,
        dataclasses.asdict(pre.report),
    )


# ----------------------------------------------------------------- reporting


def _report_document(rc: RunConfig, command: str, sections: dict) -> dict:
    cfg = rc.as_dict()
    return {
        "format_version": 1,
        "command": command,
        "seed": rc.seed,
        "config_sha256": hashlib.sha256(jsonio.dumps(cfg).encode()).hexdigest(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": cfg,
        "sections": sections,
    }


def _write_report(run_dir: Path, doc: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(jsonio.dumps(doc))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in row]
            )


# ------------------------------------------------------------------ commands


def cmd_train(rc: RunConfig, run_dir: Path) -> int:
    reset_circuit_eval_count()
    ds = _resolve_data(rc)
    split = split_stratified(ds.y, rc.test_fraction, seed=rc.seed)
    model, history = fit_model(
        ds.x[split.train],
        ds.y[split.train],
        rc.train_config(),
        kind=rc.model_kind,
        scaler=ds.scaler,
        target_min=ds.target_min,
        target_max=ds.target_max,
    )
    yhat = model.predict(ds.x[split.test], seed=rc.seed)
    metrics = regression_metrics(ds.y[split.test], yhat, y_range=1.0)

    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run_dir / "checkpoint.json", model, rc.as_dict())
    history.to_csv(run_dir / "history.csv")
    sections = {
        "data": {
            "n_rows": int(ds.y.shape[0]),
            "n_train": int(split.train.shape[0]),
            "n_test": int(split.test.shape[0]),
        },
        "preprocess": ds.preprocess_report,
        "train": {
            "model_kind": rc.model_kind,
            "ablation": rc.ablation,
            "circuit_evals": circuit_eval_count(),
            "final_losses": dataclasses.asdict(history.rows[-1]),
        },
        "test_metrics": metrics.as_dict(),
    }
    _write_report(run_dir, _report_document(rc, "train", sections))
    return 0


def _load_for_checkpoint(path: str, file_cfg, flags) -> tuple:
    try:
        model, embedded = load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    rc = RunConfig.build(embedded, file_cfg, flags)
    return model, rc


def cmd_evaluate(rc: RunConfig, model, run_dir: Path) -> int:
    ds = _resolve_data(rc)
    split = split_stratified(ds.y, rc.test_fraction, seed=rc.seed)
    x_test, y_test = ds.x[split.test], ds.y[split.test]
    yhat = model.predict(x_test, seed=rc.seed)
    predict = lambda a: model.predict(a, seed=rc.seed)  # noqa: E731

    sections: dict = {}
    plots = run_dir / "plots"
    if "metrics" in rc.suites:
        sections["metrics"] = regression_metrics(y_test, yhat, y_range=1.0).as_dict()
    if "calibration" in rc.suites:
        rep = calibration(y_test, np.clip(yhat, 0.0, 1.0), rc.calibration_bins)
        sections["calibration"] = rep.as_dict()
        _write_csv(
            plots / "reliability.csv",
            ("bin_center", "mean_pred", "mean_obs", "mass"),
            zip(rep.centers, rep.mean_pred, rep.mean_obs, rep.mass),
        )
    if "conformal" in rc.suites:
        # First half of the test split calibrates, second half scores.
        n_cal = x_test.shape[0] // 2
        residuals = np.abs(y_test[:n_cal] - yhat[:n_cal])
        rep = conformal(residuals, y_test[n_cal:], yhat[n_cal:])
        sections["conformal"] = rep.as_dict()
        _write_csv(
            plots / "coverage_curve.csv",
            ("level", "half_width", "coverage"),
            zip(rep.levels, rep.half_widths, rep.coverage),
        )
        _write_csv(
            plots / "intervals.csv",
            ("y", "yhat", "lower_90", "upper_90", "lower_95", "upper_95"),
            zip(
                y_test[n_cal:],
                yhat[n_cal:],
                rep.lower_90,
                rep.upper_90,
                rep.lower_95,
                rep.upper_95,
            ),
        )
    if "robustness" in rc.suites:
        sections["robustness"] = robustness_report(
            predict, x_test, y_test, y_range=1.0,
            magnitude=rc.noise_magnitude, seed=rc.seed,
        )
    if "importance" in rc.suites:
        rep = permutation_importance(
            predict, x_test, y_test, repeats=rc.importance_repeats, seed=rc.seed
        )
        sections["importance"] = {"features": ds.feature_names, **rep.as_dict()}
        _write_csv(
            plots / "importance.csv",
            ("feature", "importance_mean", "importance_std"),
            zip(ds.feature_names, rep.means.tolist(), rep.stds.tolist()),
        )
    _write_report(run_dir, _report_document(rc, "evaluate", sections))
    return 0


def cmd_crossval(rc: RunConfig, run_dir: Path) -> int:
    ds = _resolve_data(rc)
    per_model = {}
    for kind in rc.cv_models:
        rep = cross_validate(
            ds.x,
            ds.y,
            rc.train_config(),
            model_kind=kind,
            baseline_kind=rc.cv_baseline,
            k=rc.cv_k,
            y_range=1.0,
        )
        per_model[kind] = rep.as_dict()
    sections = {
        "crossval": {"k": rc.cv_k, "baseline": rc.cv_baseline, "models": per_model}
    }
    _write_report(run_dir, _report_document(rc, "crossval", sections))
    return 0


def cmd_profile(rc: RunConfig, run_dir: Path) -> int:
    ds = _resolve_data(rc)
    split = split_stratified(ds.y, rc.test_fraction, seed=rc.seed)
    entries = profile_qubits(
        ds.x[split.train],
        ds.y[split.train],
        ds.x[split.test],
        ds.y[split.test],
        rc.train_config(),
        n_range=tuple(sorted(rc.qubit_range)),
        y_range=1.0,
    )
    sections = {"profile": [e.as_dict() for e in entries]}
    _write_csv(
        run_dir / "plots" / "profile.csv",
        ("n_qubits", "mse", "rmse", "mae", "r2", "latency_ms_mean", "latency_ms_std"),
        [
            (
                e.n_qubits,
                e.metrics.mse,
                e.metrics.rmse,
                e.metrics.mae,
                e.metrics.r2,
                e.latency_ms_mean,
                e.latency_ms_std,
            )
            for e in entries
        ],
    )
    _write_report(run_dir, _report_document(rc, "profile", sections))
    return 0


def cmd_explain(rc: RunConfig, model, run_dir: Path) -> int:
    ds = _resolve_data(rc)
    n = ds.x.shape[0]
    for r in rc.rows:
        if not 0 <= r < n:
            raise RowOutOfRange(f"row {r} outside dataset of {n} rows")
    rows = np.asarray(rc.rows, dtype=int)
    explanations = explain_batch(
        model.explainer,
        lambda a: model.predict(a, seed=rc.seed),
        ds.x[rows],
        seed=rc.seed,
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    header = ["row", *(f"coef_{name}" for name in ds.feature_names),
              "intercept", "local_r2"]
    _write_csv(
        run_dir / "explanations.csv",
        header,
        [
            (int(r), *e.coefficients.tolist(), e.intercept, e.local_r2)
            for r, e in zip(rows, explanations)
        ],
    )
    sections = {"explain": {"rows": [int(r) for r in rows], "n_explained": len(rows)}}
    _write_report(run_dir, _report_document(rc, "explain", sections))
    return 0


# --------------------------------------------------------------- arg parsing


def parse_int_spec(spec: str) -> tuple[int, ...]:
    """Parse "1,3,5" or "1..4" (inclusive) or a mix of both."""
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo_s, hi_s = part.split("..", 1)
            try:
                lo, hi = int(lo_s), int(hi_s)
            except ValueError as exc:
                raise ConfigError(f"bad range {part!r}") from exc
            if hi < lo:
                raise ConfigError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            try:
                out.append(int(part))
            except ValueError as exc:
                raise ConfigError(f"bad index {part!r}") from exc
    return tuple(out)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="catalog CSV path")
    p.add_argument(
        "--synthetic",
        action="store_true",
        default=None,
        help="use the built-in synthetic dataset instead of --data",
    )
    p.add_argument("--config", help="JSON config file merged under CLI flags")
    p.add_argument("--seed", type=int, help="run seed (QADV_SEED overrides)")
    p.add_argument("--out", default="qadv-run", help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qadv",
        description="Hybrid quantum-classical regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and report test metrics")
    _add_common(p)
    p.add_argument("--model", choices=MODEL_KINDS, help="model variant")
    p.add_argument("--ablation", help="ablation name (none to disable)")

    p = sub.add_parser("evaluate", help="run evaluation suites on a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint.json path")
    p.add_argument("--suite", help="comma-separated suite names")

    p = sub.add_parser("crossval", help="k-fold comparison against a baseline")
    _add_common(p)
    p.add_argument("--models", help="comma-separated model kinds")
    p.add_argument("--k", type=int, help="number of folds")
    p.add_argument("--baseline", help="baseline model kind")

    p = sub.add_parser("profile", help="accuracy and latency per qubit count")
    _add_common(p)
    p.add_argument("--qubits", help='qubit counts, e.g. "1..4" or "1,2,4"')

    p = sub.add_parser("explain", help="export local explanations as CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint.json path")
    p.add_argument("--rows", help='row selection, e.g. "0,5" or "10..19"')
    return parser


def _load_config_file(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a JSON object")
    return doc


def _seed_override(seed_flag: int | None) -> int | None:
    env = os.environ.get("QADV_SEED")
    if env is None:
        return seed_flag
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"QADV_SEED is not an integer: {env!r}") from exc


def _dispatch(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    flags: dict = {
        "data": args.data,
        "synthetic": args.synthetic,
        "seed": _seed_override(args.seed),
    }
    run_dir = Path(args.out)
    if args.command == "train":
        flags["model_kind"] = args.model
        flags["ablation"] = args.ablation
        return cmd_train(RunConfig.build(file_cfg, flags), run_dir)
    if args.command == "evaluate":
        if args.suite is not None:
            flags["suites"] = tuple(
                s.strip() for s in args.suite.split(",") if s.strip()
            )
        model, rc = _load_for_checkpoint(args.checkpoint, file_cfg, flags)
        return cmd_evaluate(rc, model, run_dir)
    if args.command == "crossval":
        if args.models is not None:
            flags["cv_models"] = tuple(
                m.strip() for m in args.models.split(",") if m.strip()
            )
        flags["cv_k"] = args.k
        flags["cv_baseline"] = args.baseline
        return cmd_crossval(RunConfig.build(file_cfg, flags), run_dir)
    if args.command == "profile":
        if args.qubits is not None:
            flags["qubit_range"] = parse_int_spec(args.qubits)
        return cmd_profile(RunConfig.build(file_cfg, flags), run_dir)
    if args.command == "explain":
        if args.rows is not None:
            flags["rows"] = parse_int_spec(args.rows)
        model, rc = _load_for_checkpoint(args.checkpoint, file_cfg, flags)
        return cmd_explain(rc, model, run_dir)
    raise ConfigError(f"unknown command {args.command!r}")  # unreachable


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
