"""Statistical evaluation harness.

Covers the whole quantitative protocol: regression metrics with
range-relative accuracies, stratified k-fold cross-validation with
paired significance tests, reliability-diagram calibration (ECE on
equal-width bins, ACE on equal-mass bins, Brier as scaled-space MSE),
split-conformal intervals with coverage curves, four noise injectors
with distribution-shift metrics, permutation feature importance and
qubit-count resource profiling.

Degenerate inputs get defined answers instead of NaN: an all-zero
difference vector makes both significance tests report statistic 0
with p = 1.0, identical predictions collapse calibration to a single
bin, and a zero-importance total falls back to a uniform attribution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from sklearn.metrics import (
    calinski_harabasz_score,
    davies_bouldin_score,
    silhouette_score,
)

from .data import kfold, quantile_bins
from .errors import (
    ConfigError,
    DimensionMismatch,
    SingleCluster,
    TooFewCalibration,
    TooFewSamples,
    ZeroVariance,
)
from .rng import stream
from .train import TrainConfig, fit_model

__all__ = [
    "METRIC_NAMES",
    "NOISE_KINDS",
    "CONFORMAL_LEVELS",
    "RegressionMetrics",
    "regression_metrics",
    "CvReport",
    "cross_validate",
    "paired_tests",
    "CalibrationReport",
    "calibration",
    "ConformalReport",
    "conformal",
    "inject_noise",
    "DistributionalMetrics",
    "distributional_metrics",
    "robustness_report",
    "ImportanceReport",
    "permutation_importance",
    "ProfileEntry",
    "profile_qubits",
]

METRIC_NAMES = ("mse", "rmse", "mae", "r2", "pct_rmse", "pct_mse", "pct_mae")
NOISE_KINDS = ("oversample", "gaussian", "bootstrap", "mvnormal")
CONFORMAL_LEVELS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class RegressionMetrics:
    mse: float
    rmse: float
    mae: float
    r2: float
    pct_rmse: float
    pct_mse: float
    pct_mae: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def regression_metrics(
    y: np.ndarray, yhat: np.ndarray, y_range: float = 1.0
) -> RegressionMetrics:
    """Standard errors plus range-relative percentage accuracies.

    pct_X = (1 - X / y_range) * 100, clamped below at zero, so a
    perfect predictor scores 100 and anything with error beyond the
    target range scores 0.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise DimensionMismatch(f"length mismatch {y.shape} vs {yhat.shape}")
    if y.shape[0] < 2:
        raise DimensionMismatch("need at least two samples")
    if y_range <= 0:
        raise ConfigError("y_range must be positive")
    diff = yhat - y
    mse = float(np.mean(diff**2))
    rmse = math.sqrt(mse)
    mae = float(np.mean(np.abs(diff)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("constant targets make R^2 undefined")
    r2 = 1.0 - float(np.sum(diff**2)) / ss_tot

    def pct(err: float) -> float:
        return max(0.0, (1.0 - err / y_range) * 100.0)

    return RegressionMetrics(mse, rmse, mae, r2, pct(rmse), pct(mse), pct(mae))


# ----------------------------------------------------------- cross-validation


def paired_tests(a, b) -> dict:
    """Paired t-test and Wilcoxon signed-rank over per-fold values.

    The Wilcoxon statistic is reported as W+ minus W- so it negates
    under operand swap like the t statistic does.  All-equal inputs
    are a defined case (statistics 0, p-values 1.0) rather than the
    NaN scipy would produce.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a - b
    if np.all(d == 0.0):
        return {"t": 0.0, "p_t": 1.0, "wilcoxon": 0.0, "p_w": 1.0}
    t_res = stats.ttest_rel(a, b)
    nz = d[d != 0.0]
    ranks = stats.rankdata(np.abs(nz))
    w_signed = float(np.sum(ranks[nz > 0.0]) - np.sum(ranks[nz < 0.0]))
    w_res = stats.wilcoxon(a, b)
    return {
        "t": float(t_res.statistic),
        "p_t": float(t_res.pvalue),
        "wilcoxon": w_signed,
        "p_w": float(w_res.pvalue),
    }


@dataclass
class CvReport:
    k: int
    model_kind: str
    baseline_kind: str | None
    fold_metrics: list[RegressionMetrics]
    baseline_fold_metrics: list[RegressionMetrics] | None
    summary: dict[str, dict]
    tests: dict[str, dict] | None

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "model_kind": self.model_kind,
            "baseline_kind": self.baseline_kind,
            "fold_metrics": [m.as_dict() for m in self.fold_metrics],
            "baseline_fold_metrics": (
                None
                if self.baseline_fold_metrics is None
                else [m.as_dict() for m in self.baseline_fold_metrics]
            ),
            "summary": self.summary,
            "tests": self.tests,
        }


def cross_validate(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    model_kind: str = "vanilla",
    baseline_kind: str | None = None,
    k: int = 3,
    y_range: float | None = None,
) -> CvReport:
    """Stratified k-fold evaluation with optional paired comparison.

    Fold seeds derive from (cfg.seed, fold index) only, never from the
    model kind, so comparing a model against itself produces identical
    fold metrics and the degenerate p = 1.0 outcome by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if k < 2:
        raise ConfigError("k must be at least 2")
    folds = kfold(x.shape[0], k, y, seed=cfg.seed)
    if y_range is None:
        y_range = float(y.max() - y.min())
    fold_seeds = stream(cfg.seed, "cv-fold-seeds").integers(0, 2**31, size=k)

    def run(kind: str) -> list[RegressionMetrics]:
        out = []
        for i, test_idx in enumerate(folds):
            train_idx = np.sort(
                np.concatenate([folds[j] for j in range(k) if j != i])
            )
            fold_cfg = replace(cfg, seed=int(fold_seeds[i]))
            model, _ = fit_model(x[train_idx], y[train_idx], fold_cfg, kind=kind)
            yhat = model.predict(x[test_idx], seed=int(fold_seeds[i]))
            out.append(regression_metrics(y[test_idx], yhat, y_range))
        return out

    fold_metrics = run(model_kind)
    baseline_metrics = run(baseline_kind) if baseline_kind is not None else None

    multiplier = float(stats.t.ppf(0.975, k - 1))
    summary = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(m, name) for m in fold_metrics])
        mean = float(vals.mean())
        half = multiplier * float(vals.std(ddof=1)) / math.sqrt(k)
        summary[name] = {
            "mean": mean,
            "ci_lower": mean - half,
            "ci_upper": mean + half,
        }
    tests = None
    if baseline_metrics is not None:
        tests = {
            name: paired_tests(
                [getattr(m, name) for m in fold_metrics],
                [getattr(m, name) for m in baseline_metrics],
            )
            for name in METRIC_NAMES
        }
    return CvReport(
        k, model_kind, baseline_kind, fold_metrics, baseline_metrics, summary, tests
    )


# -------------------------------------------------------------- calibration


@dataclass
class CalibrationReport:
    n_bins: int
    edges: list[float]
    centers: list[float]
    mean_pred: list[float]
    mean_obs: list[float]
    mass: list[float]
    ece: float
    ace: float
    brier: float

    def as_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "ece": self.ece,
            "ace": self.ace,
            "brier": self.brier,
            "edges": self.edges,
            "centers": self.centers,
            "mean_pred": self.mean_pred,
            "mean_obs": self.mean_obs,
            "mass": self.mass,
        }


def calibration(y: np.ndarray, yhat: np.ndarray, n_bins: int = 10) -> CalibrationReport:
    """Reliability table and scalar calibration scores in [0,1] space.

    ECE bins predictions on an equal-width grid, ACE on equal-mass
    (quantile) bins; both weight |mean_pred - mean_obs| by bin mass.
    Empty bins carry zero mass and zeroed means in the table.  With
    identical predictions everything lands in one bin and both scores
    reduce to |mean(yhat) - mean(y)|.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape or y.shape[0] == 0:
        raise DimensionMismatch("need matching non-empty arrays")
    if n_bins < 1:
        raise ConfigError("n_bins must be positive")
    eps = 1e-9
    if y.min() < -eps or y.max() > 1 + eps or yhat.min() < -eps or yhat.max() > 1 + eps:
        raise ConfigError("calibration expects scaled values in [0, 1]")

    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, yhat, side="right") - 1, 0, n_bins - 1)
    centers, mean_pred, mean_obs, mass = [], [], [], []
    ece = 0.0
    for b in range(n_bins):
        members = idx == b
        m = float(members.mean())
        if m > 0.0:
            mp = float(yhat[members].mean())
            mo = float(y[members].mean())
            ece += m * abs(mp - mo)
        else:
            mp = mo = 0.0
        centers.append(float((edges[b] + edges[b + 1]) / 2.0))
        mean_pred.append(mp)
        mean_obs.append(mo)
        mass.append(m)

    qedges = np.quantile(yhat, np.linspace(0.0, 1.0, n_bins + 1))
    qidx = np.searchsorted(qedges[1:-1], yhat, side="right")
    ace = 0.0
    for b in np.unique(qidx):
        members = qidx == b
        ace += float(members.mean()) * abs(
            float(yhat[members].mean()) - float(y[members].mean())
        )

    brier = float(np.mean((yhat - y) ** 2))
    return CalibrationReport(
        n_bins, edges.tolist(), centers, mean_pred, mean_obs, mass,
        float(ece), float(ace), brier,
    )


# ---------------------------------------------------------------- conformal


@dataclass
class ConformalReport:
    n_calibration: int
    levels: list[float]
    half_widths: list[float]
    coverage: list[float]
    half_width_90: float
    half_width_95: float
    lower_90: np.ndarray
    upper_90: np.ndarray
    lower_95: np.ndarray
    upper_95: np.ndarray

    def as_dict(self) -> dict:
        # Per-instance bounds go to the plot CSVs, not the report.
        return {
            "n_calibration": self.n_calibration,
            "levels": self.levels,
            "half_widths": self.half_widths,
            "coverage": self.coverage,
            "half_width_90": self.half_width_90,
            "half_width_95": self.half_width_95,
        }


def conformal(
    cal_residuals: np.ndarray,
    y_test: np.ndarray,
    yhat_test: np.ndarray,
    levels=CONFORMAL_LEVELS,
) -> ConformalReport:
    """Split-conformal intervals from held-out absolute residuals.

    The half-width at nominal level L is the ceil((n+1)L)-th smallest
    absolute calibration residual (clamped to the largest one), which
    gives finite-sample coverage at least L when calibration and test
    are exchangeable.
    """
    r = np.sort(np.abs(np.asarray(cal_residuals, dtype=np.float64).reshape(-1)))
    if r.size < 10:
        raise TooFewCalibration(f"need at least 10 calibration residuals, got {r.size}")
    y_test = np.asarray(y_test, dtype=np.float64).reshape(-1)
    yhat_test = np.asarray(yhat_test, dtype=np.float64).reshape(-1)
    if y_test.shape != yhat_test.shape:
        raise DimensionMismatch("test arrays must have equal length")
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ConfigError(f"nominal level {level} outside (0, 1)")

    def half_width(level: float) -> float:
        rank = min(math.ceil((r.size + 1) * level), r.size)
        return float(r[rank - 1])

    err = np.abs(y_test - yhat_test)
    halves = [half_width(level) for level in levels]
    coverage = [float(np.mean(err <= h)) for h in halves]
    h90, h95 = half_width(0.90), half_width(0.95)
    return ConformalReport(
        n_calibration=int(r.size),
        levels=[float(v) for v in levels],
        half_widths=halves,
        coverage=coverage,
        half_width_90=h90,
        half_width_95=h95,
        lower_90=yhat_test - h90,
        upper_90=yhat_test + h90,
        lower_95=yhat_test - h95,
        upper_95=yhat_test + h95,
    )


# --------------------------------------------------------------- robustness


def inject_noise(
    kind: str, x: np.ndarray, y: np.ndarray, magnitude: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Perturb a dataset; rows keep their targets except where stated.

    oversample appends a magnitude-fraction of jittered duplicates;
    gaussian adds per-feature noise scaled to each column's std;
    bootstrap resamples N rows with replacement; mvnormal adds draws
    from the empirical feature covariance scaled by magnitude^2.
    """
    if kind not in NOISE_KINDS:
        raise ConfigError(f"unknown noise kind {kind!r}")
    if not 0.0 < magnitude <= 1.0:
        raise ConfigError("magnitude must lie in (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    rng = stream(seed, f"noise-{kind}")
    if kind == "gaussian":
        scale = magnitude * x.std(axis=0)
        return x + rng.standard_normal(x.shape) * scale, y.copy()
    if kind == "bootstrap":
        idx = rng.integers(0, n, size=n)
        return x[idx], y[idx]
    if kind == "oversample":
        n_dup = int(round(magnitude * n))
        pick = rng.choice(n, size=n_dup, replace=False)
        jitter = rng.standard_normal((n_dup, d)) * (0.05 * x.std(axis=0))
        return (
            np.concatenate([x, x[pick] + jitter], axis=0),
            np.concatenate([y, y[pick]]),
        )
    cov = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
    eigval, eigvec = np.linalg.eigh(cov)
    factor = eigvec * np.sqrt(np.clip(eigval, 0.0, None))  # factor @ factor.T = cov
    draws = rng.standard_normal((n, d)) @ (magnitude * factor).T
    return x + draws, y.copy()


@dataclass(frozen=True)
class DistributionalMetrics:
    silhouette: float
    calinski_harabasz: float
    davies_bouldin: float
    wasserstein: float
    ks: float

    def as_dict(self) -> dict:
        return {
            "silhouette": self.silhouette,
            "calinski_harabasz": self.calinski_harabasz,
            "davies_bouldin": self.davies_bouldin,
            "wasserstein": self.wasserstein,
            "ks": self.ks,
        }


def distributional_metrics(
    x_clean: np.ndarray, x_noisy: np.ndarray, labels: np.ndarray
) -> DistributionalMetrics:
    """Cluster validity of the noisy set plus marginal-shift distances.

    Labels are the target's quantile bins; silhouette, CH and DB use
    them on the noisy features with Euclidean distance.  Wasserstein
    and KS average the per-feature two-sample distances between clean
    and noisy marginals (lengths may differ).
    """
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x_noisy = np.asarray(x_noisy, dtype=np.float64)
    labels = np.asarray(labels)
    if x_noisy.shape[0] != labels.shape[0]:
        raise DimensionMismatch("one label per noisy row required")
    if x_clean.shape[1] != x_noisy.shape[1]:
        raise DimensionMismatch("clean and noisy feature counts differ")
    if np.unique(labels).size < 2:
        raise SingleCluster("cluster validity needs at least two labels")
    d = x_clean.shape[1]
    w = float(
        np.mean(
            [
                stats.wasserstein_distance(x_clean[:, j], x_noisy[:, j])
                for j in range(d)
            ]
        )
    )
    ks = float(
        np.mean(
            [stats.ks_2samp(x_clean[:, j], x_noisy[:, j]).statistic for j in range(d)]
        )
    )
    return DistributionalMetrics(
        silhouette=float(silhouette_score(x_noisy, labels)),
        calinski_harabasz=float(calinski_harabasz_score(x_noisy, labels)),
        davies_bouldin=float(davies_bouldin_score(x_noisy, labels)),
        wasserstein=w,
        ks=ks,
    )


def robustness_report(
    predict_fn,
    x: np.ndarray,
    y: np.ndarray,
    y_range: float,
    magnitude: float = 0.5,
    seed: int = 0,
) -> dict[str, dict]:
    """Re-evaluate a trained model under each noise kind.

    The model is fixed; only the evaluation data is perturbed.  Labels
    for the cluster metrics are the 3-bin target quantiles of the
    perturbed targets.
    """
    out: dict[str, dict] = {}
    for kind in NOISE_KINDS:
        x2, y2 = inject_noise(kind, x, y, magnitude, seed)
        metrics = regression_metrics(y2, predict_fn(x2), y_range)
        dist = distributional_metrics(x, x2, quantile_bins(y2, 3))
        out[kind] = {"metrics": metrics.as_dict(), "distribution": dist.as_dict()}
    return out


# --------------------------------------------------------------- importance


@dataclass
class ImportanceReport:
    baseline_mse: float
    means: np.ndarray  # normalized, sums to 1
    stds: np.ndarray

    def as_dict(self) -> dict:
        return {
            "baseline_mse": self.baseline_mse,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }


def permutation_importance(
    predict_fn,
    x: np.ndarray,
    y: np.ndarray,
    repeats: int = 10,
    seed: int = 0,
) -> ImportanceReport:
    """Shuffle-one-column MSE increase, normalized across features.

    One permutation is drawn per repeat and reused for every column,
    which makes the result exactly equivariant under feature
    relabeling.  Negative raw increases clamp to zero; if every
    feature clamps to zero the attribution falls back to uniform.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, d = x.shape
    if n < 10:
        raise TooFewSamples(f"permutation importance needs >= 10 rows, got {n}")
    base = float(np.mean((np.asarray(predict_fn(x)).reshape(-1) - y) ** 2))
    rng = stream(seed, "perm-importance")
    raw = np.zeros((repeats, d))
    for rep in range(repeats):
        perm = rng.permutation(n)
        for j in range(d):
            xs = x.copy()
            xs[:, j] = x[perm, j]
            mse = float(np.mean((np.asarray(predict_fn(xs)).reshape(-1) - y) ** 2))
            raw[rep, j] = max(0.0, mse - base)
    means_raw = raw.mean(axis=0)
    total = float(means_raw.sum())
    if total == 0.0:
        return ImportanceReport(base, np.full(d, 1.0 / d), np.zeros(d))
    return ImportanceReport(base, means_raw / total, raw.std(axis=0, ddof=0) / total)


# ---------------------------------------------------------------- profiling


@dataclass
class ProfileEntry:
    n_qubits: int
    metrics: RegressionMetrics
    latency_ms_mean: float
    latency_ms_std: float

    def as_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "metrics": self.metrics.as_dict(),
            "latency_ms_mean": self.latency_ms_mean,
            "latency_ms_std": self.latency_ms_std,
        }


def profile_qubits(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    cfg: TrainConfig,
    n_range=(1, 2, 3, 4),
    latency_batch: int = 256,
    latency_runs: int = 50,
    y_range: float | None = None,
) -> list[ProfileEntry]:
    """Accuracy and per-sample latency as the circuit width grows.

    Each entry retrains the standard model with that qubit count, then
    times eval-mode prediction on a fixed batch (test rows recycled to
    the batch size), excluding one warm-up pass.
    """
    if y_range is None:
        y_range = float(
            np.concatenate([y_train, y_test]).max()
            - np.concatenate([y_train, y_test]).min()
        )
    entries = []
    for n in n_range:
        model, _ = fit_model(x_train, y_train, replace(cfg, n_qubits=int(n)))
        metrics = regression_metrics(y_test, model.predict(x_test), y_range)
        batch = np.resize(x_test, (latency_batch, x_test.shape[1]))
        model.predict(batch)  # warm-up, not timed
        samples = []
        for _ in range(latency_runs):
            t0 = time.perf_counter()
            model.predict(batch)
            samples.append((time.perf_counter() - t0) / latency_batch * 1000.0)
        arr = np.asarray(samples)
        entries.append(
            ProfileEntry(int(n), metrics, float(arr.mean()), float(arr.std(ddof=0)))
        )
    return entries
