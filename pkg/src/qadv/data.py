"""Catalog loading, preprocessing, splits and the synthetic benchmark.

The on-disk format is a CSV catalog of early-type/spiral galaxies with
one identifier, one morphology flag and nine numeric columns: the
log velocity dispersion target and eight structural/stellar-population
features.  Preprocessing imputes zeros for missing cells, drops exact
duplicate rows, fences per-feature outliers at a configurable IQR
multiple and min-max scales features and target to [0, 1].  All of it
is deterministic: the same catalog, config and seed produce the same
bytes.

The synthetic generator draws uniform features and builds a virial-like
target dominated by the first feature; it exists so the whole pipeline
can be exercised end to end without any survey data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllRowsDropped,
    BinTooSmall,
    DimensionMismatch,
    EmptyFile,
    MalformedRow,
    MissingColumn,
    TooFewSamples,
)
from .rng import stream

__all__ = [
    "ID_COLUMN",
    "MORPH_COLUMN",
    "TARGET_COLUMN",
    "FEATURE_COLUMNS",
    "RawCatalog",
    "load_catalog",
    "PreprocessConfig",
    "PreprocessReport",
    "MinMaxScaler",
    "Preprocessed",
    "preprocess",
    "PcaBasis",
    "fit_pca",
    "project",
    "SplitIndices",
    "quantile_bins",
    "split_stratified",
    "kfold",
    "SyntheticSpec",
    "gen_synthetic",
]

ID_COLUMN = "id"
MORPH_COLUMN = "morph"
TARGET_COLUMN = "logsigmae"
FEATURE_COLUMNS = (
    "logM12",
    "logRe",
    "logAge",
    "ZH",
    "logML",
    "DlogAge",
    "DZH",
    "DlogML",
)
NUMERIC_COLUMNS = (TARGET_COLUMN,) + FEATURE_COLUMNS
MORPH_CLASSES = ("E", "S")


@dataclass
class RawCatalog:
    """Parsed catalog; values holds target then features, NaN = missing."""

    ids: list[str]
    morph: list[str]
    values: np.ndarray  # (N, 9), column order NUMERIC_COLUMNS

    @property
    def n_rows(self) -> int:
        return len(self.ids)


def load_catalog(path) -> RawCatalog:
    """Parse a catalog CSV.

    Non-numeric numeric cells become NaN (handled later by imputation);
    a wrong field count or an unknown morphology class is a hard error
    carrying the 1-based line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: no header row") from None
        header = [h.strip() for h in header]
        required = [ID_COLUMN, MORPH_COLUMN, *NUMERIC_COLUMNS]
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        col_idx = {c: header.index(c) for c in required}

        ids: list[str] = []
        morph: list[str] = []
        rows: list[list[float]] = []
        for line_no, fields in enumerate(reader, start=2):
            if len(fields) != len(header):
                raise MalformedRow(
                    line_no, f"expected {len(header)} fields, got {len(fields)}"
                )
            m = fields[col_idx[MORPH_COLUMN]].strip()
            if m not in MORPH_CLASSES:
                raise MalformedRow(line_no, f"morphology must be E or S, got {m!r}")
            ids.append(fields[col_idx[ID_COLUMN]].strip())
            morph.append(m)
            row = []
            for c in NUMERIC_COLUMNS:
                raw = fields[col_idx[c]].strip()
                try:
                    row.append(float(raw))
                except ValueError:
                    row.append(np.nan)
            rows.append(row)
    values = (
        np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(NUMERIC_COLUMNS)))
    )
    return RawCatalog(ids=ids, morph=morph, values=values)


@dataclass
class PreprocessConfig:
    outlier_multiplier: float = 1.5

    def __post_init__(self):
        if self.outlier_multiplier <= 0:
            raise ValueError("outlier_multiplier must be positive")


@dataclass
class PreprocessReport:
    n_input_rows: int = 0
    n_imputed_cells: int = 0
    n_rows_imputed: int = 0
    n_duplicates_removed: int = 0
    n_outliers_removed: int = 0
    n_retained: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MinMaxScaler:
    """Per-column min-max map to [0, 1]; constant columns map to 0."""

    col_min: np.ndarray
    col_max: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "MinMaxScaler":
        if x.shape[0] == 0:
            raise DimensionMismatch("cannot fit a scaler on zero rows")
        return cls(col_min=x.min(axis=0), col_max=x.max(axis=0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.col_max - self.col_min
        safe = np.where(span > 0.0, span, 1.0)
        out = (x - self.col_min) / safe
        return np.where(span > 0.0, out, 0.0)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * (self.col_max - self.col_min) + self.col_min


@dataclass
class Preprocessed:
    """Model-ready bundle produced by preprocess()."""

    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    scaler: MinMaxScaler
    target_min: float
    target_max: float
    report: PreprocessReport
    ids: list[str] = field(default_factory=list)
    morph: list[str] = field(default_factory=list)


def preprocess(catalog: RawCatalog, config: PreprocessConfig | None = None) -> Preprocessed:
    """Impute -> dedupe -> outlier fence -> min-max scale.

    Morphology is carried through for reporting but never becomes a
    model feature.  The outlier fence applies to the eight features
    only, flagging rows outside [Q1 - m*IQR, Q3 + m*IQR] on any of
    them.
    """
    config = config or PreprocessConfig()
    report = PreprocessReport(n_input_rows=catalog.n_rows)
    values = catalog.values.copy()

    missing = np.isnan(values)
    report.n_imputed_cells = int(missing.sum())
    report.n_rows_imputed = int(missing.any(axis=1).sum())
    values[missing] = 0.0

    seen: set[tuple] = set()
    keep: list[int] = []
    for i in range(values.shape[0]):
        key = (catalog.ids[i], catalog.morph[i], values[i].tobytes())
        if key in seen:
            continue
        seen.add(key)
        keep.append(i)
    report.n_duplicates_removed = values.shape[0] - len(keep)
    values = values[keep]
    ids = [catalog.ids[i] for i in keep]
    morph = [catalog.morph[i] for i in keep]

    feats = values[:, 1:]
    if feats.shape[0] > 0:
        q1 = np.percentile(feats, 25, axis=0)
        q3 = np.percentile(feats, 75, axis=0)
        iqr = q3 - q1
        lo = q1 - config.outlier_multiplier * iqr
        hi = q3 + config.outlier_multiplier * iqr
        inlier = np.all((feats >= lo) & (feats <= hi), axis=1)
    else:
        inlier = np.zeros(0, dtype=bool)
    report.n_outliers_removed = int((~inlier).sum())
    values = values[inlier]
    ids = [ids[i] for i in np.flatnonzero(inlier)]
    morph = [morph[i] for i in np.flatnonzero(inlier)]

    report.n_retained = values.shape[0]
    if values.shape[0] == 0:
        raise AllRowsDropped("no rows survived preprocessing")

    feats = values[:, 1:]
    target = values[:, 0]
    scaler = MinMaxScaler.fit(feats)
    t_min, t_max = float(target.min()), float(target.max())
    t_span = t_max - t_min
    y = (target - t_min) / t_span if t_span > 0 else np.zeros_like(target)
    return Preprocessed(
        x=scaler.transform(feats),
        y=y,
        feature_names=FEATURE_COLUMNS,
        scaler=scaler,
        target_min=t_min,
        target_max=t_max,
        report=report,
        ids=ids,
        morph=morph,
    )


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (k, d) rows orthonormal
    explained_variance_ratio: np.ndarray  # (k,)


def fit_pca(x: np.ndarray, k: int) -> PcaBasis:
    """Principal axes by eigendecomposition of the sample covariance.

    Eigenvalues sort descending; each component's sign is fixed so its
    largest-magnitude entry is positive, making the basis reproducible
    across runs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionMismatch("PCA needs at least two rows")
    d = x.shape[1]
    if not 1 <= k <= d:
        raise DimensionMismatch(f"k must be in [1, {d}], got {k}")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval = np.clip(eigval[order], 0.0, None)
    comps = eigvec[:, order].T[:k].copy()
    for row in comps:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    total = eigval.sum()
    ratio = eigval[:k] / total if total > 0 else np.zeros(k)
    return PcaBasis(mean=mean, components=comps, explained_variance_ratio=ratio)


def project(basis: PcaBasis, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.mean.shape[0]:
        raise DimensionMismatch(
            f"expected (N, {basis.mean.shape[0]}) matrix, got {x.shape}"
        )
    return (x - basis.mean) @ basis.components.T


@dataclass
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    validation: np.ndarray


def quantile_bins(y: np.ndarray, n_bins: int) -> np.ndarray:
    """Assign each value to one of n_bins quantile bins of y."""
    y = np.asarray(y, dtype=np.float64)
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    if n_bins == 1:
        return np.zeros(y.shape[0], dtype=np.intp)
    edges = np.quantile(y, np.arange(1, n_bins) / n_bins)
    return np.searchsorted(edges, y, side="right")


def split_stratified(
    y: np.ndarray,
    test_fraction: float,
    n_bins: int = 3,
    seed: int = 0,
    validation_fraction: float = 0.0,
) -> SplitIndices:
    """Seeded stratified holdout split over quantile bins of y."""
    y = np.asarray(y, dtype=np.float64)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    if validation_fraction < 0.0 or test_fraction + validation_fraction >= 1.0:
        raise ValueError("fractions must leave room for a train split")
    bins = quantile_bins(y, n_bins)
    rng = stream(seed, "split-stratified")
    train, test, val = [], [], []
    for b in range(n_bins):
        members = np.flatnonzero(bins == b)
        if members.size < 2:
            raise BinTooSmall(f"stratification bin {b} has {members.size} samples")
        perm = members[rng.permutation(members.size)]
        n_test = int(np.floor(test_fraction * members.size + 0.5))
        n_val = int(np.floor(validation_fraction * members.size + 0.5))
        test.append(perm[:n_test])
        val.append(perm[n_test : n_test + n_val])
        train.append(perm[n_test + n_val :])
    return SplitIndices(
        train=np.sort(np.concatenate(train)),
        test=np.sort(np.concatenate(test)),
        validation=np.sort(np.concatenate(val)),
    )


def kfold(n: int, k: int, y: np.ndarray, seed: int = 0, n_bins: int = 3) -> list[np.ndarray]:
    """Seeded stratified k-fold partition; fold sizes differ by <= 1.

    Indices are dealt round-robin across folds while walking the
    quantile bins, so each fold sees a balanced slice of the target
    distribution.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise TooFewSamples(f"cannot make {k} folds from {n} rows")
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != n:
        raise DimensionMismatch("y length must equal n")
    bins = quantile_bins(y, n_bins)
    rng = stream(seed, "kfold")
    folds: list[list[int]] = [[] for _ in range(k)]
    counter = 0
    for b in range(n_bins):
        members = np.flatnonzero(bins == b)
        perm = members[rng.permutation(members.size)]
        for idx in perm:
            folds[counter % k].append(int(idx))
            counter += 1
    return [np.sort(np.asarray(f, dtype=np.intp)) for f in folds]


VIRIAL_BETA = (0.8, 0.1, 0.02, 0.05, 0.02, 0.005, 0.003, 0.002)


@dataclass
class SyntheticSpec:
    n: int = 2000
    beta: tuple[float, ...] = VIRIAL_BETA
    sigma: float = 0.05

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if len(self.beta) != len(FEATURE_COLUMNS):
            raise ValueError(f"beta must have {len(FEATURE_COLUMNS)} entries")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def gen_synthetic(spec: SyntheticSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform features, target = min-max rescaled beta.x + noise."""
    rng = stream(seed, "synthetic")
    x = rng.random((spec.n, len(spec.beta)))
    if spec.n == 0:
        return x, np.empty(0)
    raw = x @ np.asarray(spec.beta) + spec.sigma * rng.standard_normal(spec.n)
    span = raw.max() - raw.min()
    y = (raw - raw.min()) / span if span > 0 else np.zeros_like(raw)
    return x, np.clip(y, 0.0, 1.0)
