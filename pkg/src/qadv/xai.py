"""Local surrogate explanations for black-box regressors.

For a query point x the explainer draws Gaussian perturbations scaled
by the per-feature training standard deviations, weights them by an
RBF kernel on the standardised distance to x, and fits a weighted
ridge regression of the black-box predictions on the raw perturbed
features.  The fitted slope vector is the explanation; the weighted
R^2 of the surrogate says how trustworthy it is locally.

Conventions, pinned by tests: the query point itself is always sample
0 of the perturbation set (weight exactly 1), the kernel width
defaults to 0.75 * sqrt(d), ridge damping is 1e-6 and never applies to
the intercept, and per-feature stds are floored at 1e-6 so constant
features cannot produce zero-scale perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, SingularFit

__all__ = ["Explanation", "TabularExplainer", "fit_explainer", "explain", "explain_batch"]

RIDGE_LAMBDA = 1e-6
STD_FLOOR = 1e-6


@dataclass
class Explanation:
    """Affine surrogate around one point: f(z) ~ coefficients.z + intercept."""

    coefficients: np.ndarray
    intercept: float
    local_r2: float


@dataclass
class TabularExplainer:
    """Frozen perturbation statistics of the training features."""

    means: np.ndarray
    stds: np.ndarray
    n_samples: int = 500
    kernel_width: float | None = None

    @property
    def n_features(self) -> int:
        return self.means.shape[0]

    @property
    def effective_kernel_width(self) -> float:
        if self.kernel_width is not None:
            return self.kernel_width
        return 0.75 * np.sqrt(self.n_features)


def fit_explainer(
    x_train: np.ndarray,
    n_samples: int = 500,
    kernel_width: float | None = None,
) -> TabularExplainer:
    """Record feature means/stds from training data (ddof=0 stds)."""
    x_train = np.asarray(x_train, dtype=np.float64)
    if x_train.ndim != 2 or x_train.shape[0] == 0:
        raise DimensionMismatch(f"expected non-empty (N, d) matrix, got {x_train.shape}")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    stds = np.maximum(x_train.std(axis=0), STD_FLOOR)
    return TabularExplainer(
        means=x_train.mean(axis=0),
        stds=stds,
        n_samples=n_samples,
        kernel_width=kernel_width,
    )


def explain(
    explainer: TabularExplainer,
    predict_fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    seed: int,
) -> Explanation:
    """Fit the weighted ridge surrogate of predict_fn around x."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = explainer.n_features
    if x.shape[0] != d:
        raise DimensionMismatch(f"expected {d} features, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((explainer.n_samples, d))
    noise[0] = 0.0  # sample 0 is the query point itself
    z = x[None, :] + noise * explainer.stds[None, :]
    kw = explainer.effective_kernel_width
    weights = np.exp(-np.sum(noise**2, axis=1) / kw**2)

    y = np.asarray(predict_fn(z), dtype=np.float64).reshape(-1)
    if y.shape[0] != explainer.n_samples:
        raise DimensionMismatch("predict_fn returned the wrong number of values")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise SingularFit("non-finite values in surrogate fit inputs")

    # Weighted ridge on [1, z]; damping spares the intercept so a
    # constant predict_fn is recovered exactly.
    a = np.concatenate([np.ones((explainer.n_samples, 1)), z], axis=1)
    aw = a * weights[:, None]
    gram = a.T @ aw
    gram[np.arange(1, d + 1), np.arange(1, d + 1)] += RIDGE_LAMBDA
    rhs = aw.T @ y
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - needs NaN inputs
        raise SingularFit(str(exc)) from exc
    if not np.all(np.isfinite(beta)):
        raise SingularFit("surrogate solve produced non-finite coefficients")

    resid = y - a @ beta
    ss_res = float(np.sum(weights * resid**2))
    y_bar = float(np.sum(weights * y) / np.sum(weights))
    ss_tot = float(np.sum(weights * (y - y_bar) ** 2))
    scale = float(np.sum(weights) * (1.0 + y_bar**2))
    if ss_tot <= 1e-12 * scale:
        # Locally constant target: the intercept alone fits it, count
        # that as a perfect local fit rather than dividing by ~0.
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return Explanation(coefficients=beta[1:], intercept=float(beta[0]), local_r2=r2)


def explain_batch(
    explainer: TabularExplainer,
    predict_fn: Callable[[np.ndarray], np.ndarray],
    x_rows: np.ndarray,
    seed: int,
) -> list[Explanation]:
    """Explain each row independently with per-row seed = seed + index."""
    x_rows = np.asarray(x_rows, dtype=np.float64)
    if x_rows.ndim != 2:
        raise DimensionMismatch(f"expected (B, d) matrix, got {x_rows.shape}")
    return [
        explain(explainer, predict_fn, x_rows[i], seed + i)
        for i in range(x_rows.shape[0])
    ]
