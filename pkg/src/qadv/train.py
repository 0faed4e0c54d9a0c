"""Training loops for the four model variants.

All variants share one supervised step: the QNN (or autoencoder)
minimises its own error plus alpha times the evaluator loss, and the
evaluator simultaneously learns to reproduce the target from
[features, prediction, explanation] rows.  The feedback term reaches
the main model only through the prediction column of the evaluator
input; explanation coefficients are constants as far as the main
model's gradient is concerned, and a scalar_only mode cuts even that
link while keeping the recorded loss sum intact.

Randomness is split into named streams keyed by (seed, purpose):
weight init, dropout, batch shuffling, explanation sampling and GAN
latents never share a stream, so ablations that skip one consumer
leave every other trajectory bit-identical.

Loop structure per variant: vanilla is a single supervised loop;
qgan1 first trains the GAN alone, then freezes the generator and runs
the vanilla loop on the real rows plus a sampled synthetic block;
qgan2 interleaves, per batch, generation, the supervised step on the
combined rows, a discriminator step and a generator step; qssl swaps
the QNN for the autoencoder, with the evaluator regressing
per-instance reconstruction error.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import MinMaxScaler
from .errors import ConfigError, EmptyTraining, NonFiniteLoss
from .models import (
    ABLATIONS,
    HybridQnn,
    ModelConfig,
    QuantumAutoencoder,
    TrainedModel,
    build_discriminator,
    build_evaluator,
    build_generator,
    build_qssl_evaluator,
    evaluator_forward,
    generator_sample,
)
from .nn import Adam, Mlp, bce_loss, mse_loss
from .rng import stream
from .xai import TabularExplainer, explain_batch, fit_explainer

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "HistoryRow",
    "ModeCollapseWarning",
    "apply_ablation",
    "train_vanilla",
    "train_qgan1",
    "train_qgan2",
    "train_qssl",
    "fit_model",
]

log = logging.getLogger(__name__)

FEEDBACK_GRADIENTS = ("through_prediction", "scalar_only")
HISTORY_COLUMNS = (
    "epoch",
    "phase",
    "loss_m1",
    "loss_m1_mse",
    "loss_m2",
    "loss_g",
    "loss_d",
)


class ModeCollapseWarning(UserWarning):
    """Generated batch has (near-)identical rows; training continues."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run.

    alpha weighs the evaluator feedback inside the main loss;
    synthetic_ratio is the number of generated rows per real row
    (qgan1 augments the whole training set once, qgan2 augments each
    batch); explain_samples is the per-row perturbation count for the
    in-loop explanations.
    """

    epochs: int = 10
    gan_epochs: int = 100
    batch_size: int = 32
    lr_main: float = 1e-3
    lr_gan: float = 2e-4
    alpha: float = 0.5
    seed: int = 0
    ablation: str = "none"
    synthetic_ratio: float = 0.5
    feedback_gradient: str = "through_prediction"
    explain_samples: int = 500
    n_qubits: int = 4
    entangler: str = "none"
    angle_scale: bool = False
    latent_dim: int = 16
    features_only: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.gan_epochs < 1:
            raise ConfigError("epoch counts must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr_main <= 0 or self.lr_gan < 0:
            raise ConfigError("learning rates must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.synthetic_ratio < 0:
            raise ConfigError("synthetic_ratio must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.feedback_gradient not in FEEDBACK_GRADIENTS:
            raise ConfigError(f"unknown feedback_gradient {self.feedback_gradient!r}")
        if self.explain_samples < 2:
            raise ConfigError("explain_samples must be at least 2")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_qubits=self.n_qubits,
            entangler=self.entangler,
            angle_scale=self.angle_scale,
            ablation=self.ablation,
            features_only=self.features_only,
            latent_dim=self.latent_dim,
        )


@dataclass
class HistoryRow:
    epoch: int
    phase: str
    loss_m1: float = 0.0
    loss_m1_mse: float = 0.0
    loss_m2: float = 0.0
    loss_g: float = 0.0
    loss_d: float = 0.0


@dataclass
class TrainHistory:
    """Per-epoch loss record; GAN phases fill loss_g/loss_d."""

    rows: list[HistoryRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [r.epoch, r.phase]
                    + [repr(getattr(r, c)) for c in HISTORY_COLUMNS[2:]]
                )


def apply_ablation(cfg: TrainConfig) -> TrainConfig:
    """Resolve the ablation flag into effective settings.

    no_feedback zeroes alpha (and the loops additionally skip building
    the evaluator); the structural ablations are wired inside the
    model builder and need no config change here.
    """
    if cfg.ablation == "no_feedback":
        return replace(cfg, alpha=0.0)
    return cfg


def _noop(_name: str) -> None:
    pass


def _check_inputs(x: np.ndarray, y: np.ndarray | None, cfg: TrainConfig) -> None:
    if x.ndim != 2:
        raise ConfigError(f"expected a (N, d) feature matrix, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyTraining("no training rows")
    if y is not None and y.shape != (x.shape[0],):
        raise ConfigError(f"targets {y.shape} do not match {x.shape[0]} rows")
    if cfg.batch_size > x.shape[0]:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds the {x.shape[0]} training rows"
        )


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _finite_or_raise(value: float, name: str, epoch: int, batch: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteLoss(name, epoch, batch)


def _supervised_step(
    m1: HybridQnn,
    m2: Mlp | None,
    opt1: Adam,
    opt2: Adam | None,
    explainer: TabularExplainer | None,
    xb: np.ndarray,
    yb: np.ndarray,
    cfg: TrainConfig,
    dropout_rng: np.random.Generator,
    explain_seed: int,
    epoch: int,
    batch: int,
    observe: Callable[[str], None] = _noop,
) -> tuple[float, float, float]:
    """One joint update of the QNN and (optionally) the evaluator.

    Returns (loss_m1, loss_m1_mse, loss_m2) for this batch.  Both
    gradient sets are taken at the pre-update parameters, then each
    optimizer steps its own model.
    """
    observe("qnn_forward")
    yhat, trace = m1.forward(xb, train=True, rng=dropout_rng)
    l1_mse, d_yhat = mse_loss(yhat, yb)
    # Catch a blown-up forward pass here, before the explainer chokes
    # on non-finite predictions with a less useful error.
    _finite_or_raise(l1_mse, "loss_m1", epoch, batch)
    l2 = 0.0
    if m2 is not None:
        observe("explain")
        expl = explain_batch(explainer, m1.predict, xb, seed=explain_seed)
        coef = np.stack([e.coefficients for e in expl])
        observe("evaluator")
        ytilde, etrace = evaluator_forward(m2, xb, yhat, coef)
        l2, d_yt = mse_loss(ytilde, yb)
        _finite_or_raise(l2, "loss_m2", epoch, batch)
        g2, d_cols = m2.backward(etrace, d_yt[:, None])
        if cfg.alpha != 0.0 and cfg.feedback_gradient == "through_prediction":
            # Feedback enters through the prediction column only.
            d_yhat = d_yhat + cfg.alpha * d_cols[:, xb.shape[1]]
        opt2.step(m2.parameters(), g2)
    observe("qnn_update")
    g1 = m1.backward(trace, d_yhat)
    opt1.step(m1.parameters(), g1)
    return l1_mse + cfg.alpha * l2, l1_mse, l2


def _build_supervised(
    x: np.ndarray, cfg: TrainConfig
) -> tuple[HybridQnn, Mlp | None, TabularExplainer | None]:
    m1 = HybridQnn.build(x.shape[1], cfg.model_config(), stream(cfg.seed, "m1_init"))
    if cfg.ablation == "no_feedback":
        return m1, None, None
    m2 = build_evaluator(x.shape[1], stream(cfg.seed, "m2_init"))
    explainer = fit_explainer(x, n_samples=cfg.explain_samples)
    return m1, m2, explainer


def _vanilla_loop(
    m1: HybridQnn,
    m2: Mlp | None,
    explainer: TabularExplainer | None,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    history: TrainHistory,
    phase: str,
) -> None:
    opt1 = Adam(lr=cfg.lr_main)
    opt2 = Adam(lr=cfg.lr_main) if m2 is not None else None
    dropout_rng = stream(cfg.seed, "dropout")
    shuffle_rng = stream(cfg.seed, "shuffle")
    explain_rng = stream(cfg.seed, "explain_seeds")
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(3)
        for b, idx in enumerate(_batches(n, cfg.batch_size, shuffle_rng), start=1):
            explain_seed = (
                int(explain_rng.integers(0, 2**31)) if m2 is not None else 0
            )
            l1, l1_mse, l2 = _supervised_step(
                m1, m2, opt1, opt2, explainer, x[idx], y[idx], cfg,
                dropout_rng, explain_seed, epoch, b,
            )
            _finite_or_raise(l1, "loss_m1", epoch, b)
            sums += idx.size * np.array([l1, l1_mse, l2])
        history.rows.append(HistoryRow(epoch, phase, *(sums / n).tolist()))


def train_vanilla(
    x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[HybridQnn, Mlp | None, TrainHistory]:
    """Supervised loop over the QNN and its evaluator."""
    cfg = apply_ablation(cfg)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_inputs(x, y, cfg)
    m1, m2, explainer = _build_supervised(x, cfg)
    history = TrainHistory()
    _vanilla_loop(m1, m2, explainer, x, y, cfg, history, phase="main")
    return m1, m2, history


def _joint_rows(x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.features_only:
        return x
    return np.concatenate([x, y[:, None]], axis=1)


def _collapse_check(fake: np.ndarray, warned: bool) -> bool:
    """Warn (once per caller-chosen scope) when rows are all alike."""
    if fake.shape[0] < 2 or warned:
        return warned
    if float(fake.std(axis=0).mean()) < 1e-3:
        msg = "generated batch has near-zero spread, possible mode collapse"
        warnings.warn(msg, ModeCollapseWarning, stacklevel=3)
        log.warning(msg)
        return True
    return warned


def _discriminator_step(dis: Mlp, opt: Adam, real: np.ndarray, fake: np.ndarray) -> float:
    inputs = np.concatenate([real, fake], axis=0)
    labels = np.concatenate(
        [np.ones((real.shape[0], 1)), np.zeros((fake.shape[0], 1))], axis=0
    )
    p, trace = dis.forward(inputs)
    loss, d_p = bce_loss(p, labels)
    grads, _ = dis.backward(trace, d_p)
    opt.step(dis.parameters(), grads)
    return loss


def _generator_step(
    gen: Mlp, dis: Mlp, opt: Adam, latent_rng: np.random.Generator, n: int
) -> float:
    z = latent_rng.standard_normal((n, gen.spec.layer_dims[0]))
    fake, gtrace = gen.forward(z)
    p, dtrace = dis.forward(fake)
    loss, d_p = bce_loss(p, np.ones_like(p))
    _, d_fake = dis.backward(dtrace, d_p)  # discriminator grads discarded
    grads, _ = gen.backward(gtrace, d_fake)
    opt.step(gen.parameters(), grads)
    return loss


def _gan_loop(
    gen: Mlp,
    dis: Mlp,
    joint: np.ndarray,
    cfg: TrainConfig,
    history: TrainHistory,
    latent_rng: np.random.Generator,
) -> None:
    opt_g = Adam(lr=cfg.lr_gan)
    opt_d = Adam(lr=cfg.lr_gan)
    shuffle_rng = stream(cfg.seed, "gan_shuffle")
    n = joint.shape[0]
    for epoch in range(1, cfg.gan_epochs + 1):
        sums = np.zeros(2)
        warned = False
        for b, idx in enumerate(_batches(n, cfg.batch_size, shuffle_rng), start=1):
            fake = generator_sample(gen, idx.size, latent_rng)
            warned = _collapse_check(fake, warned)
            ld = _discriminator_step(dis, opt_d, joint[idx], fake)
            lg = _generator_step(gen, dis, opt_g, latent_rng, idx.size)
            _finite_or_raise(ld, "loss_d", epoch, b)
            _finite_or_raise(lg, "loss_g", epoch, b)
            sums += idx.size * np.array([lg, ld])
        means = (sums / n).tolist()
        history.rows.append(HistoryRow(epoch, "gan", loss_g=means[0], loss_d=means[1]))


def train_qgan1(
    x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[Mlp, Mlp, HybridQnn, Mlp | None, TrainHistory]:
    """Staged run: GAN pre-training, then the supervised loop on the
    real rows plus a one-off synthetic block from the frozen generator."""
    cfg = apply_ablation(cfg)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_inputs(x, y, cfg)
    if cfg.features_only and cfg.synthetic_ratio > 0:
        raise ConfigError(
            "features_only rows carry no target, so they cannot augment "
            "the supervised stage; set synthetic_ratio=0"
        )
    joint_dim = x.shape[1] if cfg.features_only else x.shape[1] + 1
    gen = build_generator(cfg.latent_dim, joint_dim, stream(cfg.seed, "g_init"))
    dis = build_discriminator(joint_dim, stream(cfg.seed, "d_init"))
    latent_rng = stream(cfg.seed, "latent")
    history = TrainHistory()
    _gan_loop(gen, dis, _joint_rows(x, y, cfg), cfg, history, latent_rng)

    n_syn = math.ceil(cfg.synthetic_ratio * x.shape[0])
    if n_syn > 0:
        rows = generator_sample(gen, n_syn, latent_rng)
        x_aug = np.concatenate([x, rows[:, : x.shape[1]]], axis=0)
        y_aug = np.concatenate([y, rows[:, x.shape[1]]])
    else:
        x_aug, y_aug = x, y
    m1, m2, explainer = _build_supervised(x_aug, cfg)
    _vanilla_loop(m1, m2, explainer, x_aug, y_aug, cfg, history, phase="main")
    return gen, dis, m1, m2, history


def train_qgan2(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    step_observer: Callable[[str], None] | None = None,
) -> tuple[Mlp, Mlp, HybridQnn, Mlp | None, TrainHistory]:
    """Joint loop: every batch runs generation, the supervised step on
    real+synthetic rows, a discriminator step and a generator step.

    step_observer, when given, is called with the sub-step name at the
    start of each: generate, qnn_forward, explain, evaluator,
    qnn_update, discriminator, generator.
    """
    cfg = apply_ablation(cfg)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_inputs(x, y, cfg)
    observe = step_observer if step_observer is not None else _noop
    d = x.shape[1]
    joint_dim = d if cfg.features_only else d + 1
    m1, m2, _ = _build_supervised(x, cfg)
    # Perturbation statistics come from the real rows; synthetic rows
    # change every batch and would make explanations non-stationary.
    explainer = (
        fit_explainer(x, n_samples=cfg.explain_samples) if m2 is not None else None
    )
    gen = build_generator(cfg.latent_dim, joint_dim, stream(cfg.seed, "g_init"))
    dis = build_discriminator(joint_dim, stream(cfg.seed, "d_init"))
    opt1 = Adam(lr=cfg.lr_main)
    opt2 = Adam(lr=cfg.lr_main) if m2 is not None else None
    opt_g = Adam(lr=cfg.lr_gan)
    opt_d = Adam(lr=cfg.lr_gan)
    dropout_rng = stream(cfg.seed, "dropout")
    shuffle_rng = stream(cfg.seed, "shuffle")
    explain_rng = stream(cfg.seed, "explain_seeds")
    latent_rng = stream(cfg.seed, "latent")
    joint = _joint_rows(x, y, cfg)
    n = x.shape[0]
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(5)
        warned = False
        for b, idx in enumerate(_batches(n, cfg.batch_size, shuffle_rng), start=1):
            n_syn = math.ceil(cfg.synthetic_ratio * idx.size)
            observe("generate")
            fake = generator_sample(gen, n_syn, latent_rng)
            warned = _collapse_check(fake, warned)
            if cfg.features_only or n_syn == 0:
                xs, ys = x[idx], y[idx]
            else:
                xs = np.concatenate([x[idx], fake[:, :d]], axis=0)
                ys = np.concatenate([y[idx], fake[:, d]])
            explain_seed = (
                int(explain_rng.integers(0, 2**31)) if m2 is not None else 0
            )
            l1, l1_mse, l2 = _supervised_step(
                m1, m2, opt1, opt2, explainer, xs, ys, cfg,
                dropout_rng, explain_seed, epoch, b, observe,
            )
            observe("discriminator")
            ld = _discriminator_step(dis, opt_d, joint[idx], fake)
            observe("generator")
            lg = _generator_step(gen, dis, opt_g, latent_rng, idx.size)
            _finite_or_raise(l1, "loss_m1", epoch, b)
            _finite_or_raise(ld, "loss_d", epoch, b)
            _finite_or_raise(lg, "loss_g", epoch, b)
            sums += idx.size * np.array([l1, l1_mse, l2, lg, ld])
        history.rows.append(HistoryRow(epoch, "joint", *(sums / n).tolist()))
    return gen, dis, m1, m2, history


def train_qssl(
    x: np.ndarray, cfg: TrainConfig
) -> tuple[QuantumAutoencoder, Mlp | None, TrainHistory]:
    """Self-supervised loop: reconstruction plus evaluator feedback.

    The evaluator regresses each instance's reconstruction error from
    [x, reconstruction, explanation]; its gradient reaches the
    autoencoder through the reconstruction columns, with the error
    target treated as a constant.
    """
    cfg = apply_ablation(cfg)
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(x, None, cfg)
    d = x.shape[1]
    qae = QuantumAutoencoder.build(d, cfg.model_config(), stream(cfg.seed, "m1_init"))
    m2 = None
    explainer = None
    if cfg.ablation != "no_feedback":
        m2 = build_qssl_evaluator(d, stream(cfg.seed, "m2_init"))
        explainer = fit_explainer(x, n_samples=cfg.explain_samples)
    opt1 = Adam(lr=cfg.lr_main)
    opt2 = Adam(lr=cfg.lr_main) if m2 is not None else None
    dropout_rng = stream(cfg.seed, "dropout")
    shuffle_rng = stream(cfg.seed, "shuffle")
    explain_rng = stream(cfg.seed, "explain_seeds")
    n = x.shape[0]
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(3)
        for b, idx in enumerate(_batches(n, cfg.batch_size, shuffle_rng), start=1):
            xb = x[idx]
            xhat, _, trace = qae.forward(xb, train=True, rng=dropout_rng)
            l_rec, d_xhat = mse_loss(xhat, xb)
            _finite_or_raise(l_rec, "loss_m1", epoch, b)
            l2 = 0.0
            if m2 is not None:
                seed_b = int(explain_rng.integers(0, 2**31))
                expl = explain_batch(
                    explainer, qae.reconstruction_errors, xb, seed=seed_b
                )
                coef = np.stack([e.coefficients for e in expl])
                errors = np.mean((xhat - xb) ** 2, axis=1)
                zin = np.concatenate([xb, xhat, coef], axis=1)
                pred, etrace = m2.forward(zin)
                l2, d_pred = mse_loss(pred[:, 0], errors)
                _finite_or_raise(l2, "loss_m2", epoch, b)
                g2, d_zin = m2.backward(etrace, d_pred[:, None])
                if cfg.alpha != 0.0 and cfg.feedback_gradient == "through_prediction":
                    d_xhat = d_xhat + cfg.alpha * d_zin[:, d : 2 * d]
                opt2.step(m2.parameters(), g2)
            grads = qae.backward(trace, d_xhat)
            opt1.step(qae.parameters(), grads)
            l1 = l_rec + cfg.alpha * l2
            _finite_or_raise(l1, "loss_m1", epoch, b)
            sums += idx.size * np.array([l1, l_rec, l2])
        history.rows.append(HistoryRow(epoch, "main", *(sums / n).tolist()))
    return qae, m2, history


def fit_model(
    x: np.ndarray,
    y: np.ndarray | None,
    cfg: TrainConfig,
    kind: str = "vanilla",
    scaler: MinMaxScaler | None = None,
    target_min: float = 0.0,
    target_max: float = 1.0,
) -> tuple[TrainedModel, TrainHistory]:
    """Train one variant end to end and wrap it for prediction and
    persistence.

    The self-supervised variant ignores y.  The scaler defaults to the
    identity map for callers whose features are already in [0, 1]; it
    is carried for bookkeeping only, predictions never re-apply it.
    """
    x = np.asarray(x, dtype=np.float64)
    if scaler is None:
        scaler = MinMaxScaler(np.zeros(x.shape[1]), np.ones(x.shape[1]))
    qnn = gen = dis = qae = None
    if kind == "vanilla":
        qnn, evaluator, history = train_vanilla(x, y, cfg)
    elif kind == "qgan1":
        gen, dis, qnn, evaluator, history = train_qgan1(x, y, cfg)
    elif kind == "qgan2":
        gen, dis, qnn, evaluator, history = train_qgan2(x, y, cfg)
    elif kind == "qssl":
        qae, evaluator, history = train_qssl(x, cfg)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    model = TrainedModel(
        kind=kind,
        config=cfg.model_config(),
        input_dim=x.shape[1],
        scaler=scaler,
        target_min=target_min,
        target_max=target_max,
        explainer=fit_explainer(x, n_samples=cfg.explain_samples),
        qnn=qnn,
        evaluator=evaluator,
        generator=gen,
        discriminator=dis,
        autoencoder=qae,
    )
    return model, history
