"""Model assemblies: hybrid QNN, evaluator, GAN pair, autoencoder.

The regression workhorse is HybridQnn: a dense trunk maps features to
rotation angles, the simulator turns them into the Pauli-Z average q,
and the prediction is sigmoid(q).  Backprop through the quantum layer
uses the parameter-shift Jacobian at the executed angles, so the full
chain d(loss)/d(trunk weights) is exact.

Two trunk ablations swap pieces out while keeping the interface: the
no-quantum variant predicts sigmoid of the mean trunk output (never
touching the simulator), and the no-classical variant feeds the scaled
features directly into the circuit with zero trainable parameters.

EvaluatorNet consumes [features, prediction, explanation] in that
fixed column order; GeneratorNet/DiscriminatorNet form a conventional
GAN over joint (features + target) rows; QuantumAutoencoder uses the
circuit's per-qubit expectations as its bottleneck.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import jsonio
from .data import MinMaxScaler, PcaBasis
from .errors import CheckpointVersionError, ConfigError, DimensionMismatch
from .nn import Mlp, MlpSpec
from .qsim import CircuitSpec, expectation_jacobian_batch, quantum_forward_batch
from .xai import TabularExplainer, explain_batch

__all__ = [
    "ABLATIONS",
    "MODEL_KINDS",
    "ModelConfig",
    "HybridQnn",
    "QnnTrace",
    "build_evaluator",
    "build_qssl_evaluator",
    "evaluator_forward",
    "build_generator",
    "build_discriminator",
    "generator_sample",
    "QuantumAutoencoder",
    "AeTrace",
    "TrainedModel",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT_VERSION",
]

ABLATIONS = ("none", "no_feedback", "no_quantum", "no_classical")
MODEL_KINDS = ("vanilla", "qgan1", "qgan2", "qssl")
TRUNK_HIDDEN = (256, 128, 64, 32)
# Dropout sits inside the trunk (after the 128- and 32-unit layers), never
# on the angle head.  The readout is a cosine of the angles, so zero-or-
# rescale noise there would make training optimize a systematically
# different function than the one evaluated with dropout off; in practice
# that mismatch caps test R^2 near 0.26 on the synthetic benchmark where
# the dropout-free head reaches 0.87.
TRUNK_DROPOUT = (0.0, 0.25, 0.0, 0.25, 0.0)
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs shared by every model variant."""

    n_qubits: int = 4
    entangler: str = "none"
    angle_scale: bool = False
    ablation: str = "none"
    features_only: bool = False
    latent_dim: int = 16

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")


@dataclass
class QnnTrace:
    trunk_trace: object | None
    theta: np.ndarray  # executed angles (after optional pi scaling)
    q: np.ndarray
    yhat: np.ndarray


class HybridQnn:
    """Dense trunk -> rotation angles -> circuit -> sigmoid readout."""

    def __init__(self, trunk: Mlp | None, circuit: CircuitSpec, cfg: ModelConfig):
        self.trunk = trunk
        self.circuit = circuit
        self.cfg = cfg
        self.angle_factor = np.pi if cfg.angle_scale else 1.0

    @classmethod
    def build(cls, input_dim: int, cfg: ModelConfig, rng: np.random.Generator) -> "HybridQnn":
        circuit = CircuitSpec(n_qubits=cfg.n_qubits, entangler=cfg.entangler)
        if cfg.ablation == "no_classical":
            if input_dim != circuit.n_params:
                raise ConfigError(
                    f"no_classical needs input_dim == {circuit.n_params}, got {input_dim}"
                )
            return cls(None, circuit, cfg)
        dims = (input_dim, *TRUNK_HIDDEN, circuit.n_params)
        spec = MlpSpec(
            layer_dims=dims,
            activations=("relu",) * 5,
            dropout=TRUNK_DROPOUT,
        )
        return cls(Mlp.init(spec, rng), circuit, cfg)

    def parameters(self) -> list[np.ndarray]:
        return [] if self.trunk is None else self.trunk.parameters()

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, QnnTrace]:
        x = np.asarray(x, dtype=np.float64)
        if self.trunk is not None:
            raw, trunk_trace = self.trunk.forward(x, train=train, rng=rng)
        else:
            if x.shape[1] != self.circuit.n_params:
                raise DimensionMismatch(
                    f"expected {self.circuit.n_params} features, got {x.shape[1]}"
                )
            raw, trunk_trace = x, None
        if self.cfg.ablation == "no_quantum":
            theta = raw
            q = raw.mean(axis=1)
        else:
            theta = self.angle_factor * raw
            q, _ = quantum_forward_batch(self.circuit, theta)
        yhat = expit(q)
        return yhat, QnnTrace(trunk_trace=trunk_trace, theta=theta, q=q, yhat=yhat)

    def backward(self, trace: QnnTrace, d_yhat: np.ndarray) -> list[np.ndarray]:
        """Gradient wrt trunk parameters of a loss with d(loss)/d(yhat)."""
        d_q = np.asarray(d_yhat) * trace.yhat * (1.0 - trace.yhat)
        if self.cfg.ablation == "no_quantum":
            width = trace.theta.shape[1]
            d_raw = np.repeat(d_q[:, None] / width, width, axis=1)
        else:
            jac = expectation_jacobian_batch(self.circuit, trace.theta)
            d_theta = d_q[:, None] * jac.mean(axis=1)
            d_raw = self.angle_factor * d_theta
        if self.trunk is None:
            return []
        grads, _ = self.trunk.backward(trace.trunk_trace, d_raw)
        return grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)[0]


def build_evaluator(n_features: int, rng: np.random.Generator) -> Mlp:
    """Feedback network on [x, yhat, explanation]: 2d+1 -> 32 -> 16 -> 1."""
    spec = MlpSpec(
        layer_dims=(2 * n_features + 1, 32, 16, 1),
        activations=("relu", "relu", "identity"),
    )
    return Mlp.init(spec, rng)


def evaluator_forward(
    net: Mlp,
    x: np.ndarray,
    yhat: np.ndarray,
    expl: np.ndarray,
) -> tuple[np.ndarray, object]:
    """Run the evaluator on the pinned column layout.

    Columns are [features 0..d-1, prediction at d, explanation d+1..2d];
    the returned trace exposes the prediction column's input gradient
    at index d via Mlp.backward.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.concatenate([x, np.asarray(yhat).reshape(-1, 1), expl], axis=1)
    out, trace = net.forward(z)
    return out[:, 0], trace


def build_qssl_evaluator(n_features: int, rng: np.random.Generator) -> Mlp:
    """Evaluator head for the self-supervised variant.

    Input layout [x, reconstruction, explanation] (3d columns); the
    output regresses the per-instance reconstruction error.
    """
    spec = MlpSpec(
        layer_dims=(3 * n_features, 32, 16, 1),
        activations=("relu", "relu", "identity"),
    )
    return Mlp.init(spec, rng)


def build_generator(latent_dim: int, out_dim: int, rng: np.random.Generator) -> Mlp:
    """Latent -> 64 -> 32 -> sigmoid rows in [0,1]^out_dim."""
    spec = MlpSpec(
        layer_dims=(latent_dim, 64, 32, out_dim),
        activations=("relu", "relu", "sigmoid"),
    )
    return Mlp.init(spec, rng)


def build_discriminator(in_dim: int, rng: np.random.Generator) -> Mlp:
    spec = MlpSpec(
        layer_dims=(in_dim, 64, 32, 1),
        activations=("relu", "relu", "sigmoid"),
    )
    return Mlp.init(spec, rng)


def generator_sample(net: Mlp, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n latent vectors and decode them (eval mode)."""
    latent_dim = net.spec.layer_dims[0]
    if n == 0:
        return np.empty((0, net.spec.layer_dims[-1]))
    return net.predict(rng.standard_normal((n, latent_dim)))


@dataclass
class AeTrace:
    enc_trace: object
    dec_trace: object
    theta: np.ndarray
    z: np.ndarray  # bottleneck, per-qubit <Z_j>
    xhat: np.ndarray


class QuantumAutoencoder:
    """Encoder -> circuit bottleneck (per-qubit <Z_j>) -> decoder."""

    def __init__(self, encoder: Mlp, decoder: Mlp, circuit: CircuitSpec, cfg: ModelConfig):
        self.encoder = encoder
        self.decoder = decoder
        self.circuit = circuit
        self.cfg = cfg
        self.angle_factor = np.pi if cfg.angle_scale else 1.0

    @classmethod
    def build(cls, input_dim: int, cfg: ModelConfig, rng: np.random.Generator) -> "QuantumAutoencoder":
        circuit = CircuitSpec(n_qubits=cfg.n_qubits, entangler=cfg.entangler)
        enc = Mlp.init(
            MlpSpec((input_dim, 32, 16, circuit.n_params), ("relu", "relu", "relu")),
            rng,
        )
        dec = Mlp.init(
            MlpSpec((circuit.n_qubits, 16, 32, input_dim), ("relu", "relu", "sigmoid")),
            rng,
        )
        return cls(enc, dec, circuit, cfg)

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, np.ndarray, AeTrace]:
        raw, enc_trace = self.encoder.forward(x, train=train, rng=rng)
        theta = self.angle_factor * raw
        _, z = quantum_forward_batch(self.circuit, theta)
        xhat, dec_trace = self.decoder.forward(z, train=train, rng=rng)
        return xhat, z, AeTrace(enc_trace, dec_trace, theta, z, xhat)

    def backward(
        self,
        trace: AeTrace,
        d_xhat: np.ndarray,
        d_z: np.ndarray | None = None,
    ) -> list[np.ndarray]:
        """Gradients for d(loss)/d(xhat) plus an optional direct
        bottleneck term; aligned with parameters()."""
        dec_grads, d_bottleneck = self.decoder.backward(trace.dec_trace, d_xhat)
        if d_z is not None:
            d_bottleneck = d_bottleneck + d_z
        jac = expectation_jacobian_batch(self.circuit, trace.theta)
        d_theta = np.einsum("bj,bjk->bk", d_bottleneck, jac)
        enc_grads, _ = self.encoder.backward(trace.enc_trace, self.angle_factor * d_theta)
        return enc_grads + dec_grads

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)[0]

    def reconstruction_errors(self, x: np.ndarray) -> np.ndarray:
        """Per-row mean squared reconstruction error, eval mode."""
        x = np.asarray(x, dtype=np.float64)
        return np.mean((self.reconstruct(x) - x) ** 2, axis=1)


@dataclass
class TrainedModel:
    """Everything needed to predict on new data and to persist a run."""

    kind: str
    config: ModelConfig
    input_dim: int
    scaler: MinMaxScaler
    target_min: float
    target_max: float
    explainer: TabularExplainer
    qnn: HybridQnn | None = None
    evaluator: Mlp | None = None
    generator: Mlp | None = None
    discriminator: Mlp | None = None
    autoencoder: QuantumAutoencoder | None = None
    pca: PcaBasis | None = None

    def predict(self, x: np.ndarray, seed: int = 0) -> np.ndarray:
        """Point predictions in scaled target space.

        For the self-supervised variant the "prediction" is the
        evaluator output on [x, reconstruction, explanation]; it
        estimates the instance reconstruction error rather than the
        target, so regression metrics against y stay close to chance
        by construction.  The seed fixes the explanation sampling.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "qssl":
            if self.evaluator is None:  # feedback ablated: report the error itself
                return self.autoencoder.reconstruction_errors(x)
            xhat = self.autoencoder.reconstruct(x)
            expl = explain_batch(
                self.explainer,
                self.autoencoder.reconstruction_errors,
                x,
                seed=seed,
            )
            coef = np.stack([e.coefficients for e in expl])
            z = np.concatenate([x, xhat, coef], axis=1)
            return self.evaluator.predict(z)[:, 0]
        return self.qnn.predict(x)

    def arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}

        def add(prefix: str, net: Mlp | None):
            if net is None:
                return
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                out[f"{prefix}.w{i}"] = w
                out[f"{prefix}.b{i}"] = b

        if self.qnn is not None and self.qnn.trunk is not None:
            add("qnn.trunk", self.qnn.trunk)
        add("evaluator", self.evaluator)
        add("generator", self.generator)
        add("discriminator", self.discriminator)
        if self.autoencoder is not None:
            add("encoder", self.autoencoder.encoder)
            add("decoder", self.autoencoder.decoder)
        out["scaler.col_min"] = self.scaler.col_min
        out["scaler.col_max"] = self.scaler.col_max
        out["explainer.means"] = self.explainer.means
        out["explainer.stds"] = self.explainer.stds
        if self.pca is not None:
            out["pca.mean"] = self.pca.mean
            out["pca.components"] = self.pca.components
            out["pca.evr"] = self.pca.explained_variance_ratio
        return out


def _mlp_from_arrays(spec: MlpSpec, arrays: dict, prefix: str) -> Mlp:
    weights, biases = [], []
    for i in range(spec.n_layers):
        weights.append(arrays[f"{prefix}.w{i}"])
        biases.append(arrays[f"{prefix}.b{i}"])
    return Mlp(spec, weights, biases)


def save_checkpoint(path, model: TrainedModel, run_config: dict) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_kind": model.kind,
        "config": {
            "run": run_config,
            "model": asdict(model.config),
            "input_dim": model.input_dim,
            "target_min": model.target_min,
            "target_max": model.target_max,
            "explainer": {
                "n_samples": model.explainer.n_samples,
                "kernel_width": model.explainer.kernel_width,
            },
        },
        "arrays": {k: jsonio.encode_array(v) for k, v in sorted(model.arrays().items())},
    }
    with open(path, "w") as fh:
        fh.write(jsonio.dumps(doc))


def load_checkpoint(path) -> tuple[TrainedModel, dict]:
    import json as _json

    with open(path) as fh:
        doc = _json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {version!r} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    kind = doc["model_kind"]
    if kind not in MODEL_KINDS:
        raise CheckpointVersionError(f"unknown model kind {kind!r}")
    cfg_doc = doc["config"]
    cfg = ModelConfig(**cfg_doc["model"])
    arrays = {k: jsonio.decode_array(v) for k, v in doc["arrays"].items()}
    input_dim = int(cfg_doc["input_dim"])
    scaler = MinMaxScaler(arrays.pop("scaler.col_min"), arrays.pop("scaler.col_max"))
    explainer = TabularExplainer(
        means=arrays.pop("explainer.means"),
        stds=arrays.pop("explainer.stds"),
        n_samples=int(cfg_doc["explainer"]["n_samples"]),
        kernel_width=cfg_doc["explainer"]["kernel_width"],
    )
    pca = None
    if "pca.mean" in arrays:
        pca = PcaBasis(
            mean=arrays.pop("pca.mean"),
            components=arrays.pop("pca.components"),
            explained_variance_ratio=arrays.pop("pca.evr"),
        )

    model = TrainedModel(
        kind=kind,
        config=cfg,
        input_dim=input_dim,
        scaler=scaler,
        target_min=float(cfg_doc["target_min"]),
        target_max=float(cfg_doc["target_max"]),
        explainer=explainer,
        pca=pca,
    )
    circuit = CircuitSpec(n_qubits=cfg.n_qubits, entangler=cfg.entangler)
    if kind == "qssl":
        enc_spec = MlpSpec((input_dim, 32, 16, circuit.n_params), ("relu", "relu", "relu"))
        dec_spec = MlpSpec((circuit.n_qubits, 16, 32, input_dim), ("relu", "relu", "sigmoid"))
        model.autoencoder = QuantumAutoencoder(
            _mlp_from_arrays(enc_spec, arrays, "encoder"),
            _mlp_from_arrays(dec_spec, arrays, "decoder"),
            circuit,
            cfg,
        )
        eval_spec = MlpSpec((3 * input_dim, 32, 16, 1), ("relu", "relu", "identity"))
        model.evaluator = _mlp_from_arrays(eval_spec, arrays, "evaluator")
    else:
        if cfg.ablation == "no_classical":
            model.qnn = HybridQnn(None, circuit, cfg)
        else:
            trunk_spec = MlpSpec(
                (input_dim, *TRUNK_HIDDEN, circuit.n_params),
                ("relu",) * 5,
                TRUNK_DROPOUT,
            )
            model.qnn = HybridQnn(_mlp_from_arrays(trunk_spec, arrays, "qnn.trunk"), circuit, cfg)
        if "evaluator.w0" in arrays:  # absent when feedback is ablated
            eval_spec = MlpSpec((2 * input_dim + 1, 32, 16, 1), ("relu", "relu", "identity"))
            model.evaluator = _mlp_from_arrays(eval_spec, arrays, "evaluator")
        if kind in ("qgan1", "qgan2"):
            joint = input_dim if cfg.features_only else input_dim + 1
            gen_spec = MlpSpec((cfg.latent_dim, 64, 32, joint), ("relu", "relu", "sigmoid"))
            dis_spec = MlpSpec((joint, 64, 32, 1), ("relu", "relu", "sigmoid"))
            model.generator = _mlp_from_arrays(gen_spec, arrays, "generator")
            model.discriminator = _mlp_from_arrays(dis_spec, arrays, "discriminator")
    return model, cfg_doc.get("run", {})
