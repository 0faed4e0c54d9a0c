"""Minimal dense-network engine: forward traces, manual backprop, Adam.

Everything is float64 numpy.  A network is a stack of affine layers
with per-layer activations (relu, sigmoid or identity) and optional
inverted dropout after selected layers: surviving activations are
scaled by 1/(1-p) at train time so eval mode needs no rescaling and
consumes no randomness.  forward() returns the output together with a
ForwardTrace capturing exactly what backward() needs to replay the
chain rule; gradients are exact, which the tests verify against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, TraceMismatch

__all__ = ["MlpSpec", "Mlp", "ForwardTrace", "Adam", "mse_loss", "bce_loss"]

_ACTIVATIONS = ("relu", "sigmoid", "identity")
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description.

    layer_dims has n+1 entries for n layers; activations and dropout
    have one entry per layer, dropout giving the rate applied to that
    layer's output (0 disables it).
    """

    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]
    dropout: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ValueError(f"bad layer_dims {self.layer_dims}")
        if len(self.activations) != self.n_layers:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if not self.dropout:
            object.__setattr__(self, "dropout", (0.0,) * self.n_layers)
        if len(self.dropout) != self.n_layers:
            raise ValueError("need one dropout rate per layer")
        if any(not 0.0 <= p < 1.0 for p in self.dropout):
            raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class ForwardTrace:
    """Intermediates of one forward pass, consumed by Mlp.backward."""

    owner: object
    train: bool
    inputs: list = field(default_factory=list)  # layer inputs
    preacts: list = field(default_factory=list)  # pre-activation values
    acts: list = field(default_factory=list)  # post-activation, pre-mask
    masks: list = field(default_factory=list)  # scaled dropout masks or None
    output: np.ndarray | None = None


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return expit(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class Mlp:
    """Dense network; weights (out, in) rows act on column features."""

    def __init__(self, spec: MlpSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        """Glorot-uniform weights on +-sqrt(6/(fan_in+fan_out)), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list [w0, b0, w1, b1, ...]; arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, ForwardTrace]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.layer_dims[0]:
            raise DimensionMismatch(
                f"expected (B, {self.spec.layer_dims[0]}) input, got {x.shape}"
            )
        trace = ForwardTrace(owner=self, train=train)
        a = x
        for i in range(self.spec.n_layers):
            z = a @ self.weights[i].T + self.biases[i]
            act = _act(self.spec.activations[i], z)
            p = self.spec.dropout[i]
            if train and p > 0.0:
                if rng is None:
                    raise ValueError("train-mode forward with dropout needs an rng")
                mask = (rng.random(act.shape) >= p) / (1.0 - p)
                out = act * mask
            else:
                mask = None
                out = act
            trace.inputs.append(a)
            trace.preacts.append(z)
            trace.acts.append(act)
            trace.masks.append(mask)
            a = out
        trace.output = a
        return a, trace

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode forward, output only."""
        return self.forward(x, train=False)[0]

    def backward(
        self, trace: ForwardTrace, d_out: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Backpropagate d(loss)/d(output); return (grads, d(input)).

        grads aligns with parameters().  No implicit averaging happens
        here, the loss gradient carries whatever normalisation the loss
        used.
        """
        if trace.owner is not self:
            raise TraceMismatch("trace was produced by a different network")
        if len(trace.inputs) != self.spec.n_layers:
            raise TraceMismatch("trace layer count does not match network")
        d_a = np.asarray(d_out, dtype=np.float64)
        grads: list[np.ndarray] = [None] * (2 * self.spec.n_layers)
        for i in reversed(range(self.spec.n_layers)):
            if trace.masks[i] is not None:
                d_a = d_a * trace.masks[i]
            d_z = d_a * _act_grad(
                self.spec.activations[i], trace.preacts[i], trace.acts[i]
            )
            grads[2 * i] = d_z.T @ trace.inputs[i]
            grads[2 * i + 1] = d_z.sum(axis=0)
            d_a = d_z @ self.weights[i]
        return grads, d_a


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient wrt pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def bce_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].

    The clamp is treated as the identity for the gradient; inputs that
    sit at the clamp boundary get the boundary gradient, which keeps
    saturated discriminator outputs finite.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    return float(loss), grad


class Adam:
    """Bias-corrected Adam (beta1=0.9, beta2=0.999, eps=1e-8).

    step() updates the parameter arrays in place so they can be the
    live views returned by Mlp.parameters().
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(params) != len(self._m):
            raise DimensionMismatch("parameter list changed size between steps")
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
