"""Dense statevector simulator for the rotation-plus-ring circuits.

The circuit family is small and fixed: an optional CNOT ring, one Ry
and one Rx rotation per qubit, an optional CNOT ring, and a Pauli-Z
average readout H = (1/n) * sum_j Z_j.  Qubit 0 is the least
significant bit of the basis-state index, so |q1 q0> = |01> has
amplitude index 1.  States are complex128 vectors of length 2**n and
every gate is applied by reshaping the state into a rank-n tensor and
contracting the target axis, which keeps the cost at O(2**n) per gate.

Gradients use the parameter-shift rule with shift pi/2, which is exact
for rotation gates: d<H>/d(theta_k) = (f(theta_k + pi/2) -
f(theta_k - pi/2)) / 2.  Shifted circuits are evaluated fresh, no state
is cached across shifts.

Angle layout: theta has length 2*n with the Ry angle for qubit j at
index 2*j and the Rx angle at 2*j + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParamCountMismatch, QubitOutOfRange

__all__ = [
    "CircuitSpec",
    "apply_ry",
    "apply_rx",
    "apply_cnot_ring",
    "run_circuit",
    "z_expectations",
    "expect_h",
    "param_shift_grad",
    "quantum_forward_batch",
    "expectation_jacobian_batch",
    "circuit_eval_count",
    "reset_circuit_eval_count",
]

ENTANGLERS = ("none", "ring_before", "ring_after")

# Counts individual circuit evaluations (one per parameter row).  Used
# by tests to prove that the no-quantum ablation never touches the
# simulator.  Single-threaded by design.
_eval_count = 0


def circuit_eval_count() -> int:
    return _eval_count


def reset_circuit_eval_count() -> None:
    global _eval_count
    _eval_count = 0


@dataclass(frozen=True)
class CircuitSpec:
    """Immutable circuit description: width and entangler placement."""

    n_qubits: int = 4
    entangler: str = "none"

    def __post_init__(self):
        if not 1 <= self.n_qubits <= 20:
            raise ValueError(f"n_qubits must be in [1, 20], got {self.n_qubits}")
        if self.entangler not in ENTANGLERS:
            raise ValueError(f"unknown entangler {self.entangler!r}")

    @property
    def n_params(self) -> int:
        return 2 * self.n_qubits


def _n_qubits_of(state: np.ndarray) -> int:
    n = int(np.log2(state.shape[-1]) + 0.5)
    if 2**n != state.shape[-1]:
        raise ValueError("state length is not a power of two")
    return n


def _ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def _rx_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def _apply_single(state: np.ndarray, mat: np.ndarray, qubit: int) -> np.ndarray:
    """Contract a 2x2 matrix into one qubit axis of a single state."""
    n = _n_qubits_of(state)
    if not 0 <= qubit < n:
        raise QubitOutOfRange(f"qubit {qubit} outside [0, {n})")
    # Qubit j is the j-th least significant bit, i.e. axis n-1-j after
    # reshaping; equivalently split the flat index as (high, bit, low).
    lo = 2**qubit
    hi = 2 ** (n - 1 - qubit)
    work = state.reshape(hi, 2, lo)
    out = np.einsum("st,htl->hsl", mat, work)
    return np.ascontiguousarray(out).reshape(-1)


def apply_ry(state: np.ndarray, qubit: int, theta: float) -> np.ndarray:
    """Apply Ry(theta) = [[cos t/2, -sin t/2], [sin t/2, cos t/2]]."""
    return _apply_single(state, _ry_matrix(theta), qubit)


def apply_rx(state: np.ndarray, qubit: int, theta: float) -> np.ndarray:
    """Apply Rx(theta) = [[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]]."""
    return _apply_single(state, _rx_matrix(theta), qubit)


def _apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    n = _n_qubits_of(state)
    work = state.reshape([2] * n).copy()
    ac, at = n - 1 - control, n - 1 - target
    sel0 = [slice(None)] * n
    sel1 = [slice(None)] * n
    sel0[ac], sel0[at] = 1, 0
    sel1[ac], sel1[at] = 1, 1
    tmp = work[tuple(sel0)].copy()
    work[tuple(sel0)] = work[tuple(sel1)]
    work[tuple(sel1)] = tmp
    return work.reshape(-1)


def apply_cnot_ring(state: np.ndarray) -> np.ndarray:
    """Apply CNOT(0->1), CNOT(1->2), ..., CNOT(n-1->0) in that order.

    On a single qubit the ring is the identity by convention; callers
    that care (the CLI config echo) flag it instead of erroring.
    """
    n = _n_qubits_of(state)
    if n == 1:
        return state.copy()
    for c in range(n):
        state = _apply_cnot(state, c, (c + 1) % n)
    return state


def _count(rows: int) -> None:
    global _eval_count
    _eval_count += rows


def run_circuit(spec: CircuitSpec, theta: np.ndarray) -> np.ndarray:
    """Prepare |0...0>, entangle/rotate per spec, return the state."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != spec.n_params:
        raise ParamCountMismatch(
            f"expected {spec.n_params} angles, got {theta.shape[0]}"
        )
    _count(1)
    state = np.zeros(2**spec.n_qubits, dtype=np.complex128)
    state[0] = 1.0
    if spec.entangler == "ring_before":
        state = apply_cnot_ring(state)
    for j in range(spec.n_qubits):
        state = apply_ry(state, j, theta[2 * j])
        state = apply_rx(state, j, theta[2 * j + 1])
    if spec.entangler == "ring_after":
        state = apply_cnot_ring(state)
    return state


def z_expectations(state: np.ndarray) -> np.ndarray:
    """Per-qubit <Z_j>, length n, each in [-1, 1]."""
    n = _n_qubits_of(state)
    probs = np.abs(state) ** 2
    tensor = probs.reshape([2] * n)
    out = np.empty(n)
    for j in range(n):
        axes = tuple(a for a in range(n) if a != n - 1 - j)
        marg = tensor.sum(axis=axes)
        out[j] = marg[0] - marg[1]
    return out


def expect_h(state: np.ndarray) -> float:
    """<H> for H = (1/n) * sum_j Z_j; the mean of per-qubit <Z_j>."""
    return float(z_expectations(state).mean())


def _f(spec: CircuitSpec, theta: np.ndarray) -> float:
    return expect_h(run_circuit(spec, theta))


def param_shift_grad(spec: CircuitSpec, theta: np.ndarray) -> np.ndarray:
    """Exact gradient of expect_h(run_circuit(spec, .)) at theta.

    Each component costs two fresh circuit evaluations at +-pi/2.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != spec.n_params:
        raise ParamCountMismatch(
            f"expected {spec.n_params} angles, got {theta.shape[0]}"
        )
    grad = np.empty_like(theta)
    for k in range(theta.shape[0]):
        shift = np.zeros_like(theta)
        shift[k] = np.pi / 2.0
        grad[k] = (_f(spec, theta + shift) - _f(spec, theta - shift)) / 2.0
    return grad


# --- batched path -----------------------------------------------------
#
# Training evaluates thousands of parameter rows per step (forward
# passes, explanation perturbations, shifted circuits), so the batched
# implementation vectorises over rows with einsum.  It is written
# independently of the single-state path above; tests cross-check the
# two against each other.


def _rot_mats_batch(angles: np.ndarray, kind: str) -> np.ndarray:
    c, s = np.cos(angles / 2.0), np.sin(angles / 2.0)
    mats = np.empty((angles.shape[0], 2, 2), dtype=np.complex128)
    if kind == "ry":
        mats[:, 0, 0] = c
        mats[:, 0, 1] = -s
        mats[:, 1, 0] = s
        mats[:, 1, 1] = c
    else:
        mats[:, 0, 0] = c
        mats[:, 0, 1] = -1j * s
        mats[:, 1, 0] = -1j * s
        mats[:, 1, 1] = c
    return mats


def _apply_single_batch(amps: np.ndarray, mats: np.ndarray, qubit: int, n: int):
    b = amps.shape[0]
    lo = 2**qubit
    hi = 2 ** (n - 1 - qubit)
    work = amps.reshape(b, hi, 2, lo)
    out = np.einsum("bst,bhtl->bhsl", mats, work)
    return np.ascontiguousarray(out).reshape(b, -1)


def _apply_cnot_ring_batch(amps: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return amps
    b = amps.shape[0]
    for c in range(n):
        t = (c + 1) % n
        work = amps.reshape([b] + [2] * n).copy()
        ac, at = n - c, n - t  # +1 axis offset for the batch dimension
        sel0 = [slice(None)] * (n + 1)
        sel1 = [slice(None)] * (n + 1)
        sel0[ac], sel0[at] = 1, 0
        sel1[ac], sel1[at] = 1, 1
        tmp = work[tuple(sel0)].copy()
        work[tuple(sel0)] = work[tuple(sel1)]
        work[tuple(sel1)] = tmp
        amps = work.reshape(b, -1)
    return amps


def quantum_forward_batch(
    spec: CircuitSpec, thetas: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Run one circuit per row of thetas (B, 2n).

    Returns (q, z) where q is the length-B vector of <H> values and z
    the (B, n) matrix of per-qubit <Z_j>.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != spec.n_params:
        raise ParamCountMismatch(
            f"expected shape (B, {spec.n_params}), got {thetas.shape}"
        )
    b, n = thetas.shape[0], spec.n_qubits
    if b == 0:
        return np.empty(0), np.empty((0, n))
    _count(b)
    amps = np.zeros((b, 2**n), dtype=np.complex128)
    amps[:, 0] = 1.0
    if spec.entangler == "ring_before":
        amps = _apply_cnot_ring_batch(amps, n)
    for j in range(n):
        amps = _apply_single_batch(amps, _rot_mats_batch(thetas[:, 2 * j], "ry"), j, n)
        amps = _apply_single_batch(amps, _rot_mats_batch(thetas[:, 2 * j + 1], "rx"), j, n)
    if spec.entangler == "ring_after":
        amps = _apply_cnot_ring_batch(amps, n)
    probs = np.abs(amps) ** 2
    tensor = probs.reshape([b] + [2] * n)
    z = np.empty((b, n))
    for j in range(n):
        axes = tuple(a for a in range(1, n + 1) if a != n - j)
        marg = tensor.sum(axis=axes)
        z[:, j] = marg[:, 0] - marg[:, 1]
    return z.mean(axis=1), z


def expectation_jacobian_batch(spec: CircuitSpec, thetas: np.ndarray) -> np.ndarray:
    """Parameter-shift Jacobian d<Z_j>/d(theta_k) for each row.

    Returns shape (B, n, 2n).  All 4n shifted circuits per row are
    evaluated in one batched call; d<H>/d(theta) is the mean over j.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    b, p = thetas.shape
    n = spec.n_qubits
    if p != spec.n_params:
        raise ParamCountMismatch(f"expected {spec.n_params} angles, got {p}")
    if b == 0:
        return np.empty((0, n, p))
    shifts = (np.pi / 2.0) * np.eye(p)
    # Layout: (B, 2, p, p) -> rows grouped as [+shift_k, -shift_k].
    stacked = np.empty((b, 2, p, p))
    stacked[:, 0] = thetas[:, None, :] + shifts[None, :, :]
    stacked[:, 1] = thetas[:, None, :] - shifts[None, :, :]
    _, z = quantum_forward_batch(spec, stacked.reshape(-1, p))
    z = z.reshape(b, 2, p, n)
    jac = (z[:, 0] - z[:, 1]) / 2.0  # (B, p, n)
    return np.swapaxes(jac, 1, 2)
