"""Release gate: one test per shipped guarantee.

Each test prints a [PASS] line with the measured numbers (visible
under -s), so a green run doubles as a checklist.  The heavy pieces
share module-scoped fixtures: one full-default training run on the
seed-7 synthetic benchmark feeds the end-to-end, ablation, conformal
and importance checks.  Expect a few minutes of wall time; everything
else in the suite is fast.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from qadv.cli import main
from qadv.data import SyntheticSpec, gen_synthetic, kfold, split_stratified
from qadv.evaluation import (
    CONFORMAL_LEVELS,
    calibration,
    conformal,
    cross_validate,
    permutation_importance,
    regression_metrics,
)
from qadv.models import HybridQnn, ModelConfig
from qadv.nn import Mlp, MlpSpec, mse_loss
from qadv.qsim import (
    CircuitSpec,
    apply_cnot_ring,
    apply_rx,
    apply_ry,
    expect_h,
    param_shift_grad,
    run_circuit,
    z_expectations,
)
from qadv.train import TrainConfig, fit_model
from qadv.xai import explain, fit_explainer


def rel_err(a, b):
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return num / den


# ----------------------------------------------------------- shared fixtures


@pytest.fixture(scope="module")
def bench():
    """Seed-7 synthetic benchmark with its stratified 80/20 split."""
    x, y = gen_synthetic(SyntheticSpec(), seed=7)
    split = split_stratified(y, 0.2, seed=7)
    return x, y, split


@pytest.fixture(scope="module")
def full_run(bench):
    """Default-config vanilla training, timed; shared downstream."""
    x, y, split = bench
    t0 = time.perf_counter()
    model, _ = fit_model(x[split.train], y[split.train], TrainConfig(seed=7))
    elapsed = time.perf_counter() - t0
    yhat = model.predict(x[split.test], seed=7)
    metrics = regression_metrics(y[split.test], yhat, y_range=1.0)
    return model, metrics, elapsed


# ------------------------------------------------------------- the criteria


def test_criterion_01_param_shift_matches_finite_differences():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    h = 1e-4
    worst_grad = worst_z = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        spec = CircuitSpec(n_qubits=n)
        theta = rng.uniform(-np.pi, np.pi, size=(n, 2))
        analytic = param_shift_grad(spec, theta)
        fd = np.zeros_like(theta)
        for i in range(n):
            for j in range(2):
                up, dn = theta.copy(), theta.copy()
                up[i, j] += h
                dn[i, j] -= h
                fd[i, j] = (
                    expect_h(run_circuit(spec, up)) - expect_h(run_circuit(spec, dn))
                ) / (2 * h)
        # Gradient comes back flat in circuit order (ry, rx per qubit).
        worst_grad = max(worst_grad, float(np.abs(analytic - fd.reshape(-1)).max()))
        # Product-state readout factorizes per qubit.
        z = z_expectations(run_circuit(spec, theta))
        closed = np.cos(theta[:, 0]) * np.cos(theta[:, 1])
        worst_z = max(worst_z, float(np.abs(z - closed).max()))
    elapsed = time.perf_counter() - t0
    assert worst_grad < 1e-6
    assert worst_z < 1e-10
    assert elapsed < 5.0
    print(
        f"[PASS] criterion 1: param-shift vs FD max|diff|={worst_grad:.2e}, "
        f"<Z> closed form max|diff|={worst_z:.2e}, {elapsed:.2f}s"
    )


def test_criterion_02_gate_sequences_preserve_norm():
    rng = np.random.default_rng(22)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 5))
        amps = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
        state = amps / np.linalg.norm(amps)
        for _ in range(3):
            gate = rng.integers(0, 3)
            if gate == 0:
                state = apply_ry(state, int(rng.integers(0, n)), rng.uniform(-np.pi, np.pi))
            elif gate == 1:
                state = apply_rx(state, int(rng.integers(0, n)), rng.uniform(-np.pi, np.pi))
            else:
                state = apply_cnot_ring(state)
        worst = max(worst, abs(float(np.linalg.norm(state)) - 1.0))
    assert worst < 1e-12
    print(f"[PASS] criterion 2: 10^4 gate sequences, max norm drift {worst:.2e}")


def test_criterion_03_hybrid_gradient_matches_finite_differences():
    """Chain rule through trunk, circuit and sigmoid on a small stack."""
    t0 = time.perf_counter()
    h = 1e-6
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        spec = MlpSpec((5, 7, 4), ("relu", "identity"))
        qnn = HybridQnn(Mlp.init(spec, rng), CircuitSpec(n_qubits=2), ModelConfig(n_qubits=2))
        x = rng.uniform(0.0, 1.0, size=(6, 5))
        y = rng.uniform(0.0, 1.0, size=6)

        yhat, trace = qnn.forward(x)
        _, d_yhat = mse_loss(yhat, y)
        grads = qnn.backward(trace, d_yhat)

        def loss_at():
            return mse_loss(qnn.forward(x)[0], y)[0]

        fd = []
        for p in qnn.parameters():
            g = np.zeros_like(p)
            flat, gf = p.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = loss_at()
                flat[k] = orig - h
                dn = loss_at()
                flat[k] = orig
                gf[k] = (up - dn) / (2 * h)
            fd.append(g)
        err = rel_err(
            np.concatenate([g.ravel() for g in grads]),
            np.concatenate([g.ravel() for g in fd]),
        )
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4
    assert elapsed < 30.0
    print(f"[PASS] criterion 3: hybrid grad vs FD worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_04_backprop_property_random_architectures():
    rng = np.random.default_rng(404)
    h = 1e-6
    worst = 0.0
    for _ in range(25):
        depth = int(rng.integers(1, 4))
        dims = tuple(int(rng.integers(1, 33)) for _ in range(depth + 1))
        acts = tuple(
            str(rng.choice(["relu", "sigmoid", "identity"])) for _ in range(depth)
        )
        net = Mlp.init(MlpSpec(dims, acts), rng)
        x = rng.standard_normal((8, dims[0]))
        y = rng.standard_normal((8, dims[-1]))

        out, trace = net.forward(x)
        _, d_out = mse_loss(out, y)
        grads, _ = net.backward(trace, d_out)

        fd = []
        for p in net.parameters():
            g = np.zeros_like(p)
            flat, gf = p.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = mse_loss(net.predict(x), y)[0]
                flat[k] = orig - h
                dn = mse_loss(net.predict(x), y)[0]
                flat[k] = orig
                gf[k] = (up - dn) / (2 * h)
            fd.append(g)
        err = rel_err(
            np.concatenate([g.ravel() for g in grads]),
            np.concatenate([g.ravel() for g in fd]),
        )
        worst = max(worst, err)
    assert worst < 1e-4
    print(f"[PASS] criterion 4: 25 random MLPs, worst grad rel err {worst:.2e}")


def test_criterion_05_explainer_recovers_affine_maps():
    rng = np.random.default_rng(55)
    x_train = rng.uniform(0.0, 1.0, size=(200, 8))
    explainer = fit_explainer(x_train, n_samples=500)
    worst_coef, worst_r2 = 0.0, 1.0
    for i in range(50):
        w = rng.normal(0.0, 2.0, size=8)
        b = float(rng.normal())
        point = x_train[int(rng.integers(0, 200))]
        e = explain(explainer, lambda z: z @ w + b, point, seed=i)
        worst_coef = max(worst_coef, float(np.linalg.norm(e.coefficients - w)) / float(np.linalg.norm(w)))
        worst_r2 = min(worst_r2, e.local_r2)
    assert worst_coef < 0.02
    assert worst_r2 > 0.999
    print(
        f"[PASS] criterion 5: 50 affine maps, worst coef err {worst_coef:.4f}, "
        f"worst local_r2 {worst_r2:.6f}"
    )


def test_criterion_06_vanilla_end_to_end(full_run):
    _, metrics, elapsed = full_run
    assert elapsed < 300.0
    assert metrics.r2 >= 0.5
    assert metrics.rmse <= 0.30
    print(
        f"[PASS] criterion 6: vanilla synthetic r2={metrics.r2:.4f} "
        f"rmse={metrics.rmse:.4f} in {elapsed:.0f}s"
    )


def test_criterion_07_ablations_no_better_than_full(bench, full_run):
    """Dropping the circuit or the feedback must not help (+0.02 slack)."""
    x, y, split = bench
    _, full_metrics, _ = full_run
    scores = {}
    for ablation in ("no_quantum", "no_feedback"):
        model, _ = fit_model(
            x[split.train], y[split.train], TrainConfig(seed=7, ablation=ablation)
        )
        yhat = model.predict(x[split.test], seed=7)
        scores[ablation] = regression_metrics(y[split.test], yhat, y_range=1.0).r2
    for ablation, r2 in scores.items():
        assert r2 <= full_metrics.r2 + 0.02, f"{ablation} beat the full model"
    print(
        f"[PASS] criterion 7: full r2={full_metrics.r2:.4f} >= "
        f"no_quantum {scores['no_quantum']:.4f}, no_feedback {scores['no_feedback']:.4f} - 0.02"
    )


def test_criterion_08_conformal_coverage(full_run):
    model, _, _ = full_run
    x2, y2 = gen_synthetic(SyntheticSpec(n=1500), seed=99)
    yhat = model.predict(x2, seed=99)
    report = conformal(np.abs(y2[:500] - yhat[:500]), y2[500:], yhat[500:])
    cov90 = report.coverage[CONFORMAL_LEVELS.index(0.9)]
    assert 0.87 <= cov90 <= 0.93
    print(f"[PASS] criterion 8: 90% interval empirical coverage {cov90:.3f} (n_cal=500)")


def test_criterion_09_importance_dominance(bench, full_run):
    x, y, split = bench
    model, _, _ = full_run
    report = permutation_importance(
        lambda a: model.predict(a, seed=0), x[split.test], y[split.test], repeats=10, seed=0
    )
    assert report.means[0] > 0.8
    print(f"[PASS] criterion 9: dominant feature importance {report.means[0]:.3f}")


def test_criterion_10_metric_identities():
    rng = np.random.default_rng(1010)
    y = rng.uniform(0.1, 0.6, size=200)
    m = regression_metrics(y, np.clip(y + rng.normal(0, 0.05, 200), 0, 1), y_range=1.0)
    assert abs(m.rmse**2 - m.mse) < 1e-12
    assert regression_metrics(y, y.copy(), y_range=1.0).r2 == 1.0
    shifted = regression_metrics(y, y + 0.25, y_range=1.0)
    assert shifted.pct_mae == 75.0
    # Brier score from the reliability table is plain MSE in [0,1] space.
    yhat = np.clip(y + rng.normal(0, 0.05, 200), 0, 1)
    assert abs(calibration(y, yhat).brier - regression_metrics(y, yhat, 1.0).mse) < 1e-15
    print("[PASS] criterion 10: rmse^2=mse, perfect r2=1, pct spot value, brier=mse")


def test_criterion_11_cv_partition_and_degenerate_tests():
    rng = np.random.default_rng(1111)
    y50 = rng.uniform(0, 1, 50)
    folds = kfold(50, 3, y50)
    joined = np.concatenate(folds)
    assert len(joined) == 50 and len(np.unique(joined)) == 50
    assert max(len(f) for f in folds) - min(len(f) for f in folds) <= 1

    multiplier = float(stats.t.ppf(0.975, 2))
    assert abs(multiplier - 4.3027) < 1e-3

    x, y = gen_synthetic(SyntheticSpec(n=90), seed=3)
    cfg = TrainConfig(epochs=1, batch_size=16, explain_samples=8, seed=9)
    rep = cross_validate(x, y, cfg, "vanilla", baseline_kind="vanilla", k=3)
    assert all(t["p_t"] == 1.0 and t["p_w"] == 1.0 for t in rep.tests.values())
    vals = np.array([m.mse for m in rep.fold_metrics])
    half = multiplier * vals.std(ddof=1) / math.sqrt(3)
    assert abs(rep.summary["mse"]["ci_upper"] - (vals.mean() + half)) < 1e-12
    print(
        "[PASS] criterion 11: exact 3-fold partition, self-comparison p=1.0, "
        f"t(0.975,2)={multiplier:.6f}"
    )


def test_criterion_12_cli_determinism(tmp_path):
    import json

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 16, "explain_samples": 8,
                               "synthetic_n": 120}))
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        rc = main(["train", "--synthetic", "--seed", "3",
                   "--config", str(cfg), "--out", str(d)])
        assert rc == 0

    def lines(d):
        text = (d / "report.json").read_text()
        return [ln for ln in text.splitlines() if '"timestamp"' not in ln]

    assert lines(dirs[0]) == lines(dirs[1])
    assert (dirs[0] / "checkpoint.json").read_bytes() == (dirs[1] / "checkpoint.json").read_bytes()
    print("[PASS] criterion 12: repeated train runs byte-identical (timestamp aside)")


def test_criterion_13_cli_profile_shape(tmp_path):
    import csv
    import json

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 16, "explain_samples": 8,
                               "synthetic_n": 120}))
    out = tmp_path / "prof"
    rc = main(["profile", "--synthetic", "--seed", "3", "--qubits", "1..4",
               "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    with open(out / "plots" / "profile.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["n_qubits"]) for r in rows] == [1, 2, 3, 4]
    for r in rows:
        assert float(r["latency_ms_mean"]) > 0.0
        for col in ("mse", "rmse", "mae", "r2"):
            assert np.isfinite(float(r[col]))
    print("[PASS] criterion 13: profile emits 4 qubit rows with positive latencies")
