import csv
import pytest
import numpy as np

from src.core.errors import ShapeError, ConfigError, FitDivergenceError
from src.core.models import FitConfig, SyntheticConfig, GradCheckConfig
from src.gradcheck import check_linear, check_layer
from src.synthetic import generate_lowrank_weight, generate_dataset
from src.training import (mse_loss, rmse_matrix, grad_check, SGD, Adam, make_optimizer, fit_model,
                          solve_normal_equations, write_loss_trace)
from src.trl import TRLayer

DIMS = (3, 3, 3, 3)


@pytest.fixture(scope="module")
def noiseless():
    cfg = SyntheticConfig()
    W, _ = generate_lowrank_weight(cfg, 0)
    X, Y = generate_dataset(W, cfg, 0.0, 0)
    return W, X, Y


def test_mse_and_rmse():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse_loss([0.0, 0.0], [1.0, 3.0]) == pytest.approx(5.0)
    A = np.zeros((2, 2))
    assert rmse_matrix(A + 0.09, A) == pytest.approx(0.09)
    with pytest.raises(ShapeError):
        rmse_matrix(np.zeros((2, 3)), np.zeros((3, 2)))


def test_rmse_against_loop(rng):
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    total = sum((A[i, j] - B[i, j]) ** 2 for i in range(3) for j in range(3))
    assert rmse_matrix(A, B) == pytest.approx(np.sqrt(total / 9.0), rel=1e-12)


def test_grad_check_linear_map():
    rep = check_linear(GradCheckConfig(), seed=0)
    assert rep.passed
    assert rep.max_error < 1e-8


def test_grad_check_flags_corrupted_gradient():
    layer = TRLayer.random([2, 2], [2], 2, seed=1, target_variance=1.0)
    rep = check_layer(layer, GradCheckConfig(), seed=0, corrupt=True)
    assert not rep.passed
    assert rep.worst == "core0"
    assert "FAIL" in rep.summary()


def test_grad_check_eps_range():
    params = {"w": np.ones(2)}
    loss = lambda p: float(np.sum(p["w"] ** 2))
    with pytest.raises(ConfigError):
        grad_check(loss, params, {"w": 2 * np.ones(2)}, eps=1e-2)
    with pytest.raises(ConfigError):
        grad_check(loss, params, {"w": 2 * np.ones(2)}, eps=1e-9)
    assert grad_check(loss, params, {"w": 2 * np.ones(2)}, eps=1e-4).passed


def test_grad_check_catches_single_wrong_scalar():
    params = {"w": np.zeros((20, 20))}
    loss = lambda p: float(np.sum(p["w"]))
    analytic = np.ones((20, 20))
    analytic[3, 7] += 1e-2
    rep = grad_check(loss, params, {"w": analytic}, eps=1e-5, tol=1e-3)
    assert rep.errors["w"] < 1e-3
    assert rep.scalar_errors["w"] > 1e-3
    assert not rep.passed
    assert rep.worst_scalar == ("w", (3, 7))
    assert "[3, 7]" in rep.summary()


def test_sgd_and_adam_steps():
    p, g = np.array([1.0, -1.0]), np.array([0.5, -2.0])
    assert np.allclose(SGD(0.1).update(p, g), [0.95, -0.8])
    # First bias-corrected Adam step moves every entry by ~lr against the gradient sign.
    out = Adam(0.01).update(p, g)
    assert np.allclose(out, p - 0.01 * np.sign(g), atol=1e-6)
    assert isinstance(make_optimizer(FitConfig(optimizer="sgd")), SGD)
    with pytest.raises(ConfigError):
        make_optimizer(FitConfig(optimizer="als"))


def test_fit_config_validation():
    with pytest.raises(ConfigError):
        FitConfig(optimizer="lbfgs").validate()
    with pytest.raises(ConfigError):
        FitConfig(learning_rate=0.0).validate()
    with pytest.raises(ConfigError):
        FitConfig(epochs=0).validate()


def test_linear_sgd_recovers_noiseless_weight(noiseless):
    W, X, Y = noiseless
    res = fit_model("linear", X, Y, FitConfig(optimizer="sgd", learning_rate=10.0, epochs=300), record_timing=False)
    assert res.weight.shape == W.shape
    assert rmse_matrix(res.weight, W) <= 1e-3
    assert rmse_matrix(res.weight, solve_normal_equations(X, Y)) <= 1e-3
    assert res.params == 6561


def test_linear_sgd_loss_is_monotone(noiseless):
    _, X, Y = noiseless
    res = fit_model("linear", X, Y, FitConfig(optimizer="sgd", learning_rate=10.0, epochs=50), record_timing=False)
    losses = [row["loss"] for row in res.trace]
    assert len(losses) == 50
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_linear_normal_equations(noiseless):
    W, X, Y = noiseless
    res = fit_model("linear", X, Y, FitConfig(optimizer="als", epochs=5))
    assert res.epochs == 1
    assert rmse_matrix(res.weight, W) < 1e-10


def test_minibatch_fit_reduces_loss(noiseless):
    _, X, Y = noiseless
    res = fit_model("linear", X, Y, FitConfig(optimizer="sgd", learning_rate=1.0, epochs=5, batch_size=400), record_timing=False)
    assert res.trace[-1]["loss"] < res.trace[0]["loss"]


def test_fit_is_deterministic(noiseless):
    _, X, Y = noiseless
    cfg = FitConfig(optimizer="adam", epochs=20, seed=3)
    a = fit_model("tr", X, Y, cfg, rank=3, input_dims=DIMS, output_dims=DIMS, record_timing=False)
    b = fit_model("tr", X, Y, cfg, rank=3, input_dims=DIMS, output_dims=DIMS, record_timing=False)
    assert a.trace == b.trace
    assert np.array_equal(a.weight, b.weight)


def test_adam_ring_fit_decreases_loss(noiseless):
    _, X, Y = noiseless
    res = fit_model("tr", X, Y, FitConfig(optimizer="adam", epochs=60, seed=1), rank=3,
                    input_dims=DIMS, output_dims=DIMS, record_timing=False)
    assert res.trace[-1]["loss"] < res.trace[0]["loss"]
    assert res.params == 216


def test_ring_fit_recovers_noiseless_weight(noiseless):
    W, X, Y = noiseless
    errors = []
    for seed in range(5):
        res = fit_model("tr", X, Y, FitConfig(optimizer="als", epochs=30, seed=seed), rank=3,
                        input_dims=DIMS, output_dims=DIMS, record_timing=False)
        errors.append(rmse_matrix(res.weight, W))
    assert np.median(errors) <= 0.02


def test_ring_beats_train_at_matched_rank(noiseless):
    _, X, Y = noiseless
    wins = 0
    for seed in range(5):
        cfg = FitConfig(optimizer="als", epochs=30, seed=seed)
        tr = fit_model("tr", X, Y, cfg, rank=3, input_dims=DIMS, output_dims=DIMS, record_timing=False)
        tt = fit_model("tt", X, Y, cfg, rank=3, input_dims=DIMS, output_dims=DIMS, record_timing=False)
        assert tt.params == 180
        wins += tr.final_loss < tt.final_loss
    assert wins >= 4


def test_divergence_is_raised(noiseless):
    _, X, Y = noiseless
    with pytest.raises(FitDivergenceError) as exc:
        fit_model("linear", X, Y, FitConfig(optimizer="sgd", learning_rate=1e6, epochs=50))
    assert exc.value.epoch >= 1


def test_fit_rejects_bad_shapes(noiseless):
    _, X, Y = noiseless
    with pytest.raises(ShapeError):
        fit_model("tr", X, Y, FitConfig(epochs=1), input_dims=(3, 3), output_dims=DIMS)
    with pytest.raises(ShapeError):
        fit_model("linear", X, Y[:10], FitConfig(epochs=1))
    with pytest.raises(ConfigError):
        fit_model("cp", X, Y, FitConfig(epochs=1))


def test_loss_trace_csv(noiseless, tmp_path):
    _, X, Y = noiseless
    res = fit_model("linear", X, Y, FitConfig(optimizer="sgd", learning_rate=10.0, epochs=3), record_timing=False)
    path = write_loss_trace(str(tmp_path / "trace.csv"), res.trace)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["epoch"] for r in rows] == ["1", "2", "3"]
    assert all(float(r["wall_ms"]) == 0.0 for r in rows)
