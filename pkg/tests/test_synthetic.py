import os
import pytest
import numpy as np

from src.core.errors import ConfigError
from src.core.models import SyntheticConfig, FitConfig
from src.storage import read_csv_rows
from src.synthetic import (derive_seed, generate_lowrank_weight, generate_dataset, run_cell, run_recovery,
                           RECOVERY_FIELDS)
from src.trl import TRLayer, unfold


def small_config(**overrides):
    params = dict(n_samples=1200, noise_sigmas=[0.05], seeds=[0, 1, 2], record_timing=False)
    params.update(overrides)
    return SyntheticConfig(**params)


ALS = FitConfig(optimizer="als", epochs=25)


def test_seed_streams_are_distinct():
    assert derive_seed(0, 0) != derive_seed(0, 1)
    assert derive_seed(0, 0) != derive_seed(1, 0)
    assert derive_seed(4, 2) == derive_seed(4, 2)


def test_lowrank_weight_is_deterministic_and_normalized():
    cfg = SyntheticConfig()
    W1, gen = generate_lowrank_weight(cfg, 0)
    W2, _ = generate_lowrank_weight(cfg, 0)
    W3, _ = generate_lowrank_weight(cfg, 1)
    assert W1.shape == (81, 81)
    assert np.array_equal(W1, W2)
    assert not np.allclose(W1, W3)
    assert np.sqrt(np.mean(W1 ** 2)) == pytest.approx(1.0)
    layer = TRLayer(cfg.input_dims, cfg.output_dims, gen)
    assert np.allclose(unfold(layer).T, W1, atol=1e-12)


def test_rank_one_generator_gives_rank_one_matrix():
    W, _ = generate_lowrank_weight(SyntheticConfig(gen_rank=1), 3)
    assert np.linalg.matrix_rank(W, tol=1e-8 * np.abs(W).max()) == 1


def test_matrix_generator_rank():
    W, gen = generate_lowrank_weight(SyntheticConfig(generator="matrix", gen_rank=3), 0)
    assert gen is None
    assert np.linalg.matrix_rank(W) == 3


def test_dataset_statistics():
    cfg = SyntheticConfig()
    W, _ = generate_lowrank_weight(cfg, 0)
    X, Y = generate_dataset(W, cfg, 0.0, 0)
    assert X.shape == (3200, 81) and Y.shape == (3200, 81)
    assert np.allclose(Y, X @ W.T, atol=1e-12)
    assert 0.45 <= np.var(X) <= 0.55

    _, Yn = generate_dataset(W, cfg, 0.2, 0)
    assert np.std(Yn - X @ W.T) == pytest.approx(0.2, rel=0.1)
    with pytest.raises(ValueError):
        generate_dataset(W, cfg, -0.1, 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticConfig(noise_sigmas=[-1.0]).validate()
    with pytest.raises(ConfigError):
        SyntheticConfig(models=["linear", "cp"]).validate()
    with pytest.raises(ConfigError):
        SyntheticConfig(generator="cube").validate()


def test_recovery_tr_beats_linear():
    report = run_recovery(small_config(n_samples=3200, seeds=[0, 1, 2, 3, 4]), ALS)
    assert len(report.rows) == 5 * 3
    assert report.median("tr", 0.05) <= 0.12
    assert report.wins("tr", "linear", 0.05) >= 3
    assert report.params("tr") == 216
    assert report.params("tt") == 180
    assert report.params("linear") == 6561
    assert not report.failures


def test_noise_sweep_tr_curve_below_linear_and_tt():
    sigmas = [0.01, 0.05, 0.1, 0.2, 0.3]
    report = run_recovery(small_config(n_samples=400, noise_sigmas=sigmas), FitConfig(optimizer="als", epochs=40))
    assert not report.failures
    for sigma in sigmas:
        assert report.median("tr", sigma) < report.median("linear", sigma)
        assert report.median("tr", sigma) < report.median("tt", sigma)
        assert report.wins("tt", "tr", sigma) == 0


def test_recovery_grid_order():
    report = run_recovery(small_config(noise_sigmas=[0.01, 0.1], seeds=[0, 1], models=["tr", "linear"]), ALS)
    keys = [(r["sigma"], r["seed"], r["model"]) for r in report.rows]
    assert keys == [(0.01, 0, "linear"), (0.01, 0, "tr"), (0.01, 1, "linear"), (0.01, 1, "tr"),
                    (0.1, 0, "linear"), (0.1, 0, "tr"), (0.1, 1, "linear"), (0.1, 1, "tr")]


def test_recovery_files_are_bit_exact(tmp_path):
    cfg = small_config(models=["linear", "tr"], seeds=[0, 1])
    a = run_recovery(cfg, ALS)
    b = run_recovery(cfg, ALS)
    a.write(str(tmp_path / "a"))
    b.write(str(tmp_path / "b"))
    for name in ("recovery.csv", "summary.txt", os.path.join("heatmaps", "tr_sigma0.05.csv")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_csv_rows(str(tmp_path / "a" / "recovery.csv"))
    assert list(rows[0].keys()) == RECOVERY_FIELDS
    assert all(r["wall_ms"] == "0" for r in rows)


def test_parallel_matches_serial():
    cfg = small_config(models=["linear", "tr"], seeds=[0, 1])
    serial = run_recovery(cfg, ALS, jobs=1)
    parallel = run_recovery(cfg, ALS, jobs=2)
    assert serial.rows == parallel.rows


def test_heatmaps_match_truth_range(tmp_path):
    cfg = small_config(n_samples=3200, models=["tr"], seeds=[0])
    report = run_recovery(cfg, ALS)
    truth, fitted = report.heatmaps["truth"], report.heatmaps["tr_sigma0.05"]
    assert fitted.shape == truth.shape == (81, 81)
    assert abs(fitted).max() <= 3 * abs(truth).max()
    report.write(str(tmp_path))
    grid = np.loadtxt(str(tmp_path / "heatmaps" / "truth.csv"), delimiter=",")
    assert np.array_equal(grid, truth)


def test_divergent_cells_are_recorded():
    cfg = small_config(models=["linear"], seeds=[0, 1])
    report = run_recovery(cfg, FitConfig(optimizer="sgd", learning_rate=1e6, epochs=20))
    assert len(report.rows) == 2
    assert len(report.failures) == 2
    assert all(r["rmse"] == "" for r in report.rows)
    assert "failed cells: 2" in report.summary_text()


def test_single_cell_keeps_weight():
    res = run_cell(small_config(), ALS, "linear", 0.05, 0, keep_weight=True)
    assert res.error is None
    assert res.weight.shape == (81, 81)
    assert res.row["params"] == 6561
