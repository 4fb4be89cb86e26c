import json
import pytest

from src.core.config import AppConfig
from src.core.experiment import ExperimentConfig
from src.core.errors import ConfigError
from src.main import main, build_parser
from src.storage import read_csv_rows


def write_config(tmp_path, doc):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert AppConfig.VERSION in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "synthetic:" in capsys.readouterr().out


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1


def test_unknown_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["compress", "--bogus"])
    assert exc.value.code == 1


def test_compress_ucf11(capsys):
    assert main(["compress", "--plan", "ucf11"]) == 0
    out = capsys.readouterr().out
    assert "ring parameters 1425" in out
    assert "dense parameters 57600 x 256 = 14745600" in out
    assert "compression ratio 10347.79" in out
    assert "1725" in out


def test_compress_cnn_and_overrides(capsys):
    assert main(["compress", "--plan", "cnn"]) == 0
    assert "ring parameters 457728" in capsys.readouterr().out
    assert main(["compress", "--plan", "synthetic", "--ranks", "3"]) == 0
    assert "ring parameters 216" in capsys.readouterr().out
    assert main(["compress", "--plan", "synthetic", "--ranks", "3", "3"]) == 1


def test_compress_layer_section(tmp_path, capsys):
    cfg = write_config(tmp_path, {"layer": {"input_dims": [4, 4], "output_dims": [4], "ranks": [1, 2, 1]}})
    assert main(["compress", "--plan", "synthetic", "--config", cfg]) == 0
    assert "ring parameters 20" in capsys.readouterr().out


def test_unknown_config_key_names_the_key(tmp_path, capsys):
    cfg = write_config(tmp_path, {"fit": {"learning_rte": 0.1}})
    assert main(["gradcheck", "--config", cfg]) == 1
    assert "fit.learning_rte" in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig().apply({"sweeps": {}})
    assert exc.value.key == "sweeps"


def test_missing_config_file(tmp_path):
    assert main(["compress", "--config", str(tmp_path / "absent.json")]) == 1


@pytest.mark.parametrize("doc, key", [
    ({"synthetic": {"noise_sigmas": 0.05}}, "synthetic.noise_sigmas"),
    ({"synthetic": {"input_dims": 81}}, "synthetic.input_dims"),
    ({"fit": {"epochs": "many"}}, "fit.epochs"),
    ({"fit": {"epochs": 2.5}}, "fit.epochs"),
    ({"synthetic": {"fit_ranks": [3, 3]}}, "synthetic.fit_ranks"),
    ({"synthetic": {"models": ["tr", 3]}}, "synthetic.models"),
    ({"sweep": {"values": "2,4,8,16"}}, "sweep.values"),
    ({"synthetic": {"heatmaps": 1}}, "synthetic.heatmaps"),
    ({"layer": {"ranks": 3}}, "layer.ranks"),
])
def test_mistyped_config_value_names_the_key(tmp_path, capsys, doc, key):
    cfg = write_config(tmp_path, doc)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "out"), "--jobs", "1"]) == 1
    assert key in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig().apply(doc)
    assert exc.value.key == key


def test_dataclass_defaults_come_from_app_config():
    exp = ExperimentConfig()
    assert (exp.fit.optimizer, exp.fit.learning_rate, exp.fit.epochs) == (AppConfig.FIT_OPTIMIZER, AppConfig.FIT_LR, AppConfig.FIT_EPOCHS)
    assert (exp.fit.beta1, exp.fit.beta2, exp.fit.epsilon) == AppConfig.FIT_BETAS + (AppConfig.FIT_EPSILON,)
    assert exp.synthetic.input_dims == exp.synthetic.output_dims == AppConfig.SYNTH_DIMS
    assert exp.synthetic.dim_in == 81
    assert (exp.synthetic.n_samples, exp.synthetic.input_variance, exp.synthetic.gen_rank) == (3200, 0.5, 3)
    assert (exp.gradcheck.eps, exp.gradcheck.tol) == (AppConfig.GRAD_EPS, AppConfig.GRAD_TOL)
    assert exp.toytrain.forget_bias == AppConfig.FORGET_BIAS


def test_config_values_are_cast(tmp_path):
    exp = ExperimentConfig.load(write_config(tmp_path, {"fit": {"epochs": 5, "learning_rate": 1},
                                                         "synthetic": {"input_dims": [9, 9]}}))
    assert exp.fit.epochs == 5
    assert isinstance(exp.fit.learning_rate, float)
    assert exp.synthetic.input_dims == (9, 9)


def test_gradcheck_passes_and_echoes_settings(capsys):
    assert main(["gradcheck", "--instances", "3", "--eps", "1e-5", "--tol", "1e-5"]) == 0
    out = capsys.readouterr().out
    assert "eps=1e-05 tol=1e-05" in out
    assert "5/5 passed" in out


def test_gradcheck_corrupted_fails(capsys):
    assert main(["gradcheck", "--instances", "2", "--corrupt"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_rejects_bad_eps():
    assert main(["gradcheck", "--instances", "1", "--eps", "0.1"]) == 1


def test_seed_falls_back_to_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TRNN_SEED", "7")
    assert main(["gradcheck", "--instances", "1"]) == 0
    assert "seed=7" in capsys.readouterr().out
    assert main(["gradcheck", "--instances", "1", "--seed", "3"]) == 0
    assert "seed=3" in capsys.readouterr().out

    cfg = write_config(tmp_path, {"synthetic": {"models": ["linear"], "heatmaps": False}})
    synth = ["synth", "--config", cfg, "--seeds", "2", "--sigma", "0.05", "--optimizer", "als",
             "--samples", "200", "--jobs", "1", "--no-timing"]
    assert main(synth + ["--out", str(tmp_path / "env")]) == 0
    rows = read_csv_rows(str(tmp_path / "env" / "recovery.csv"))
    assert [r["seed"] for r in rows] == ["7", "8"]
    assert main(synth + ["--out", str(tmp_path / "flag"), "--seed", "3"]) == 0
    rows = read_csv_rows(str(tmp_path / "flag" / "recovery.csv"))
    assert [r["seed"] for r in rows] == ["3", "4"]


def test_complexity_writes_csv(tmp_path, capsys):
    assert main(["complexity", "--var", "R", "--out", str(tmp_path), "--jobs", "1"]) == 0
    out = capsys.readouterr().out
    assert "forward vs R" in out and "backward vs R" in out
    assert (tmp_path / "complexity_tr_R_forward.csv").exists()
    assert (tmp_path / "complexity_tr_R_backward.csv").exists()


def test_complexity_jobs_default_to_worker_count(tmp_path, monkeypatch):
    import src.complexity
    seen = {}
    real = src.complexity.run_sweep

    def recording(spec, jobs=1, verbose=False):
        seen["jobs"] = jobs
        return real(spec, jobs=1, verbose=False)

    monkeypatch.setattr(src.complexity, "run_sweep", recording)
    monkeypatch.setattr(AppConfig, "DEFAULT_JOBS", 3)
    assert main(["complexity", "--var", "R", "--out", str(tmp_path)]) == 0
    assert seen["jobs"] == 3
    assert main(["complexity", "--var", "R", "--out", str(tmp_path), "--jobs", "2"]) == 0
    assert seen["jobs"] == 2


def test_complexity_rejects_short_sweep(tmp_path, capsys):
    assert main(["complexity", "--var", "R", "--values", "2", "4", "8", "--out", str(tmp_path)]) == 1
    assert ">= 4 points" in capsys.readouterr().err


def test_synth_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path, {"synthetic": {"models": ["linear", "tr"]}})
    out_dir = tmp_path / "results"
    code = main(["synth", "--config", cfg, "--out", str(out_dir), "--seeds", "2", "--sigma", "0.05",
                 "--optimizer", "als", "--epochs", "10", "--samples", "800", "--jobs", "1", "--no-timing"])
    assert code == 0
    assert (out_dir / "recovery.csv").exists()
    assert (out_dir / "summary.txt").exists()
    assert (out_dir / "heatmaps" / "truth.csv").exists()
    assert "median RMSE" in capsys.readouterr().out


def test_parser_lists_all_commands():
    sub = [a for a in build_parser()._actions if a.dest == "command"][0]
    assert set(sub.choices) == {"synth", "gradcheck", "complexity", "compress", "toytrain"}
