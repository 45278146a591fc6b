import json

import numpy as np
import pytest

from dessilbi.cli import (EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY,
                          OUT_ROOT_ENV, main)
from dessilbi.config import (ConfigError, ExperimentConfig, apply_overrides,
                             emit_config, parse_config, read_sections)
from dessilbi.data import dataset_spec
from dessilbi.optimizer import HyperParams, default_schedule

BLOBS_INI = """\
[dataset]
kind = blobs
n = 160
classes = 3
dim = 6
separation = 2.0
seed = 1

[network]
input = 6
layers = dense:8, tanh, dense:3
loss = softmax_cross_entropy

[optimizer]
alpha_schedule = 0:0.1

[split]
lambda = 0.05

[run]
name = blobsrun
epochs = 2
batch_size = 32
seed = 3
"""

MINIMAL_INI = """\
[dataset]
kind = blobs
n = 20
classes = 2
dim = 3

[network]
input = 3
layers = dense:2
"""


class TestParsing:
    def test_full_config_fields(self):
        cfg = parse_config(BLOBS_INI)
        assert cfg.dataset.kind == "blobs"
        assert cfg.dataset.get("n") == 160 and cfg.dataset.get("separation") == 2.0
        assert cfg.input_shape == (6,)
        assert cfg.layer_specs == ("dense:8", "tanh", "dense:3")
        assert cfg.hp.alpha_schedule == ((0, 0.1),)
        assert cfg.lam == 0.05
        assert cfg.epochs == 2 and cfg.batch_size == 32 and cfg.seed == 3
        assert cfg.name == "blobsrun"

    def test_minimal_config_gets_defaults(self):
        cfg = parse_config(MINIMAL_INI)
        assert cfg.loss == "softmax_cross_entropy"
        assert cfg.hp == HyperParams(alpha_schedule=default_schedule())
        assert cfg.split_layers == "all"
        assert cfg.lam == 1.0
        assert cfg.epochs == 10 and cfg.batch_size == 128
        assert cfg.monitor is False and cfg.monitor_lip is None

    def test_unknown_section_and_key_fail_closed(self):
        with pytest.raises(ConfigError, match="unknown config sections"):
            parse_config(BLOBS_INI + "\n[extra]\nx = 1\n")
        with pytest.raises(ConfigError, match="kapa"):
            parse_config(BLOBS_INI.replace("[optimizer]\nalpha_schedule = 0:0.1",
                                           "[optimizer]\nkapa = 2"))
        with pytest.raises(ConfigError, match="not a parameter"):
            parse_config(BLOBS_INI.replace("separation = 2.0", "sep = 2.0"))

    def test_required_sections_and_keys(self):
        with pytest.raises(ConfigError, match=r"missing the \[network\]"):
            parse_config("[dataset]\nkind = blobs\nn = 10\nclasses = 2\ndim = 2\n")
        with pytest.raises(ConfigError, match="dataset.kind is required"):
            parse_config("[dataset]\nn = 10\n\n[network]\ninput = 2\nlayers = dense:1\n")
        with pytest.raises(ConfigError, match="network.input"):
            parse_config("[dataset]\nkind = blobs\nn = 10\nclasses = 2\ndim = 2\n"
                         "\n[network]\nlayers = dense:1\n")

    def test_type_errors_name_the_key(self):
        with pytest.raises(ConfigError, match="run.epochs must be a int"):
            parse_config(BLOBS_INI.replace("epochs = 2", "epochs = two"))
        with pytest.raises(ConfigError, match="optimizer.kappa must be a float"):
            parse_config(BLOBS_INI.replace("[optimizer]\nalpha_schedule = 0:0.1",
                                           "[optimizer]\nkappa = big"))
        with pytest.raises(ConfigError, match="run.monitor must be a bool"):
            parse_config(BLOBS_INI.replace("seed = 3", "seed = 3\nmonitor = maybe"))

    def test_schedule_conflicts_with_alpha0(self):
        bad = BLOBS_INI.replace("alpha_schedule = 0:0.1",
                                "alpha_schedule = 0:0.1\nalpha0 = 0.2")
        with pytest.raises(ConfigError, match="conflicts"):
            parse_config(bad)

    def test_schedule_entry_format(self):
        with pytest.raises(ConfigError, match="EPOCH:ALPHA"):
            parse_config(BLOBS_INI.replace("alpha_schedule = 0:0.1",
                                           "alpha_schedule = 0.1"))

    def test_batch_size_full_means_none(self):
        cfg = parse_config(BLOBS_INI.replace("batch_size = 32", "batch_size = full"))
        assert cfg.batch_size is None

    def test_split_layer_forms(self):
        assert parse_config(BLOBS_INI).split_layers == "all"
        none = BLOBS_INI.replace("[split]\nlambda = 0.05",
                                 "[split]\nlayers = none\nlambda = 0.05")
        assert parse_config(none).split_layers == "none"
        idx = BLOBS_INI.replace("[split]\nlambda = 0.05",
                                "[split]\nlayers = 2, 0\nlambda = 0.05")
        assert parse_config(idx).split_layers == (0, 2)

    def test_lambda_overrides(self):
        text = BLOBS_INI.replace("lambda = 0.05",
                                 "lambda = 0.05\nlambda_overrides = 2:0.4")
        assert parse_config(text).lam_overrides == ((2, 0.4),)
        bad = BLOBS_INI.replace("lambda = 0.05",
                                "lambda = 0.05\nlambda_overrides = 2=0.4")
        with pytest.raises(ConfigError, match="LAYER:VALUE"):
            parse_config(bad)

    def test_malformed_ini_is_a_config_error(self):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config("this is not ini at all [")

    def test_overrides_rewrite_values(self):
        cfg = parse_config(BLOBS_INI, overrides=["run.epochs=5", "split.lambda=0.2"])
        assert cfg.epochs == 5 and cfg.lam == 0.2

    def test_override_format_is_checked(self):
        sections = read_sections(BLOBS_INI)
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides(sections, ["epochs=5"])
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides(sections, ["run.epochs"])

    def test_dataclass_validation(self):
        spec = dataset_spec("blobs", n=10, classes=2, dim=2)
        with pytest.raises(ConfigError, match="epochs"):
            ExperimentConfig(spec, (2,), ("dense:2",), "mse", epochs=-1)
        with pytest.raises(ConfigError, match="batch_size"):
            ExperimentConfig(spec, (2,), ("dense:2",), "mse", batch_size=0)
        with pytest.raises(ConfigError, match="split"):
            ExperimentConfig(spec, (2,), ("dense:2",), "mse", split_layers="some")


class TestRoundTrip:
    def test_emit_parse_is_identity(self):
        cfg = parse_config(BLOBS_INI)
        assert parse_config(emit_config(cfg)) == cfg

    def test_identity_on_a_loaded_corner_config(self):
        cfg = ExperimentConfig(
            dataset=dataset_spec("sparse_linear", n=50, p=8, s=2, snr=float("inf"),
                                 seed=4, val_fraction=0.0),
            input_shape=(8,),
            layer_specs=("dense:4:nobias", "softplus:5", "dense:1:nobias"),
            loss="mse",
            hp=HyperParams(kappa=2.0, nu=100.0,
                           alpha_schedule=((0, 0.1), (5, 0.01), (9, 0.001)),
                           momentum_tau=0.5, weight_decay_beta=1e-3, variant="mom"),
            split_layers=(0,),
            lam=0.3,
            lam_overrides=((0, 0.7),),
            epochs=7,
            batch_size=None,
            seed=11,
            monitor=True,
            monitor_lip=2.5,
            checkpoint_epochs=(3, 1),
            name="corner",
        )
        text = emit_config(cfg)
        assert parse_config(text) == cfg
        assert "snr = inf" in text
        assert "batch_size = full" in text


def run_cli(args, capsys=None):
    code = main(args)
    if capsys is None:
        return code, "", ""
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def blobs_ini(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(BLOBS_INI)
    return path


class TestCliUsage:
    def test_no_arguments_is_a_usage_error(self, capsys):
        code, _, err = run_cli([], capsys)
        assert code == EXIT_USAGE

    def test_unknown_subcommand(self, capsys):
        code, _, _ = run_cli(["conquer"], capsys)
        assert code == EXIT_USAGE

    def test_train_requires_a_config(self, capsys):
        code, _, _ = run_cli(["train"], capsys)
        assert code == EXIT_USAGE

    def test_missing_config_file(self, tmp_path, capsys):
        code, _, err = run_cli(["train", "--config", str(tmp_path / "nope.ini")],
                               capsys)
        assert code == EXIT_USAGE
        assert "not found" in err

    def test_malformed_config_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[dataset]\nkind = blobs\nnope")
        code, _, err = run_cli(["train", "--config", str(bad)], capsys)
        assert code == EXIT_USAGE
        assert "error" in err


class TestCliTrain:
    def test_successful_run_writes_artifacts(self, tmp_path, blobs_ini, capsys):
        out = tmp_path / "out"
        code, stdout, _ = run_cli(
            ["--out", str(out), "train", "--config", str(blobs_ini), "--no-render"],
            capsys)
        assert code == EXIT_OK
        run_dir = out / "blobsrun"
        assert "run written to" in stdout and "val_loss" in stdout
        for name in ("config.ini", "path.csv", "path.json"):
            assert (run_dir / name).exists()
        assert not list(run_dir.glob("*.png"))

    def test_out_root_env_var_is_honored(self, tmp_path, blobs_ini, capsys,
                                         monkeypatch):
        root = tmp_path / "envroot"
        monkeypatch.setenv(OUT_ROOT_ENV, str(root))
        code, _, _ = run_cli(["train", "--config", str(blobs_ini), "--no-render"],
                             capsys)
        assert code == EXIT_OK
        assert (root / "blobsrun" / "path.csv").exists()

    def test_set_overrides_reach_the_run(self, tmp_path, blobs_ini, capsys):
        out = tmp_path / "out"
        code, _, _ = run_cli(
            ["--out", str(out), "train", "--config", str(blobs_ini),
             "--no-render", "--set", "run.epochs=1", "--set", "run.name=quick"],
            capsys)
        assert code == EXIT_OK
        text = (out / "quick" / "config.ini").read_text()
        assert "epochs = 1" in text

    def test_monitor_violations_exit_nonzero(self, tmp_path, capsys):
        # understate the curvature and overstep: certificates must trip
        ini = tmp_path / "viol.ini"
        ini.write_text("""\
[dataset]
kind = sparse_linear
n = 80
p = 12
s = 3
snr = 10.0
seed = 1
val_fraction = 0.0

[network]
input = 12
layers = dense:1:nobias
loss = mse

[optimizer]
alpha_schedule = 0:1.2

[split]
lambda = 0.5

[run]
name = viol
epochs = 5
batch_size = full
monitor = true
monitor_lip = 0.01
""")
        with np.errstate(all="ignore"):
            code, stdout, _ = run_cli(
                ["--out", str(tmp_path / "out"), "train", "--config", str(ini),
                 "--no-render"], capsys)
        assert code == EXIT_VERIFY
        assert "CONVERGENCE CHECK FAILED" in stdout


class TestCliVerify:
    def test_all_suites_pass(self, capsys):
        code, stdout, _ = run_cli(["verify"], capsys)
        assert code == EXIT_OK
        lines = [l for l in stdout.strip().split("\n") if l.startswith("PASS")]
        assert len(lines) == 7
        assert "all 7 suites passed" in stdout

    def test_prox_check_subcommand(self, capsys):
        code, stdout, _ = run_cli(["prox-check", "--cases", "40"], capsys)
        assert code == EXIT_OK
        assert stdout.startswith("PASS")


class TestCliPruneFlows:
    def test_prune_writes_mask_and_report(self, tmp_path, blobs_ini, capsys):
        out = tmp_path / "out"
        code, stdout, _ = run_cli(
            ["--out", str(out), "prune", "--config", str(blobs_ini),
             "--no-render", "--mask-epoch", "2", "--set", "split.lambda=0.02"],
            capsys)
        assert code == EXIT_OK
        run_dir = out / "blobsrun-prune"
        report = json.loads((run_dir / "report.json").read_text())
        assert 0.0 < report["mask_density"] <= 1.0
        assert report["mask_epoch"] == 2
        assert set(report["per_layer_density"]) == {"0", "2"}
        assert (run_dir / "mask.ckpt").exists()

    def test_retrain_reports_both_runs(self, tmp_path, blobs_ini, capsys):
        out = tmp_path / "out"
        code, stdout, _ = run_cli(
            ["--out", str(out), "retrain", "--config", str(blobs_ini),
             "--no-render", "--mask-epoch", "2", "--budget", "2",
             "--set", "split.lambda=0.02"],
            capsys)
        assert code == EXIT_OK
        run_dir = out / "blobsrun-retrain"
        report = json.loads((run_dir / "report.json").read_text())
        assert "val_acc" in report["dense"] and "val_acc" in report["sparse"]
        assert (run_dir / "dense" / "path.csv").exists()
        assert (run_dir / "sparse" / "path.csv").exists()
        assert "mask density" in stdout

    def test_rewind_flow(self, tmp_path, blobs_ini, capsys):
        out = tmp_path / "out"
        code, _, _ = run_cli(
            ["--out", str(out), "rewind", "--config", str(blobs_ini),
             "--no-render", "--mask-epoch", "2", "--rewind-epoch", "1",
             "--budget", "1", "--set", "split.lambda=0.02"],
            capsys)
        assert code == EXIT_OK
        assert (out / "blobsrun-rewind1" / "report.json").exists()

    def test_degenerate_mask_is_a_runtime_failure(self, tmp_path, blobs_ini,
                                                  capsys):
        code, _, err = run_cli(
            ["--out", str(tmp_path / "out"), "retrain", "--config",
             str(blobs_ini), "--no-render", "--mask-epoch", "1", "--budget", "1",
             "--set", "split.lambda=1e9"],
            capsys)
        assert code == EXIT_RUNTIME
        assert "no active groups" in err


class TestCliPathExport:
    def test_reexport_from_a_run_directory(self, tmp_path, blobs_ini, capsys):
        out = tmp_path / "out"
        assert run_cli(["--out", str(out), "train", "--config", str(blobs_ini),
                        "--no-render"], capsys)[0] == EXIT_OK
        run_dir = out / "blobsrun"
        (run_dir / "path.csv").unlink()
        code, stdout, _ = run_cli(["path-export", "--run", str(run_dir)], capsys)
        assert code == EXIT_OK
        assert (run_dir / "path.csv").exists()
        assert (run_dir / "curves.png").exists()
        order = json.loads((run_dir / "activation_order.json").read_text())
        assert set(order) == {"0", "2"}

    def test_missing_path_json_is_a_usage_error(self, tmp_path, capsys):
        code, _, err = run_cli(["path-export", "--run", str(tmp_path)], capsys)
        assert code == EXIT_USAGE
        assert "path.json" in err
