import json

import numpy as np
import pytest
from click.testing import CliRunner

from hjgames.cli import main
from hjgames.grids import grid_spec_for, load_grid, save_grid, solve_hji_vi
from hjgames.mpc import load_dataset
from hjgames.nets import ValueNetwork, load_checkpoint, save_checkpoint
from hjgames.problems import get_problem


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def integrator_grid_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("grids") / "integrator.vgrd"
    prob = get_problem("integrator1d")
    save_grid(solve_hji_vi(prob, grid_spec_for(prob, [101])), str(path))
    return str(path)


@pytest.fixture(scope="module")
def tiny_net_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("nets") / "tiny.vnet"
    net = ValueNetwork.initialize(get_problem("integrator1d"), seed=0, width=8, hidden_layers=2)
    save_checkpoint(net, str(path))
    return str(path)


class TestSolveGrid:
    def test_end_to_end(self, runner, tmp_path):
        out = tmp_path / "grid.vgrd"
        result = runner.invoke(
            main, ["solve-grid", "--problem", "integrator1d", "--grid", "101", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        grid = load_grid(str(out))
        assert grid.problem_name == "integrator1d"

    def test_unknown_problem_exit_code(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["solve-grid", "--problem", "nope", "--grid", "101", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2


class TestCollectMpc:
    def test_end_to_end(self, runner, tmp_path, tiny_net_file):
        out = tmp_path / "data.mpcd"
        cfg = tmp_path / "sampler.json"
        cfg.write_text(
            json.dumps(
                {"dataset_size": 5, "horizon_steps": 5, "rollouts": 5, "refinements": 2}
            )
        )
        result = runner.invoke(
            main,
            [
                "collect-mpc",
                "--problem",
                "integrator1d",
                "--net",
                tiny_net_file,
                "--perspective",
                "control",
                "--config",
                str(cfg),
                "--out",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        ds = load_dataset(str(out))
        assert len(ds) == 5
        assert ds.perspective == "control"


class TestEvalBrt:
    def test_grid_self_comparison(self, runner, integrator_grid_file):
        result = runner.invoke(
            main,
            ["eval-brt", "--candidate", integrator_grid_file, "--reference", integrator_grid_file],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["iou"] == 1.0
        assert report["max_gap"] == 0.0

    def test_net_candidate(self, runner, integrator_grid_file, tiny_net_file, tmp_path):
        out = tmp_path / "report.json"
        result = runner.invoke(
            main,
            [
                "eval-brt",
                "--candidate",
                tiny_net_file,
                "--reference",
                integrator_grid_file,
                "--out",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert 0.0 <= report["iou"] <= 1.0


class TestTrain:
    def test_end_to_end_with_eval(self, runner, tmp_path, integrator_grid_file):
        cfg = tmp_path / "train.json"
        cfg.write_text(
            json.dumps(
                {
                    "total_epochs": 30,
                    "learning_rate": 1e-4,
                    "warmup_fraction": 0.4,
                    "refresh_interval": 10,
                    "pde_batch": 32,
                    "boundary_batch": 16,
                    "mpc_batch": 8,
                    "log_interval": 10,
                    "mpc": {"dataset_size": 5, "horizon_steps": 5, "rollouts": 5, "refinements": 2},
                }
            )
        )
        out_dir = tmp_path / "run"
        result = runner.invoke(
            main,
            [
                "train",
                "--problem",
                "integrator1d",
                "--config",
                str(cfg),
                "--out-dir",
                str(out_dir),
                "--arch",
                "2x8",
                "--eval-grid",
                integrator_grid_file,
            ],
        )
        assert result.exit_code == 0, result.output
        net = load_checkpoint(str(out_dir / "final.vnet"))
        assert net.train_step == 30
        assert (out_dir / "metrics.jsonl").exists()
        assert (out_dir / "eval_report.json").exists()

    def test_unknown_config_key_exit_code(self, runner, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"total_epochs": 5, "bogus": 1}))
        result = runner.invoke(
            main,
            ["train", "--problem", "integrator1d", "--config", str(cfg), "--out-dir", str(tmp_path / "o")],
        )
        assert result.exit_code == 2


class TestMatchup:
    def test_end_to_end(self, runner, tmp_path, integrator_grid_file, tiny_net_file):
        cfg = tmp_path / "matchup.json"
        cfg.write_text(
            json.dumps(
                {
                    "problem": "integrator1d",
                    "band_source": integrator_grid_file,
                    "band": [0.0, 0.2],
                    "episodes": 6,
                    "duration": 0.5,
                    "dt": 0.02,
                    "seed": 1,
                    "evaders": {
                        "net": {"kind": "net_gradient", "role": "evader", "source": tiny_net_file}
                    },
                    "pursuers": {"idle": {"kind": "scripted", "role": "pursuer", "name": "center"}},
                }
            )
        )
        out_dir = tmp_path / "match"
        result = runner.invoke(
            main, ["matchup", "--config", str(cfg), "--out", str(out_dir), "--export-rollouts", "1"]
        )
        assert result.exit_code == 0, result.output
        table = json.loads((out_dir / "matchup.json").read_text())
        assert table["episodes"] == 6
        assert (out_dir / "matchup.txt").exists()
        assert (out_dir / "rollout_net_vs_idle_000.json").exists()
        assert (out_dir / "rollout_net_vs_idle_000.txt").exists()

    def test_determinism(self, runner, tmp_path, integrator_grid_file, tiny_net_file):
        cfg = tmp_path / "matchup.json"
        cfg.write_text(
            json.dumps(
                {
                    "problem": "integrator1d",
                    "band_source": integrator_grid_file,
                    "band": [0.0, 0.2],
                    "episodes": 5,
                    "duration": 0.3,
                    "seed": 3,
                    "evaders": {
                        "net": {"kind": "net_gradient", "role": "evader", "source": tiny_net_file}
                    },
                    "pursuers": {"idle": {"kind": "scripted", "role": "pursuer", "name": "center"}},
                }
            )
        )
        outs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            result = runner.invoke(main, ["matchup", "--config", str(cfg), "--out", str(out_dir)])
            assert result.exit_code == 0, result.output
            outs.append((out_dir / "matchup.json").read_bytes())
        assert outs[0] == outs[1]
