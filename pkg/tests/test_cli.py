"""Command-line pipeline: subcommands, file handoffs, exit codes."""

import json
import subprocess
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mapfdiff import (
    ConstraintSpec,
    Scenario,
    ScoreNetwork,
    load_network,
    make_schedule,
    max_violation,
    save_network,
    save_scenario,
)
from mapfdiff.cli import main
from mapfdiff.scenario import load_trajectories


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the generation -> expert -> train legs once; later tests extend it."""
    root = tmp_path_factory.mktemp("cli")
    scen_dir = root / "scenarios"
    data_dir = root / "data"
    model = root / "model.ckpt"

    rc = main(["gen-scenarios", "--family", "NarrowCorridor", "--count", "6",
               "--seed", "3", "--out", str(scen_dir)])
    assert rc == 0
    files = sorted(scen_dir.glob("*.scenario.json"))
    assert len(files) == 6
    assert files[0].name == "NarrowCorridor-0000.scenario.json"

    rc = main(["gen-expert", "--scenarios", str(scen_dir), "--out",
               str(data_dir), "--restarts", "4", "--horizon", "16"])
    assert rc == 0
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["counts"]["kept"] >= 3
    assert manifest["horizon"] == 16

    rc = main(["train", "--data", str(data_dir), "--epochs", "3", "--out",
               str(model), "--hidden", "16", "--levels", "3",
               "--inner-steps", "1", "--batch-size", "4"])
    assert rc == 0
    return dict(root=root, scen_dir=scen_dir, data_dir=data_dir, model=model,
                scenario=files[0])


class TestPipeline:
    def test_checkpoint_reloads_with_training_schedule(self, pipeline):
        net, schedule = load_network(pipeline["model"])
        assert (net.n_agents, net.horizon) == (2, 16)
        assert schedule.n_levels == 3
        assert schedule.inner_steps == 1

    @pytest.mark.parametrize("method", ["dm", "gdm", "pdm"])
    def test_sample_writes_loadable_trajectories(self, pipeline, method):
        out = pipeline["root"] / f"traj-{method}.bin"
        rc = main(["sample", "--model", str(pipeline["model"]), "--scenario",
                   str(pipeline["scenario"]), "--method", method, "--seed",
                   "9", "--out", str(out)])
        assert rc == 0
        traj = load_trajectories(out)
        assert (traj.n_agents, traj.horizon) == (2, 16)
        if method == "pdm":
            from mapfdiff import load_scenario

            scen = load_scenario(pipeline["scenario"])
            spec = ConstraintSpec.from_scenario(scen)
            assert max_violation(traj, scen, spec) <= 1e-4 + 1e-9

    def test_eval_writes_byte_stable_csv(self, pipeline):
        args = ["eval", "--model", str(pipeline["model"]), "--families",
                "NarrowCorridor", "--per-family", "2", "--methods", "dm,pdm",
                "--master-seed", "5", "--family-seed", "1"]
        a = pipeline["root"] / "eval-a.csv"
        b = pipeline["root"] / "eval-b.csv"
        assert main(args + ["--out-csv", str(a)]) == 0
        assert main(args + ["--out-csv", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert lines[0].startswith("# constraint instances")
        assert len(lines) == 2 + 2 * 2

    def test_plot_renders_svg(self, pipeline):
        traj = pipeline["root"] / "traj-dm.bin"
        if not traj.exists():
            main(["sample", "--model", str(pipeline["model"]), "--scenario",
                  str(pipeline["scenario"]), "--method", "dm", "--seed", "9",
                  "--out", str(traj)])
        out = pipeline["root"] / "scene.svg"
        rc = main(["plot", "--traj", str(traj), "--scenario",
                   str(pipeline["scenario"]), "--out", str(out)])
        assert rc == 0
        root = ET.parse(out).getroot()
        assert root.tag.endswith("svg")

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_train_divergence_exits_nonconverged(self, pipeline, tmp_path):
        out = tmp_path / "diverged.ckpt"
        rc = main(["train", "--data", str(pipeline["data_dir"]), "--epochs",
                   "2", "--out", str(out), "--hidden", "16", "--levels", "3",
                   "--inner-steps", "1", "--batch-size", "2", "--lr", "1e160"])
        assert rc == 4
        net, _ = load_network(out)   # checkpoint still holds finite params
        assert np.isfinite(net.params_flat()).all()


def tiny_checkpoint(path, n_agents=1, horizon=4):
    net = ScoreNetwork.create(n_agents, horizon, hidden=(8,), seed=0)
    save_network(net, make_schedule(0.25, 1.0, 2, 1), path)
    return net


class TestExitCodes:
    def test_unknown_family_is_contract_error(self, tmp_path):
        rc = main(["gen-scenarios", "--family", "Bogus", "--count", "1",
                   "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_corrupt_scenario_is_format_error(self, tmp_path):
        model = tmp_path / "m.ckpt"
        tiny_checkpoint(model)
        bad = tmp_path / "bad.scenario.json"
        bad.write_text("{not json")
        rc = main(["sample", "--model", str(model), "--scenario", str(bad),
                   "--method", "dm", "--out", str(tmp_path / "t.bin")])
        assert rc == 2

    def test_missing_dataset_is_format_error(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "nowhere"), "--out",
                   str(tmp_path / "m.ckpt")])
        assert rc == 2

    def test_unknown_eval_family_is_contract_error(self, tmp_path):
        model = tmp_path / "m.ckpt"
        tiny_checkpoint(model, n_agents=2, horizon=8)
        rc = main(["eval", "--model", str(model), "--families",
                   "NarrowCorridor,Bogus", "--per-family", "1", "--out-csv",
                   str(tmp_path / "e.csv")])
        assert rc == 2

    def unreachable_scenario(self, path):
        scen = Scenario(
            starts=np.array([[0.1, 0.1]]), goals=np.array([[0.9, 0.9]]),
            obstacles=(), agent_radius=0.05, v_max=0.05)
        save_scenario(scen, path)

    def test_majority_infeasible_expert_run_exits_three(self, tmp_path):
        scen_dir = tmp_path / "scen"
        scen_dir.mkdir()
        self.unreachable_scenario(scen_dir / "im-0000.scenario.json")
        rc = main(["gen-expert", "--scenarios", str(scen_dir), "--out",
                   str(tmp_path / "data"), "--horizon", "4"])
        assert rc == 3

    def test_unreachable_sample_exits_three(self, tmp_path):
        model = tmp_path / "m.ckpt"
        tiny_checkpoint(model)
        scen = tmp_path / "far.scenario.json"
        self.unreachable_scenario(scen)
        rc = main(["sample", "--model", str(model), "--scenario", str(scen),
                   "--method", "pdm", "--out", str(tmp_path / "t.bin")])
        assert rc == 3


def test_console_entry_point_help():
    proc = subprocess.run(["mapfdiff", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    for sub in ("gen-scenarios", "gen-expert", "train", "sample", "eval",
                "plot"):
        assert sub in proc.stdout
